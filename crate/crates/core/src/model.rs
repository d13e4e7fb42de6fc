//! State and observation maps for joint state/stiffness estimation.
//!
//! Every sigma point carries its own story stiffnesses, so the maps rebuild
//! `−M⁻¹K(θ)` and re-discretize per call. Parameters are held constant by the
//! state map. The parameter rows of the continuous system matrix are zero, so
//! only the kinematic block is discretized; the parameter block of `A_d` is the
//! identity.

use nalgebra::{DMatrix, DVector};

use crate::discretize::{exact_series, taylor_series, DiscretizationOrder};
use crate::error::{Error, Result};
use crate::structure::{
    assemble_matrices, build_state_space, chain_matrix, ContinuousStateSpace, MatrixTriple,
    SensorKind, SensorLayout, StructureSpec,
};
use crate::ukf::{AugmentedState, FilterConfig, StateLayout};

/// Stiffness represented by one unit of a filter parameter entry: the filter
/// works in kN/m so tabulated covariances (P₀ = 10⁻⁶, P_adapt = 1) keep their
/// meaning.
pub const DEFAULT_STIFFNESS_UNIT: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct IdentificationModel {
    spec: StructureSpec,
    mats: MatrixTriple,
    chain: Vec<f64>,
    m_diag: DVector<f64>,
    /// −M⁻¹C
    neg_minv_c: DMatrix<f64>,
    sensors: SensorLayout,
    ts: f64,
    order: DiscretizationOrder,
    stiffness_unit: f64,
    b: DMatrix<f64>,
}

impl IdentificationModel {
    /// Model identifying every story stiffness of `spec`. The nominal
    /// stiffness values in `spec` only matter for [`Self::nominal_state_space`].
    pub fn new(
        spec: &StructureSpec,
        sensors: SensorLayout,
        ts: f64,
        order: DiscretizationOrder,
    ) -> Result<Self> {
        let mats = assemble_matrices(spec)?;
        let n = mats.n_dof();
        if let DiscretizationOrder::Taylor(p) = order {
            crate::discretize::check_order(p)?;
        }
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::invalid(format!("sampling time must be > 0, got {ts}")));
        }
        if sensors.is_empty() {
            return Err(Error::invalid("at least one sensor is required"));
        }
        if let Some(s) = sensors.sensors.iter().find(|s| s.dof >= n) {
            return Err(Error::dims(format!("sensor on DoF {} but model has {n} DoFs", s.dof + 1)));
        }
        let m_diag = mats.m.diagonal();
        let neg_minv_c = DMatrix::from_fn(n, n, |i, j| -mats.c[(i, j)] / m_diag[i]);
        let mut b = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            b[(n + i, i)] = 1.0;
        }
        let chain = mats.chain_coefficients().expect("assembled matrices carry a chain");
        Ok(IdentificationModel {
            spec: spec.clone(),
            mats,
            chain,
            m_diag,
            neg_minv_c,
            sensors,
            ts,
            order,
            stiffness_unit: DEFAULT_STIFFNESS_UNIT,
            b,
        })
    }

    pub fn with_stiffness_unit(mut self, unit: f64) -> Result<Self> {
        if !(unit.is_finite() && unit > 0.0) {
            return Err(Error::invalid("stiffness unit must be > 0"));
        }
        self.stiffness_unit = unit;
        Ok(self)
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn sensors(&self) -> &SensorLayout {
        &self.sensors
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn order(&self) -> DiscretizationOrder {
        self.order
    }

    pub fn stiffness_unit(&self) -> f64 {
        self.stiffness_unit
    }

    pub fn n_dof(&self) -> usize {
        self.mats.n_dof()
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_stories()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_dof: self.n_dof(),
            n_params: self.n_params(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.sensors.len()
    }

    /// Continuous model at the nominal stiffness, with parameter rows.
    pub fn nominal_state_space(&self) -> Result<ContinuousStateSpace> {
        build_state_space(&self.mats, &self.sensors, self.n_params())
    }

    /// Input vector `Γ·a_g` for one ground-acceleration sample.
    pub fn input_vector(&self, ground_accel: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.spec.influence.len(),
            self.spec.influence.iter().map(|g| g * ground_accel),
        )
    }

    /// Stiffness in N/m from a filter parameter vector.
    pub fn stiffness_of(&self, x: &DVector<f64>) -> Vec<f64> {
        let start = 2 * self.n_dof();
        (0..self.n_params()).map(|i| x[start + i] * self.stiffness_unit).collect()
    }

    /// −M⁻¹K for the stiffness entries carried in `x`.
    fn neg_minv_k(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut coeffs = self.chain.clone();
        let start = 2 * self.n_dof();
        for i in 0..self.n_params() {
            coeffs[i] = x[start + i] * self.stiffness_unit;
        }
        let k = chain_matrix(&coeffs);
        let n = self.n_dof();
        DMatrix::from_fn(n, n, |i, j| -k[(i, j)] / self.m_diag[i])
    }

    fn kinematic_matrix(&self, mk: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_dof();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
        }
        a.view_mut((n, 0), (n, n)).copy_from(mk);
        a.view_mut((n, n), (n, n)).copy_from(&self.neg_minv_c);
        a
    }

    /// Discrete kinematic matrices `(A_d, B_d)` for the stiffness in `x`.
    pub fn discrete_kinematics(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = self.kinematic_matrix(&self.neg_minv_k(x));
        match self.order {
            DiscretizationOrder::Taylor(p) => taylor_series(&a, &self.b, self.ts, p),
            DiscretizationOrder::Exact => exact_series(&a, &self.b, self.ts),
        }
    }

    /// State map: kinematics advance through the discretized model built from
    /// this point's own stiffness; parameters stay constant.
    pub fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n2 = 2 * self.n_dof();
        let (a_d, b_d) = self.discrete_kinematics(x);
        let kin = a_d * x.rows(0, n2) + b_d * u;
        let mut out = x.clone();
        out.rows_mut(0, n2).copy_from(&kin);
        out
    }

    /// Observation map `C(θ) x + D u`.
    pub fn observe(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n_dof();
        let needs_k = self.sensors.sensors.iter().any(|s| s.kind == SensorKind::Acceleration);
        let mk = if needs_k { Some(self.neg_minv_k(x)) } else { None };
        DVector::from_iterator(
            self.sensors.len(),
            self.sensors.sensors.iter().map(|s| match s.kind {
                SensorKind::Displacement => x[s.dof],
                SensorKind::Velocity => x[n + s.dof],
                SensorKind::Acceleration => {
                    let mk = mk.as_ref().expect("computed for accelerometers");
                    let mut acc = u[s.dof];
                    for j in 0..n {
                        acc += mk[(s.dof, j)] * x[j] + self.neg_minv_c[(s.dof, j)] * x[n + j];
                    }
                    acc
                }
            }),
        )
    }

    /// At-rest initial state with the given stiffness guesses [N/m] and the
    /// configured initial covariance.
    pub fn initial_state(&self, stiffness: &[f64], cfg: &FilterConfig) -> Result<AugmentedState> {
        if stiffness.len() != self.n_params() {
            return Err(Error::dims(format!(
                "{} initial stiffness values for {} parameters",
                stiffness.len(),
                self.n_params()
            )));
        }
        let layout = self.layout();
        let mut mean = DVector::zeros(layout.dim());
        for (i, k) in stiffness.iter().enumerate() {
            mean[layout.param(i)] = k / self.stiffness_unit;
        }
        AugmentedState::new(mean, cfg.p0.clone(), layout)
    }
}
