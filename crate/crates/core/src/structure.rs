//! Shear-frame structural model: matrix assembly, modal analysis, TMD tuning
//! and continuous-time state-space assembly.
//!
//! All quantities are SI (kg, N/m, N·s/m, m/s²). Stories form a chain from the
//! ground up; an optional tuned mass damper extends the chain above the top
//! story.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tuned mass damper parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmdSpec {
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl TmdSpec {
    pub fn new(mass: f64, stiffness: f64, damping: f64) -> Result<Self> {
        let tmd = TmdSpec {
            mass,
            stiffness,
            damping,
        };
        tmd.validate()?;
        Ok(tmd)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("stiffness", self.stiffness),
            ("damping", self.damping),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("TMD {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// An n-story shear frame with an optional TMD on the top story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub story_masses: Vec<f64>,
    pub story_damping: Vec<f64>,
    pub story_stiffness: Vec<f64>,
    pub tmd: Option<TmdSpec>,
    /// Ground-excitation influence vector, one entry per DoF (TMD included).
    pub influence: Vec<f64>,
}

impl StructureSpec {
    /// Shear frame with unit influence vector and no TMD.
    pub fn shear_frame(masses: Vec<f64>, stiffness: Vec<f64>, damping: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        let spec = StructureSpec {
            story_masses: masses,
            story_damping: damping,
            story_stiffness: stiffness,
            tmd: None,
            influence: vec![1.0; n],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Attach a TMD to the top story. The TMD DoF receives the ground input
    /// with unit influence.
    pub fn with_tmd(mut self, tmd: TmdSpec) -> Result<Self> {
        if self.tmd.is_none() {
            self.influence.push(1.0);
        }
        self.tmd = Some(tmd);
        self.validate()?;
        Ok(self)
    }

    pub fn without_tmd(&self) -> Self {
        let mut bare = self.clone();
        if bare.tmd.take().is_some() {
            bare.influence.truncate(bare.n_stories());
        }
        bare
    }

    /// Same structure with replaced story stiffnesses.
    pub fn with_story_stiffness(&self, stiffness: &[f64]) -> Result<Self> {
        let mut s = self.clone();
        s.story_stiffness = stiffness.to_vec();
        s.validate()?;
        Ok(s)
    }

    /// Two-story frame: m = 1 t per story, k = 12/10 kN/m, c = 0.1 kN·s/m.
    pub fn benchmark_two_story() -> Self {
        StructureSpec::shear_frame(
            vec![1000.0, 1000.0],
            vec![12_000.0, 10_000.0],
            vec![100.0, 100.0],
        )
        .expect("benchmark structure is valid")
    }

    /// The two-story benchmark with its tabulated TMD (0.1 t, 0.36 kN/m, 0.051 kN·s/m).
    pub fn benchmark_two_story_tmd() -> Self {
        StructureSpec::benchmark_two_story()
            .with_tmd(TmdSpec {
                mass: 100.0,
                stiffness: 360.0,
                damping: 51.0,
            })
            .expect("benchmark structure is valid")
    }

    pub fn n_stories(&self) -> usize {
        self.story_masses.len()
    }

    pub fn n_dof(&self) -> usize {
        self.n_stories() + usize::from(self.tmd.is_some())
    }

    pub fn has_tmd(&self) -> bool {
        self.tmd.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.story_masses.len();
        if n == 0 {
            return Err(Error::invalid("structure needs at least one story"));
        }
        if self.story_stiffness.len() != n || self.story_damping.len() != n {
            return Err(Error::dims(format!(
                "{} masses, {} stiffnesses, {} dampings",
                n,
                self.story_stiffness.len(),
                self.story_damping.len()
            )));
        }
        if self.influence.len() != self.n_dof() {
            return Err(Error::dims(format!(
                "influence vector has {} entries for {} DoFs",
                self.influence.len(),
                self.n_dof()
            )));
        }
        for (i, &m) in self.story_masses.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::invalid(format!("mass of story {} must be > 0, got {m}", i + 1)));
            }
        }
        for (i, &k) in self.story_stiffness.iter().enumerate() {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::invalid(format!(
                    "stiffness of story {} must be > 0, got {k}",
                    i + 1
                )));
            }
        }
        for (i, &c) in self.story_damping.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!(
                    "damping of story {} must be >= 0, got {c}",
                    i + 1
                )));
            }
        }
        if self.influence.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("influence vector must be finite"));
        }
        if let Some(tmd) = &self.tmd {
            tmd.validate()?;
        }
        Ok(())
    }
}

/// Spring/dashpot coefficients of the chain, kept so stiffness can be swapped
/// without touching anything else.
#[derive(Debug, Clone, PartialEq)]
struct ChainLayout {
    story_stiffness: Vec<f64>,
    tmd_stiffness: Option<f64>,
}

/// Stiffness, damping and mass matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTriple {
    pub k: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub m: DMatrix<f64>,
    chain: Option<ChainLayout>,
}

impl MatrixTriple {
    /// Wrap raw matrices. Matrices built this way carry no chain layout, so
    /// [`update_stiffness`] rejects them.
    pub fn from_raw(k: DMatrix<f64>, c: DMatrix<f64>, m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        for (name, a) in [("K", &k), ("C", &c), ("M", &m)] {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::dims(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        Ok(MatrixTriple { k, c, m, chain: None })
    }

    pub fn n_dof(&self) -> usize {
        self.m.nrows()
    }

    /// Number of structural stories, if assembled from a [`StructureSpec`].
    pub fn n_stories(&self) -> Option<usize> {
        self.chain.as_ref().map(|c| c.story_stiffness.len())
    }

    pub fn story_stiffness(&self) -> Option<&[f64]> {
        self.chain.as_ref().map(|c| c.story_stiffness.as_slice())
    }

    pub fn has_tmd(&self) -> bool {
        self.chain.as_ref().is_some_and(|c| c.tmd_stiffness.is_some())
    }

    /// Spring coefficients from the ground up, TMD spring last.
    pub(crate) fn chain_coefficients(&self) -> Option<Vec<f64>> {
        self.chain.as_ref().map(ChainLayout::coefficients)
    }

    /// Rebuild K with new stiffness for the first `k_new.len()` stories.
    pub fn with_story_stiffness(&self, k_new: &[f64]) -> Result<MatrixTriple> {
        let chain = self
            .chain
            .as_ref()
            .ok_or_else(|| Error::invalid("matrices carry no chain layout"))?;
        if k_new.len() > chain.story_stiffness.len() {
            return Err(Error::dims(format!(
                "{} stiffness values for {} stories",
                k_new.len(),
                chain.story_stiffness.len()
            )));
        }
        if let Some(bad) = k_new.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::invalid(format!("stiffness must be > 0, got {bad}")));
        }
        let mut stories = chain.story_stiffness.clone();
        stories[..k_new.len()].copy_from_slice(k_new);
        let layout = ChainLayout {
            story_stiffness: stories,
            tmd_stiffness: chain.tmd_stiffness,
        };
        Ok(MatrixTriple {
            k: chain_matrix(&layout.coefficients()),
            c: self.c.clone(),
            m: self.m.clone(),
            chain: Some(layout),
        })
    }

    fn check_square_symmetric(&self) -> Result<()> {
        let n = self.n_dof();
        for (name, a) in [("K", &self.k), ("C", &self.c), ("M", &self.m)] {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::dims(format!("{name} is not {n}x{n}")));
            }
            let scale = a.amax().max(f64::MIN_POSITIVE);
            for i in 0..n {
                for j in (i + 1)..n {
                    if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                        return Err(Error::invalid(format!("{name} is not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }

    fn mass_diagonal(&self) -> Result<DVector<f64>> {
        let n = self.n_dof();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.m[(i, j)] != 0.0 {
                    return Err(Error::invalid("M must be diagonal"));
                }
            }
            if !(self.m[(i, i)] > 0.0) {
                return Err(Error::invalid("M is singular (non-positive diagonal entry)"));
            }
        }
        Ok(self.m.diagonal())
    }
}

impl ChainLayout {
    fn coefficients(&self) -> Vec<f64> {
        let mut v = self.story_stiffness.clone();
        v.extend(self.tmd_stiffness);
        v
    }
}

/// Tridiagonal matrix of a spring chain fixed to the ground at its first element.
pub(crate) fn chain_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let n = coeffs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let above = if i + 1 < n { coeffs[i + 1] } else { 0.0 };
        a[(i, i)] = coeffs[i] + above;
        if i + 1 < n {
            a[(i, i + 1)] = -above;
            a[(i + 1, i)] = -above;
        }
    }
    a
}

/// Assemble K, C and M. The TMD, when present, occupies the last row/column.
pub fn assemble_matrices(spec: &StructureSpec) -> Result<MatrixTriple> {
    spec.validate()?;
    let layout = ChainLayout {
        story_stiffness: spec.story_stiffness.clone(),
        tmd_stiffness: spec.tmd.map(|t| t.stiffness),
    };
    let mut damping = spec.story_damping.clone();
    let mut masses = spec.story_masses.clone();
    if let Some(tmd) = spec.tmd {
        damping.push(tmd.damping);
        masses.push(tmd.mass);
    }
    Ok(MatrixTriple {
        k: chain_matrix(&layout.coefficients()),
        c: chain_matrix(&damping),
        m: DMatrix::from_diagonal(&DVector::from_vec(masses)),
        chain: Some(layout),
    })
}

/// Natural frequencies, damping ratios and mode shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalProperties {
    /// Undamped natural frequencies in Hz, ascending.
    pub natural_frequencies: Vec<f64>,
    /// Modal damping ratios (fraction of critical) from the damped eigenproblem.
    pub damping_ratios: Vec<f64>,
    /// Mass-normalized mode shapes as columns.
    pub mode_shapes: DMatrix<f64>,
    /// Generalized mass of each mode with the shape scaled to unity at the
    /// last DoF.
    pub generalized_masses: Vec<f64>,
}

impl ModalProperties {
    /// Generalized mass of `mode` with its shape scaled to unity at `dof`.
    pub fn generalized_mass_at(&self, mode: usize, dof: usize) -> f64 {
        let phi = self.mode_shapes[(dof, mode)];
        1.0 / (phi * phi)
    }
}

/// Undamped eigenanalysis for frequencies and shapes; damping ratios from the
/// complex eigenvalues of the first-order system matrix, so non-proportional
/// damping is handled.
pub fn modal_analysis(mats: &MatrixTriple) -> Result<ModalProperties> {
    mats.check_square_symmetric()?;
    let m_diag = mats.mass_diagonal()?;
    let n = mats.n_dof();

    let inv_sqrt_m = m_diag.map(|m| 1.0 / m.sqrt());
    let mut s = mats.k.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] *= inv_sqrt_m[i] * inv_sqrt_m[j];
        }
    }
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut omegas = Vec::with_capacity(n);
    let mut shapes = DMatrix::zeros(n, n);
    for (col, &idx) in order.iter().enumerate() {
        let w2 = eig.eigenvalues[idx];
        if !(w2 > 0.0) || !w2.is_finite() {
            return Err(Error::invalid(format!(
                "stiffness matrix is singular or indefinite (eigenvalue {w2:e})"
            )));
        }
        omegas.push(w2.sqrt());
        let mut phi = eig.eigenvectors.column(idx).component_mul(&inv_sqrt_m);
        // Sign convention: largest-magnitude component positive.
        let imax = phi.iamax();
        if phi[imax] < 0.0 {
            phi.neg_mut();
        }
        shapes.set_column(col, &phi);
    }

    let damping_ratios = damped_modes(mats, &m_diag, &omegas)?;
    let generalized_masses = (0..n)
        .map(|mode| {
            let phi = shapes[(n - 1, mode)];
            1.0 / (phi * phi)
        })
        .collect();

    Ok(ModalProperties {
        natural_frequencies: omegas.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect(),
        damping_ratios,
        mode_shapes: shapes,
        generalized_masses,
    })
}

fn damped_modes(mats: &MatrixTriple, m_diag: &DVector<f64>, omegas: &[f64]) -> Result<Vec<f64>> {
    let n = mats.n_dof();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        for j in 0..n {
            a[(n + i, j)] = -mats.k[(i, j)] / m_diag[i];
            a[(n + i, n + j)] = -mats.c[(i, j)] / m_diag[i];
        }
    }
    let eigs = a.complex_eigenvalues();
    if eigs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("damped eigenproblem failed".into()));
    }

    // (natural frequency, damping ratio) per mode.
    let mut modes: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut reals = Vec::new();
    for z in eigs.iter() {
        if z.im > 1e-12 * z.norm().max(1.0) {
            modes.push((z.norm(), -z.re / z.norm()));
        } else if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
            reals.push(z.re);
        }
    }
    // Overdamped modes show up as pairs of real eigenvalues r1, r2 with
    // r1·r2 = ω² and r1 + r2 = −2ζω.
    reals.sort_by(|a, b| b.total_cmp(a));
    for pair in reals.chunks(2) {
        if let [r1, r2] = pair {
            let w = (r1 * r2).abs().sqrt();
            modes.push((w, if w > 0.0 { -(r1 + r2) / (2.0 * w) } else { 0.0 }));
        }
    }
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    if modes.len() != omegas.len() {
        return Err(Error::Numerical(format!(
            "found {} damped modes for {} DoFs",
            modes.len(),
            omegas.len()
        )));
    }
    Ok(modes.into_iter().map(|(_, zeta)| zeta).collect())
}

/// Optimal TMD parameters for the first mode of the bare structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarburtonTuning {
    /// Mass ratio m_d / m̂₁.
    pub mass_ratio: f64,
    /// Optimal damper frequency [Hz].
    pub optimal_frequency: f64,
    /// Optimal damper damping ratio (fraction).
    pub optimal_damping_ratio: f64,
    pub tmd: TmdSpec,
}

/// Closed-form optimal tuning for a TMD of mass `damper_mass` attached at the
/// top story, targeting the first mode. `mats` and `modal` describe the bare
/// structure; the generalized mass uses the first mode shape scaled to unity at
/// the top story.
pub fn warburton_tune(
    mats: &MatrixTriple,
    modal: &ModalProperties,
    damper_mass: f64,
) -> Result<WarburtonTuning> {
    if !(damper_mass.is_finite() && damper_mass > 0.0) {
        return Err(Error::invalid(format!("damper mass must be > 0, got {damper_mass}")));
    }
    if mats.has_tmd() {
        return Err(Error::invalid("TMD tuning expects the bare structure"));
    }
    let n = mats.n_dof();
    if n == 0 || modal.natural_frequencies.len() != n {
        return Err(Error::dims("modal properties do not match the matrices"));
    }
    let m_hat = modal.generalized_mass_at(0, n - 1);
    let f1 = modal.natural_frequencies[0];
    let mu = damper_mass / m_hat;
    let f_opt = f1 * (1.0 - mu / 2.0).sqrt() / (1.0 + mu);
    let d_opt = (mu * (1.0 - mu / 4.0) / (4.0 * (1.0 + mu) * (1.0 - mu / 2.0))).sqrt();
    let w_opt = 2.0 * std::f64::consts::PI * f_opt;
    Ok(WarburtonTuning {
        mass_ratio: mu,
        optimal_frequency: f_opt,
        optimal_damping_ratio: d_opt,
        tmd: TmdSpec {
            mass: damper_mass,
            stiffness: damper_mass * w_opt * w_opt,
            damping: 2.0 * d_opt * damper_mass * w_opt,
        },
    })
}

/// Physical quantity a sensor measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Displacement,
    Velocity,
    Acceleration,
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d" | "disp" | "displacement" => Ok(SensorKind::Displacement),
            "v" | "vel" | "velocity" => Ok(SensorKind::Velocity),
            "a" | "acc" | "accel" | "acceleration" => Ok(SensorKind::Acceleration),
            other => Err(Error::invalid(format!(
                "unsupported sensor type '{other}' (expected displacement, velocity or acceleration)"
            ))),
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Displacement => "displacement",
            SensorKind::Velocity => "velocity",
            SensorKind::Acceleration => "acceleration",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sensor {
    pub dof: usize,
    pub kind: SensorKind,
}

/// Ordered list of sensors; output channel i is sensor i.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SensorLayout {
    pub sensors: Vec<Sensor>,
}

impl SensorLayout {
    pub fn new(sensors: Vec<Sensor>) -> Self {
        SensorLayout { sensors }
    }

    pub fn accelerometers(dofs: impl IntoIterator<Item = usize>) -> Self {
        SensorLayout {
            sensors: dofs
                .into_iter()
                .map(|dof| Sensor {
                    dof,
                    kind: SensorKind::Acceleration,
                })
                .collect(),
        }
    }

    /// Parse `"a1,a2"` style specs: a kind letter followed by a 1-based DoF.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sensors = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let split = item
                .find(|c: char| c.is_ascii_digit())
                .ok_or_else(|| Error::invalid(format!("sensor '{item}' has no DoF number")))?;
            let kind: SensorKind = item[..split].parse()?;
            let dof: usize = item[split..]
                .parse()
                .map_err(|_| Error::invalid(format!("bad DoF in sensor '{item}'")))?;
            if dof == 0 {
                return Err(Error::invalid("sensor DoFs are 1-based"));
            }
            sensors.push(Sensor { dof: dof - 1, kind });
        }
        Ok(SensorLayout { sensors })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// The common sensor kind, or `None` for an empty or mixed suite.
    pub fn uniform_kind(&self) -> Option<SensorKind> {
        let first = self.sensors.first()?.kind;
        self.sensors.iter().all(|s| s.kind == first).then_some(first)
    }
}

/// Continuous-time model `ẋ = A x + B u`, `y = C x + D u` over the state
/// `[displacements; velocities; parameters]`. Parameter rows of A are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_out: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub n_dof: usize,
    pub n_params: usize,
    pub sensors: SensorLayout,
}

impl ContinuousStateSpace {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c_out.nrows()
    }
}

/// −M⁻¹X for diagonal M.
fn neg_minv(m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| -x[(i, j)] / m[(i, i)])
}

/// Build the state-space model. The input vector holds one ground
/// acceleration entry per DoF (the influence-weighted excitation).
pub fn build_state_space(
    mats: &MatrixTriple,
    sensors: &SensorLayout,
    n_params: usize,
) -> Result<ContinuousStateSpace> {
    let n = mats.n_dof();
    mats.mass_diagonal()?;
    if let Some(s) = sensors.sensors.iter().find(|s| s.dof >= n) {
        return Err(Error::dims(format!("sensor on DoF {} but model has {n} DoFs", s.dof + 1)));
    }
    let dim = 2 * n + n_params;
    let mk = neg_minv(&mats.m, &mats.k);
    let mc = neg_minv(&mats.m, &mats.c);

    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&mk);
    a.view_mut((n, n), (n, n)).copy_from(&mc);

    let mut b = DMatrix::zeros(dim, n);
    for i in 0..n {
        b[(n + i, i)] = 1.0;
    }

    let (c_out, d) = output_matrices(&mk, &mc, sensors, dim);
    Ok(ContinuousStateSpace {
        a,
        b,
        c_out,
        d,
        n_dof: n,
        n_params,
        sensors: sensors.clone(),
    })
}

fn output_matrices(
    mk: &DMatrix<f64>,
    mc: &DMatrix<f64>,
    sensors: &SensorLayout,
    dim: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = mk.nrows();
    let mut c_out = DMatrix::zeros(sensors.len(), dim);
    let mut d = DMatrix::zeros(sensors.len(), n);
    for (row, s) in sensors.sensors.iter().enumerate() {
        match s.kind {
            SensorKind::Displacement => c_out[(row, s.dof)] = 1.0,
            SensorKind::Velocity => c_out[(row, n + s.dof)] = 1.0,
            SensorKind::Acceleration => {
                for j in 0..n {
                    c_out[(row, j)] = mk[(s.dof, j)];
                    c_out[(row, n + j)] = mc[(s.dof, j)];
                }
                d[(row, s.dof)] = 1.0;
            }
        }
    }
    (c_out, d)
}

/// Replace the identified story stiffnesses, refreshing only the blocks that
/// contain −M⁻¹K.
pub fn update_stiffness(
    space: &ContinuousStateSpace,
    mats: &MatrixTriple,
    k_new: &[f64],
) -> Result<ContinuousStateSpace> {
    if k_new.len() != space.n_params {
        return Err(Error::dims(format!(
            "{} stiffness values for {} identified parameters",
            k_new.len(),
            space.n_params
        )));
    }
    if mats.n_dof() != space.n_dof {
        return Err(Error::dims("matrices do not match the state space"));
    }
    let updated = mats.with_story_stiffness(k_new)?;
    let n = space.n_dof;
    let mk = neg_minv(&updated.m, &updated.k);
    let mut out = space.clone();
    out.a.view_mut((n, 0), (n, n)).copy_from(&mk);
    for (row, s) in space.sensors.sensors.iter().enumerate() {
        if s.kind == SensorKind::Acceleration {
            for j in 0..n {
                out.c_out[(row, j)] = mk[(s.dof, j)];
            }
        }
    }
    Ok(out)
}
