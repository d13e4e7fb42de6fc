//! Unscented Kalman filter over an augmented `[x; ẋ; θ]` state.
//!
//! The operations are free functions so the adaptation layer can clone a
//! state, perturb it and run a single probing cycle without any hidden filter
//! object. The state and observation maps are plain closures.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// UKF tuning: sigma-point scaling and noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Initial state covariance.
    pub p0: DMatrix<f64>,
    /// Process-noise covariance, added after every prediction.
    pub q: DMatrix<f64>,
    /// Measurement-noise covariance.
    pub r: DMatrix<f64>,
    /// Taylor order of the discretized model.
    pub taylor_order: usize,
}

impl FilterConfig {
    /// Scalar-times-identity covariances with α = 0.001, β = 2, κ = 0 and a
    /// third-order model.
    pub fn scalar(state_dim: usize, output_dim: usize, p0: f64, q: f64, r: f64) -> Self {
        FilterConfig {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
            p0: DMatrix::from_diagonal_element(state_dim, state_dim, p0),
            q: DMatrix::from_diagonal_element(state_dim, state_dim, q),
            r: DMatrix::from_diagonal_element(output_dim, output_dim, r),
            taylor_order: 3,
        }
    }

    /// λ = α²(n + κ) − n.
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.kappa.is_finite()) {
            return Err(Error::invalid("beta and kappa must be finite"));
        }
        if !(n as f64 + self.lambda(n) > 0.0) {
            return Err(Error::invalid("n + lambda must be positive"));
        }
        for (name, mat, dim) in [("P0", &self.p0, n), ("Q", &self.q, n), ("R", &self.r, m)] {
            if mat.shape() != (dim, dim) {
                return Err(Error::dims(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if !is_symmetric(mat, 1e-12) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        for (name, mat) in [("P0", &self.p0), ("Q", &self.q)] {
            if mat.symmetric_eigenvalues().min() < -1e-12 * mat.amax() {
                return Err(Error::invalid(format!("{name} must be positive semi-definite")));
            }
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::invalid("R must be positive definite"));
        }
        crate::discretize::check_order(self.taylor_order)
    }
}

fn is_symmetric(a: &DMatrix<f64>, rel: f64) -> bool {
    let tol = rel * a.amax();
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

/// Sizes of the kinematic and parameter parts of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_dof: usize,
    pub n_params: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        2 * self.n_dof + self.n_params
    }

    /// Index of parameter `i` in the augmented vector.
    pub fn param(&self, i: usize) -> usize {
        2 * self.n_dof + i
    }
}

/// Mean and covariance of `[displacements; velocities; parameters]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub step: usize,
    pub layout: StateLayout,
}

impl AugmentedState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, layout: StateLayout) -> Result<Self> {
        let n = layout.dim();
        if mean.len() != n || covariance.shape() != (n, n) {
            return Err(Error::dims(format!(
                "state of {} entries / covariance {}x{} for layout of dimension {n}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(AugmentedState {
            mean,
            covariance,
            step: 0,
            layout,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let start = self.layout.param(0);
        self.mean.rows(start, self.layout.n_params).iter().copied().collect()
    }

    pub fn param_variance(&self, i: usize) -> f64 {
        let j = self.layout.param(i);
        self.covariance[(j, j)]
    }
}

/// Sigma points and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaPointSet {
    /// Weighted mean, accumulated as deviations from the centre point so the
    /// large opposite-signed weights of small α do not cancel catastrophically.
    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.wm)
    }

    /// Weighted covariance about `mean`.
    pub fn covariance(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        weighted_cross(&self.points, mean, &self.points, mean, &self.wc)
    }
}

fn weighted_mean(points: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    let centre = &points[0];
    let mut acc = DVector::zeros(centre.len());
    for (p, w) in points.iter().zip(wm).skip(1) {
        acc.axpy(*w, &(p - centre), 1.0);
    }
    acc + centre
}

fn weighted_cross(
    xs: &[DVector<f64>],
    x_mean: &DVector<f64>,
    ys: &[DVector<f64>],
    y_mean: &DVector<f64>,
    wc: &[f64],
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(x_mean.len(), y_mean.len());
    for ((x, y), w) in xs.iter().zip(ys).zip(wc) {
        let dx = x - x_mean;
        let dy = y - y_mean;
        acc.ger(*w, &dx, &dy, 1.0);
    }
    acc
}

/// Innovation statistics of one correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation {
    /// `y − ŷ`.
    pub e: DVector<f64>,
    pub pyy: DMatrix<f64>,
    pub pxy: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub y_hat: DVector<f64>,
}

/// Lower Cholesky factor, retrying with growing diagonal jitter
/// (1e-12 … 1e-6 of the mean diagonal) before giving up.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.iter().all(|&v| v == 0.0) {
        return Some(DMatrix::zeros(a.nrows(), a.ncols()));
    }
    if let Some(c) = a.clone().cholesky() {
        return Some(c.l());
    }
    let n = a.nrows();
    let base = a.trace() / n as f64;
    if !(base > 0.0) {
        return None;
    }
    let mut scale = 1e-12;
    while scale <= 1e-6 * (1.0 + 1e-9) {
        let mut jittered = a.clone();
        for i in 0..n {
            jittered[(i, i)] += scale * base;
        }
        if let Some(c) = jittered.cholesky() {
            log::debug!("cholesky needed jitter {:e}", scale * base);
            return Some(c.l());
        }
        scale *= 10.0;
    }
    None
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `2n + 1` points: the mean followed by `mean + col_i` and then `mean − col_i`
/// for the columns of the Cholesky factor of `(n + λ) P`.
pub fn sigma_points(state: &AugmentedState, cfg: &FilterConfig) -> Result<SigmaPointSet> {
    let n = state.dim();
    let lambda = cfg.lambda(n);
    let spread = n as f64 + lambda;
    if !(spread > 0.0) {
        return Err(Error::invalid("n + lambda must be positive"));
    }
    let root = robust_cholesky(&(&state.covariance * spread)).ok_or_else(|| Error::Divergence {
        step: state.step,
        reason: "state covariance is not positive semi-definite".into(),
    })?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(state.mean.clone());
    for i in 0..n {
        points.push(&state.mean + root.column(i));
    }
    for i in 0..n {
        points.push(&state.mean - root.column(i));
    }

    let w0 = lambda / spread;
    let wi = 1.0 / (2.0 * spread);
    let mut wm = vec![wi; 2 * n + 1];
    let mut wc = vec![wi; 2 * n + 1];
    wm[0] = w0;
    wc[0] = w0 + 1.0 - cfg.alpha * cfg.alpha + cfg.beta;
    Ok(SigmaPointSet { points, wm, wc })
}

fn check_finite(v: &DVector<f64>, step: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            reason: format!("non-finite {what}"),
        })
    }
}

/// Propagate the sigma points of `state` through `model(x, u)` and form the
/// predicted mean and covariance (+Q).
pub fn predict<F>(
    state: &AugmentedState,
    u: &DVector<f64>,
    cfg: &FilterConfig,
    model: F,
) -> Result<(AugmentedState, SigmaPointSet)>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let sigma = sigma_points(state, cfg)?;
    let mut points = Vec::with_capacity(sigma.points.len());
    for p in &sigma.points {
        let next = model(p, u);
        if next.len() != state.dim() {
            return Err(Error::dims("state model changed the state dimension"));
        }
        check_finite(&next, state.step + 1, "propagated sigma point")?;
        points.push(next);
    }
    let propagated = SigmaPointSet {
        points,
        wm: sigma.wm,
        wc: sigma.wc,
    };
    let mean = propagated.mean();
    let mut covariance = propagated.covariance(&mean) + &cfg.q;
    symmetrize(&mut covariance);
    Ok((
        AugmentedState {
            mean,
            covariance,
            step: state.step + 1,
            layout: state.layout,
        },
        propagated,
    ))
}

/// Measurement update with the propagated sigma points.
pub fn correct<H>(
    predicted: &AugmentedState,
    propagated: &SigmaPointSet,
    y: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &FilterConfig,
    obs: H,
) -> Result<(AugmentedState, Innovation)>
where
    H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let step = predicted.step;
    let outputs: Vec<DVector<f64>> = propagated.points.iter().map(|p| obs(p, u)).collect();
    for o in &outputs {
        if o.len() != y.len() {
            return Err(Error::dims(format!(
                "observation has {} entries, measurement has {}",
                o.len(),
                y.len()
            )));
        }
        check_finite(o, step, "predicted measurement")?;
    }
    check_finite(y, step, "measurement")?;

    let y_hat = weighted_mean(&outputs, &propagated.wm);
    let mut pyy = weighted_cross(&outputs, &y_hat, &outputs, &y_hat, &propagated.wc) + &cfg.r;
    symmetrize(&mut pyy);
    let pxy = weighted_cross(&propagated.points, &predicted.mean, &outputs, &y_hat, &propagated.wc);

    let chol = pyy.clone().cholesky().ok_or_else(|| Error::Divergence {
        step,
        reason: "innovation covariance is not positive definite".into(),
    })?;
    // K = Pxy Pyy⁻¹  ⇔  Pyy Kᵀ = Pxyᵀ.
    let gain = chol.solve(&pxy.transpose()).transpose();
    let e = y - &y_hat;

    let mean = &predicted.mean + &gain * &e;
    let mut covariance = &predicted.covariance - &gain * &pyy * gain.transpose();
    symmetrize(&mut covariance);
    check_finite(&mean, step, "corrected state")?;

    Ok((
        AugmentedState {
            mean,
            covariance,
            step,
            layout: predicted.layout,
        },
        Innovation {
            e,
            pyy,
            pxy,
            gain,
            y_hat,
        },
    ))
}

/// One full cycle: predict with `u_k`, correct against `y_{k+1}` with `u_{k+1}`.
pub fn ukf_step<F, H>(
    state: &AugmentedState,
    u_k: &DVector<f64>,
    y_k1: &DVector<f64>,
    u_k1: &DVector<f64>,
    cfg: &FilterConfig,
    model: F,
    obs: H,
) -> Result<(AugmentedState, Innovation)>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let (predicted, propagated) = predict(state, u_k, cfg, model)?;
    correct(&predicted, &propagated, y_k1, u_k1, cfg, obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(mean: f64, var: f64) -> AugmentedState {
        AugmentedState::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
            StateLayout { n_dof: 0, n_params: 1 },
        )
        .unwrap()
    }

    fn unit_cfg(n: usize) -> FilterConfig {
        FilterConfig {
            alpha: 1.0,
            ..FilterConfig::scalar(n, 1, 1.0, 0.0, 1.0)
        }
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let s = AugmentedState::new(
            DVector::from_vec(vec![1.0, -2.0, 3.0]),
            DMatrix::zeros(3, 3),
            StateLayout { n_dof: 1, n_params: 1 },
        )
        .unwrap();
        let set = sigma_points(&s, &FilterConfig::scalar(3, 1, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(set.points.len(), 7);
        assert!(set.points.iter().all(|p| p == &s.mean));
    }

    #[test]
    fn unit_closed_form_weights() {
        let set = sigma_points(&scalar_state(0.0, 1.0), &unit_cfg(1)).unwrap();
        let pts: Vec<f64> = set.points.iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 1.0, -1.0]);
        assert_eq!(set.wm, vec![0.0, 0.5, 0.5]);
        assert_eq!(set.wc, vec![2.0, 0.5, 0.5]);
    }

    #[test]
    fn weights_sum_to_one() {
        for alpha in [1e-3, 0.1, 0.5, 1.0] {
            for n in [1usize, 3, 8] {
                let cfg = FilterConfig {
                    alpha,
                    ..FilterConfig::scalar(n, 1, 1.0, 0.0, 1.0)
                };
                let s = AugmentedState::new(
                    DVector::zeros(n),
                    DMatrix::identity(n, n),
                    StateLayout { n_dof: 0, n_params: n },
                )
                .unwrap();
                let set = sigma_points(&s, &cfg).unwrap();
                let sum: f64 = set.wm.iter().sum();
                let scale = set.wm[0].abs().max(1.0);
                assert!((sum - 1.0).abs() <= 1e-15 * scale * (2 * n + 1) as f64, "{alpha} {n} {sum}");
            }
        }
    }

    #[test]
    fn identity_propagation() {
        let s = AugmentedState::new(
            DVector::from_vec(vec![0.1, 0.2, 12.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 2e-6, 1e-3])),
            StateLayout { n_dof: 1, n_params: 1 },
        )
        .unwrap();
        let cfg = FilterConfig::scalar(3, 1, 0.0, 0.0, 1e-4);
        let (pred, _) = predict(&s, &DVector::zeros(1), &cfg, |x, _| x.clone()).unwrap();
        assert!((&pred.mean - &s.mean).amax() < 1e-12);
        assert!((&pred.covariance - &s.covariance).amax() < 1e-12);
        assert_eq!(pred.step, 1);
    }

    #[test]
    fn uninformative_measurement() {
        let s = scalar_state(2.0, 0.5);
        let mut cfg = unit_cfg(1);
        cfg.r = DMatrix::from_element(1, 1, 1e12);
        let (pred, prop) = predict(&s, &DVector::zeros(1), &cfg, |x, _| x.clone()).unwrap();
        let (corr, innov) =
            correct(&pred, &prop, &DVector::from_element(1, 5.0), &DVector::zeros(1), &cfg, |x, _| x.clone())
                .unwrap();
        assert!(innov.gain.amax() < 1e-11);
        assert!(((corr.mean[0] - pred.mean[0]) / pred.mean[0]).abs() < 1e-6);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let s = scalar_state(2.0, 0.5);
        let cfg = unit_cfg(1);
        let (pred, prop) = predict(&s, &DVector::zeros(1), &cfg, |x, _| x.clone()).unwrap();
        let y_hat = prop.mean();
        let (corr, innov) =
            correct(&pred, &prop, &y_hat, &DVector::zeros(1), &cfg, |x, _| x.clone()).unwrap();
        assert_eq!(innov.e[0], 0.0);
        assert_eq!(corr.mean, pred.mean);
        assert!(corr.covariance[(0, 0)] < pred.covariance[(0, 0)]);
    }

    #[test]
    fn non_finite_propagation_is_divergence() {
        let s = scalar_state(1.0, 1.0);
        let err = predict(&s, &DVector::zeros(1), &unit_cfg(1), |x, _| x * f64::NAN).unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FilterConfig::scalar(2, 1, 1.0, 0.0, 1.0);
        assert!(cfg.validate(2, 1).is_ok());
        cfg.alpha = 0.0;
        assert!(cfg.validate(2, 1).is_err());
        let mut cfg = FilterConfig::scalar(2, 1, 1.0, 0.0, 0.0);
        assert!(cfg.validate(2, 1).is_err());
        cfg.r = DMatrix::identity(1, 1);
        assert!(cfg.validate(3, 1).is_err());
        cfg.p0[(0, 1)] = 0.5;
        assert!(cfg.validate(2, 1).is_err());
    }

    #[test]
    fn jitter_rescues_semidefinite_matrices() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let rank_one = &v * v.transpose();
        let l = robust_cholesky(&rank_one).unwrap();
        assert!((&l * l.transpose() - &rank_one).amax() < 1e-5);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(robust_cholesky(&indefinite).is_none());
    }
}
