//! Continuous-to-discrete conversion of state-space models.
//!
//! Taylor-truncated matrix exponentials of order 1..=4 are the filter models;
//! the exact (scaling-and-squaring) discretizer drives the truth simulation and
//! serves as the reference in tests.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::structure::ContinuousStateSpace;

/// Highest supported Taylor order.
pub const MAX_TAYLOR_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscretizationOrder {
    Taylor(usize),
    Exact,
}

impl fmt::Display for DiscretizationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscretizationOrder::Taylor(p) => write!(f, "taylor-{p}"),
            DiscretizationOrder::Exact => f.write_str("exact"),
        }
    }
}

/// `x[k+1] = A_d x[k] + B_d u[k]`, `y[k] = C x[k] + D u[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c_out: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub ts: f64,
    pub order: DiscretizationOrder,
}

pub fn check_order(p: usize) -> Result<()> {
    if (1..=MAX_TAYLOR_ORDER).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "Taylor order must be in 1..={MAX_TAYLOR_ORDER}, got {p}"
        )))
    }
}

fn check_ts(ts: f64) -> Result<()> {
    if ts.is_finite() && ts > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sampling time must be > 0, got {ts}")))
    }
}

/// Truncated series `A_d = Σ_{i≤p} (A Ts)^i / i!`,
/// `B_d = Σ_{i<p} A^i B Ts^{i+1} / (i+1)!`, so order `p` adds one term to each.
pub fn taylor_series(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ts: f64,
    p: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a_d = DMatrix::identity(n, n);
    let mut term_a = DMatrix::identity(n, n);
    let mut term_b = b * ts;
    let mut b_d = term_b.clone();
    for i in 1..=p {
        term_a = (&term_a * a) * (ts / i as f64);
        a_d += &term_a;
        if i < p {
            term_b = (a * &term_b) * (ts / (i + 1) as f64);
            b_d += &term_b;
        }
    }
    (a_d, b_d)
}

/// `A_d = e^{A Ts}` and `B_d = ∫₀^Ts e^{Aτ} dτ B`, both read off the exponential
/// of the augmented matrix `[[A, B], [0, 0]]·Ts`.
pub fn exact_series(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Largest eigenvalue magnitude. Falls back to the Gelfand estimate
/// `‖A^(2^20)‖^(2^-20)` when the Schur iteration does not converge, which
/// happens for near-identity matrices with clustered eigenvalues.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if let Some(schur) = a.clone().try_schur(f64::EPSILON, 500) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut exponent = 1.0;
    for _ in 0..20 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        log_scale = 2.0 * (log_scale + norm.ln());
        m = (&m / norm) * (&m / norm);
        exponent *= 2.0;
    }
    ((log_scale + m.norm().ln()) / exponent).exp()
}

pub fn taylor_discretize(space: &ContinuousStateSpace, ts: f64, p: usize) -> Result<DiscreteStateSpace> {
    check_order(p)?;
    check_ts(ts)?;
    let (a_d, b_d) = taylor_series(&space.a, &space.b, ts, p);
    let rho = spectral_radius(&a_d);
    if rho > 1.1 {
        log::warn!("order-{p} discretization at Ts={ts} has spectral radius {rho:.4} > 1.1");
    }
    Ok(DiscreteStateSpace {
        a_d,
        b_d,
        c_out: space.c_out.clone(),
        d: space.d.clone(),
        ts,
        order: DiscretizationOrder::Taylor(p),
    })
}

pub fn exact_discretize(space: &ContinuousStateSpace, ts: f64) -> Result<DiscreteStateSpace> {
    check_ts(ts)?;
    if space.b.nrows() != space.a.nrows() || !space.a.is_square() {
        return Err(Error::dims("A must be square and share rows with B"));
    }
    let (a_d, b_d) = exact_series(&space.a, &space.b, ts);
    Ok(DiscreteStateSpace {
        a_d,
        b_d,
        c_out: space.c_out.clone(),
        d: space.d.clone(),
        ts,
        order: DiscretizationOrder::Exact,
    })
}

impl DiscreteStateSpace {
    /// One noise-free step: returns `(x[k+1], y[k])`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.a_d.ncols() {
            return Err(Error::dims(format!(
                "state has {} entries, model expects {}",
                x.len(),
                self.a_d.ncols()
            )));
        }
        if u.len() != self.b_d.ncols() {
            return Err(Error::dims(format!(
                "input has {} entries, model expects {}",
                u.len(),
                self.b_d.ncols()
            )));
        }
        let x_next = &self.a_d * x + &self.b_d * u;
        let y = &self.c_out * x + &self.d * u;
        Ok((x_next, y))
    }
}

pub fn step(
    space: &DiscreteStateSpace,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    space.step(x, u)
}
