//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stiffwatch::{
    assemble_matrices, build_state_space, exact_discretize, ukf_step, AugmentedState, FilterConfig, SensorLayout,
    StateLayout, StructureSpec,
};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// Linear Kalman filter, one predict/correct cycle. With `q_in_gain` false the
/// gain is built from A·P·Aᵀ alone and Q only enters the stored covariance,
/// which is what a UKF that reuses its propagated sigma points computes.
#[allow(clippy::too_many_arguments)]
pub fn kf_step(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    u1: &DVector<f64>,
    sys: &LinearSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_in_gain: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let LinearSystem { f, g, h, d } = sys;
    let xp = f * x + g * u;
    let spread = f * p * f.transpose();
    let pp = &spread + q;
    let pg = if q_in_gain { pp.clone() } else { spread };
    let s = h * &pg * h.transpose() + r;
    let k = &pg * h.transpose() * s.clone().try_inverse().unwrap();
    let e = y - (h * &xp + d * u1);
    let xn = &xp + &k * e;
    let pn = &pp - &k * s * k.transpose();
    (xn, pn)
}

pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn benchmark_system() -> LinearSystem {
    let spec = StructureSpec::benchmark_two_story();
    let mats = assemble_matrices(&spec).unwrap();
    let space = build_state_space(&mats, &SensorLayout::accelerometers([0, 1]), 0).unwrap();
    let disc = exact_discretize(&space, 0.02).unwrap();
    LinearSystem {
        f: disc.a_d,
        g: disc.b_d,
        h: disc.c_out,
        d: disc.d,
    }
}

/// Worst relative deviation of mean and covariance over `steps` steps.
pub fn compare_with_kf(q: f64, q_in_gain: bool, steps: usize) -> (f64, f64) {
    let sys = benchmark_system();
    let layout = StateLayout { n_dof: 2, n_params: 0 };
    let cfg = FilterConfig::scalar(4, 2, 1e-4, q, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut truth = DVector::zeros(4);
    let mut ukf = AugmentedState::new(DVector::from_vec(vec![0.01, -0.01, 0.0, 0.0]), cfg.p0.clone(), layout).unwrap();
    let (mut x, mut p) = (ukf.mean.clone(), ukf.covariance.clone());
    let influence = DVector::from_element(2, 1.0);
    let mut u = &influence * 0.0;
    let (mut worst_x, mut worst_p) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let u1 = &influence * (0.5 * normal(&mut rng));
        truth = &sys.f * &truth + &sys.g * &u;
        let noise = DVector::from_fn(2, |_, _| 0.01 * normal(&mut rng));
        let y = &sys.h * &truth + &sys.d * &u1 + noise;
        let (next, _) = ukf_step(
            &ukf,
            &u,
            &y,
            &u1,
            &cfg,
            |s, uu| &sys.f * s + &sys.g * uu,
            |s, uu| &sys.h * s + &sys.d * uu,
        )
        .unwrap();
        let (xn, pn) = kf_step(&x, &p, &u, &y, &u1, &sys, &cfg.q, &cfg.r, q_in_gain);
        worst_x = worst_x.max((&next.mean - &xn).amax() / xn.amax());
        worst_p = worst_p.max(rel(&next.covariance, &pn));
        ukf = next;
        x = xn;
        p = pn;
        u = u1;
    }
    (worst_x, worst_p)
}
