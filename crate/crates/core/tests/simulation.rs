use nalgebra::DVector;
use stiffwatch::simulation::{derive_seed, RealizedDamage};
use stiffwatch::{
    add_noise, assemble_matrices, quake_like, simulate_truth, white_noise, DamageEvent, DamageSchedule,
    DamageTrigger, NoiseSpec, QuakeSpec, SignalSeries, StructureSpec, TruthOptions,
};

fn opts(oversample: usize) -> TruthOptions {
    TruthOptions {
        oversample,
        ..TruthOptions::default()
    }
}

/// Newmark average-acceleration integration of M·ẍ + C·ẋ + K·x = M·Γ·a_g
/// with `sub` substeps per sample and the input held over each sample.
fn newmark(spec: &StructureSpec, ag: &SignalSeries, sub: usize) -> Vec<DVector<f64>> {
    let mats = assemble_matrices(spec).unwrap();
    let (m, c, k) = (&mats.m, &mats.c, &mats.k);
    let n = spec.n_dof();
    let gamma = DVector::from_column_slice(&spec.influence);
    let dt = ag.ts / sub as f64;
    let keff = k + c * (2.0 / dt) + m * (4.0 / (dt * dt));
    let keff = keff.lu();
    let (mut x, mut v) = (DVector::zeros(n), DVector::<f64>::zeros(n));
    let mut out = Vec::with_capacity(ag.len());
    let mut a = DVector::zeros(n);
    for row in &ag.samples {
        out.push(x.clone());
        let f = (m * &gamma) * row[0];
        // Re-seed the acceleration from equilibrium at each input step.
        a = m.clone().lu().solve(&(&f - c * &v - k * &x)).unwrap_or(a);
        for _ in 0..sub {
            let rhs = &f + m * (&x * (4.0 / (dt * dt)) + &v * (4.0 / dt) + &a) + c * (&x * (2.0 / dt) + &v);
            let x_new = keff.solve(&rhs).unwrap();
            let v_new = (&x_new - &x) * (2.0 / dt) - &v;
            let a_new = (&x_new - &x) * (4.0 / (dt * dt)) - &v * (4.0 / dt) - &a;
            x = x_new;
            v = v_new;
            a = a_new;
        }
    }
    out
}

#[test]
fn truth_matches_newmark_integration() {
    let spec = StructureSpec::benchmark_two_story_tmd();
    let ag = white_noise(20.0, 0.02, 0.57, 4).unwrap();
    let truth = simulate_truth(&spec, &DamageSchedule::none(), &ag, &opts(10)).unwrap();
    let reference = newmark(&spec, &ag, 400);
    let peak = reference.iter().map(|x| x.amax()).fold(0.0, f64::max);
    for (k, xr) in reference.iter().enumerate() {
        for i in 0..spec.n_dof() {
            let d = (truth.states.samples[k][i] - xr[i]).abs();
            assert!(d < 1e-5 * peak, "sample {k} dof {i}: {d:e}");
        }
    }
}

#[test]
fn undamped_free_vibration_conserves_energy() {
    let spec = StructureSpec::shear_frame(vec![1000.0, 1000.0], vec![12_000.0, 10_000.0], vec![0.0, 0.0]).unwrap();
    let mats = assemble_matrices(&spec).unwrap();
    let ag = SignalSeries::from_values(0.02, stiffwatch::Channel::new("ag", "m/s^2"), vec![0.0; 5000]).unwrap();
    let x0 = DVector::from_vec(vec![0.05, 0.12, 0.0, -0.03]);
    let o = TruthOptions {
        initial_state: Some(x0),
        ..opts(10)
    };
    let truth = simulate_truth(&spec, &DamageSchedule::none(), &ag, &o).unwrap();
    let energy = |row: &[f64]| {
        let x = DVector::from_column_slice(&row[0..2]);
        let v = DVector::from_column_slice(&row[2..4]);
        0.5 * (v.transpose() * &mats.m * &v)[0] + 0.5 * (x.transpose() * &mats.k * &x)[0]
    };
    let e0 = energy(&truth.states.samples[0]);
    for row in &truth.states.samples {
        assert!((energy(row) - e0).abs() < 1e-9 * e0);
    }
}

#[test]
fn oversampling_has_converged() {
    let spec = StructureSpec::benchmark_two_story();
    let ag = white_noise(60.0, 0.02, 0.57, 9).unwrap();
    let a = simulate_truth(&spec, &DamageSchedule::none(), &ag, &opts(10)).unwrap();
    let b = simulate_truth(&spec, &DamageSchedule::none(), &ag, &opts(100)).unwrap();
    for c in 0..a.outputs.n_channels() {
        let (ra, rb) = (a.outputs.rms(c), b.outputs.rms(c));
        assert!((ra - rb).abs() < 1e-5 * rb, "channel {c}: {ra} vs {rb}");
    }
}

#[test]
fn stiffness_swap_keeps_the_state_continuous() {
    // A time-triggered drop equals stopping at the event sample and restarting
    // the damaged structure from the same state.
    let spec = StructureSpec::benchmark_two_story_tmd();
    let ag = white_noise(20.0, 0.02, 0.57, 2).unwrap();
    let t_f = 9.0;
    let kf = (t_f / 0.02) as usize;
    let schedule = DamageSchedule::drop_at(&spec, 0, 0.9, t_f);
    let full = simulate_truth(&spec, &schedule, &ag, &opts(10)).unwrap();
    assert_eq!(full.realized.len(), 1);
    assert!((full.realized[0].time - t_f).abs() < 1e-9);

    let n = spec.n_dof();
    let x_f = DVector::from_column_slice(&full.states.samples[kf][..2 * n]);
    let before = simulate_truth(&spec, &DamageSchedule::none(), &ag, &opts(10)).unwrap();
    assert_eq!(&before.states.samples[kf][..2 * n], &full.states.samples[kf][..2 * n]);

    let damaged = spec.with_story_stiffness(&[10_800.0, 10_000.0]).unwrap();
    let tail = SignalSeries::new(ag.ts, ag.channels.clone(), ag.samples[kf..].to_vec()).unwrap();
    let o = TruthOptions {
        initial_state: Some(x_f),
        ..opts(10)
    };
    let rest = simulate_truth(&damaged, &DamageSchedule::none(), &tail, &o).unwrap();
    for (j, row) in rest.states.samples.iter().enumerate() {
        let full_row = &full.states.samples[kf + j];
        for i in 0..2 * n {
            assert!((row[i] - full_row[i]).abs() < 1e-12, "step {j} channel {i}");
        }
    }
}

#[test]
fn drift_and_time_triggers_agree() {
    let spec = StructureSpec::benchmark_two_story_tmd();
    let ag = white_noise(60.0, 0.02, 0.57, 1).unwrap();
    let drift = DamageSchedule::none().then(DamageEvent {
        parameter: 0,
        new_stiffness: 10_800.0,
        trigger: DamageTrigger::Drift {
            threshold: 0.08,
            after: 9.0,
        },
    });
    let a = simulate_truth(&spec, &drift, &ag, &opts(10)).unwrap();
    let RealizedDamage { time, .. } = a.realized[0];
    assert!(time >= 9.0);
    let timed = DamageSchedule::none().then(DamageEvent {
        parameter: 0,
        new_stiffness: 10_800.0,
        trigger: DamageTrigger::AtTime(time),
    });
    let b = simulate_truth(&spec, &timed, &ag, &opts(10)).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.realized, b.realized);
}

#[test]
fn tmd_suppresses_the_late_response() {
    let ag = quake_like(60.0, 0.02, &QuakeSpec::near_field(), derive_seed(1, 0)).unwrap();
    let late = |spec: &StructureSpec| {
        let t = simulate_truth(spec, &DamageSchedule::none(), &ag, &opts(10)).unwrap();
        let k35 = (35.0 / 0.02) as usize;
        t.states.samples[k35..].iter().map(|r| r[0].abs()).fold(0.0, f64::max)
    };
    let with = late(&StructureSpec::benchmark_two_story_tmd());
    let without = late(&StructureSpec::benchmark_two_story());
    assert!(with < 0.01, "TMD peak after 35 s: {with}");
    assert!(without > 0.01, "bare peak after 35 s: {without}");
    assert!(with < without);
}

#[test]
fn noise_streams_are_independent_and_reproducible() {
    let ag = white_noise(60.0, 0.02, 0.57, 7).unwrap();
    let a = add_noise(&ag, &NoiseSpec::uniform(0.01, derive_seed(7, 1))).unwrap();
    let b = add_noise(&ag, &NoiseSpec::uniform(0.01, derive_seed(7, 1))).unwrap();
    let c = add_noise(&ag, &NoiseSpec::uniform(0.01, derive_seed(7, 2))).unwrap();
    assert_eq!(a, b);
    let na: Vec<f64> = a.channel(0).iter().zip(ag.channel(0)).map(|(x, y)| x - y).collect();
    let nc: Vec<f64> = c.channel(0).iter().zip(ag.channel(0)).map(|(x, y)| x - y).collect();
    let n = na.len() as f64;
    let corr = na.iter().zip(&nc).map(|(x, y)| x * y).sum::<f64>() / n / 1e-4;
    assert!(corr.abs() < 4.0 / n.sqrt(), "cross-correlation {corr}");
    let rms = (na.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    assert!((rms - 0.01).abs() < 0.01 * 4.0 / (2.0 * n).sqrt());
}

#[test]
fn accelerometer_outputs_satisfy_the_equation_of_motion() {
    // Accelerometers read ẍ = Γ·a_g − M⁻¹(C·ẋ + K·x).
    let spec = StructureSpec::benchmark_two_story_tmd();
    let ag = white_noise(10.0, 0.02, 0.57, 3).unwrap();
    let o = TruthOptions {
        sensors: Some(stiffwatch::SensorLayout::accelerometers(0..3)),
        ..opts(10)
    };
    let t = simulate_truth(&spec, &DamageSchedule::none(), &ag, &o).unwrap();
    let mats = assemble_matrices(&spec).unwrap();
    let minv = mats.m.clone().try_inverse().unwrap();
    let n = spec.n_dof();
    let gamma = DVector::from_column_slice(&spec.influence);
    for ((row, y), ag) in t.states.samples.iter().zip(&t.outputs.samples).zip(&ag.samples) {
        let x = DVector::from_column_slice(&row[..n]);
        let v = DVector::from_column_slice(&row[n..2 * n]);
        let expect: DVector<f64> = &gamma * ag[0] - &minv * (&mats.c * &v + &mats.k * &x);
        let got = DVector::from_column_slice(y);
        assert!((expect - got).amax() < 1e-10);
    }
}

#[test]
fn free_decay_shows_first_mode_damping() {
    // After the second mode has died out, successive peaks of the top story
    // decay by the logarithmic decrement of the first mode.
    let spec = StructureSpec::benchmark_two_story();
    let ag = SignalSeries::from_values(0.02, stiffwatch::Channel::new("ag", "m/s^2"), vec![0.0; 25_000]).unwrap();
    let o = TruthOptions {
        initial_state: Some(DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0])),
        ..opts(10)
    };
    let t = simulate_truth(&spec, &DamageSchedule::none(), &ag, &o).unwrap();
    let x2 = t.states.channel(1);
    let peaks: Vec<f64> = (1..x2.len() - 1)
        .filter(|&k| k as f64 * 0.02 > 80.0 && x2[k] > x2[k - 1] && x2[k] >= x2[k + 1])
        .map(|k| x2[k])
        .collect();
    let cycles = (peaks.len() - 1) as f64;
    let delta = (peaks[0] / peaks[peaks.len() - 1]).ln() / cycles;
    let zeta = delta / (4.0 * std::f64::consts::PI.powi(2) + delta * delta).sqrt();
    assert!((100.0 * zeta - 0.92).abs() <= 0.05, "damping {:.3}%", 100.0 * zeta);
}
