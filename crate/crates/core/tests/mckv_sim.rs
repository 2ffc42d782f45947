use levy_chaos::linflow::{mean_flow, MatrixFlow, DEFAULT_DET_TOL};
use levy_chaos::mckv_sim::*;
use levy_chaos::measures::{w1_1d, EmpiricalMeasure};
use levy_chaos::stable_noise::{SpectralMeasure, StableSpec};
use levy_chaos::stats;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Driver whose jumps and Gaussian part are numerically absent.
fn silent(alpha: f64, dim: usize) -> StableSpec {
    StableSpec::new(alpha, SpectralMeasure::isotropic_axes(dim, 1e-300).unwrap(), 0.05, f64::INFINITY).unwrap()
}

fn scalar_model(a: f64, ap: f64, noise: StableSpec, mu0: InitialLaw, horizon: f64) -> OUModel {
    OUModel::scalar(a, ap, 1.0, noise, mu0, horizon).unwrap()
}

fn model_2d(noise: StableSpec) -> OUModel {
    let flow = MatrixFlow::new(
        DMatrix::from_row_slice(2, 2, &[-0.4, 0.3, -0.2, -0.1]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.3]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.8]),
        DEFAULT_DET_TOL,
    )
    .unwrap();
    let mu0 = InitialLaw::Uniform { lo: vec![-1.0, 0.0], hi: vec![1.0, 2.0] };
    OUModel::new(flow, noise, mu0, 1.0, 1.2).unwrap()
}

#[test]
fn deterministic_particles_follow_the_ode() {
    for model in [
        scalar_model(-0.5, 0.3, silent(1.5, 1), InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] }, 1.3),
        model_2d(silent(1.5, 2)),
    ] {
        let d = model.dim();
        let n = 7;
        let opts = SimOptions { micro_steps: 5, ..SimOptions::default() };
        let path = simulate_exact(&model, n, &opts, 3).unwrap();
        let x0 = {
            let p = simulate_exact(&model, n, &SimOptions { record: true, micro_steps: 1, ..opts }, 3).unwrap();
            p.snapshots[0].states.clone()
        };
        let p = model.flow.propagators(model.horizon).unwrap();
        let m0 = DVector::from_iterator(d, (0..d).map(|q| x0.iter().skip(q).step_by(d).sum::<f64>() / n as f64));
        for i in 0..n {
            let xi = DVector::from_column_slice(&x0[i * d..(i + 1) * d]);
            let expect = &p.exp_a * xi + &p.kernel * &m0;
            for q in 0..d {
                assert!((path.particle(i)[q] - expect[q]).abs() < 1e-12);
            }
        }
    }
    // A single particle sees its own mean.
    let model = scalar_model(0.2, 0.3, silent(1.5, 1), InitialLaw::Point { x: vec![2.0] }, 1.0);
    let path = simulate_particles_exact(&model, 1, false, 9).unwrap();
    assert!((path.terminal[0] - 2.0 * 0.5f64.exp()).abs() < 1e-12);
}

#[test]
fn euler_is_exact_for_frozen_particles() {
    let model = scalar_model(0.0, 0.0, silent(1.5, 1), InitialLaw::Uniform { lo: vec![-1.0], hi: vec![1.0] }, 1.0);
    let e = simulate_particles_euler(&model, 5, 10, false, 4).unwrap();
    let x = simulate_particles_exact(&model, 5, false, 4).unwrap();
    assert_eq!(e.terminal, x.terminal);
}

#[test]
fn euler_converges_at_order_one_without_noise() {
    let model = scalar_model(-0.8, 0.6, silent(1.5, 1), InitialLaw::Uniform { lo: vec![0.0], hi: vec![2.0] }, 1.0);
    let exact = simulate_particles_exact(&model, 6, false, 1).unwrap();
    let steps = [16usize, 32, 64, 128, 256];
    let errs: Vec<f64> = steps
        .iter()
        .map(|&s| {
            let e = simulate_particles_euler(&model, 6, s, false, 1).unwrap();
            e.terminal.iter().zip(&exact.terminal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let h: Vec<f64> = steps.iter().map(|&s| 1.0 / s as f64).collect();
    let fit = stats::loglog_fit(&h, &errs).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
}

#[test]
fn euler_and_exact_agree_pathwise() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] }, 1.0);
    let mut errs = Vec::new();
    for steps in [8usize, 32, 128, 512] {
        let opts = SimOptions { micro_steps: steps, trunc: TruncMode::ParticleCount, record: false, replication: 2 };
        let a = simulate_exact(&model, 20, &opts, 5).unwrap();
        let b = simulate_euler(&model, 20, &opts, 5).unwrap();
        errs.push(w1_1d(&a.terminal_measure(), &b.terminal_measure()).unwrap());
    }
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 0.05 * errs[0].max(1e-3) + 1e-2, "{errs:?}");
}

#[test]
fn replicated_particle_mean_matches_mean_flow() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![2.0] }, 1.0);
    let target = mean_flow(&model.flow, &DVector::from_element(1, 1.0), 1.0).unwrap()[0];
    let means: Vec<f64> = (0..1500)
        .map(|rep| {
            let opts = SimOptions { micro_steps: 1, trunc: TruncMode::ParticleCount, record: false, replication: rep };
            simulate_exact(&model, 16, &opts, 77).unwrap().empirical_mean()[0]
        })
        .collect();
    let m = stats::mean(&means);
    let se = stats::std_error(&means);
    assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
}

#[test]
fn asymmetric_driver_keeps_the_mean_flow() {
    let spectral = SpectralMeasure::new(vec![(vec![1.0], 0.8), (vec![-1.0], 0.2)]).unwrap();
    let noise = StableSpec::new(1.6, spectral, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.3, 0.2, noise, InitialLaw::Point { x: vec![1.0] }, 1.0);
    let target = (-0.1f64).exp();
    let means: Vec<f64> = (0..1500)
        .map(|rep| {
            let opts = SimOptions { micro_steps: 2, trunc: TruncMode::Level(8.0), record: false, replication: rep };
            simulate_exact(&model, 8, &opts, 78).unwrap().empirical_mean()[0]
        })
        .collect();
    let (m, se) = (stats::mean(&means), stats::std_error(&means));
    assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
}

#[test]
fn determinism_and_mean_recursion() {
    let model = model_2d(StableSpec::new(1.5, SpectralMeasure::isotropic_axes(2, 1.0).unwrap(), 0.05, f64::INFINITY).unwrap());
    let opts = SimOptions { micro_steps: 8, trunc: TruncMode::ParticleCount, record: true, replication: 1 };
    let a = simulate_exact(&model, 12, &opts, 21).unwrap();
    let b = simulate_exact(&model, 12, &opts, 21).unwrap();
    assert!(a.terminal.iter().zip(&b.terminal).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.snapshots.len(), 9);
    assert!(a.mean_recursion_residual().unwrap() < 1e-10);
    let c = simulate_exact(&model, 12, &opts, 22).unwrap();
    assert_ne!(a.terminal, c.terminal);
}

#[test]
fn permuting_particle_labels_permutes_states() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] }, 1.0);
    let opts = SimOptions { micro_steps: 4, trunc: TruncMode::ParticleCount, ..SimOptions::default() };
    let labels: Vec<u64> = (0..10).collect();
    let perm: Vec<u64> = vec![3, 7, 0, 9, 1, 2, 8, 4, 6, 5];
    let a = simulate_exact_labeled(&model, &labels, &opts, 8).unwrap();
    let b = simulate_exact_labeled(&model, &perm, &opts, 8).unwrap();
    for (k, &l) in perm.iter().enumerate() {
        assert!((b.terminal[k] - a.terminal[l as usize]).abs() < 1e-12);
    }
}

#[test]
fn nested_systems_share_random_streams() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] }, 1.0);
    let opts = SimOptions { micro_steps: 1, trunc: TruncMode::Level(f64::INFINITY), record: true, replication: 3 };
    let small = simulate_exact(&model, 8, &opts, 5).unwrap();
    let big = simulate_exact(&model, 16, &opts, 5).unwrap();
    assert_eq!(small.snapshots[0].states[..], big.snapshots[0].states[..8]);
    let j8 = particle_jumps(&model, 5, 3, 2, 8.0);
    let j16 = particle_jumps(&model, 5, 3, 2, 16.0);
    let j_all = particle_jumps(&model, 5, 3, 2, f64::INFINITY);
    assert!(j8.len() <= j16.len() && j16.len() <= j_all.len());
    assert!(j8.times.iter().all(|t| j16.times.contains(t)));
}

#[test]
fn sup_moment_is_stable_under_refinement() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] }, 1.0);
    let beta = 1.2;
    let sup_moment = |steps: usize| {
        let vals: Vec<f64> = (0..300)
            .map(|rep| {
                let opts = SimOptions { micro_steps: steps, trunc: TruncMode::ParticleCount, record: true, replication: rep };
                let p = simulate_exact(&model, 8, &opts, 31 + steps as u64).unwrap();
                p.snapshots.iter().map(|s| s.states[0].abs().powf(beta)).fold(0.0, f64::max)
            })
            .collect();
        (stats::mean(&vals), stats::std_error(&vals))
    };
    let (m1, s1) = sup_moment(16);
    let (m2, s2) = sup_moment(64);
    assert!(m1.is_finite() && m2.is_finite());
    // The finer grid sees a larger supremum, but only slightly.
    assert!((m2 - m1).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt() + 0.05 * m1, "{m1} {m2}");
}

#[test]
fn limit_law_examples() {
    let model = scalar_model(-0.5, 0.3, silent(1.5, 1), InitialLaw::Point { x: vec![1.5] }, 1.0);
    let mu = sample_limit_law(&model, f64::INFINITY, 20, 1).unwrap();
    let expect = 1.5 * (-0.2f64).exp();
    assert!(mu.atoms().iter().all(|x| (x - expect).abs() < 1e-12));

    let level = 6.0;
    let noise = StableSpec::symmetric_1d(1.5, 0.02, f64::INFINITY).unwrap();
    let free = scalar_model(0.0, 0.0, noise.clone(), InitialLaw::Point { x: vec![0.0] }, 0.7);
    let m = 40_000;
    let sample = sample_limit_law(&free, level, m, 2).unwrap();
    for lambda in [0.3, 0.8, 1.5, 3.0] {
        let emp: Complex64 = sample.atoms().iter().map(|x| Complex64::new(0.0, lambda * x).exp()).sum::<Complex64>() / m as f64;
        let exact = (noise.truncated_symbol(&[lambda], level).unwrap() * 0.7).exp();
        assert!((emp - exact).norm() < 4.0 / (m as f64).sqrt(), "lambda {lambda}: {emp} vs {exact}");
    }

    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Uniform { lo: vec![0.0], hi: vec![2.0] }, 1.0);
    let xs = sample_limit_law(&model, 10.0, 20_000, 3).unwrap().atoms().to_vec();
    let target = (-0.2f64).exp();
    assert!((stats::mean(&xs) - target).abs() < 3.0 * stats::std_error(&xs));
}

#[test]
fn truncation_gap_examples() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Point { x: vec![0.0] }, 1.0);
    let g = truncation_gap_at(&model, 16, f64::INFINITY, 10, 1).unwrap();
    assert_eq!(g.mean, 0.0);
    let gaps = truncation_gap(&model, &[4, 16, 64], 200, 9).unwrap();
    for w in gaps.windows(2) {
        assert!(w[1].mean <= w[0].mean + 3.0 * (w[0].std_error + w[1].std_error));
        assert!(w[1].prob_big < w[0].prob_big);
    }
}

#[test]
fn initial_law_quantiles_and_moments() {
    let laws = [
        InitialLaw::Point { x: vec![0.7] },
        InitialLaw::Uniform { lo: vec![-1.0], hi: vec![3.0] },
        InitialLaw::Gaussian { mean: vec![0.0], sd: 1.3 },
        InitialLaw::Gaussian { mean: vec![0.4], sd: 0.5 },
        InitialLaw::SymmetricPareto { scale: 1.0, index: 2.5, dim: 1 },
    ];
    for law in &laws {
        // Integrated quantile against direct quadrature of the quantile.
        for u in [0.1, 0.37, 0.5, 0.8, 0.95] {
            let direct = levy_chaos::quad::adaptive(|p| law.quantile_1d(p), 1e-12, u, 1e-12, 1e-10);
            assert!((law.integrated_quantile_1d(u) - direct).abs() < 1e-6, "{law:?} u={u}");
            let q = law.quantile_1d(u);
            if !matches!(law, InitialLaw::Point { .. }) {
                assert!((law.cdf_1d(q) - u).abs() < 1e-10);
            }
        }
        let mut rng = levy_chaos::rng::stream(5, &[1]);
        let mut x = [0.0];
        let draws: Vec<f64> = (0..200_000)
            .map(|_| {
                law.sample(&mut rng, &mut x);
                x[0].abs().powf(1.2)
            })
            .collect();
        let m = law.abs_moment_1d(1.2).unwrap();
        assert!((stats::mean(&draws) - m).abs() < 5.0 * stats::std_error(&draws) + 1e-9 * m, "{law:?}");
    }
    let heavy = InitialLaw::SymmetricPareto { scale: 1.0, index: 1.2, dim: 1 };
    assert_eq!(heavy.abs_moment_1d(1.5).unwrap(), f64::INFINITY);
}

#[test]
fn w1_to_law_matches_dense_reference() {
    let law = InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] };
    assert!((law.w1_to_sample(&[0.5]).unwrap() - 0.25).abs() < 1e-15);
    let point = InitialLaw::Point { x: vec![0.0] };
    assert_eq!(point.w1_to_sample(&[0.0, 0.0]).unwrap(), 0.0);
    assert!((point.w1_to_sample(&[1.0, -3.0]).unwrap() - 2.0).abs() < 1e-15);
    let xs = [0.3, -1.2, 0.9, 2.2, 0.0];
    for law in [
        InitialLaw::Gaussian { mean: vec![0.2], sd: 0.9 },
        InitialLaw::SymmetricPareto { scale: 0.5, index: 3.0, dim: 1 },
    ] {
        let grid = 200_000;
        let dense: Vec<f64> = (0..grid).map(|k| law.quantile_1d((k as f64 + 0.5) / grid as f64)).collect();
        let reference = w1_1d(&EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap(), &EmpiricalMeasure::uniform(1, dense).unwrap()).unwrap();
        assert!((law.w1_to_sample(&xs).unwrap() - reference).abs() < 1e-4, "{law:?}");
    }
}

#[test]
fn model_roundtrips_through_toml() {
    let text = r#"
        a = [[-0.5]]
        a_prime = [[0.3]]
        b = [[1.0]]
        horizon = 1.0
        beta = 1.2
        [noise]
        alpha = 1.5
        directions = [[1.0], [-1.0]]
        weights = [0.5, 0.5]
        eps = 0.05
        [mu0]
        kind = "uniform"
        lo = [0.0]
        hi = [1.0]
    "#;
    let model: OUModel = toml::from_str(text).unwrap();
    assert_eq!(model.dim(), 1);
    let back: OUModel = toml::from_str(&toml::to_string(&model).unwrap()).unwrap();
    assert_eq!(back, model);
    assert!(model.check_chaos_regime().is_ok());
    assert!(model.pilot_moment(1, 1000).unwrap().is_finite());
    let bad = text.replace("a = [[-0.5]]", "a = [[-0.5, 1.0]]");
    assert!(toml::from_str::<OUModel>(&bad).is_err());
    let heavy = text.replace("kind = \"uniform\"\n        lo = [0.0]\n        hi = [1.0]", "kind = \"symmetric_pareto\"\n        scale = 1.0\n        index = 1.1");
    assert!(toml::from_str::<OUModel>(&heavy).is_err());
}

#[test]
fn snapshot_csv_has_one_row_per_value() {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).unwrap();
    let model = scalar_model(-0.5, 0.3, noise, InitialLaw::Point { x: vec![0.0] }, 1.0);
    let opts = SimOptions { micro_steps: 3, trunc: TruncMode::ParticleCount, record: true, replication: 0 };
    let p = simulate_exact(&model, 4, &opts, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.csv");
    p.write_snapshots_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 4);
    assert!(text.starts_with("replication,time,particle,dim,value"));
}
