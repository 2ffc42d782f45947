use levy_chaos::density_fourier::{CharFunction, GridParams};
use levy_chaos::error::Error;
use levy_chaos::functionals::{BuiltinFunctional, Functional, Profile};
use levy_chaos::kolmogorov::*;
use levy_chaos::measures::EmpiricalMeasure;
use levy_chaos::mckv_sim::{InitialLaw, OUModel};
use levy_chaos::quad;
use levy_chaos::stable_noise::{SpectralMeasure, StableSpec};
use levy_chaos::stats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRUNC: f64 = 5.0;

fn model(a: f64, ap: f64, noise: StableSpec) -> OUModel {
    OUModel::scalar(a, ap, 1.0, noise, InitialLaw::Point { x: vec![0.0] }, 1.0).unwrap()
}

fn ou() -> OUModel {
    model(-0.5, 0.3, StableSpec::symmetric_1d(1.5, 0.05, TRUNC).unwrap())
}

fn linear(profile: Profile) -> BuiltinFunctional {
    BuiltinFunctional::Linear { profile }
}

fn density() -> Backend {
    Backend::Density { grid: GridParams::default() }
}

fn random_measure(n: usize, seed: u64) -> EmpiricalMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    EmpiricalMeasure::weighted(1, atoms, raw).unwrap()
}

fn uniform_atoms(n: usize, seed: u64) -> EmpiricalMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmpiricalMeasure::uniform(1, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn phi_terminal_condition_and_linear_mean() {
    let m = ou();
    let u = linear(Profile::Sqrt1p { scale: 1.0 });
    let sg = Semigroup::new(&m, TRUNC, u.clone(), density()).unwrap();
    let mu = random_measure(5, 1);
    let at0 = sg.phi(0.0, &mu).unwrap();
    assert_eq!(at0.value, u.eval(&mu));
    assert_eq!(at0.tolerance, 0.0);
    assert!(sg.phi(1.5, &mu).is_err());

    let sg = Semigroup::new(&m, TRUNC, linear(Profile::Affine { slope: vec![1.0] }), density()).unwrap();
    for t in [0.3, 1.0] {
        let expect = ((-0.5f64 + 0.3) * t).exp() * mu.mean()[0];
        assert!((sg.phi(t, &mu).unwrap().value - expect).abs() < 1e-9);
    }
}

#[test]
fn backends_agree() {
    let m = ou();
    let u = linear(Profile::Sqrt1p { scale: 1.0 });
    let dens = Semigroup::new(&m, TRUNC, u.clone(), density()).unwrap();
    let mc = Semigroup::new(&m, TRUNC, u, Backend::MonteCarlo { samples: 40_000, seed: 5 }).unwrap();
    for (t, seed) in [(0.4, 2), (0.9, 3)] {
        let mu = random_measure(4, seed);
        let a = dens.phi(t, &mu).unwrap();
        let b = mc.phi(t, &mu).unwrap();
        assert!((a.value - b.value).abs() <= a.tolerance + b.tolerance, "{a:?} vs {b:?}");
    }
}

#[test]
fn density_backend_rejects_nonlinear_functionals() {
    let u = BuiltinFunctional::Quadratic { psi: Profile::Sqrt1p { scale: 1.0 } };
    assert!(matches!(Semigroup::new(&ou(), TRUNC, u, density()), Err(Error::UnsupportedFunctional(_))));
}

#[test]
fn flat_derivative_matches_closed_forms_and_differences() {
    let u = linear(Profile::Sqrt1p { scale: 1.0 });
    // Without coupling the flat derivative is the one-particle expectation.
    let m0 = model(-0.5, 0.0, StableSpec::symmetric_1d(1.5, 0.05, TRUNC).unwrap());
    let sg0 = Semigroup::new(&m0, TRUNC, u.clone(), density()).unwrap();
    let mu = random_measure(3, 4);
    let v = 0.7;
    let dirac = EmpiricalMeasure::dirac(&[v]).unwrap();
    let direct = sg0.phi(0.6, &dirac).unwrap().value;
    assert!((sg0.flat_derivative_phi(0.6, &mu, v).unwrap() - direct).abs() < 1e-12);

    let sg = Semigroup::new(&ou(), TRUNC, u, density()).unwrap();
    for (t, v) in [(0.3, -1.2), (0.8, 0.4), (1.0, 2.5)] {
        let d: Vec<f64> = sg.flat_derivative_phi_many(t, &mu, &[v]).unwrap();
        let centered = d[0]
            - mu.iter().map(|(x, w)| w * sg.flat_derivative_phi(t, &mu, x[0]).unwrap()).sum::<f64>();
        let fd = sg.flat_derivative_phi_fd(t, &mu, v, 1e-4).unwrap();
        assert!((centered - fd).abs() < 1e-4 * fd.abs().max(1e-2), "{centered} vs {fd}");
        let h = 1e-4;
        let slope = (sg.flat_derivative_phi(t, &mu, v + h).unwrap() - sg.flat_derivative_phi(t, &mu, v - h).unwrap()) / (2.0 * h);
        assert!((sg.flat_derivative_phi_grad(t, &mu, v).unwrap() - slope).abs() < 1e-6);
    }
}

#[test]
fn flat_derivative_slope_is_uniformly_bounded() {
    // Class-C propagation: |∂_v δφ/δm| stays below a fixed constant.
    let sg = Semigroup::new(&ou(), TRUNC, linear(Profile::Sqrt1p { scale: 1.0 }), density()).unwrap();
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 1.0] {
        for seed in 0..3 {
            let mu = random_measure(4, 10 + seed);
            for v in [-10.0, -1.0, 0.0, 3.0, 30.0] {
                worst = worst.max(sg.flat_derivative_phi_grad(t, &mu, v).unwrap().abs());
            }
        }
    }
    // e^{tA} + |K_t| with a 1-Lipschitz profile.
    assert!(worst.is_finite() && worst <= 1.0 + 0.3, "{worst}");
}

#[test]
fn generator_vanishes_in_trivial_cases() {
    let q = GeneratorQuadrature::default();
    let mu = random_measure(5, 7);
    let sg = Semigroup::new(&ou(), TRUNC, linear(Profile::Constant { value: 2.0 }), density()).unwrap();
    assert!(sg.measure_generator(0.5, &mu, &q).unwrap().value.abs() < 1e-12);
    let still = model(0.0, 0.0, StableSpec::symmetric_1d(1.5, 0.05, TRUNC).unwrap());
    let sg = Semigroup::new(&still, TRUNC, linear(Profile::Affine { slope: vec![1.0] }), density()).unwrap();
    assert!(sg.measure_generator(0.5, &mu, &q).unwrap().value.abs() < 1e-9);
    assert!(sg.measure_generator(0.0, &mu, &q).unwrap().value.abs() < 1e-12);
}

#[test]
fn single_particle_generator_matches_char_function() {
    // A = A' = 0: φ(t, δ_x) = Re(e^{iwx} χ_t(w)) and ∂_t φ = Re(e^{iwx} ψ(w) χ_t(w)).
    let noise = StableSpec::symmetric_1d(1.5, 0.05, TRUNC).unwrap();
    let m = model(0.0, 0.0, noise.clone());
    let w = 1.3;
    let u = linear(Profile::Cosine { amp: 1.0, freq: vec![w] });
    let sg = Semigroup::new(&m, TRUNC, u, density()).unwrap();
    let cf = CharFunction::new(&m, TRUNC, 0.5).unwrap();
    let psi = noise.truncated_symbol(&[w], TRUNC).unwrap();
    for x in [0.0, 0.8, -2.1] {
        let mu = EmpiricalMeasure::dirac(&[x]).unwrap();
        let e = num_complex::Complex64::from_polar(1.0, w * x) * cf.value(&[w]).unwrap();
        assert!((sg.phi(0.5, &mu).unwrap().value - e.re).abs() < 1e-9);
        let gen = sg.measure_generator(0.5, &mu, &GeneratorQuadrature::default()).unwrap();
        assert!((gen.value - (e * psi).re).abs() < 1e-7, "{} vs {}", gen.value, (e * psi).re);
    }
}

#[test]
fn pde_residual_on_the_ou_grid() {
    let times = [0.2, 0.35, 0.5, 0.65, 0.8];
    let measures: Vec<EmpiricalMeasure> = (0..4).map(|k| random_measure(5, 100 + k)).collect();
    let sg = Semigroup::new(&ou(), TRUNC, linear(Profile::Sqrt1p { scale: 1.0 }), density()).unwrap();
    let report = pde_residual(&sg, &times, &measures, &PdeOptions::default()).unwrap();
    assert_eq!(report.points.len(), 20);
    assert!(report.pass, "{report:?}");
    assert!(report.max_residual < 1e-4);

    let sg = Semigroup::new(&ou(), TRUNC, linear(Profile::Constant { value: 1.0 }), density()).unwrap();
    let report = pde_residual(&sg, &times[..2], &measures[..1], &PdeOptions::default()).unwrap();
    assert!(report.max_residual < 1e-12);
}

#[test]
fn semigroup_is_constant_along_the_flow() {
    let sg = Semigroup::new(&ou(), TRUNC, linear(Profile::Sqrt1p { scale: 1.0 }), density()).unwrap();
    let mu = random_measure(5, 9);
    let c = flow_constancy(&sg, &mu, 16, 1000, 21).unwrap();
    assert_eq!(c.times.len(), 16);
    assert!(c.pass, "{c:?}");
}

#[test]
fn generator_gap_for_linear_functional_is_zero() {
    let u = linear(Profile::Sqrt1p { scale: 1.0 });
    let g = generator_gap(&ou(), TRUNC, &u, &uniform_atoms(16, 3), &GeneratorQuadrature::default()).unwrap();
    assert!(g.gap.abs() < 1e-10, "{g:?}");
}

/// `-(1/N) ∫ [ψ(Bz) + ψ(-Bz) - 2ψ(0)] dν`, integrated in `log r`.
fn gap_oracle(u: &BuiltinFunctional, m: &OUModel, x: &EmpiricalMeasure) -> f64 {
    let alpha = m.noise.alpha();
    let n = x.len() as f64;
    let v = x.atom(0)[0];
    let mut total = 0.0;
    for (theta, w) in m.noise.spectral().atoms() {
        let b = m.flow.as_scalar().unwrap().2 * theta[0];
        let f = |s: f64| {
            let r = s.exp();
            let h = b * r;
            let d2 = |p: f64, q: f64| u.flat_d2(x, &[p], &[q]).unwrap();
            0.5 * (d2(v + h, v + h) - 2.0 * d2(v + h, v) + d2(v, v)) * (-alpha * s).exp()
        };
        let split = TRUNC.ln();
        total += w * (quad::adaptive(f, -60.0, 0.0, 1e-15, 1e-13) + quad::adaptive(f, 0.0, split, 1e-15, 1e-13));
    }
    total / n
}

#[test]
fn generator_gap_is_order_one_over_n() {
    let m = ou();
    let u = BuiltinFunctional::Quadratic { psi: Profile::Sqrt1p { scale: 1.0 } };
    let q = GeneratorQuadrature::default();
    let one = uniform_atoms(1, 4);
    let g1 = generator_gap(&m, TRUNC, &u, &one, &q).unwrap();
    let oracle = gap_oracle(&u, &m, &one);
    assert!((g1.gap - oracle).abs() < 1e-6, "{} vs {oracle}", g1.gap);

    let ns = [8usize, 16, 32, 64, 128, 256];
    let gaps: Vec<f64> = ns.iter().map(|&n| generator_gap(&m, TRUNC, &u, &uniform_atoms(n, n as u64), &q).unwrap().gap.abs()).collect();
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let fit = stats::loglog_fit(&nf, &gaps).unwrap();
    assert!((fit.slope + 1.0).abs() < 0.2, "slope {}", fit.slope);
    let scaled: Vec<f64> = gaps.iter().zip(&nf).map(|(g, n)| g * n).collect();
    for w in scaled.windows(2) {
        assert!((w[1] - w[0]).abs() <= 0.2 * w[0], "{scaled:?}");
    }
}

#[test]
fn generator_gap_needs_second_flat_derivative_and_truncation() {
    let m = ou();
    let x = uniform_atoms(4, 1);
    let q = GeneratorQuadrature::default();
    let u = BuiltinFunctional::Quadratic { psi: Profile::Sqrt1p { scale: 1.0 } };
    assert!(generator_gap(&m, f64::INFINITY, &u, &x, &q).is_err());

    struct FirstOrder;
    impl Functional for FirstOrder {
        fn eval(&self, mu: &EmpiricalMeasure) -> f64 {
            mu.mean()[0]
        }
        fn flat_d1(&self, _: &EmpiricalMeasure, v: &[f64]) -> f64 {
            v[0]
        }
        fn grad_d1(&self, _: &EmpiricalMeasure, _: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
        fn lipschitz_d1(&self) -> Option<f64> {
            Some(1.0)
        }
        fn lipschitz_d2(&self) -> Option<f64> {
            None
        }
        fn growth_order(&self) -> f64 {
            1.0
        }
        fn name(&self) -> String {
            "first-order".into()
        }
    }
    assert!(matches!(generator_gap(&m, TRUNC, &FirstOrder, &x, &q), Err(Error::UnsupportedFunctional(_))));
}

#[test]
fn generator_quadrature_is_self_consistent_for_skewed_noise() {
    let spectral = SpectralMeasure::new(vec![(vec![1.0], 0.9), (vec![-1.0], 0.2)]).unwrap();
    let noise = StableSpec::new(1.5, spectral, 0.05, TRUNC).unwrap();
    let m = model(-0.5, 0.3, noise);
    let u = BuiltinFunctional::Quadratic { psi: Profile::Cosine { amp: 1.0, freq: vec![0.7] } };
    let est = measure_generator_of(&m, TRUNC, &u, &uniform_atoms(6, 2), &GeneratorQuadrature::default()).unwrap();
    assert!(est.tolerance < 1e-6 * est.value.abs().max(1.0));
}
