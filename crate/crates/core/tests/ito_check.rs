use levy_chaos::functionals::{BuiltinFunctional, Profile};
use levy_chaos::ito_check::{check_regime, ito_lhs, ito_residual, ito_rhs, Coefficient, ItoExperiment, Regime};
use levy_chaos::kolmogorov::GeneratorQuadrature;
use levy_chaos::mckv_sim::InitialLaw;
use levy_chaos::quad;
use levy_chaos::stable_noise::StableSpec;
use levy_chaos::Error;

fn power(beta: f64) -> BuiltinFunctional {
    BuiltinFunctional::SmoothedPower { beta, eps: 0.5 }
}

fn experiment(alpha: f64, eps: f64, beta: f64, paths: usize, nodes: usize) -> ItoExperiment {
    ItoExperiment {
        noise: StableSpec::symmetric_1d(alpha, eps, 20.0).unwrap(),
        drift: Coefficient::Constant { value: 0.3 },
        sigma: Coefficient::Constant { value: 1.0 },
        mu0: InitialLaw::Uniform { lo: vec![-1.0], hi: vec![1.0] },
        functional: power(beta),
        horizon: 1.0,
        paths,
        nodes,
        table_spacing: 0.0025,
        quad: GeneratorQuadrature::default(),
        outer_radius: 1e3,
        correlated: false,
    }
}

#[test]
fn coefficient_integrals_match_quadrature() {
    let cs = [
        Coefficient::Constant { value: -0.7 },
        Coefficient::Linear { intercept: 0.4, slope: -1.3 },
        Coefficient::Sine { amp: 1.1, freq: 3.0, phase: 0.2 },
    ];
    for c in &cs {
        let (a, b) = (0.15, 0.9);
        let i1 = quad::adaptive(|s| c.value(s), a, b, 1e-13, 1e-13);
        let i2 = quad::adaptive(|s| c.value(s).powi(2), a, b, 1e-13, 1e-13);
        assert!((c.integral(a, b) - i1).abs() < 1e-11, "{c:?}");
        assert!((c.square_integral(a, b) - i2).abs() < 1e-11, "{c:?}");
        let grid_sup = (0..=1000).map(|k| c.value(k as f64 / 1000.0).abs()).fold(0.0, f64::max);
        assert!(c.sup_abs(1.0) >= grid_sup - 1e-12);
        assert!((c.power_integral(2.0, 1.0) - c.square_integral(0.0, 1.0)).abs() < 1e-10);
    }
}

#[test]
fn regimes_follow_growth_and_holder_exponents() {
    assert_eq!(check_regime(1.5, &power(1.2)).unwrap(), Regime::SubCritical);
    assert_eq!(check_regime(0.7, &power(0.5)).unwrap(), Regime::SuperCritical);
    assert_eq!(check_regime(1.0, &power(0.5)).unwrap(), Regime::Critical);
    // Growth at or above alpha.
    assert!(matches!(check_regime(1.5, &power(1.6)), Err(Error::InvalidExperiment(_))));
    assert!(matches!(check_regime(0.7, &power(0.8)), Err(Error::InvalidExperiment(_))));
    assert!(matches!(check_regime(1.0, &power(1.0)), Err(Error::InvalidExperiment(_))));
    // Gradient only 0.4-Hölder while alpha - 1 = 0.5.
    assert!(matches!(check_regime(1.5, &power(0.4)), Err(Error::InvalidExperiment(_))));
    let lin = BuiltinFunctional::Linear { profile: Profile::Sqrt1p { scale: 1.0 } };
    assert_eq!(check_regime(1.7, &lin).unwrap(), Regime::SubCritical);
}

#[test]
fn invalid_experiments_are_rejected() {
    let mut e = experiment(1.5, 0.05, 1.2, 100, 8);
    e.nodes = 7;
    assert!(ito_lhs(&e, 1).is_err());
    let mut e = experiment(1.5, 0.05, 1.2, 100, 8);
    e.paths = 1;
    assert!(ito_rhs(&e, 1).is_err());
    let e = experiment(1.5, 0.05, 1.7, 100, 8);
    assert!(matches!(ito_residual(&e, 1), Err(Error::InvalidExperiment(_))));
}

#[test]
fn integrability_values_have_closed_forms() {
    let e = experiment(1.5, 0.05, 1.2, 100, 8);
    let i = e.integrability().unwrap();
    // Unit total weight, sigma = 1, t = 1, gamma = 1.
    assert!((i.drift - 0.3f64.powf(1.2)).abs() < 1e-12);
    assert!((i.small_jumps - 1.0 / 0.5).abs() < 1e-9);
    let big = (20f64.powf(1.2 - 1.5) - 1.0) / (1.2 - 1.5);
    assert!((i.big_jumps - big).abs() < 1e-9, "{} vs {big}", i.big_jumps);
}

#[test]
fn zero_horizon_gives_exact_zero() {
    let mut e = experiment(1.5, 0.05, 1.2, 500, 8);
    e.horizon = 0.0;
    let r = ito_residual(&e, 3).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert_eq!(r.rhs, 0.0);
    assert_eq!(r.residual, 0.0);
    assert!(r.pass);
}

#[test]
fn odd_linear_functional_with_symmetric_data_vanishes() {
    let mut e = experiment(1.5, 0.05, 1.2, 4000, 8);
    e.drift = Coefficient::Constant { value: 0.0 };
    e.functional = BuiltinFunctional::Linear { profile: Profile::Sine { amp: 1.0, freq: vec![1.3] } };
    let (lhs, se) = ito_lhs(&e, 11).unwrap();
    assert!(lhs.abs() < 4.0 * se, "{lhs} ± {se}");
    let (rhs, se) = ito_rhs(&e, 11).unwrap();
    assert!(rhs.abs() < 4.0 * se, "{rhs} ± {se}");
}

#[test]
fn deterministic_paths_match_the_ode() {
    let mut e = experiment(1.5, 0.05, 1.2, 50, 64);
    e.sigma = Coefficient::Constant { value: 0.0 };
    e.drift = Coefficient::Linear { intercept: 1.0, slope: 0.5 };
    e.mu0 = InitialLaw::Point { x: vec![0.2] };
    e.functional = BuiltinFunctional::Linear { profile: Profile::Sqrt1p { scale: 1.0 } };
    let phi = |x: f64| (1.0 + x * x).sqrt();
    let x_t = 0.2 + 1.0 + 0.25;
    let exact = phi(x_t) - phi(0.2);
    let (lhs, se) = ito_lhs(&e, 5).unwrap();
    assert!((lhs - exact).abs() < 1e-12 && se < 1e-12, "{lhs} ± {se} vs {exact}");
    let (rhs, _) = ito_rhs(&e, 5).unwrap();
    // Midpoint rule on a smooth integrand.
    assert!((rhs - exact).abs() < 1e-4, "{rhs} vs {exact}");
    let r = ito_residual(&e, 5).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn radial_quadrature_is_stable_under_refinement() {
    let e = experiment(1.5, 0.05, 1.2, 2000, 8);
    let (coarse, _) = ito_rhs(&e, 2).unwrap();
    let mut fine = e.clone();
    fine.quad = e.quad.refined();
    let (refined, _) = ito_rhs(&fine, 2).unwrap();
    assert!(((coarse - refined) / refined).abs() <= 1e-3, "{coarse} vs {refined}");
    assert!(coarse.is_finite() && coarse.abs() > 1e-3);
}

#[test]
fn residual_is_deterministic_and_within_tolerance() {
    for (alpha, eps, beta) in [(1.5, 0.05, 1.2), (0.7, 0.01, 0.5), (1.0, 0.02, 0.5)] {
        let e = experiment(alpha, eps, beta, 20_000, 16);
        let a = ito_residual(&e, 42).unwrap();
        let b = ito_residual(&e, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.pass, "alpha {alpha}: {a:?}");
        assert!(a.holder_constant.is_finite() && a.holder_constant > 0.0);
        assert!(a.tolerance_parts.monte_carlo > 0.0);
        assert!(a.tolerance_parts.table < 0.1 * a.tolerance_parts.monte_carlo, "{:?}", a.tolerance_parts);
        assert_eq!(a.tolerance_parts.tail, 0.0);
    }
}

#[test]
fn untruncated_driver_adds_a_tail_bound() {
    let mut e = experiment(0.7, 0.01, 0.5, 20_000, 16);
    e.noise = StableSpec::symmetric_1d(0.7, 0.01, f64::INFINITY).unwrap();
    let r = ito_residual(&e, 8).unwrap();
    assert!(r.tolerance_parts.tail > 0.0 && r.tolerance_parts.tail.is_finite());
    assert!(r.pass, "{r:?}");
}

#[test]
fn measure_dependent_functional_is_supported() {
    let mut e = experiment(1.5, 0.05, 1.2, 400, 8);
    e.functional = BuiltinFunctional::Quadratic { psi: Profile::Cosine { amp: 1.0, freq: vec![0.7] } };
    let r = ito_residual(&e, 9).unwrap();
    assert!(r.pass, "{r:?}");
}
