use levy_chaos::quad::gl;
use levy_chaos::stable_noise::*;
use levy_chaos::stats::{ks_two_sample, mean, poisson_chi_square, skewness, variance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(alpha: f64, eps: f64, trunc: f64) -> StableSpec {
    StableSpec::symmetric_1d(alpha, eps, trunc).unwrap()
}

/// Geometric-panel quadrature of `∫_0^δ g(r) r^{-1-α} dr`, independent of the
/// kernel tables used by the library. Panels are split further so that each
/// covers at most one radian of `r * freq`.
fn radial_oracle(alpha: f64, delta: f64, freq: f64, g: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut hi = delta;
    // 300 halvings leave an untreated ball whose contribution is below 1e-18.
    for _ in 0..300 {
        let lo = hi * 0.5;
        let pieces = ((hi - lo) * freq.abs()).ceil().max(1.0) as usize;
        let h = (hi - lo) / pieces as f64;
        for k in 0..pieces {
            let a = lo + k as f64 * h;
            total += gl(24).integrate(a, a + h, |r| g(r) * r.powf(-1.0 - alpha));
        }
        hi = lo;
    }
    total
}

/// `cos x - 1` without cancellation.
fn cos_m1(x: f64) -> f64 {
    -2.0 * (0.5 * x).sin().powi(2)
}

/// `sin x - x` without cancellation.
fn sin_m_id(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        -x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0))
    } else {
        x.sin() - x
    }
}

#[test]
fn annulus_mass_examples() {
    let unit = StableSpec::new(1.0, SpectralMeasure::new(vec![(vec![1.0], 1.0)]).unwrap(), 0.01, f64::INFINITY).unwrap();
    assert!((levy_annulus_mass(&unit, 1.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
    let two = StableSpec::new(1.5, SpectralMeasure::symmetric_1d(2.0).unwrap(), 0.01, f64::INFINITY).unwrap();
    let got = levy_annulus_mass(&two, 1.0, 2.0).unwrap();
    let oracle = 2.0 * gl(30).integrate(1.0, 2.0, |r| r.powf(-2.5));
    assert!((got - oracle).abs() < 1e-13);
    assert!((got - 0.8619).abs() < 1e-4);
    assert_eq!(levy_annulus_mass(&two, 1.5, 1.5).unwrap(), 0.0);
    assert!(levy_annulus_mass(&two, 0.0, 1.0).is_err());
    assert!(levy_annulus_mass(&two, -1.0, 1.0).is_err());
}

#[test]
fn symbol_vanishes_at_zero_frequency() {
    let s = pair(1.5, 0.01, f64::INFINITY);
    let v = s.truncated_symbol(&[0.0], 3.0).unwrap();
    assert_eq!(v.re, 0.0);
    assert_eq!(v.im, 0.0);
    assert!(s.truncated_symbol(&[1.0], 0.0).is_err());
    assert!(s.truncated_symbol(&[1.0], -2.0).is_err());
}

#[test]
fn symmetric_symbol_is_real_and_nonpositive() {
    let s = StableSpec::new(1.2, SpectralMeasure::isotropic_axes(2, 1.0).unwrap(), 0.01, 5.0).unwrap();
    for l in [[0.3, -1.0], [4.0, 2.0], [-20.0, 0.1]] {
        for delta in [0.5, 5.0, f64::INFINITY] {
            let v = s.truncated_symbol(&l, delta).unwrap();
            assert_eq!(v.im, 0.0);
            assert!(v.re <= 0.0);
        }
    }
}

#[test]
fn untruncated_symbol_constant_and_homogeneity() {
    let s = pair(1.5, 0.01, f64::INFINITY);
    let c_quad = {
        // ∫_0^∞ (1 - cos u) u^{-2.5} du by panels plus the far tail.
        let mut total = -radial_oracle(1.5, 1.0, 1.0, cos_m1);
        let mut lo = 1.0;
        while lo < 20000.0 {
            total += gl(24).integrate(lo, lo + 1.0, |u| (1.0 - u.cos()) * u.powf(-2.5));
            lo += 1.0;
        }
        total + lo.powf(-1.5) / 1.5
    };
    let closed = fc_infinity_closed_form(1.5);
    assert!((c_quad - closed).abs() < 1e-6, "{c_quad} vs {closed}");
    for lam in [0.3, 1.0, 2.7] {
        let v = s.truncated_symbol(&[lam], f64::INFINITY).unwrap();
        let expected = -closed * lam.powf(1.5);
        assert!((v.re - expected).abs() < 1e-9 * expected.abs());
        let v2 = s.truncated_symbol(&[2.0 * lam], f64::INFINITY).unwrap();
        assert!((v2.re - 2f64.powf(1.5) * v.re).abs() < 1e-9 * v2.re.abs());
    }
    assert!((fc_infinity_closed_form(1.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    let cauchy = pair(1.0, 0.01, f64::INFINITY);
    let v = cauchy.truncated_symbol(&[1.0], f64::INFINITY).unwrap();
    assert!((v.re + std::f64::consts::FRAC_PI_2).abs() < 1e-9);
}

#[test]
fn truncated_symbol_matches_direct_quadrature() {
    let atoms = vec![(vec![1.0], 0.8), (vec![-1.0], 0.3)];
    for &alpha in &[0.6, 1.0, 1.4, 1.8] {
        let s = StableSpec::new(alpha, SpectralMeasure::new(atoms.clone()).unwrap(), 0.01, 10.0).unwrap();
        for &lam in &[0.2f64, 1.0, 7.5, 60.0] {
            for &delta in &[0.3, 2.0, 10.0] {
                let got = s.truncated_symbol(&[lam], delta).unwrap();
                let mut re = 0.0;
                let mut im = 0.0;
                for (theta, w) in [(1.0, 0.8), (-1.0, 0.3)] {
                    let a = lam * theta;
                    re += w * radial_oracle(alpha, delta, a, |r| cos_m1(r * a));
                    im += w * radial_oracle(alpha, delta, a, |r| sin_m_id(r * a));
                }
                let scale = re.abs().max(im.abs());
                assert!((got.re - re).abs() < 1e-9 * scale, "re alpha={alpha} lam={lam} delta={delta}: {} vs {re}", got.re);
                assert!((got.im - im).abs() < 1e-9 * scale, "im alpha={alpha} lam={lam} delta={delta}: {} vs {im}", got.im);
            }
        }
    }
}

#[test]
fn sine_kernel_limit_matches_gamma_closed_form() {
    for &alpha in &[1.2, 1.5, 1.8] {
        let k = RadialKernels::new(alpha);
        let closed = statrs::function::gamma::gamma(-alpha) * (std::f64::consts::FRAC_PI_2 * alpha).sin();
        assert!((k.fs(f64::INFINITY) - closed).abs() < 1e-10 * closed.abs(), "alpha {alpha}");
        assert!((k.fc(f64::INFINITY) - fc_infinity_closed_form(alpha)).abs() < 1e-10);
        // Far field: Fc(∞) - Fc(X) = X^{-α}/α up to an O(X^{-1-α}) oscillation.
        let x: f64 = 1e6;
        let gap = k.fc(f64::INFINITY) - k.fc(x);
        assert!((gap - x.powf(-alpha) / alpha).abs() < 2.0 * x.powf(-1.0 - alpha));
    }
    let asym = StableSpec::new(0.8, SpectralMeasure::new(vec![(vec![1.0], 1.0)]).unwrap(), 0.01, f64::INFINITY).unwrap();
    assert!(asym.truncated_symbol(&[1.0], f64::INFINITY).is_err());
}

#[test]
fn real_part_coercive_on_grid() {
    // Re ψ_δ(λ) <= -η' (|λ|^α ∧ |λ|^2) with a fitted η' > 0.
    let s = StableSpec::new(1.5, SpectralMeasure::isotropic_axes(2, 1.0).unwrap(), 0.01, 3.0).unwrap();
    let mut eta: f64 = f64::INFINITY;
    for i in 0..40 {
        let r = 0.05 * 1.2f64.powi(i);
        for k in 0..12 {
            let ang = k as f64 * std::f64::consts::PI / 12.0;
            let l = [r * ang.cos(), r * ang.sin()];
            let v = s.truncated_symbol(&l, 3.0).unwrap().re;
            let bound = r.powf(1.5).min(r * r);
            eta = eta.min(-v / bound);
        }
    }
    assert!(eta > 0.0 && eta.is_finite(), "fitted eta {eta}");
}

#[test]
fn empty_stream_when_trunc_equals_eps() {
    let s = pair(1.5, 0.5, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let st = s.sample_jump_stream(10.0, &mut rng);
    assert!(st.is_empty());
    assert!(st.small_drift.iter().all(|&x| x == 0.0));
    assert!(st.big_drift.unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn symmetric_drift_is_zero_and_asymmetric_is_not() {
    let s = pair(1.5, 0.01, f64::INFINITY);
    let (small, big) = s.compensator_drifts();
    assert_eq!(small, vec![0.0]);
    assert_eq!(big, Some(vec![0.0]));
    let a = StableSpec::new(1.5, SpectralMeasure::new(vec![(vec![1.0], 1.0)]).unwrap(), 0.1, f64::INFINITY).unwrap();
    let (small, big) = a.compensator_drifts();
    // -∫_{0.1}^{1} r^{-1.5} dr and -∫_1^∞ r^{-1.5} dr.
    assert!((small[0] + (0.1f64.powf(-0.5) - 1.0) / 0.5).abs() < 1e-12);
    assert!((big.unwrap()[0] + 2.0).abs() < 1e-12);
    let c = StableSpec::new(0.7, SpectralMeasure::new(vec![(vec![1.0], 1.0)]).unwrap(), 0.1, f64::INFINITY).unwrap();
    assert!(c.compensator_drifts().1.is_none());
}

#[test]
fn jump_counts_are_poisson() {
    let s = StableSpec::new(1.5, SpectralMeasure::new(vec![(vec![1.0], 1.0)]).unwrap(), 1.0, f64::INFINITY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = Vec::new();
    for _ in 0..10_000 {
        let st = s.sample_jump_stream(3.0, &mut rng);
        assert!(st.times.windows(2).all(|w| w[0] < w[1]));
        assert!(st.times.iter().all(|&t| t > 0.0 && t <= 3.0));
        for i in 0..st.len() {
            assert!(st.mark_norm(i) >= 1.0);
        }
        counts.push(st.len() as u64);
    }
    let m = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    let sigma = (2.0f64 / 10_000.0).sqrt();
    assert!((m - 2.0).abs() < 3.0 * sigma, "mean count {m}");
    let (_, _, p) = poisson_chi_square(&counts, 2.0);
    assert!(p > 0.01, "chi-square p {p}");
}

#[test]
fn marks_respect_radius_bounds() {
    let s = StableSpec::new(1.1, SpectralMeasure::isotropic_axes(3, 2.0).unwrap(), 0.2, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let st = s.sample_jump_stream(5.0, &mut rng);
    assert!(!st.is_empty());
    for i in 0..st.len() {
        let r = st.mark_norm(i);
        assert!((0.2..4.0).contains(&r));
    }
}

#[test]
fn small_jump_covariance_examples() {
    let s = pair(1.5, 0.01, f64::INFINITY);
    assert!((s.small_jump_cov()[(0, 0)] - 0.2).abs() < 1e-14);
    let tiny = pair(1.5, 1e-12, f64::INFINITY);
    assert!(tiny.small_jump_cov()[(0, 0)] < 1e-5);
    let iso = StableSpec::new(1.3, SpectralMeasure::isotropic_axes(3, 1.0).unwrap(), 0.05, f64::INFINITY).unwrap();
    let c = iso.small_jump_cov();
    let diag = c[(0, 0)];
    assert!(diag > 0.0);
    for r in 0..3 {
        for k in 0..3 {
            let expected = if r == k { diag } else { 0.0 };
            assert!((c[(r, k)] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn cms_oracle_gaussian_limit_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    assert!(sample_stable_oracle_1d(2.5, 1.0, 1, &mut rng).is_err());
    assert!(sample_stable_oracle_1d(0.0, 1.0, 1, &mut rng).is_err());
    let x = sample_stable_oracle_1d(1.9999, 0.7, 100_000, &mut rng).unwrap();
    let v = variance(&x);
    assert!((v - 2.0 * 0.49).abs() < 0.05, "variance {v}");
    assert!(skewness(&x).abs() < 0.1);
    assert!(mean(&x).abs() < 0.02);
    let y = sample_stable_oracle_1d(1.5, 1.0, 50_000, &mut rng).unwrap();
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    assert!(ks_two_sample(&y, &neg).p_value > 0.01);
}

#[test]
fn cms_scale_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = sample_stable_oracle_1d(1.3, 2.5, 40_000, &mut rng).unwrap();
    let b: Vec<f64> = sample_stable_oracle_1d(1.3, 1.0, 40_000, &mut rng).unwrap().into_iter().map(|v| 2.5 * v).collect();
    assert!(ks_two_sample(&a, &b).p_value > 0.01);
}

#[test]
fn decomposition_matches_cms_oracle() {
    let s = pair(1.5, 0.01, f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let dec: Vec<f64> = (0..20_000).map(|_| s.sample_increment(1.0, &mut rng).unwrap()[0]).collect();
    let cms = sample_stable_oracle_1d(1.5, symmetric_scale_1d(&s), 20_000, &mut rng).unwrap();
    let ks = ks_two_sample(&dec, &cms);
    assert!(ks.p_value > 0.01, "KS {ks:?}");
}

#[test]
fn increments_are_self_similar() {
    // Empirical characteristic functions of Z_t and t^{1/α} Z_1.
    let s = pair(1.5, 0.02, f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 20_000;
    let t: f64 = 0.3;
    let zt: Vec<f64> = (0..n).map(|_| s.sample_increment(t, &mut rng).unwrap()[0]).collect();
    let z1: Vec<f64> = (0..n).map(|_| t.powf(1.0 / 1.5) * s.sample_increment(1.0, &mut rng).unwrap()[0]).collect();
    let mut sup: f64 = 0.0;
    for k in 1..=20 {
        let lam = 0.25 * k as f64;
        let cf = |xs: &[f64]| xs.iter().map(|x| (lam * x).cos()).sum::<f64>() / xs.len() as f64;
        sup = sup.max((cf(&zt) - cf(&z1)).abs());
    }
    // Each empirical cf has standard deviation below 1/sqrt(2n); 5 sigma band on the difference.
    assert!(sup < 5.0 * (1.0 / n as f64).sqrt(), "sup discrepancy {sup}");
}

#[test]
fn spec_roundtrips_through_serde() {
    let s = StableSpec::new(1.3, SpectralMeasure::new(vec![(vec![0.6, 0.8], 1.0), (vec![-1.0, 0.0], 0.5)]).unwrap(), 0.05, 7.0).unwrap();
    let json = serde_json::to_string(&s).unwrap();
    let back: StableSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(s, back);
    let inf = pair(1.5, 0.01, f64::INFINITY);
    let back: StableSpec = serde_json::from_str(&serde_json::to_string(&inf).unwrap()).unwrap();
    assert!(back.trunc().is_infinite());
}

#[test]
fn invalid_specs_rejected() {
    let m = SpectralMeasure::symmetric_1d(1.0).unwrap();
    assert!(StableSpec::new(2.0, m.clone(), 0.01, 1.0).is_err());
    assert!(StableSpec::new(1.5, m.clone(), 0.0, 1.0).is_err());
    assert!(StableSpec::new(1.5, m, 0.5, 0.1).is_err());
    assert!(SpectralMeasure::new(vec![(vec![0.9], 1.0)]).is_err());
    assert!(SpectralMeasure::new(vec![(vec![1.0], -1.0)]).is_err());
    let degenerate = SpectralMeasure::new(vec![(vec![1.0, 0.0], 1.0), (vec![-1.0, 0.0], 1.0)]).unwrap();
    assert!(degenerate.nondegeneracy().abs() < 1e-15);
}
