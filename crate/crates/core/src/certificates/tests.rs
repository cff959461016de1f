use super::*;
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn params(n: u32, m: u32, p: f64, sigma: f64) -> EmbeddingParams {
    EmbeddingParams::new(n, m, p, sigma).unwrap()
}

fn pt(l: u32, j: u32, k: &[i64]) -> LatticePoint {
    LatticePoint { l, j, k: k.to_vec() }
}

#[test]
fn bump_integrals_match_beta_values() {
    // ∫(1-t²)^q = 2·Π_{i<=q} 2i/(2i+1), and exact derivative integrals.
    let b1 = BumpFunction::new(1);
    let b2 = BumpFunction::new(2);
    let cases = [
        (b1.derivative_norm_p(0, 2.0).unwrap(), 256.0 / 315.0),
        (b1.derivative_norm_p(1, 2.0).unwrap(), 256.0 / 105.0),
        (b1.derivative_norm_p(0, 1.0).unwrap(), 16.0 / 15.0),
        (b1.derivative_norm_p(1, 1.0).unwrap(), 2.0),
        (b1.derivative_norm_p(1, 3.0).unwrap(), 16.0 / 5.0),
        (b2.derivative_norm_p(0, 2.0).unwrap(), 2048.0 / 3003.0),
        (b2.derivative_norm_p(2, 2.0).unwrap(), 1024.0 / 35.0),
    ];
    for (got, want) in cases {
        assert!((got / want - 1.0).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn bump_is_cm_with_support_on_the_cube() {
    for m in 1..=3 {
        let b = BumpFunction::new(m);
        assert_eq!(b.eval(0, 0.0), 1.0);
        for a in 0..=m {
            assert!(b.eval(a, 1.0).abs() < 1e-12 && b.eval(a, -1.0).abs() < 1e-12, "m={m}, a={a}");
            assert_eq!(b.eval(a, 1.5), 0.0);
        }
        assert!(b.eval(m + 1, 1.0).abs() > 1e-3);
    }
}

#[test]
fn seminorm_constants() {
    let k = |n, m, p| seminorm_constant(&params(n, m, p, 1.0)).unwrap();
    for (got, want) in [
        (k(1, 1, 2.0), 3.0),
        (k(2, 1, 2.0), 6.0),
        (k(1, 1, 1.0), 15.0 / 8.0),
        (k(1, 2, 2.0), 3003.0 / 70.0),
        (k(1, 1, 3.0), 48048.0 / 10240.0),
    ] {
        assert!((got / want - 1.0).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn single_function_alpha_is_its_ratio() {
    let pr = params(1, 1, 2.0, 1.0);
    let p = pt(5, 2, &[12]);
    let a = alpha_disjoint(std::slice::from_ref(&p), &pr).unwrap();
    let exact = basis_ratio_quadrature(&p, &pr).unwrap();
    assert!(a.alpha.contains(exact), "{exact} not in {:?}", a.alpha);
    assert_eq!(a.alpha, a.min_ratio);
}

#[test]
fn two_function_alpha_is_the_larger_ratio() {
    // Brute force over coefficient pairs on a grid; ‖g‖ decouples in ℓ_p.
    for p in [1.0, 2.0, 3.0] {
        let pr = params(1, 1, p, 1.0);
        let (f, g) = (pt(4, 1, &[10]), pt(4, 1, &[12]));
        let (rf, rg) = (basis_ratio_quadrature(&f, &pr).unwrap(), basis_ratio_quadrature(&g, &pr).unwrap());
        let lf = 1.0;
        let mut best: f64 = 0.0;
        for i in 0..=200 {
            let t = i as f64 / 200.0 * std::f64::consts::FRAC_PI_2;
            let (a, b) = (t.cos().abs(), t.sin().abs());
            let e = (a.powf(p) * rf.powf(p) * lf + b.powf(p) * rg.powf(p) * lf).powf(1.0 / p);
            let l = (a.powf(p) * lf + b.powf(p) * lf).powf(1.0 / p);
            best = best.max(e / l);
        }
        let enc = alpha_disjoint(&[f, g], &pr).unwrap();
        assert!((best / rf.max(rg) - 1.0).abs() < 1e-12);
        assert!(enc.alpha.contains(best), "p={p}: {best} not in {:?}", enc.alpha);
    }
}

#[test]
fn overlapping_supports_rejected() {
    let pr = params(1, 1, 2.0, 1.0);
    assert!(alpha_disjoint(&[pt(4, 1, &[10]), pt(4, 1, &[11])], &pr).is_err());
    assert!(alpha_disjoint(&[pt(4, 1, &[10]), pt(5, 1, &[21])], &pr).is_err());
    // Shared faces are fine.
    assert!(alpha_disjoint(&[pt(4, 1, &[10]), pt(4, 1, &[12]), pt(5, 1, &[27])], &pr).is_ok());
    let q = params(2, 1, 2.0, 1.0);
    assert!(alpha_disjoint(&[pt(5, 1, &[20, 2]), pt(5, 1, &[20, 4])], &q).is_ok());
    assert!(alpha_disjoint(&[pt(5, 1, &[20, 2]), pt(5, 1, &[21, 3])], &q).is_err());
}

#[test]
fn empty_span_certifies_nothing() {
    let s = build_span(2, 1, &params(1, 1, 2.0, 1.0)).unwrap();
    assert_eq!(s.dim, 0);
    assert_eq!(s.alpha.alpha.hi, 0.0);
}

#[test]
fn lp_scaling_is_exact() {
    for (l, k) in [(3u32, 6i64), (7, -100), (12, 3000)] {
        for p in [1.0, 2.0, 3.0] {
            let r = lp_scaling_ratio(&pt(l, 1, &[k]), p).unwrap();
            assert!((r - 1.0).abs() < 1e-12, "l={l}, p={p}: {r}");
        }
    }
}

#[test]
fn enorm_lies_in_the_enclosure() {
    for p in [1.0, 2.0, 3.0] {
        for m in [1, 2] {
            let pr = params(1, m, p, 0.7);
            let s = build_span(6, 3, &pr).unwrap();
            for q in &s.points {
                let r = basis_ratio_quadrature(q, &pr).unwrap();
                assert!(s.ratio_enclosure.contains(r), "p={p}, m={m}, k={:?}: {r}", q.k);
            }
        }
    }
}

#[test]
fn span_dimension_scales_with_the_gap() {
    // n = 2 approaches shell area over cube area, 3π/4.
    for (n, band) in [(1, 0.75..=1.0), (2, 1.5..=2.36)] {
        let pr = params(n, 1, 2.0, 1.0);
        for g in 3..=6 {
            let s = build_span(2 + g, 2, &pr).unwrap();
            let r = s.dim as f64 / 2f64.powi((n * g) as i32);
            assert!(band.contains(&r), "n={n}, g={g}: {r}");
        }
    }
}

#[test]
fn norm_ratio_law_holds_in_a_fixed_band() {
    for n in [1, 2] {
        for p in [1.0, 2.0, 3.0] {
            let pr = params(n, 1, p, 1.0);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for j in 1..=8 {
                for g in gap_offset(n)..=6 {
                    let s = build_span(j + g, j, &pr).unwrap();
                    let r = s.alpha.alpha.midpoint() / s.reference_scale(&pr);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            assert!(hi / lo <= 10.0, "n={n}, p={p}: [{lo}, {hi}]");
        }
    }
}

#[test]
fn s3_levels_follow_the_base_two_rule() {
    assert_eq!(s3_base_level(4, 16, 1).unwrap(), 6);
    assert_eq!(s3_base_level(16, 16, 1).unwrap(), 16);
    assert_eq!(s3_base_level(1, 16, 1).unwrap(), 5);
    assert_eq!(s3_base_level(3, 16, 1).unwrap(), 6);
    assert_eq!(s3_base_level(1, 16, 2).unwrap(), 3);
    assert!(s3_base_level(17, 16, 1).is_err());
    let levels = s3_levels(16, 1).unwrap();
    assert_eq!(levels[3], 6 + gap_offset(1));
}

#[test]
fn s1_dimension_doubles_as_epsilon_halves() {
    let b = CertificateBuilder::new(&params(1, 1, 2.0, 1.0)).unwrap();
    let dims: Vec<f64> = (8..14).map(|i| b.build_s1(2f64.powi(-i)).unwrap().dim as f64).collect();
    for w in dims.windows(2).skip(2) {
        assert!((w[1] / w[0] / 2.0 - 1.0).abs() < 0.1, "{dims:?}");
    }
}

#[test]
fn s2_dimension_grows_like_inverse_sigma_power() {
    for sigma in [0.5, 1.0, 2.0] {
        let b = CertificateBuilder::new(&params(1, 1, 2.0, sigma)).unwrap();
        let (e1, e2) = if sigma < 1.0 { (1e-2, 1e-3) } else { (1e-3 / sigma, 1e-6 / sigma) };
        let (d1, d2) = (b.build_s2(e1).unwrap().dim as f64, b.build_s2(e2).unwrap().dim as f64);
        let slope = (d2 / d1).ln() / (e1 / e2).ln();
        assert!((slope - 1.0 / sigma).abs() < 0.05, "σ={sigma}: {slope}");
    }
}

#[test]
fn s3_dimension_tracks_j_harmonic_sum() {
    let b = CertificateBuilder::new(&params(1, 1, 2.0, 1.0)).unwrap();
    let ratios: Vec<f64> = [8u32, 16, 32, 64]
        .iter()
        .map(|&j| {
            let h: f64 = (1..=j).map(|i| 1.0 / i as f64).sum();
            b.s3_at(j).unwrap().dim as f64 / (j as f64 * h)
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, c), &x| (a.min(x), c.max(x)));
    assert!(hi / lo <= 4.0, "{ratios:?}");
}

#[test]
fn built_certificates_are_sound() {
    for (n, m, p, sigma) in [(1, 1, 2.0, 1.0), (1, 1, 1.0, 0.5), (1, 2, 3.0, 1.5), (2, 1, 2.0, 0.5)] {
        let b = CertificateBuilder::new(&params(n, m, p, sigma)).unwrap();
        for eps in [0.3, 0.05, 0.01, 1e-3] {
            for c in [b.build_s1(eps).unwrap(), b.build_s2(eps).unwrap(), b.best(eps).unwrap()] {
                assert!(c.is_sound(), "{c:?}");
                assert!(c.dim == 0 || c.alpha_lower <= c.alpha_upper);
            }
        }
    }
}

#[test]
fn certificate_json_carries_provenance() {
    let b = CertificateBuilder::new(&params(1, 1, 2.0, 1.0)).unwrap();
    let c = b.build_s3(0.01).unwrap();
    let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    assert_eq!(v["subspace"]["kind"], "s3");
    for key in ["bump", "seminorm_constant", "gap_offset", "level_rule", "log_base", "alpha_enclosure"] {
        assert!(v["provenance"][key].is_string(), "{key}");
    }
    let back: Mu0Certificate = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn tiny_threshold_gives_empty_certificate() {
    let b = CertificateBuilder::new(&params(1, 1, 2.0, 1.0)).unwrap();
    let c = b.build_s1(0.9).unwrap();
    assert_eq!(c.dim, 0);
    assert!(matches!(c.subspace, SubspaceDescriptor::Empty { .. }));
}

#[test]
fn entropy_single_level_values() {
    let pr = params(1, 1, 2.0, 2.0);
    let c = entropy_lower_single(5, 1, &pr).unwrap();
    assert_eq!(c.lower_value, 2f64.powi(-4));
    assert_eq!(c.n_index, 14);
    let d = entropy_lower_single(7, 3, &pr).unwrap();
    assert_eq!(d.lower_value, 3f64.powf(-2.0) * 2f64.powi(-4));
    assert!(entropy_lower_single(2, 3, &pr).is_err());
}

#[test]
fn coupled_level_domain() {
    assert!(coupled_level(8, &params(1, 1, 2.0, 2.0)).unwrap() >= 8);
    assert!(coupled_level(8, &params(1, 1, 2.0, 0.5)).is_err());
    assert!(coupled_level(8, &params(1, 1, 2.0, 1.0)).is_err());
}

#[test]
fn limiting_family_values() {
    let pr = params(1, 1, 2.0, 1.0);
    assert!(entropy_lower_limiting(8, &params(1, 1, 2.0, 2.0)).is_err());
    let a = entropy_lower_limiting(16, &pr).unwrap();
    let b = entropy_lower_limiting(32, &pr).unwrap();
    assert_eq!(b.lower_value / a.lower_value, 0.5);
    for j in [8u32, 16, 32, 64] {
        let h: f64 = (1..=j).map(|i| 1.0 / i as f64).sum();
        let r = entropy_lower_limiting(j, &pr).unwrap().n_index as f64 / (j as f64 * h);
        assert!((2.0..=8.0).contains(&r), "J={j}: {r}");
    }
}

#[test]
fn entropy_families_are_monotone() {
    for sigma in [0.5, 1.0, 2.0] {
        let fam = entropy_family(&params(1, 1, 2.0, sigma), &[2, 3, 4, 6, 8, 12, 16]).unwrap();
        for w in fam.windows(2) {
            assert!(w[0].n_index < w[1].n_index && w[0].lower_value >= w[1].lower_value, "σ={sigma}");
        }
    }
}

#[test]
fn unit_ball_volumes() {
    let r2 = volume_check_small_n(2, 2.0, 1.0, 1_000_000, 0, 1).unwrap();
    assert!((r2.unit_ball.value / std::f64::consts::PI - 1.0).abs() < 0.01);
    let r1 = volume_check_small_n(2, 1.0, 1.0, 1_000_000, 0, 2).unwrap();
    assert!((r1.unit_ball.value / 2.0 - 1.0).abs() < 0.01);
    assert!(!r1.low_samples);
}

#[test]
fn random_coverings_respect_the_volume_bound() {
    let mut trials = 0;
    for (dim, p) in [(1, 2.0), (2, 1.0), (2, 2.0), (3, 3.0), (4, 2.0)] {
        let r = volume_check_small_n(dim, p, 0.7, 20_000, 20, 11 + dim as u64).unwrap();
        assert!(r.all_hold());
        assert!(r.low_samples);
        trials += r.trials.len();
    }
    assert_eq!(trials, 100);
    assert!(volume_check_small_n(5, 2.0, 1.0, 10, 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_combinations_stay_in_the_enclosure(
        j in 1u32..6, g in 2u32..5, p in 1.0f64..3.5, sigma in 0.1f64..2.5,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 30),
    ) {
        let pr = params(1, 1, p, sigma);
        let s = build_span(j + g, j, &pr).unwrap();
        let (mut e, mut l) = (0.0, 0.0);
        for (q, a) in s.points.iter().zip(coeffs.iter().cycle()) {
            let r = basis_ratio_quadrature(q, &pr).unwrap();
            // ‖f_lk‖_p^p = 2^{-l} ‖f‖_p^p; the common factor cancels.
            e += a.abs().powf(p) * r.powf(p);
            l += a.abs().powf(p);
        }
        prop_assert!(l == 0.0 || s.ratio_enclosure.contains((e / l).powf(1.0 / p)));
    }
}
