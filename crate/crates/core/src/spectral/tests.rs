use super::*;
use crate::galerkin::{assemble_region, AssemblyOptions, Grading, Region};
use nalgebra::DMatrix;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::Rng;
use std::f64::consts::PI;

fn diag(a: &[f64], m: &[f64]) -> DiscretePencil {
    DiscretePencil::from_matrices(SymBand::from_diagonal(a), SymBand::from_diagonal(m)).unwrap()
}

fn params(m: u32, sigma: f64) -> EmbeddingParams {
    EmbeddingParams::new(1, m, 2.0, sigma).unwrap()
}

fn dirichlet(res: usize) -> DiscretePencil {
    assemble_region(&params(1, 0.0), &Region::interval(0.0, 1.0), res, Grading::Uniform, &AssemblyOptions::unit_weight())
        .unwrap()
}

fn ball(m: u32, sigma: f64, res: usize, depth: u32) -> DiscretePencil {
    assemble_region(&params(m, sigma), &Region::ball(), res, Grading::Geometric { depth }, &AssemblyOptions::default())
        .unwrap()
}

/// Random SPD pencil with bandwidth `bw`, from a seeded generator.
fn random_pencil(n: usize, bw: usize, seed: u64) -> DiscretePencil {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |shift: f64| {
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
            b[(i, i)] = shift + rng.gen_range(0.0..1.0);
        }
        SymBand::from_dense(&b, bw)
    };
    let a = make(2.0 * bw as f64 + 1.0);
    let m = make(2.0 * bw as f64 + 1.0);
    DiscretePencil::from_matrices(a, m).unwrap()
}

#[test]
fn diagonal_examples() {
    let p = diag(&[4.0, 9.0], &[1.0, 1.0]);
    assert_eq!(eigs_below(&p, 5.0, &SolverOptions::default()).unwrap().eigenvalues, vec![4.0]);
    assert_eq!(counting_n(&p, 9.0).unwrap(), 2);
    assert_eq!(counting_n(&p, 3.0).unwrap(), 0);
    let a = discrete_approx_numbers(&p, 2, &SolverOptions::default()).unwrap();
    assert_eq!(a, vec![0.5, 1.0 / 3.0]);
    let q = diag(&[4.0, 9.0], &[1.0, 9.0]);
    assert_eq!(eigs_below(&q, 2.0, &SolverOptions::default()).unwrap().eigenvalues, vec![1.0]);
}

#[test]
fn dirichlet_spectrum_below_cap() {
    let s = eigs_below(&dirichlet(400), 100.0, &SolverOptions::default()).unwrap();
    assert_eq!(s.len(), 3);
    for (k, l) in s.eigenvalues.iter().enumerate() {
        let exact = ((k + 1) as f64 * PI).powi(2);
        assert!((l / exact - 1.0).abs() < 1e-3, "{l}");
    }
    assert!(s.max_residual() <= 1e-9);
}

#[test]
fn bisection_route_matches_dense_route() {
    let p = dirichlet(600);
    let sparse = SolverOptions { dense_max: 0, ..SolverOptions::default() };
    let dense = SolverOptions { dense_max: 10_000, ..SolverOptions::default() };
    let a = eigs_below(&p, 4000.0, &sparse).unwrap();
    let b = eigs_below(&p, 4000.0, &dense).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!((x / y - 1.0).abs() < 1e-10, "{x} vs {y}");
    }
    assert!(a.max_residual() <= 1e-9, "{}", a.max_residual());
}

#[test]
fn approximation_numbers_follow_classical_rate() {
    let p = dirichlet(1000);
    let a = discrete_approx_numbers(&p, 100, &SolverOptions::default()).unwrap();
    for (k, ak) in a.iter().enumerate() {
        let r = ak * (k + 1) as f64 * PI;
        assert!((0.99..=1.01).contains(&r), "k={} ratio {r}", k + 1);
    }
}

#[test]
fn mirrored_blocks_repeat_eigenvalues() {
    let p = ball(1, 1.0, 4, 16);
    let s = eigs_below(&p, 30.0, &SolverOptions { dense_max: 0, ..SolverOptions::default() }).unwrap();
    assert!(s.len() >= 2 && s.len().is_multiple_of(2));
    for w in s.eigenvalues.chunks(2) {
        assert_eq!(w[0], w[1]);
    }
}

#[test]
fn m2_pencils_on_both_routes() {
    let p = ball(2, 1.0, 6, 20);
    let sparse = eigs_below(&p, 200.0, &SolverOptions { dense_max: 0, ..SolverOptions::default() }).unwrap();
    let dense = eigs_below(&p, 200.0, &SolverOptions { dense_max: 10_000, ..SolverOptions::default() }).unwrap();
    assert_eq!(sparse.len(), dense.len());
    for (x, y) in sparse.eigenvalues.iter().zip(&dense.eigenvalues) {
        assert!((x / y - 1.0).abs() < 1e-9, "{x} vs {y}");
    }
    assert!(sparse.max_residual() <= 1e-9);
}

#[test]
fn power_iteration_gives_first_approximation_number() {
    for p in [ball(1, 1.0, 4, 16), ball(2, 0.7, 4, 16), dirichlet(200)] {
        let a1 = discrete_approx_numbers(&p, 1, &SolverOptions::default()).unwrap()[0];
        let power = embedding_norm_power(&p, 500).unwrap();
        assert!((a1 / power - 1.0).abs() < 1e-8, "{a1} vs {power}");
    }
}

#[test]
fn duality_on_diagonal_pencils() {
    let r = duality_check(&diag(&[4.0, 9.0, 2.5], &[1.0, 2.0, 0.5])).unwrap();
    assert!(r.deviation() <= 4.0 * f64::EPSILON, "{r:?}");
}

#[test]
fn duality_on_assembled_and_random_pencils() {
    for p in [ball(1, 1.0, 4, 16), ball(2, 1.0, 3, 12), random_pencil(20, 3, 7)] {
        let r = duality_check(&p).unwrap();
        assert!(r.deviation() <= 1e-10, "{r:?}");
    }
}

#[test]
fn duality_rejects_singular_stiffness() {
    let p = diag(&[0.0, 1.0], &[1.0, 1.0]);
    assert!(matches!(duality_check(&p), Err(Error::Precondition(_))));
}

#[test]
fn resolved_pencil_holds_requested_count() {
    let p = resolved_ball_pencil(&params(1, 1.0), 40, 8, &AssemblyOptions::default()).unwrap();
    let a = discrete_approx_numbers(&p, 40, &SolverOptions::default()).unwrap();
    assert!(a.windows(2).all(|w| w[0] >= w[1]));
    assert!(p.dim() >= 400);
}

#[test]
fn spectrum_csv_columns() {
    let s = eigs_below(&diag(&[4.0, 9.0], &[1.0, 1.0]), 10.0, &SolverOptions::default()).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,lambda,a_k,residual"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert_eq!(row[1].parse::<f64>().unwrap(), 4.0);
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn nonpositive_thresholds_rejected() {
    let p = diag(&[4.0], &[1.0]);
    assert!(counting_n(&p, 0.0).is_err());
    assert!(eigs_below(&p, -1.0, &SolverOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counts_match_returned_eigenvalues(seed in 0u64..1000, n in 5usize..60, bw in 1usize..4, t in 0.05f64..1.0) {
        let p = random_pencil(n, bw, seed);
        let top = smallest_eigenvalues(&p, n, &SolverOptions::default()).unwrap()[n - 1];
        let lambda = t * top * 1.1;
        let opts = SolverOptions { dense_max: if seed % 2 == 0 { 0 } else { 1000 }, ..SolverOptions::default() };
        let s = eigs_below(&p, lambda, &opts).unwrap();
        prop_assert_eq!(counting_n(&p, lambda).unwrap(), s.len());
        prop_assert!(s.max_residual() <= 1e-9);
    }

    #[test]
    fn counting_is_monotone(seed in 0u64..1000, x in 0.1f64..10.0, y in 0.1f64..10.0) {
        let p = random_pencil(30, 2, seed);
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        prop_assert!(counting_n(&p, lo).unwrap() <= counting_n(&p, hi).unwrap());
    }
}

