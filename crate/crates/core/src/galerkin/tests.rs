use super::*;
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// Dense generalized eigenvalues through `L^{-1} A L^{-T}` with `M = L Lᵀ`.
fn dense_eigs(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let l = m.clone().cholesky().expect("M positive definite").l();
    let li = l.try_inverse().unwrap();
    let c = &li * a * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn pencil_eigs(p: &DiscretePencil) -> Vec<f64> {
    let (a, m) = p.to_dense();
    dense_eigs(&a, &m)
}

/// Eigenvalues of the first block only; mirrored blocks repeat them.
fn block_eigs(p: &DiscretePencil) -> Vec<f64> {
    let b = &p.blocks[0];
    dense_eigs(&b.a.to_dense(), &b.m.to_dense())
}

fn params(m: u32, sigma: f64) -> EmbeddingParams {
    EmbeddingParams::new(1, m, 2.0, sigma).unwrap()
}

#[test]
fn uniform_mesh_of_symmetric_interval() {
    let mesh = build_mesh(&Region::interval(-1.0, 1.0), 4, Grading::Uniform).unwrap();
    assert_eq!(mesh.physical_nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
}

#[test]
fn geometric_mesh_hits_dyadic_radii() {
    let mesh = build_mesh(&Region::interval(0.0, 1.0), 2, Grading::Geometric { depth: 3 }).unwrap();
    let nodes = mesh.physical_nodes();
    for r in [0.125, 0.25, 0.5, 1.0, 0.0] {
        assert!(nodes.contains(&r), "missing {r}");
    }
    assert!(nodes.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn shell_mesh_covers_only_the_shell() {
    let mesh = build_mesh(&Region::shell(2), 4, Grading::Geometric { depth: 6 }).unwrap();
    let nodes = mesh.physical_nodes();
    assert!(nodes.iter().all(|x| (0.25 - 1e-14..=0.5 + 1e-14).contains(&x.abs())));
    assert!(nodes.iter().any(|&x| (x + 0.5).abs() < 1e-14));
    assert!(nodes.iter().any(|&x| (x - 0.25).abs() < 1e-14));
}

#[test]
fn empty_region_and_low_resolution_rejected() {
    assert!(build_mesh(&Region::interval(0.5, 0.5), 4, Grading::Uniform).is_err());
    assert!(build_mesh(&Region::interval(0.0, 1.0), 1, Grading::Uniform).is_err());
}

#[test]
fn unweighted_dirichlet_first_eigenvalue() {
    let p = assemble_region(
        &params(1, 0.0),
        &Region::interval(0.0, 1.0),
        200,
        Grading::Uniform,
        &AssemblyOptions::unit_weight(),
    )
    .unwrap();
    let ev = pencil_eigs(&p);
    assert!((ev[0] / (PI * PI) - 1.0).abs() < 1e-3, "{}", ev[0]);
    assert!((ev[1] / (4.0 * PI * PI) - 1.0).abs() < 1e-3, "{}", ev[1]);
}

#[test]
fn clamped_beam_first_eigenvalue() {
    // f'''' = λ f with f = f' = 0 at both ends: λ_1 = β^4, cosh β cos β = 1.
    let beta: f64 = 4.730_040_744_862_704;
    let p = assemble_region(
        &params(2, 0.0),
        &Region::interval(0.0, 1.0),
        40,
        Grading::Uniform,
        &AssemblyOptions::unit_weight(),
    )
    .unwrap();
    let ev = pencil_eigs(&p);
    assert!((ev[0] / beta.powi(4) - 1.0).abs() < 1e-6, "{}", ev[0]);
}

#[test]
fn assembled_matrices_are_symmetric() {
    let p = assemble_region(&params(2, 1.0), &Region::ball(), 4, Grading::Geometric { depth: 10 }, &AssemblyOptions::default())
        .unwrap();
    let (a, m) = p.to_dense();
    assert_eq!(a, a.transpose());
    assert_eq!(m, m.transpose());
}

#[test]
fn refinement_lowers_eigenvalues() {
    for m in [1, 2] {
        let pr = params(m, 1.0);
        let coarse =
            assemble_region(&pr, &Region::ball(), 3, Grading::Geometric { depth: 14 }, &AssemblyOptions::default()).unwrap();
        let fine =
            assemble_region(&pr, &Region::ball(), 6, Grading::Geometric { depth: 14 }, &AssemblyOptions::default()).unwrap();
        let (ec, ef) = (pencil_eigs(&coarse), pencil_eigs(&fine));
        for k in 0..10 {
            assert!(ef[k] <= ec[k] * (1.0 + 1e-12), "m={m} k={k}: {} > {}", ef[k], ec[k]);
        }
    }
}

#[test]
fn log_chart_agrees_with_linear_chart() {
    // Same operator, two independent discretizations of the ball.
    for m in [1, 2] {
        let pr = params(m, 1.0);
        let log = assemble_region(&pr, &Region::ball(), 16, Grading::Geometric { depth: 24 }, &AssemblyOptions::default())
            .unwrap();
        let lin = assemble_region(
            &pr,
            &Region::interval(-1.0, 1.0),
            10,
            Grading::Geometric { depth: 24 },
            &AssemblyOptions::default(),
        )
        .unwrap();
        let (el, ex) = (block_eigs(&log), pencil_eigs(&lin));
        // The linear chart sees both halves, so its eigenvalues come in pairs.
        for k in 0..2 {
            for x in [ex[2 * k], ex[2 * k + 1]] {
                assert!((el[k] / x - 1.0).abs() < 2e-3, "m={m} k={k}: {} vs {x}", el[k]);
            }
        }
    }
}

#[test]
fn mirrored_halves_give_double_eigenvalues() {
    let p = assemble_region(&params(1, 1.0), &Region::ball(), 8, Grading::Geometric { depth: 20 }, &AssemblyOptions::default())
        .unwrap();
    assert_eq!(p.blocks.len(), 1);
    assert_eq!(p.blocks[0].multiplicity, 2);
    let ev = pencil_eigs(&p);
    assert!((ev[0] - ev[1]).abs() <= 1e-10 * ev[0]);
}

#[test]
fn restriction_to_full_region_is_identity() {
    let p = assemble_region(&params(1, 1.0), &Region::ball(), 4, Grading::Geometric { depth: 12 }, &AssemblyOptions::default())
        .unwrap();
    let r = restrict(&p, &Region::ball()).unwrap();
    assert_eq!(r.blocks, p.blocks);
}

#[test]
fn shell_restriction_keeps_interior_dofs() {
    let p = assemble_region(&params(2, 1.0), &Region::ball(), 4, Grading::Geometric { depth: 12 }, &AssemblyOptions::default())
        .unwrap();
    let r = restrict(&p, &Region::shell(3)).unwrap();
    let (lo, hi) = (dyadic_depth(2), dyadic_depth(3));
    assert_eq!(r.blocks.len(), 1);
    assert!(r.blocks[0].dofs.iter().all(|d| d.coord > lo && d.coord < hi));
    // 4 elements per octave leave 3 interior nodes with 2 DOFs each.
    assert_eq!(r.blocks[0].dim(), 6);
}

#[test]
fn disjoint_subregions_decouple() {
    let p = assemble_region(&params(1, 1.0), &Region::ball(), 4, Grading::Geometric { depth: 12 }, &AssemblyOptions::default())
        .unwrap();
    let union = Region::Radial(vec![
        Band { depth_lo: dyadic_depth(1), depth_hi: dyadic_depth(2) },
        Band { depth_lo: dyadic_depth(4), depth_hi: dyadic_depth(6) },
    ]);
    let r = restrict(&p, &union).unwrap();
    assert_eq!(r.blocks.len(), 2);
    let s1 = restrict(&p, &Region::shell(2)).unwrap();
    let s2 = restrict(&p, &Region::shells(5, 6)).unwrap();
    assert_eq!(r.blocks[0], s1.blocks[0]);
    assert_eq!(r.blocks[1], s2.blocks[0]);
}

#[test]
fn misaligned_subregion_rejected() {
    let p = assemble_region(&params(1, 1.0), &Region::ball(), 4, Grading::Geometric { depth: 12 }, &AssemblyOptions::default())
        .unwrap();
    let bad = Region::Radial(vec![Band { depth_lo: 0.3, depth_hi: 1.0 }]);
    assert!(matches!(restrict(&p, &bad), Err(Error::Domain(_))));
    assert!(matches!(restrict_free(&p, &bad), Err(Error::Domain(_))));
}

#[test]
fn zero_trace_and_free_restrictions_bracket() {
    let p = assemble_region(&params(1, 1.0), &Region::ball(), 6, Grading::Geometric { depth: 16 }, &AssemblyOptions::default())
        .unwrap();
    let whole = pencil_eigs(&p);
    let parts = [Region::shells(1, 2), Region::shells(3, 5), Region::inner_ball(5)];
    let mut zero: Vec<f64> = Vec::new();
    let mut free: Vec<f64> = Vec::new();
    for part in &parts {
        zero.extend(pencil_eigs(&restrict(&p, part).unwrap()));
        free.extend(pencil_eigs(&restrict_free(&p, part).unwrap()));
    }
    zero.sort_by(f64::total_cmp);
    free.sort_by(f64::total_cmp);
    for lambda in [5.0, 20.0, 80.0, 300.0] {
        let count = |v: &[f64]| v.iter().filter(|&&e| e < lambda).count();
        assert!(count(&zero) <= count(&whole), "λ={lambda}");
        assert!(count(&whole) <= count(&free), "λ={lambda}");
    }
}

#[test]
fn hardy_constant_is_resolution_independent() {
    // Inner ball of radius 2^{-8}: λ_1(A, M_log) stays bounded below.
    for m in [1, 2] {
        let pr = params(m, 1.0);
        let mut firsts = Vec::new();
        for res in [3, 6, 12] {
            let opts = AssemblyOptions { mass: MassWeight::Log, ..AssemblyOptions::default() };
            let p = assemble_region(&pr, &Region::inner_ball(8), res, Grading::Geometric { depth: 32 }, &opts).unwrap();
            firsts.push(block_eigs(&p)[0]);
        }
        let bound = origin_potential(m) * 0.5;
        for &l in &firsts {
            assert!(l >= bound, "m={m}: λ_1 = {l}");
        }
        assert!((firsts[2] / firsts[1] - 1.0).abs() < 1e-2, "{firsts:?}");
    }
}

#[test]
fn wrong_order_mesh_rejected() {
    let mesh = build_mesh(&Region::ball(), 4, Grading::Geometric { depth: 8 }).unwrap();
    assert!(matches!(
        assemble(&params(2, 1.0), &mesh, &AssemblyOptions::default()),
        Err(Error::Domain(_))
    ));
    assert!(assemble(&EmbeddingParams::new(1, 1, 3.0, 1.0).unwrap(), &mesh, &AssemblyOptions::default()).is_err());
}

#[test]
fn matrix_market_round_trip() {
    let p = assemble_region(&params(2, 0.7), &Region::ball(), 3, Grading::Geometric { depth: 6 }, &AssemblyOptions::default())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pm) = export_pencil(&p, dir.path(), "ball").unwrap();
    let (da, dm) = p.to_dense();
    for (path, dense) in [(pa, da), (pm, dm)] {
        let (dim, entries) = read_matrix_market(std::fs::File::open(path).unwrap()).unwrap();
        assert_eq!(dim, p.dim());
        let mut back = DMatrix::zeros(dim, dim);
        for (i, j, v) in entries {
            assert!(i >= j);
            back[(i, j)] = v;
            back[(j, i)] = v;
        }
        assert_eq!(back, dense);
    }
}

#[test]
fn region_labels() {
    assert_eq!(Region::ball().label(), "ball");
    assert_eq!(Region::shell(3).label(), "shell(3)");
    assert_eq!(Region::shells(2, 5).label(), "shells(2..5)");
    assert_eq!(Region::inner_ball(4).label(), "inner_ball(4)");
    assert_eq!(Region::interval(0.0, 1.0).label(), "(0, 1)");
}
