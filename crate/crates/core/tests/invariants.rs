//! Property tests for the structural invariants of each module.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtpl_core::cg::{cg_solve, CgConfig};
use mtpl_core::dynamics::{antisymmetrize, DynamicsHeads, GAMMA_FLOOR, SOURCE_CLAMP};
use mtpl_core::gradcheck::random_topology;
use mtpl_core::graph::{assemble_dense, laplacian_apply, ScreenedSystem};
use mtpl_core::harness::smooth_field;
use mtpl_core::layer::{feedback_tau, symmetric_form, Feedback};
use mtpl_core::maze::{
    generate_maze, Maze, MazeBatch, MazeModel, MazeModelConfig, CLASS_GOAL, CLASS_SOURCE,
};
use mtpl_core::multigrid::{ObjectConfig, ObjectLayer};
use mtpl_core::nn::Activation;
use mtpl_core::readout::{mixed_stress, split_mixed, stress_energy, GradientField};
use mtpl_core::scan::{coefficients, AffineElem};
use mtpl_core::stencil::Grid2;
use mtpl_core::{ModelParams, Tape, Tensor};

fn system(seed: u64, n: usize) -> (ScreenedSystem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Arc::new(random_topology(n, n, &mut rng).unwrap());
    let w: Arc<[f64]> = (0..topo.n_edges())
        .map(|_| rng.gen_range(0.1..3.0))
        .collect();
    let lambda = (0..n).map(|_| rng.gen_range(0.01..2.0)).collect();
    let b = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (ScreenedSystem::new(topo, w, lambda).unwrap(), b)
}

fn row_sums_are_one(t: &Tensor) -> bool {
    (0..t.rows()).all(|i| {
        (t.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12 && t.row(i).iter().all(|&v| v >= 0.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tensor_length_matches_shape(r in 0usize..6, c in 0usize..6, extra in 1usize..3) {
        prop_assert!(Tensor::new(vec![r, c], vec![0.0; r * c]).is_ok());
        prop_assert!(Tensor::new(vec![r, c], vec![0.0; r * c + extra]).is_err());
    }

    #[test]
    fn random_topologies_are_simple(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = random_topology(n, n, &mut rng).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for (i, j) in topo.edges() {
            prop_assert!(i != j && i < n && j < n);
            prop_assert!(seen.insert((i.min(j), i.max(j))));
        }
    }

    #[test]
    fn nonpositive_coefficients_are_rejected(seed in any::<u64>(), n in 3usize..20, at in 0usize..3) {
        let (sys, _) = system(seed, n);
        let topo = Arc::clone(sys.topology());
        let mut w = sys.conductances().to_vec();
        let mut l = sys.damping().to_vec();
        if at == 0 { w[0] = 0.0 } else if at == 1 { l[n - 1] = -1e-3 } else { l[0] = f64::NAN }
        prop_assert!(ScreenedSystem::new(topo, w.into(), l).is_err());
    }

    #[test]
    fn screened_operator_is_spd(seed in any::<u64>(), n in 2usize..60) {
        let (sys, b) = system(seed, n);
        let a = assemble_dense(&sys, n).unwrap();
        prop_assert_eq!(&a, &a.transpose());
        prop_assert!(a.clone().cholesky().is_some());
        let dense: Vec<f64> = (&a * nalgebra::DVector::from_column_slice(&b)).iter().copied().collect();
        let free = laplacian_apply(&sys, &b).unwrap();
        for (x, y) in dense.iter().zip(&free) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn converged_solves_meet_tolerance(seed in any::<u64>(), n in 2usize..120, tol in prop::sample::select(vec![1e-6, 1e-9, 1e-12])) {
        let (sys, b) = system(seed, n);
        let cfg = CgConfig { max_iters: 10 * n, rel_tol: tol, abs_floor: 1e-30, jacobi: seed % 2 == 0 };
        let rec = cg_solve(&sys, &b, &cfg).unwrap();
        prop_assert!(rec.rel_residual <= tol);
    }

    #[test]
    fn invalid_solver_configs_are_rejected(n in 2usize..10) {
        let (sys, b) = system(n as u64, n);
        let zero_iters = CgConfig { max_iters: 0, ..CgConfig::default() };
        let zero_tol = CgConfig { rel_tol: 0.0, ..CgConfig::default() };
        prop_assert!(cg_solve(&sys, &b, &zero_iters).is_err());
        prop_assert!(cg_solve(&sys, &b, &zero_tol).is_err());
    }

    #[test]
    fn symmetric_form_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::matrix(d, d, (0..d * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let s = symmetric_form(&raw).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!(s.get(i, j) >= 0.0);
                prop_assert!(s.get(i, j) == s.get(j, i));
            }
        }
    }

    #[test]
    fn feedback_temperature_stays_in_range(rounds in 1usize..40) {
        for r in 0..rounds {
            let tau = feedback_tau(r, rounds, Feedback::default());
            prop_assert!((0.2..=1.0).contains(&tau));
        }
    }

    #[test]
    fn assignments_are_row_stochastic(seed in any::<u64>(), n in 1usize..40, k in 1usize..5, objects in 1usize..9) {
        let mut params = ModelParams::new(seed);
        let cfg = ObjectConfig { objects, ..ObjectConfig::default() };
        let layer = ObjectLayer::register(&mut params, "obj", &cfg, k, k, Activation::Silu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = Tensor::matrix(n, k, (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let pos = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let (rho, tau) = layer.assignment(&bound, tape.constant(psi), tape.constant(pos)).unwrap();
        prop_assert!(tau > 0.0);
        prop_assert!(row_sums_are_one(&rho.value()));
    }

    #[test]
    fn operator_projections_respect_floors(seed in any::<u64>(), p in 1usize..30, k in 1usize..6) {
        let mut params = ModelParams::new(seed);
        let heads = DynamicsHeads::register(&mut params, "dyn", 3, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Tensor::matrix(p, 3, (0..3 * p).map(|_| rng.gen_range(-50.0..50.0)).collect()).unwrap();
        let (_, c) = heads.project(&params, &h).unwrap();
        prop_assert!(c.sigma.data().iter().all(|&v| v >= 0.0));
        prop_assert!(c.gamma.data().iter().all(|&v| v >= GAMMA_FLOOR));
        prop_assert!(c.s.data().iter().all(|&v| v.abs() <= SOURCE_CLAMP));
        let j = heads.j_anti(&params).unwrap();
        for a in 0..k {
            for b in 0..k {
                prop_assert!(j.get(a, b) == -j.get(b, a));
            }
        }
    }

    #[test]
    fn antisymmetrized_matrices_are_skew(seed in any::<u64>(), k in 1usize..33) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::matrix(k, k, (0..k * k).map(|_| rng.gen_range(-1e3..1e3)).collect()).unwrap();
        let j = antisymmetrize(&raw).unwrap();
        let t = j.transpose().unwrap();
        prop_assert!(j.data().iter().zip(t.data()).all(|(a, b)| a == &-b));
    }

    #[test]
    fn stress_energy_diagonal_is_nonnegative(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid2::new(6, 7);
        let psi = smooth_field(grid, k, &mut rng);
        let g = GradientField::sobel(&psi, grid).unwrap();
        let f = stress_energy(&g).unwrap();
        prop_assert!(f.e_diag.data().iter().all(|&v| v >= 0.0));
        prop_assert!(f.e_diag.is_finite() && f.e_cross.is_finite() && f.vorticity.is_finite());
        let (sym, anti) = split_mixed(&mixed_stress(&g).unwrap(), k).unwrap();
        for p in 0..grid.pixels() {
            for a in 0..k {
                for b in 0..k {
                    prop_assert!(sym.get(p, a * k + b) == sym.get(p, b * k + a));
                    prop_assert!(anti.get(p, a * k + b) == -anti.get(p, b * k + a));
                }
            }
        }
    }

    #[test]
    fn scan_gains_lie_in_unit_interval(w in prop::collection::vec(1e-6f64..1e6, 1..50), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: Vec<f64> = w.iter().map(|_| 10f64.powf(rng.gen_range(-6.0..6.0))).collect();
        let b = vec![1.0; w.len()];
        let chain = coefficients(&w, &l, &b).unwrap();
        prop_assert_eq!(chain.len(), w.len());
        prop_assert!(chain.alpha.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn affine_composition_is_associative(v in prop::array::uniform6(-2.0f64..2.0), x in -5.0f64..5.0) {
        let (p, q, r) = (
            AffineElem { a: v[0], b: v[1] },
            AffineElem { a: v[2], b: v[3] },
            AffineElem { a: v[4], b: v[5] },
        );
        let left = r.after(q).after(p);
        let right = r.after(q.after(p));
        prop_assert!((left.a - right.a).abs() <= 1e-12 * (1.0 + left.a.abs()));
        prop_assert!((left.b - right.b).abs() <= 1e-12 * (1.0 + left.b.abs()));
        prop_assert!((left.apply(x) - r.apply(q.apply(p.apply(x)))).abs() <= 1e-12 * (1.0 + left.apply(x).abs()));
        prop_assert_eq!(AffineElem::IDENTITY.after(p), p);
        prop_assert_eq!(p.after(AffineElem::IDENTITY), p);
    }

    #[test]
    fn mazes_are_trees_with_one_source_and_goal(seed in any::<u64>(), hh in 2usize..8, ww in 2usize..8) {
        let (h, w) = (2 * hh + 1, 2 * ww + 1);
        let m = generate_maze(h, w, seed).unwrap();
        prop_assert_eq!(m.labels.iter().filter(|&&l| l == CLASS_SOURCE).count(), 1);
        prop_assert_eq!(m.labels.iter().filter(|&&l| l == CLASS_GOAL).count(), 1);
        prop_assert_eq!(m.count_paths(Default::default(), 3), 1);
        prop_assert!(is_spanning_tree(&m));
    }
}

/// Open cells are connected and the open-open adjacency has exactly
/// `cells − 1` edges.
fn is_spanning_tree(m: &Maze) -> bool {
    let open: Vec<bool> = m.grid.iter().map(|&t| t != 0).collect();
    let cells = open.iter().filter(|&&o| o).count();
    let mut edges = 0;
    for r in 0..m.height {
        for c in 0..m.width {
            let i = r * m.width + c;
            if open[i] && c + 1 < m.width && open[i + 1] {
                edges += 1;
            }
            if open[i] && r + 1 < m.height && open[i + m.width] {
                edges += 1;
            }
        }
    }
    let start = open.iter().position(|&o| o).unwrap();
    let mut seen = vec![false; open.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0;
    while let Some(i) = stack.pop() {
        reached += 1;
        let (r, c) = (i / m.width, i % m.width);
        let mut next = Vec::new();
        if r > 0 {
            next.push(i - m.width)
        }
        if r + 1 < m.height {
            next.push(i + m.width)
        }
        if c > 0 {
            next.push(i - 1)
        }
        if c + 1 < m.width {
            next.push(i + 1)
        }
        for j in next {
            if open[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    reached == cells && edges + 1 == cells
}

#[test]
fn soft_predictions_are_row_stochastic() {
    let cfg = MazeModelConfig::default();
    let (model, params) = MazeModel::init(&cfg, 3).unwrap();
    let mazes: Vec<Maze> = (0..3).map(|s| generate_maze(7, 7, s).unwrap()).collect();
    let refs: Vec<&Maze> = mazes.iter().collect();
    let batch = MazeBatch::new(&refs).unwrap();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    for round in model.forward(&tape, &bound, &batch).unwrap() {
        assert!(row_sums_are_one(&round.soft.value()));
        assert!(round
            .records
            .iter()
            .all(|r| r.rel_residual <= cfg.cg.rel_tol));
    }
}
