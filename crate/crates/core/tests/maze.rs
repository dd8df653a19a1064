//! Maze model contracts: relabeling symmetry, initial loss, determinism,
//! λ/N scaling, conductance symmetry and F1 edge cases.

use mtpl_core::maze::{
    f1_report, generate_corpus, generate_maze, generate_maze_with, train, MazeBatch, MazeModel,
    MazeModelConfig, Role, TrainConfig, TypeMap, CLASS_OFF_PATH, EMBEDDING, N_CLASSES,
};
use mtpl_core::Tensor;

const ROLES: [Role; 4] = [Role::Wall, Role::Corridor, Role::Source, Role::Goal];

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn relabeling_types_and_embeddings_leaves_outputs_unchanged() {
    let cfg = MazeModelConfig::default();
    let (model, params) = MazeModel::init(&cfg, 5).unwrap();
    let identity = TypeMap::default();
    for perm in [[2u8, 0, 3, 1], [3, 2, 1, 0], [1, 3, 0, 2]] {
        let map = TypeMap::new(perm).unwrap();
        let mut moved = params.clone();
        let old = params.get(EMBEDDING).unwrap().clone();
        let emb = moved.get_mut(EMBEDDING).unwrap();
        for role in ROLES {
            let (src, dst) = (identity.index(role) as usize, map.index(role) as usize);
            for c in 0..old.cols() {
                emb.set(dst, c, old.get(src, c));
            }
        }
        for seed in 0..3 {
            let a = generate_maze(9, 9, seed).unwrap();
            let b = generate_maze_with(9, 9, seed, map).unwrap();
            assert_eq!(a.labels, b.labels);
            assert_ne!(a.grid, b.grid);
            let la = model
                .logits(&params, &MazeBatch::new(&[&a]).unwrap())
                .unwrap();
            let lb = model
                .logits(&moved, &MazeBatch::new(&[&b]).unwrap())
                .unwrap();
            assert!(max_abs_diff(&la, &lb) <= 1e-9, "perm {perm:?} seed {seed}");
        }
    }
}

#[test]
fn initial_loss_is_near_uniform_cross_entropy() {
    let uniform = (N_CLASSES as f64).ln();
    let mazes = generate_corpus(9, 9, 8, 42).unwrap();
    let refs: Vec<_> = mazes.iter().collect();
    let batch = MazeBatch::new(&refs).unwrap();
    for seed in 0..3 {
        let (model, params) = MazeModel::init(&MazeModelConfig::default(), seed).unwrap();
        let loss = model.loss(&params, &batch).unwrap();
        assert!(
            (loss - uniform).abs() < 0.15,
            "seed {seed}: loss {loss} vs ln 5 = {uniform}"
        );
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = TrainConfig {
        steps: 150,
        train_mazes: 16,
        ..TrainConfig::default()
    };
    let corpus = generate_corpus(cfg.size, cfg.size, cfg.train_mazes, 9).unwrap();
    let (_, p1, log1) = train(&corpus, &cfg, 4, |_, _| {}).unwrap();
    let (_, p2, log2) = train(&corpus, &cfg, 4, |_, _| {}).unwrap();
    assert_eq!(p1.to_checkpoint_bytes(), p2.to_checkpoint_bytes());
    assert_eq!(log1.losses, log2.losses);
    let head: f64 = log1.losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = log1.losses[140..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "loss {head} -> {tail}");
}

#[test]
fn lambda_over_n_divides_damping_by_cell_count() {
    let on = MazeModelConfig::default();
    let off = MazeModelConfig {
        lambda_over_n: false,
        ..on.clone()
    };
    let (model_on, params) = MazeModel::init(&on, 2).unwrap();
    let (model_off, params_off) = MazeModel::init(&off, 2).unwrap();
    assert_eq!(
        params.to_checkpoint_bytes(),
        params_off.to_checkpoint_bytes()
    );
    let maze = generate_maze(11, 9, 1).unwrap();
    let cells = (maze.height * maze.width) as f64;
    let (scaled, _) = model_on.build_system(&params, &maze).unwrap();
    let (raw, _) = model_off.build_system(&params, &maze).unwrap();
    for (s, r) in scaled.iter().zip(&raw) {
        for (a, b) in s.damping().iter().zip(r.damping()) {
            assert!((a - b / cells).abs() <= 1e-15 * (b / cells));
        }
        assert_eq!(s.conductances(), r.conductances());
    }
}

#[test]
fn equal_type_pairs_share_conductance() {
    let (model, params) = MazeModel::init(&MazeModelConfig::default(), 8).unwrap();
    let maze = generate_maze(9, 9, 3).unwrap();
    let (systems, _) = model.build_system(&params, &maze).unwrap();
    let sys = &systems[0];
    let mut by_pair = std::collections::BTreeMap::new();
    for ((i, j), &w) in sys.topology().edges().zip(sys.conductances().iter()) {
        let (a, b) = (maze.grid[i], maze.grid[j]);
        let key = (a.min(b), a.max(b));
        let first = *by_pair.entry(key).or_insert(w);
        assert!(
            (w - first).abs() <= 1e-12 * first,
            "pair {key:?}: {w} vs {first}"
        );
    }
    assert!(by_pair.len() >= 2);
}

#[test]
fn f1_edge_cases() {
    let mazes = generate_corpus(9, 9, 4, 11).unwrap();
    let perfect: Vec<Vec<u8>> = mazes.iter().map(|m| m.labels.clone()).collect();
    assert_eq!(f1_report(&perfect, &mazes, true).f1, 1.0);
    let off: Vec<Vec<u8>> = mazes
        .iter()
        .map(|m| vec![CLASS_OFF_PATH; m.cells()])
        .collect();
    assert_eq!(f1_report(&off, &mazes, true).f1, 0.0);
}
