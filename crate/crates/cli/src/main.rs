//! `mtpl`: command-line harness over `mtpl-core`.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage error (bad flags or
//! config), 3 runtime error. Failures print one JSON object on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mtpl_core::gradcheck::{run_suite, CSV_HEADER, SUITES};
use mtpl_core::harness::{
    dynamics_run, lattice_forward, readout_maps, scan_bench, DynamicsRunConfig, LatticeConfig,
};
use mtpl_core::maze::{
    corpus_seed, digit_grid, f1_report, generate_corpus, harmonic_baseline, train, transfer_run,
    type_conductances, Maze, MazeModel, TrainConfig, TransferConfig, TypeMap,
};
use mtpl_core::oracle::{minimality_check, solver_oracle};
use mtpl_core::readout::ReadoutKind;
use mtpl_core::stencil::Grid2;
use mtpl_core::ModelParams;

#[derive(Parser)]
#[command(name = "mtpl", version, about = "Screened-Poisson field layer harness")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "MTPL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference gradient checks; CSV rows on stdout.
    Gradcheck(GradcheckArgs),
    /// CG against dense solves, and Dirichlet-energy minimality.
    Oracle(OracleArgs),
    /// Pure-advection trajectory with energy and spectrum diagnostics.
    DynamicsDiag(DynamicsArgs),
    /// Sequential against parallel affine scans.
    ScanBench(ScanArgs),
    /// Readout feature maps of a seeded field, one CSV per feature.
    ReadoutDump(ReadoutArgs),
    /// Object-layer assignment of a seeded lattice forward pass.
    ObjectsDump(ObjectsArgs),
    /// Writes seeded mazes and their labels.
    MazeGen(MazeGenArgs),
    /// Trains the maze model.
    MazeTrain(MazeTrainArgs),
    /// Scores a trained model or the harmonic baseline.
    MazeEval(MazeEvalArgs),
    /// Trains with and without damping scaling and compares transfer.
    MazeTransfer(MazeTransferArgs),
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One of cg, scan, layer, vcycle, dynamics, maze, or all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    systems: usize,
    #[arg(long, default_value_t = 200)]
    max_n: usize,
    #[arg(long, default_value_t = 4)]
    max_k: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 50)]
    minimality_systems: usize,
    #[arg(long, default_value_t = 100)]
    perturbations: usize,
}

#[derive(Args)]
struct DynamicsArgs {
    #[arg(long)]
    seed: u64,
    /// JSON run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    fields: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Directory for steps.csv and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    /// First seed; runs `seeds` consecutive seeds.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,7,1024,100000")]
    n: Vec<usize>,
    /// Fail when any deviation exceeds this.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
}

#[derive(Args)]
struct ReadoutArgs {
    #[arg(long)]
    seed: u64,
    /// stress-energy, noether or curvature.
    #[arg(long, default_value = "stress-energy")]
    kind: String,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    fields: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ObjectsArgs {
    #[arg(long)]
    seed: u64,
    /// JSON lattice config; defaults to the Sudoku-shaped smoke config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MazeGenArgs {
    #[arg(long)]
    seed: u64,
    /// Odd side length, at least 5.
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MazeTrainArgs {
    #[arg(long)]
    seed: u64,
    /// JSON training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    train_mazes: Option<usize>,
    /// Train on the maze files in this directory instead of a generated corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct MazeEvalArgs {
    /// Run directory written by maze-train.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Score the hand-set harmonic solve.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Side length of generated mazes.
    #[arg(long)]
    size: Option<usize>,
    /// Required when mazes are generated.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Score the maze files in this directory instead.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Count only path cells as positives.
    #[arg(long)]
    exclude_endpoints: bool,
    /// Write mazes and predicted grids here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MazeTransferArgs {
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// JSON transfer config; its seeds are replaced by --seeds.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eval_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(Value),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

fn runtime<E: std::error::Error + Send + Sync + 'static>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn report_failure(kind: &str, body: Value) {
    let mut err = json!({ "error": kind });
    if let (Value::Object(dst), Value::Object(src)) = (&mut err, body) {
        dst.extend(src);
    }
    eprintln!("{err}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            report_failure("usage", json!({ "message": e.render().to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            report_failure(
                "usage",
                json!({ "message": "--threads must be at least 1" }),
            );
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            report_failure("runtime", json!({ "message": e.to_string() }));
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Gradcheck(a) => gradcheck(a),
        Command::Oracle(a) => oracle(a),
        Command::DynamicsDiag(a) => dynamics_diag(a),
        Command::ScanBench(a) => scan_bench_cmd(a),
        Command::ReadoutDump(a) => readout_dump(a),
        Command::ObjectsDump(a) => objects_dump(a),
        Command::MazeGen(a) => maze_gen(a),
        Command::MazeTrain(a) => maze_train(a),
        Command::MazeEval(a) => maze_eval(a),
        Command::MazeTransfer(a) => maze_transfer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            report_failure("usage", json!({ "message": message }));
            ExitCode::from(2)
        }
        Err(Failure::Check(detail)) => {
            report_failure("check_failed", json!({ "detail": detail }));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            report_failure("runtime", json!({ "message": format!("{e:#}") }));
            ExitCode::from(3)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Runtime)?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

fn make_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Runtime)
}

fn pretty(v: &impl serde::Serialize) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(runtime)?;
    s.push('\n');
    Ok(s)
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let suites: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&a.suite.as_str()) {
        vec![a.suite.as_str()]
    } else {
        return Err(Failure::Usage(format!(
            "unknown suite {:?}; expected one of {} or all",
            a.suite,
            SUITES.join(", ")
        )));
    };
    let mut csv = format!("{CSV_HEADER}\n");
    let (mut total, mut failed) = (0, 0);
    for s in suites {
        for row in run_suite(s, a.seed).map_err(runtime)? {
            total += 1;
            if !row.passed() {
                failed += 1;
            }
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
    }
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(runtime)?,
    }
    if failed > 0 {
        return Err(Failure::Check(json!({ "rows": total, "failed": failed })));
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Outcome {
    let t = Instant::now();
    let solver =
        solver_oracle(a.seed, a.systems, a.max_n, a.max_k, a.tolerance).map_err(runtime)?;
    let solver_s = t.elapsed().as_secs_f64();
    let minimality = minimality_check(a.seed, a.minimality_systems, a.perturbations, a.max_n)
        .map_err(runtime)?;
    eprintln!("solver oracle {solver_s:.2}s");
    let out = json!({ "seed": a.seed, "solver": solver, "minimality": minimality });
    print!("{}", pretty(&out)?);
    if !(solver.passed && minimality.passed) {
        return Err(Failure::Check(out));
    }
    Ok(())
}

fn dynamics_diag(a: DynamicsArgs) -> Outcome {
    let mut cfg: DynamicsRunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => DynamicsRunConfig::default(),
    };
    macro_rules! over {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    over!(height, width, fields, dt, steps, alpha);
    let run = dynamics_run(&cfg, a.seed).map_err(|e| match e {
        mtpl_core::harness::HarnessError::Config(m) => Failure::Usage(m),
        other => runtime(other),
    })?;
    make_dir(&a.out)?;
    let mut csv = String::from("step,e_quad,e_dirichlet,drift,predicted_drift,linear_term\n");
    for s in &run.report.steps {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            s.step, s.e_quad, s.e_dirichlet, s.drift, s.predicted_drift, s.linear_term
        ));
    }
    write_file(&a.out.join("steps.csv"), csv)?;
    write_file(&a.out.join("report.json"), pretty(&run)?)?;
    println!(
        "{}",
        json!({
            "max_identity_residual": run.report.max_identity_residual,
            "skew_exact": run.report.skew_exact,
            "casimir_dim": run.report.spectrum.casimir_dim,
            "max_pair_gap": run.report.spectrum.max_pair_gap,
            "step_order": run.order.step_order,
            "horizon_order": run.order.horizon_order,
        })
    );
    Ok(())
}

fn scan_bench_cmd(a: ScanArgs) -> Outcome {
    if a.n.contains(&0) {
        return Err(Failure::Usage("chain lengths must be positive".into()));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let rows = scan_bench(&a.n, &seeds).map_err(runtime)?;
    let mut out = String::from("n,seed,sequential_s,parallel_s,max_rel_deviation\n");
    let mut worst = 0.0f64;
    for r in &rows {
        worst = worst.max(r.max_rel_deviation);
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e}\n",
            r.n, r.seed, r.sequential_s, r.parallel_s, r.max_rel_deviation
        ));
    }
    print!("{out}");
    if worst > a.tolerance {
        return Err(Failure::Check(
            json!({ "max_rel_deviation": worst, "tolerance": a.tolerance }),
        ));
    }
    Ok(())
}

fn grid_csv(grid: Grid2, values: impl Fn(usize) -> String) -> String {
    let mut s = String::new();
    for r in 0..grid.height {
        let row: Vec<String> = (0..grid.width).map(|c| values(grid.index(r, c))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn readout_dump(a: ReadoutArgs) -> Outcome {
    let kind: ReadoutKind = a.kind.parse().map_err(|e| Failure::Usage(format!("{e}")))?;
    if a.height == 0 || a.width == 0 || a.fields == 0 {
        return Err(Failure::Usage(
            "height, width and fields must be positive".into(),
        ));
    }
    let grid = Grid2::new(a.height, a.width);
    let (names, maps) = readout_maps(kind, grid, a.fields, a.seed).map_err(runtime)?;
    make_dir(&a.out)?;
    for (j, name) in names.iter().enumerate() {
        let csv = grid_csv(grid, |i| format!("{:e}", maps.get(i, j)));
        write_file(&a.out.join(format!("{name}.csv")), csv)?;
    }
    let meta = json!({
        "kind": kind.to_string(),
        "seed": a.seed,
        "height": a.height,
        "width": a.width,
        "fields": a.fields,
        "features": names,
    });
    write_file(&a.out.join("features.json"), pretty(&meta)?)?;
    println!(
        "{}",
        json!({ "kind": kind.to_string(), "features": names.len() })
    );
    Ok(())
}

fn objects_dump(a: ObjectsArgs) -> Outcome {
    let cfg: LatticeConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => LatticeConfig::sudoku_smoke(),
    };
    if cfg.layer.objects.is_none() {
        return Err(Failure::Usage(
            "the lattice config has no object layer".into(),
        ));
    }
    let report = lattice_forward(&cfg, a.seed).map_err(runtime)?;
    let diag = report.objects.as_ref().expect("objects were configured");
    make_dir(&a.out)?;
    let grid = Grid2::new(cfg.height, cfg.width);
    let mut map = format!("{} {}\n", cfg.height, cfg.width);
    for r in 0..grid.height {
        let row: Vec<String> = (0..grid.width)
            .map(|c| diag.cluster_map[grid.index(r, c)].to_string())
            .collect();
        map.push_str(&row.join(" "));
        map.push('\n');
    }
    write_file(&a.out.join("cluster_map.txt"), map)?;
    write_file(&a.out.join("objects.json"), pretty(&report)?)?;
    println!(
        "{}",
        json!({ "active": diag.active, "mean_entropy": diag.mean_entropy, "tau": report.assignment_tau })
    );
    Ok(())
}

fn maze_name(i: usize) -> String {
    format!("maze_{i:04}")
}

fn maze_gen(a: MazeGenArgs) -> Outcome {
    let mazes = generate_corpus(a.size, a.size, a.count, a.seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    make_dir(&a.out)?;
    for (i, m) in mazes.iter().enumerate() {
        write_file(&a.out.join(format!("{}.txt", maze_name(i))), m.to_text())?;
        write_file(
            &a.out.join(format!("{}.labels.txt", maze_name(i))),
            m.labels_text(),
        )?;
    }
    println!(
        "{}",
        json!({ "written": mazes.len(), "size": a.size, "seed": a.seed })
    );
    Ok(())
}

/// Maze files (`*.txt` other than `*.labels.txt` and `*.pred.txt`) in name
/// order.
fn read_maze_dir(dir: &Path) -> Result<Vec<Maze>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(Failure::Runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".txt") && !name.ends_with(".labels.txt") && !name.ends_with(".pred.txt")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(Failure::Runtime)?;
            Maze::from_text(&text, TypeMap::default())
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn maze_train(a: MazeTrainArgs) -> Outcome {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(n) = a.train_mazes {
        cfg.train_mazes = n;
    }
    let corpus = match &a.data {
        Some(dir) => read_maze_dir(dir)?,
        None => generate_corpus(cfg.size, cfg.size, cfg.train_mazes, corpus_seed(a.seed))
            .map_err(|e| Failure::Usage(e.to_string()))?,
    };
    if corpus.is_empty() {
        return Err(Failure::Usage("no training mazes".into()));
    }
    let t = Instant::now();
    let quiet = a.quiet;
    let (model, params, log) = train(&corpus, &cfg, a.seed, |step, loss| {
        if !quiet && step % 100 == 0 {
            eprintln!(
                "step {step} loss {loss:.5} {:.1}s",
                t.elapsed().as_secs_f64()
            );
        }
    })
    .map_err(runtime)?;
    make_dir(&a.out)?;
    write_file(&a.out.join("checkpoint.bin"), params.to_checkpoint_bytes())?;
    write_file(&a.out.join("config.json"), pretty(&cfg)?)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:e}\n"));
    }
    write_file(&a.out.join("train_log.csv"), csv)?;
    let train_f1 = f1_report(
        &model.predict(&params, &corpus).map_err(runtime)?,
        &corpus,
        true,
    );
    let summary = json!({
        "seed": a.seed,
        "steps": cfg.steps,
        "train_mazes": corpus.len(),
        "param_count": model.param_count(),
        "final_loss": log.losses.last(),
        "train_f1": train_f1.f1,
        "type_conductances": type_conductances(&params).map_err(runtime)?,
        "conductance_structure": model
            .conductance_structure(&params, &corpus[0], TypeMap::default())
            .map_err(runtime)?,
    });
    write_file(&a.out.join("summary.json"), pretty(&summary)?)?;
    eprintln!("trained in {:.1}s", t.elapsed().as_secs_f64());
    println!("{summary}");
    Ok(())
}

fn load_run(dir: &Path) -> Result<(MazeModel, ModelParams), Failure> {
    let cfg: TrainConfig = read_json(&dir.join("config.json"))?;
    let (model, fresh) = MazeModel::init(&cfg.model, 0).map_err(runtime)?;
    let bytes = fs::read(dir.join("checkpoint.bin"))
        .with_context(|| format!("reading {}", dir.join("checkpoint.bin").display()))
        .map_err(Failure::Runtime)?;
    let params = ModelParams::read_checkpoint(bytes.as_slice(), 0).map_err(runtime)?;
    let expected: Vec<&str> = fresh.names().collect();
    let got: Vec<&str> = params.names().collect();
    if expected != got || fresh.count() != params.count() {
        return Err(Failure::Usage(
            "checkpoint does not match config.json".into(),
        ));
    }
    Ok((model, params))
}

fn maze_eval(a: MazeEvalArgs) -> Outcome {
    if a.run.is_none() && !a.baseline {
        return Err(Failure::Usage("give --run, --baseline or both".into()));
    }
    let mazes = match (&a.input, a.size) {
        (Some(dir), _) => read_maze_dir(dir)?,
        (None, Some(size)) => {
            let seed = a.seed.ok_or_else(|| {
                Failure::Usage("--seed is required when mazes are generated".into())
            })?;
            generate_corpus(size, size, a.count, seed).map_err(|e| Failure::Usage(e.to_string()))?
        }
        (None, None) => return Err(Failure::Usage("give --size or --input".into())),
    };
    if mazes.is_empty() {
        return Err(Failure::Usage("no mazes to evaluate".into()));
    }
    let include = !a.exclude_endpoints;
    let mut report = json!({ "mazes": mazes.len(), "include_endpoints": include });
    let mut preds_model = None;
    if let Some(run) = &a.run {
        let (model, params) = load_run(run)?;
        let preds = model.predict(&params, &mazes).map_err(runtime)?;
        report["model"] =
            serde_json::to_value(f1_report(&preds, &mazes, include)).map_err(runtime)?;
        preds_model = Some(preds);
    }
    let mut preds_base = None;
    if a.baseline {
        let preds: Vec<Vec<u8>> = mazes
            .iter()
            .map(|m| harmonic_baseline(m, TypeMap::default(), a.threshold))
            .collect::<Result<_, _>>()
            .map_err(runtime)?;
        report["baseline"] =
            serde_json::to_value(f1_report(&preds, &mazes, include)).map_err(runtime)?;
        report["baseline"]["threshold"] = json!(a.threshold);
        preds_base = Some(preds);
    }
    if let Some(dir) = &a.out {
        make_dir(dir)?;
        for (i, m) in mazes.iter().enumerate() {
            let name = maze_name(i);
            write_file(&dir.join(format!("{name}.txt")), m.to_text())?;
            write_file(&dir.join(format!("{name}.labels.txt")), m.labels_text())?;
            if let Some(p) = &preds_model {
                write_file(
                    &dir.join(format!("{name}.pred.txt")),
                    digit_grid(m.height, m.width, &p[i]),
                )?;
            }
            if let Some(p) = &preds_base {
                write_file(
                    &dir.join(format!("{name}.baseline.pred.txt")),
                    digit_grid(m.height, m.width, &p[i]),
                )?;
            }
        }
        write_file(&dir.join("report.json"), pretty(&report)?)?;
    }
    print!("{}", pretty(&report)?);
    Ok(())
}

fn maze_transfer(a: MazeTransferArgs) -> Outcome {
    let mut cfg: TransferConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TransferConfig::default(),
    };
    cfg.seeds = a.seeds.clone();
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.eval_size {
        cfg.eval_size = s;
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for lambda_over_n in [true, false] {
            let (run, _, _) = transfer_run(&cfg, seed, lambda_over_n).map_err(runtime)?;
            eprintln!(
                "seed {seed} lambda/N {lambda_over_n}: held-out F1 {:.4}, transfer F1 {:.4}, {:.1}s",
                run.f1_held_out, run.f1_transfer, run.seconds
            );
            runs.push(run);
        }
    }
    let mut wins = 0;
    let mut held_out = 0;
    let mut pairs = Vec::new();
    for pair in runs.chunks(2) {
        let (on, off) = (&pair[0], &pair[1]);
        if on.f1_transfer >= off.f1_transfer {
            wins += 1;
        }
        if on.f1_held_out >= 0.9 {
            held_out += 1;
        }
        pairs.push(json!({
            "seed": on.seed,
            "held_out_f1": on.f1_held_out,
            "transfer_f1_scaled": on.f1_transfer,
            "transfer_f1_unscaled": off.f1_transfer,
        }));
    }
    let strip = |v: &mtpl_core::maze::TransferRun| {
        let mut j = serde_json::to_value(v).expect("serializable");
        j.as_object_mut().map(|o| o.remove("seconds"));
        j
    };
    let summary = json!({
        "config": cfg,
        "seeds": cfg.seeds,
        "pairs": pairs,
        "held_out_at_least_0_9": held_out,
        "scaled_at_least_unscaled": wins,
        "runs": runs.iter().map(strip).collect::<Vec<_>>(),
    });
    if let Some(dir) = &a.out {
        make_dir(dir)?;
        write_file(&dir.join("transfer.json"), pretty(&summary)?)?;
    }
    print!("{}", pretty(&summary)?);
    Ok(())
}
