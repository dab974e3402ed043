use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use semloop::association::MapSnapshot;
use semloop::evaluation::{ate, default_thresholds, pr_curve, AteReport, EvalError, LoopAttempt, Trajectory};
use semloop::features::{ingest_detections, write_detections};
use semloop::geometry::Pose;
use semloop::pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineInput};
use semloop::scene_graph::{SceneGraph, Vertex};
use semloop::simulation::{simulate, ScenarioConfig, SimError};
use semloop::tum::{read_tum, sig9, write_tum};

#[derive(Parser, Debug)]
#[command(name = "semloop", version, about = "Object-level semantic mapping and loop closure")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed for scenario generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: a scenario for `sim`, a pipeline config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario: ground truth, odometry and detections.
    Sim,
    /// Run the mapping and loop closure pipeline on recorded inputs.
    Run(RunArgs),
    /// Absolute trajectory error of an estimate against ground truth.
    Eval {
        est: PathBuf,
        gt: PathBuf,
        /// Estimate scale during alignment.
        #[arg(long)]
        scale: bool,
    },
    /// Precision/recall of a loop attempt log.
    Pr {
        attempts: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        tau_l: f64,
        /// Comma-separated score thresholds; defaults to every distinct score.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// CSV tables of a run directory's trajectories and final scene graph.
    ExportPlot { run_dir: PathBuf },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory holding odom.tum, obs.jsonl and optionally gt.tum.
    input: Option<PathBuf>,
    #[arg(long)]
    odom: Option<PathBuf>,
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::DegenerateGeometry => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Input(_) => CliError::Data(e.to_string()),
            PipelineError::Stage { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    match cli.command {
        Command::Sim => cmd_sim(&g),
        Command::Run(args) => cmd_run(&g, args),
        Command::Eval { est, gt, scale } => cmd_eval(&g, &est, &gt, scale),
        Command::Pr {
            attempts,
            tau_l,
            thresholds,
        } => cmd_pr(&g, &attempts, tau_l, thresholds),
        Command::ExportPlot { run_dir } => cmd_export(&g, &run_dir),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(data(path.display()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(data(path.display()))
}

fn out_dir(g: &Global, fallback: &Path) -> Result<PathBuf, CliError> {
    let dir = g.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir).map_err(data(dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(data(path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(data(path.display()))
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data(path.display()))?;
    write_text(path, &(text + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(data(path.display()))?;
        w.write_all(b"\n").map_err(data(path.display()))?;
    }
    w.flush().map_err(data(path.display()))
}

fn write_trajectory(path: &Path, samples: &[(f64, Pose)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_tum(&mut w, samples).map_err(data(path.display()))?;
    w.flush().map_err(data(path.display()))
}

fn load_tum(path: &Path) -> Result<Vec<(f64, Pose)>, CliError> {
    let f = File::open(path).map_err(data(path.display()))?;
    read_tum(BufReader::new(f)).map_err(data(path.display()))
}

fn cmd_sim(g: &Global) -> Result<(), CliError> {
    let mut cfg: ScenarioConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let s = simulate(&cfg)?;
    let dir = out_dir(g, Path::new("."))?;
    let stamps: Vec<f64> = s.frames.iter().map(|f| f.stamp).collect();
    let gt: Vec<(f64, Pose)> = stamps.iter().copied().zip(s.truth.poses.iter().copied()).collect();
    let odom: Vec<(f64, Pose)> = stamps.iter().copied().zip(s.odometry_trajectory()).collect();
    write_trajectory(&dir.join("gt.tum"), &gt)?;
    write_trajectory(&dir.join("odom.tum"), &odom)?;
    let obs = dir.join("obs.jsonl");
    let mut w = create(&obs)?;
    write_detections(&mut w, &s.frames).map_err(data(obs.display()))?;
    w.flush().map_err(data(obs.display()))?;
    write_pretty(&dir.join("scenario.json"), &cfg)?;
    eprintln!(
        "simulated {} keyframes, {} objects into {}",
        s.frames.len(),
        s.truth.objects.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AtePair<'a> {
    before: &'a AteReport,
    after: &'a AteReport,
}

fn cmd_run(g: &Global, args: RunArgs) -> Result<(), CliError> {
    let base = args.input.clone().unwrap_or_else(|| PathBuf::from("."));
    let odom_path = args.odom.unwrap_or_else(|| base.join("odom.tum"));
    let obs_path = args.obs.unwrap_or_else(|| base.join("obs.jsonl"));
    let gt_path = args.gt.or_else(|| Some(base.join("gt.tum")).filter(|p| p.exists()));
    let cfg: PipelineConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    let odom = load_tum(&odom_path)?;
    let frames = ingest_detections(&obs_path).map_err(data(obs_path.display()))?;
    let gt = match &gt_path {
        Some(p) => Some(load_tum(p)?.into_iter().map(|(_, pose)| pose).collect()),
        None => None,
    };
    let input = PipelineInput::from_records(&odom, frames, gt)?;
    let out = run_pipeline(&input, &cfg)?;

    let dir = out_dir(g, &base)?;
    write_trajectory(&dir.join("traj_before.tum"), &out.before.trajectory)?;
    write_trajectory(&dir.join("traj_after.tum"), &out.after.trajectory)?;
    write_pretty(&dir.join("map.json"), &out.after.map.snapshot())?;
    write_jsonl(&dir.join("loops.jsonl"), out.after.loops.iter().map(|l| l.record()))?;
    write_jsonl(&dir.join("attempts.jsonl"), &out.after.attempts)?;
    write_text(&dir.join("runtime.csv"), &out.after.times.to_csv())?;
    if let (Some(before), Some(after)) = (&out.ate_before, &out.ate_after) {
        write_pretty(&dir.join("ate.json"), &AtePair { before, after })?;
        eprintln!("ATE RMSE before {:.4} m, after {:.4} m", before.rmse, after.rmse);
    }
    eprintln!(
        "{} keyframes, {} landmarks, {} loops, association accuracy {:.4}",
        input.len(),
        out.after.map.landmarks.len(),
        out.after.loops.len(),
        out.after.association.accuracy()
    );
    Ok(())
}

fn cmd_eval(g: &Global, est: &Path, gt: &Path, scale: bool) -> Result<(), CliError> {
    let est = Trajectory::new(load_tum(est)?)?;
    let gt = Trajectory::new(load_tum(gt)?)?;
    let report = ate(&est, &gt, scale)?;
    let text = serde_json::to_string_pretty(&report).map_err(data("ATE report"))?;
    println!("{text}");
    if g.out.is_some() {
        let dir = out_dir(g, Path::new("."))?;
        write_text(&dir.join("ate.json"), &(text + "\n"))?;
    }
    Ok(())
}

fn cmd_pr(g: &Global, path: &Path, tau_l: f64, thresholds: Option<Vec<f64>>) -> Result<(), CliError> {
    if !(tau_l > 0.0) {
        return Err(CliError::Usage(format!("--tau-l must be positive, got {tau_l}")));
    }
    let text = fs::read_to_string(path).map_err(data(path.display()))?;
    let mut attempts = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let a: LoopAttempt = serde_json::from_str(line).map_err(data(format!("{} line {}", path.display(), i + 1)))?;
        attempts.push(a);
    }
    let thresholds = thresholds.unwrap_or_else(|| default_thresholds(&attempts));
    let curve = pr_curve(&attempts, tau_l, &thresholds)?;
    let mut csv = String::from("threshold,precision,recall,tp,fp,fn\n");
    for p in &curve {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sig9(p.threshold),
            sig9(p.precision),
            sig9(p.recall),
            p.tp,
            p.fp,
            p.fn_
        ));
    }
    print!("{csv}");
    if g.out.is_some() {
        let dir = out_dir(g, Path::new("."))?;
        write_text(&dir.join("pr.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_export(g: &Global, run_dir: &Path) -> Result<(), CliError> {
    let cfg: PipelineConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    let dir = out_dir(g, run_dir)?;

    let mut tables: Vec<(&str, Vec<(f64, Pose)>)> = Vec::new();
    for name in ["traj_before", "traj_after", "gt"] {
        let p = run_dir.join(format!("{name}.tum"));
        if p.exists() {
            tables.push((name, load_tum(&p)?));
        }
    }
    if tables.is_empty() {
        return Err(CliError::Data(format!(
            "no trajectories found in {}",
            run_dir.display()
        )));
    }
    let mut csv = String::from("trajectory,stamp,x,y,z\n");
    for (name, samples) in &tables {
        for (t, p) in samples {
            let v = p.translation();
            csv.push_str(&format!(
                "{name},{},{},{},{}\n",
                sig9(*t),
                sig9(v.x),
                sig9(v.y),
                sig9(v.z)
            ));
        }
    }
    write_text(&dir.join("trajectories.csv"), &csv)?;

    let map_path = run_dir.join("map.json");
    if map_path.exists() {
        let snapshot: MapSnapshot = read_json(&map_path)?;
        let vertices = snapshot
            .landmarks
            .iter()
            .map(|l| Vertex {
                id: l.id,
                label: l.label.clone(),
                pose: Pose::from_yaw(l.yaw, l.t.into()),
                dims: l.dims.into(),
                hist: Vec::new(),
                emb: Vec::new(),
            })
            .collect();
        let graph = SceneGraph::build(vertices, cfg.graph.k_nn).export();
        let mut v_csv = String::from("id,label,x,y,z\n");
        for v in &graph.vertices {
            let [x, y, z] = v.position;
            v_csv.push_str(&format!("{},{},{},{},{}\n", v.id, v.label, sig9(x), sig9(y), sig9(z)));
        }
        let mut e_csv = String::from("a,b,length\n");
        for e in &graph.edges {
            e_csv.push_str(&format!("{},{},{}\n", e.a, e.b, sig9(e.length)));
        }
        write_text(&dir.join("graph_vertices.csv"), &v_csv)?;
        write_text(&dir.join("graph_edges.csv"), &e_csv)?;
    }
    Ok(())
}
