use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use actlabel_core::classify::{
    calibrate, classification_stats, classify_batch, confusion, Aggregation, ClassifyError,
    MatchConfig,
};
use actlabel_core::cost::{cost_report, write_report_csv, CostError, CostLedger};
use actlabel_core::distill::{
    distill, toy_config, toy_problem, write_history_csv, DistillError, KdConfig, LinearHead,
    LinearHeadFile,
};
use actlabel_core::eval::{
    best_operating_point, evaluate, sweep, write_surface_csv, EvalError, EvalReport, FilterParams,
    GridAxis, Metric, Objective,
};
use actlabel_core::fixture::{self, FixtureSpec};
use actlabel_core::jsonl::{self, IngestError};
use actlabel_core::lora::{
    init_adapter, lora_forward, lora_merge, trainable_param_count, AdapterFile, DenseMatrix,
    LoraAdapter, LoraError,
};
use actlabel_core::pipeline::{self, PipelineConfig, PipelineError};
use actlabel_core::review::{Action, PendingPolicy, ReviewError, ReviewStore};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::service;

/// Process outcome: exit code plus message. 1 validation, 2 I/O, 3 pending.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<ReviewError> for Failure {
    fn from(e: ReviewError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    EvalError,
    ClassifyError,
    CostError,
    DistillError,
    LoraError,
    serde_json::Error
);

type Outcome = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(
    name = "actlabel",
    version,
    about = "Low-cost action dataset annotation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter detector candidates into the work directory.
    Sift(ConfigArg),
    /// Label items by template similarity (pipeline stage, or standalone files).
    Classify(ClassifyArgs),
    /// Record review decisions without the HTTP service.
    Decide(DecideArgs),
    /// Serve the review API (and optionally the review UI).
    ReviewServe(ServeArgs),
    /// Write the final dataset manifest.
    Export(ExportArgs),
    /// Recall/accuracy of filtered detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Recall/accuracy over a threshold grid.
    Sweep(SweepArgs),
    /// Similarity histograms to guide the choice of lambda.
    Calibrate(CalibrateArgs),
    /// Confusion matrix and accuracy of decisions against truth labels.
    Confusion(ConfusionArgs),
    /// Annotation cost comparison table.
    Cost(CostArgs),
    /// Low-rank adapter utilities.
    Lora {
        #[command(subcommand)]
        command: LoraCommand,
    },
    /// Distil a teacher head into a linear student.
    Distill(DistillArgs),
    /// Generate a synthetic scenario.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Pipeline config; when given, the other flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub templates: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub map: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub lambda: Option<f64>,
    #[arg(long, default_value = "max")]
    pub aggregation: Aggregation,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecideArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, conflicts_with = "file", requires = "action")]
    pub item: Option<String>,
    #[arg(long)]
    pub action: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    /// Decision time (RFC 3339); defaults to now.
    #[arg(long, conflicts_with = "file")]
    pub at: Option<DateTime<Utc>>,
    /// JSONL of `{"item_id", "action", "label"?, "decided_at"?}`.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `service_port`; 0 picks a free port.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of built review UI assets.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AllowPending {
    Block,
    Skip,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "block")]
    pub allow_pending: AllowPending,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Single,
    Dual,
}

#[derive(Args, Debug)]
pub struct DetectorArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0.5)]
    pub tiou: f64,
    /// NMS after dual-score thresholding (off by default).
    #[arg(long)]
    pub nms: Option<f64>,
}

impl DetectorArgs {
    fn base(&self, p1: f64, p2: f64) -> FilterParams {
        match self.mode {
            Mode::Single => FilterParams::Single {
                conf: p1,
                nms_iou: p2,
            },
            Mode::Dual => FilterParams::Dual {
                box_thresh: p1,
                text_thresh: p2,
                nms_iou: self.nms,
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub det: DetectorArgs,
    /// conf (single) or box threshold (dual).
    #[arg(long)]
    pub p1: f64,
    /// NMS IoU (single) or text threshold (dual).
    #[arg(long)]
    pub p2: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub det: DetectorArgs,
    #[arg(long, default_value = "0:0.1:1")]
    pub grid: GridAxis,
    /// Second axis grid; defaults to `--grid`.
    #[arg(long)]
    pub grid2: Option<GridAxis>,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop rows with an axis value above this.
    #[arg(long)]
    pub clip: Option<f64>,
    /// `recall`, `accuracy`, or a floor such as `recall>=0.95`.
    #[arg(long)]
    pub best: Option<String>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value = "max")]
    pub aggregation: Aggregation,
}

#[derive(Args, Debug)]
pub struct ConfusionArgs {
    /// Decisions JSONL as written by `classify`.
    #[arg(long)]
    pub decisions: PathBuf,
    /// JSONL of `{"item_id", "label"}`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Class order; defaults to order of first appearance in the truth file.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long)]
    pub manual: PathBuf,
    #[arg(long)]
    pub auto: PathBuf,
    /// Overrides `posts_per_line` in both ledgers.
    #[arg(long)]
    pub posts: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum LoraCommand {
    /// Initialise an adapter and check the factored path against the merge.
    Demo(LoraDemoArgs),
}

#[derive(Args, Debug)]
pub struct LoraDemoArgs {
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enables `alpha / r` scaling of the update.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Writes the adapter JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long, required_unless_present = "toy")]
    pub embeddings: Option<PathBuf>,
    /// Teacher head JSON `{"weights", "bias"}`.
    #[arg(long, required_unless_present = "toy")]
    pub teacher: Option<PathBuf>,
    /// Built-in two-class problem on 500 points.
    #[arg(long, conflicts_with_all = ["embeddings", "teacher"])]
    pub toy: bool,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// History CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Trained student JSON.
    #[arg(long)]
    pub student_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn print_json<T: serde::Serialize>(value: &T) -> Outcome {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Failure::validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Sift(a) => {
            let cfg = PipelineConfig::load(&a.config)?;
            print_json(&pipeline::run_sift(&cfg)?)
        }
        Command::Classify(a) => run_classify(a),
        Command::Decide(a) => run_decide(a),
        Command::ReviewServe(a) => run_serve(a),
        Command::Export(a) => {
            let cfg = PipelineConfig::load(&a.config)?;
            let policy = match a.allow_pending {
                AllowPending::Block => PendingPolicy::Block,
                AllowPending::Skip => PendingPolicy::Skip,
            };
            let summary = pipeline::run_export(&cfg, policy)?;
            if summary.skipped_pending > 0 {
                eprintln!(
                    "warning: {} pending items left out",
                    summary.skipped_pending
                );
            }
            print_json(&summary)
        }
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Calibrate(a) => {
            let lib = pipeline::load_library(&a.templates, &a.map)?;
            let items = jsonl::ingest_embeddings(&a.embeddings, lib.dim())?;
            let items: Vec<_> = items.into_values().collect();
            let cal = calibrate(&items, &lib, a.aggregation, a.bins)?;
            let mut w = create(&a.out)?;
            cal.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Confusion(a) => run_confusion(a),
        Command::Cost(a) => run_cost(a),
        Command::Lora {
            command: LoraCommand::Demo(a),
        } => run_lora_demo(a),
        Command::Distill(a) => run_distill(a),
        Command::Fixture(a) => {
            let spec = FixtureSpec {
                frames: a.frames,
                seed: a.seed,
                ..FixtureSpec::default()
            };
            let cfg = fixture::generate(&spec, &a.out)?;
            println!("{}", cfg.display());
            Ok(())
        }
    }
}

fn run_classify(a: ClassifyArgs) -> Outcome {
    if let Some(config) = a.config {
        let cfg = PipelineConfig::load(&config)?;
        return print_json(&pipeline::run_classify(&cfg)?);
    }
    let (Some(emb), Some(templates), Some(map), Some(lambda), Some(out)) =
        (a.embeddings, a.templates, a.map, a.lambda, a.out)
    else {
        return Err(Failure::validation(
            "classify needs --config or all of --embeddings --templates --map --lambda --out",
        ));
    };
    let lib = pipeline::load_library(&templates, &map)?;
    let items: Vec<_> = jsonl::ingest_embeddings(&emb, lib.dim())?
        .into_values()
        .collect();
    let cfg = MatchConfig {
        lambda,
        aggregation: a.aggregation,
    };
    let decisions = classify_batch(&items, &lib, &cfg)?;
    jsonl::write_jsonl(&out, &decisions)
        .map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let ng = decisions.iter().filter(|d| d.is_ng()).count();
    println!("{} items, {} routed to NG", decisions.len(), ng);
    Ok(())
}

#[derive(Deserialize)]
struct DecisionLine {
    item_id: String,
    action: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    decided_at: Option<DateTime<Utc>>,
}

fn run_decide(a: DecideArgs) -> Outcome {
    let cfg = PipelineConfig::load(&a.config)?;
    let mut store = ReviewStore::open(&cfg.review_dir())?;
    let lines = match (&a.item, &a.file) {
        (Some(item), None) => vec![DecisionLine {
            item_id: item.clone(),
            action: a.action.clone().unwrap_or_default(),
            label: a.label.clone(),
            decided_at: a.at,
        }],
        (None, Some(f)) => read_jsonl(f)?,
        _ => {
            return Err(Failure::validation(
                "decide needs --item/--action or --file",
            ))
        }
    };
    for l in &lines {
        let action = Action::parse(&l.action, l.label.as_deref())?;
        store.apply_at(&l.item_id, action, l.decided_at.unwrap_or_else(Utc::now))?;
    }
    print_json(&store.stats())
}

fn run_serve(a: ServeArgs) -> Outcome {
    let cfg = PipelineConfig::load(&a.config)?;
    let store = ReviewStore::open(&cfg.review_dir())?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port.unwrap_or(cfg.service_port))
        .parse()
        .map_err(|e| Failure::validation(format!("address: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
            if e.kind() == io::ErrorKind::AddrInUse {
                Failure::io(format!("PortInUse: {addr}"))
            } else {
                Failure::io(format!("{addr}: {e}"))
            }
        })?;
        println!("listening on http://{}", listener.local_addr()?);
        let app = service::router(service::AppState::new(store), a.ui);
        service::serve(listener, app).await?;
        Ok(())
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), |x| x.to_string())
}

fn print_report(r: &EvalReport) {
    println!(
        "recall={} accuracy={} n_pred={} n_gt={} t_iou={}",
        fmt_metric(r.recall),
        fmt_metric(r.accuracy),
        r.n_predictions,
        r.n_ground_truth,
        r.t_iou
    );
}

fn run_evaluate(a: EvaluateArgs) -> Outcome {
    let cands = jsonl::ingest_detections(&a.det.preds)?;
    let gts = jsonl::ingest_ground_truth(&a.det.gt)?;
    let r = evaluate(&cands, &gts, &a.det.base(a.p1, a.p2), a.det.tiou)?;
    print_report(&r);
    Ok(())
}

fn parse_objective(s: &str) -> Result<Objective, Failure> {
    if let Some((m, bound)) = s.split_once(">=") {
        let metric: Metric = m.trim().parse().map_err(Failure::validation)?;
        let bound: f64 = bound
            .trim()
            .parse()
            .map_err(|_| Failure::validation(format!("bad bound in {s:?}")))?;
        return Ok(Objective::MinPredicate { metric, bound });
    }
    Ok(Objective::Maximize(s.parse().map_err(Failure::validation)?))
}

fn run_sweep(a: SweepArgs) -> Outcome {
    let cands = jsonl::ingest_detections(&a.det.preds)?;
    let gts = jsonl::ingest_ground_truth(&a.det.gt)?;
    let axis2 = a.grid2.unwrap_or(a.grid);
    let surface = sweep(
        &cands,
        &gts,
        &a.det.base(0.0, 0.0),
        &a.grid,
        &axis2,
        a.det.tiou,
    )?;
    let mut w = create(&a.out)?;
    write_surface_csv(&surface, &mut w, a.clip)?;
    w.flush()?;
    println!("{} cells written to {}", surface.len(), a.out.display());
    if let Some(best) = a.best {
        let p = best_operating_point(&surface, parse_objective(&best)?)?;
        print!(
            "best {}={} {}={} ",
            surface.axis1_name, p.axis1, surface.axis2_name, p.axis2
        );
        print_report(&p.report);
    }
    Ok(())
}

#[derive(Deserialize)]
struct TruthLine {
    item_id: String,
    label: String,
}

fn run_confusion(a: ConfusionArgs) -> Outcome {
    let decisions = read_jsonl(&a.decisions)?;
    let truth: Vec<TruthLine> = read_jsonl(&a.truth)?;
    let classes = match a.classes {
        Some(c) => c,
        None => {
            let mut c: Vec<String> = Vec::new();
            for t in &truth {
                if !c.contains(&t.label) && t.label != actlabel_core::NG {
                    c.push(t.label.clone());
                }
            }
            c
        }
    };
    let classes =
        actlabel_core::model::with_ng(&classes).map_err(|e| Failure::validation(e.to_string()))?;
    let truth = truth.into_iter().map(|t| (t.item_id, t.label)).collect();
    let m = confusion(&decisions, &truth, &classes)?;
    print!("{m}");
    print_json(&classification_stats(&m)?)
}

fn run_cost(a: CostArgs) -> Outcome {
    let mut manual: CostLedger = read_json_file(&a.manual)?;
    let mut auto: CostLedger = read_json_file(&a.auto)?;
    if let Some(p) = a.posts {
        manual.posts_per_line = p;
        auto.posts_per_line = p;
    }
    let rows = cost_report(&manual, &auto)?;
    match a.out {
        Some(path) => {
            let mut w = create(&path)?;
            write_report_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_report_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run_lora_demo(a: LoraDemoArgs) -> Outcome {
    let mut adapter = init_adapter(a.d, a.k, a.r, a.seed)?;
    if let Some(alpha) = a.alpha {
        adapter = adapter.with_alpha(alpha);
    }
    let count = trainable_param_count(a.d, a.k, a.r)?;
    // A trained-looking B so the equivalence check is not trivially exact.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let w0 = DenseMatrix::random(a.d, a.k, 1.0, &mut rng);
    let b = DenseMatrix::random(a.d, a.r, 0.1, &mut rng);
    let x = DenseMatrix::random(1, a.k, 1.0, &mut rng).data().to_vec();
    let fresh_exact = lora_forward(&w0, &adapter, &x)? == w0.matvec(&x)?;
    let scale = adapter.scale();
    let mut trained = LoraAdapter::new(b, adapter.a().clone())?;
    if a.alpha.is_some() {
        trained = trained.with_alpha(scale * a.r as f64);
    }
    let h = lora_forward(&w0, &trained, &x)?;
    let m = lora_merge(&w0, &trained)?.matvec(&x)?;
    let num = h
        .iter()
        .zip(&m)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if let Some(out) = &a.out {
        let file = AdapterFile::from(&adapter);
        fs::write(out, serde_json::to_string(&file)?)
            .map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    }
    print_json(&serde_json::json!({
        "d": a.d, "k": a.k, "r": a.r,
        "trainable": count.trainable,
        "frozen": count.frozen,
        "ratio_percent": count.ratio * 100.0,
        "fresh_adapter_exact": fresh_exact,
        "forward_vs_merge_rel_error": if den > 0.0 { num / den } else { num },
    }))
}

fn run_distill(a: DistillArgs) -> Outcome {
    let (teacher, student, data, mut cfg) = if a.toy {
        let (t, s, d) = toy_problem(500, 4, a.seed);
        (t, s, d, toy_config(a.seed))
    } else {
        let (Some(emb), Some(tpath)) = (&a.embeddings, &a.teacher) else {
            return Err(Failure::validation(
                "distill needs --embeddings and --teacher, or --toy",
            ));
        };
        let head: LinearHeadFile = read_json_file(tpath)?;
        let teacher = LinearHead::try_from(head)?;
        let data: Vec<_> = jsonl::ingest_embeddings(emb, teacher.dim())?
            .into_values()
            .collect();
        let student = LinearHead::zeros(teacher.classes(), teacher.dim());
        let cfg = KdConfig {
            seed: a.seed,
            ..KdConfig::default()
        };
        (teacher, student, data, cfg)
    };
    cfg.temperature = a.tau;
    cfg.kd_weight = a.alpha;
    cfg.epochs = a.epochs;
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    let out = distill(&teacher, student, &data, None, &cfg)?;
    let mut w = create(&a.out)?;
    write_history_csv(&out.history, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.student_out {
        fs::write(
            p,
            serde_json::to_string(&LinearHeadFile::from(&out.student))?,
        )
        .map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
    }
    let last = out.history.last().expect("at least one epoch");
    println!(
        "epochs={} final_loss={} final_agreement={}",
        out.history.len(),
        last.loss,
        last.agreement
    );
    Ok(())
}
