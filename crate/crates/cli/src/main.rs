//! `qclusformer` command-line pipeline.
//!
//! Exit codes: 0 success, 1 contract/format/data error, 2 usage error. Every
//! failure prints one `error kind=<kind> message="<text>"` line on stderr.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use qclusformer::clusterset::{knn_clusters, FeatureSet};
use qclusformer::datagen::{synth_blobs, SynthSpec};
use qclusformer::io;
use qclusformer::metrics::MetricReport;
use qclusformer::qsim::qubits_for_dim;
use qclusformer::trainer::{
    evaluate, evaluate_predictions, kmeans_baseline, train, Checkpoint, TrainConfig, TrainOptions,
};

use settings::{manifest_path, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(qclusformer::Error),
}

impl From<qclusformer::Error> for CliError {
    fn from(e: qclusformer::Error) -> Self {
        match e {
            qclusformer::Error::Config(m) => CliError::Usage(m),
            e => CliError::Core(e),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "qclusformer",
    version,
    about = "Quantum-transformer cluster refinement pipeline"
)]
struct Cli {
    /// key=value file; explicit flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest (default: `<output>.manifest`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic embeddings.
    Synth(SynthArgs),
    /// Build kNN cluster instances from features.
    Build(BuildArgs),
    /// Train the noisy-member detector.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled cluster dataset.
    Eval(EvalArgs),
    /// Write predicted cluster labels.
    Cluster(ClusterArgs),
    /// Score kmeans and all-keep kNN linking.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_features: Option<PathBuf>,
    #[arg(long)]
    out_labels: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// RMS angular noise, radians.
    #[arg(long)]
    sigma: Option<f64>,
    /// Minimum centroid angle, radians.
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Ground-truth labels; when given, member masks are stored.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    n_qubits: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// 1QKV, 1QK-1V or 1Q-1K-1V.
    #[arg(long)]
    sharing_mode: Option<String>,
    /// per-position or shared.
    #[arg(long)]
    fusion_mode: Option<String>,
    /// ring or line.
    #[arg(long)]
    entangler: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pos_weight: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-batch training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    /// Must match the checkpoint.
    #[arg(long)]
    sharing_mode: Option<String>,
    /// Must match the checkpoint.
    #[arg(long)]
    fusion_mode: Option<String>,
    /// Also write the key=value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// kNN clusters for the raw-linking baseline; built with --k when absent.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Defaults to the number of ground-truth classes.
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Build(_) => "build",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Cluster(_) => "cluster",
        Command::Baseline(_) => "baseline",
    };
    match run(cli, name) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error kind=usage message={msg:?}");
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                let mut sub = sub.clone().bin_name(format!("qclusformer {name}"));
                eprintln!("{}", sub.render_usage());
            }
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, name: &str) -> Result<(), CliError> {
    let mut flags = vec![
        ("seed", s(&cli.seed)),
        ("threads", s(&cli.threads)),
        ("manifest", p(&cli.manifest)),
    ];
    flags.extend(command_flags(&cli.command));
    let mut st = Settings::load(cli.config.as_deref(), flags)?;
    let threads: Option<usize> = st.get("threads")?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match name {
        "synth" => cmd_synth(&mut st),
        "build" => cmd_build(&mut st),
        "train" => cmd_train(&mut st),
        "eval" => cmd_eval(&mut st),
        "cluster" => cmd_cluster(&mut st),
        _ => cmd_baseline(&mut st),
    }
}

fn command_flags(cmd: &Command) -> Vec<(&'static str, Option<String>)> {
    match cmd {
        Command::Synth(a) => vec![
            ("out_features", p(&a.out_features)),
            ("out_labels", p(&a.out_labels)),
            ("classes", s(&a.classes)),
            ("per_class", s(&a.per_class)),
            ("dim", s(&a.dim)),
            ("sigma", s(&a.sigma)),
            ("separation", s(&a.separation)),
        ],
        Command::Build(a) => vec![
            ("features", p(&a.features)),
            ("labels", p(&a.labels)),
            ("k", s(&a.k)),
            ("out", p(&a.out)),
        ],
        Command::Train(a) => {
            let m = &a.model;
            vec![
                ("features", p(&a.features)),
                ("labels", p(&a.labels)),
                ("clusters", p(&a.clusters)),
                ("out", p(&a.out)),
                ("log", p(&a.log)),
                ("resume", p(&a.resume)),
                ("n_qubits", s(&m.n_qubits)),
                ("depth", s(&m.depth)),
                ("blocks", s(&m.blocks)),
                ("sharing_mode", m.sharing_mode.clone()),
                ("fusion_mode", m.fusion_mode.clone()),
                ("entangler", m.entangler.clone()),
                ("learning_rate", s(&m.learning_rate)),
                ("epochs", s(&m.epochs)),
                ("batch_size", s(&m.batch_size)),
                ("pos_weight", s(&m.pos_weight)),
                ("tau", s(&m.tau)),
            ]
        }
        Command::Eval(a) => vec![
            ("checkpoint", p(&a.checkpoint)),
            ("features", p(&a.features)),
            ("labels", p(&a.labels)),
            ("clusters", p(&a.clusters)),
            ("tau", s(&a.tau)),
            ("sharing_mode", a.sharing_mode.clone()),
            ("fusion_mode", a.fusion_mode.clone()),
            ("out", p(&a.out)),
        ],
        Command::Cluster(a) => vec![
            ("checkpoint", p(&a.checkpoint)),
            ("features", p(&a.features)),
            ("clusters", p(&a.clusters)),
            ("tau", s(&a.tau)),
            ("out", p(&a.out)),
        ],
        Command::Baseline(a) => vec![
            ("features", p(&a.features)),
            ("labels", p(&a.labels)),
            ("clusters", p(&a.clusters)),
            ("k", s(&a.k)),
            ("n_clusters", s(&a.n_clusters)),
            ("out", p(&a.out)),
        ],
    }
}

fn load_features(st: &mut Settings, labels_required: bool) -> Result<FeatureSet, CliError> {
    let features = st.path("features")?;
    let labels = if labels_required {
        Some(st.path("labels")?)
    } else {
        st.opt_path("labels")?
    };
    Ok(io::read_features(&features, labels.as_deref())?)
}

fn cmd_synth(st: &mut Settings) -> Result<(), CliError> {
    let out_features = st.path("out_features")?;
    let out_labels = st.path("out_labels")?;
    let spec = SynthSpec {
        n_classes: st.or("classes", 20)?,
        samples_per_class: st.or("per_class", 50)?,
        dim: st.or("dim", 16)?,
        sigma: st.or("sigma", 0.78)?,
        min_separation: st.or("separation", 1.0)?,
        seed: st.or("seed", 7)?,
    };
    let f = synth_blobs(&spec)?;
    io::write_features(&out_features, &f)?;
    io::write_labels(&out_labels, f.labels().expect("synthetic data is labeled"))?;
    let manifest = manifest_path(st, &out_features)?;
    st.write_manifest(
        "synth",
        &manifest,
        &[("out_features", &out_features), ("out_labels", &out_labels)],
    )?;
    println!("wrote {} samples of dimension {}", f.len(), f.dim());
    Ok(())
}

fn cmd_build(st: &mut Settings) -> Result<(), CliError> {
    let k: usize = st.require("k")?;
    let out = st.path("out")?;
    let f = load_features(st, false)?;
    let clusters = knn_clusters(&f, k)?;
    io::write_clusters(&out, &clusters)?;
    let manifest = manifest_path(st, &out)?;
    st.write_manifest("build", &manifest, &[("out", &out)])?;
    println!("wrote {} cluster instances with k={k}", clusters.len());
    Ok(())
}

fn cmd_train(st: &mut Settings) -> Result<(), CliError> {
    let out = st.path("out")?;
    let log_path = st.opt_path("log")?;
    let resume = st.opt_path("resume")?;
    let f = load_features(st, true)?;
    let clusters = io::read_clusters(&st.path("clusters")?)?;
    let k = clusters[0].k();

    let mut cfg = TrainConfig {
        k,
        input_dim: f.dim(),
        n_qubits: qubits_for_dim(f.dim())?,
        ..TrainConfig::default()
    };
    let mut raw = st.raw().clone();
    raw.retain(|key, _| key != "k" && key != "input_dim");
    cfg.apply_kv(&raw)?;
    for (key, v) in cfg.entries() {
        st.note(key, v);
    }
    let resume = match resume {
        Some(path) => Some(io::read_checkpoint(&path)?),
        None => None,
    };

    let mut log = Vec::new();
    let outcome = train(
        &cfg,
        &f,
        &clusters,
        TrainOptions {
            checkpoint_path: Some(out.clone()),
            log: Some(&mut log),
            resume,
            stop_after: None,
        },
    )?;
    let mut outputs: Vec<(&str, &Path)> = vec![("out", &out)];
    if let Some(path) = &log_path {
        io::write_atomic(path, &log)?;
        outputs.push(("log", path));
    }
    let manifest = manifest_path(st, &out)?;
    st.write_manifest("train", &manifest, &outputs)?;
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch={epoch} mean_loss={loss}");
    }
    Ok(())
}

fn load_checkpoint(st: &mut Settings) -> Result<Checkpoint, CliError> {
    let ckpt = io::read_checkpoint(&st.path("checkpoint")?)?;
    let sharing: Option<String> = st.get("sharing_mode")?;
    if let Some(m) = sharing {
        let m: qclusformer::qtransformer::SharingMode = m.parse()?;
        if m != ckpt.config.sharing {
            return Err(CliError::Core(qclusformer::Error::Contract(format!(
                "checkpoint was trained with sharing mode {}, not {m}",
                ckpt.config.sharing
            ))));
        }
    }
    let fusion: Option<String> = st.get("fusion_mode")?;
    if let Some(m) = fusion {
        let m: qclusformer::clusterset::FusionMode = m.parse()?;
        if m != ckpt.config.fusion {
            return Err(CliError::Core(qclusformer::Error::Contract(format!(
                "checkpoint was trained with fusion mode {}, not {m}",
                ckpt.config.fusion
            ))));
        }
    }
    Ok(ckpt)
}

fn cmd_eval(st: &mut Settings) -> Result<(), CliError> {
    let ckpt = load_checkpoint(st)?;
    let f = load_features(st, true)?;
    let clusters = io::read_clusters(&st.path("clusters")?)?;
    let tau = st.or("tau", ckpt.config.tau)?;
    let report = evaluate(&ckpt, &f, &clusters, tau)?
        .report
        .expect("labels were loaded");
    let kv = format!("tau={tau}\n{}", report.to_kv(""));
    print!("{report}\n{kv}");
    if let Some(out) = st.opt_path("out")? {
        io::write_atomic(&out, kv.as_bytes())?;
        let manifest = manifest_path(st, &out)?;
        st.write_manifest("eval", &manifest, &[("out", &out)])?;
    }
    Ok(())
}

fn cmd_cluster(st: &mut Settings) -> Result<(), CliError> {
    let ckpt = load_checkpoint(st)?;
    let out = st.path("out")?;
    let f = load_features(st, false)?;
    let clusters = io::read_clusters(&st.path("clusters")?)?;
    let tau = st.or("tau", ckpt.config.tau)?;
    let eval = evaluate(&ckpt, &f, &clusters, tau)?;
    io::write_labels(&out, &eval.labels)?;
    let manifest = manifest_path(st, &out)?;
    st.write_manifest("cluster", &manifest, &[("out", &out)])?;
    let n = eval.labels.iter().max().map_or(0, |m| m + 1);
    println!("wrote {} labels in {n} clusters", eval.labels.len());
    Ok(())
}

fn cmd_baseline(st: &mut Settings) -> Result<(), CliError> {
    let f = load_features(st, true)?;
    let gt = f.labels().expect("labels were loaded").to_vec();
    let clusters = match st.opt_path("clusters")? {
        Some(path) => io::read_clusters(&path)?,
        None => knn_clusters(&f, st.require("k")?)?,
    };
    let mut classes = gt.clone();
    classes.sort_unstable();
    classes.dedup();
    let n_clusters = st.or("n_clusters", classes.len())?;
    let seed = st.or("seed", 7u64)?;

    let km = MetricReport::compute(&gt, &kmeans_baseline(&f, n_clusters, seed)?)?;
    let keep_all = clusters.iter().map(|c| vec![1.0; c.k()]).collect();
    let raw = evaluate_predictions(&f, &clusters, keep_all, 0.5)?
        .report
        .expect("labels were loaded");
    let kv = format!("{}{}", km.to_kv("kmeans"), raw.to_kv("raw_knn"));
    print!("kmeans (n_clusters={n_clusters})\n{km}\nraw kNN, all members kept\n{raw}\n{kv}");
    if let Some(out) = st.opt_path("out")? {
        io::write_atomic(&out, kv.as_bytes())?;
        let manifest = manifest_path(st, &out)?;
        st.write_manifest("baseline", &manifest, &[("out", &out)])?;
    }
    Ok(())
}
