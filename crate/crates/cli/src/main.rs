use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use relabel::evaluation::format_table;
use relabel::pipeline::{
    analyze_stage, eval_stage, label_stage, read_classifier, read_labels, split_stage, train_stage,
    with_threads, StageError,
};
use relabel::synthgen::{generate, SynthSpec};
use relabel::{load_dataset, run_pipeline, Error, Method, PipelineConfig, SceneGraphDataset};

#[derive(Parser, Debug)]
#[command(
    name = "relabel",
    version,
    about = "Label visual relationships from a few examples per predicate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its ground-truth manifest.
    Generate(GenerateArgs),
    /// Generate probabilistic labels for the unlabeled pool.
    Label(StageArgs),
    /// Train the predicate classifier on labels from a previous `label` run.
    Train(StageArgs),
    /// Evaluate labels and the trained classifier.
    Eval(StageArgs),
    /// Subtype counts and complexity fits (needs labels from `label`).
    Analyze(StageArgs),
    /// Run every stage in order.
    Pipeline(StageArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator spec as JSON; the built-in acceptance spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for dataset.json and manifest.json.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StageArgs {
    /// JSON pipeline config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_labeled: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// ours, majority_vote, single_tree, label_propagation, freq, freq_overlap
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    tau: Option<f64>,
    /// Worker cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Also report recall of a classifier trained on the true labels.
    #[arg(long)]
    oracle: bool,
}

impl StageArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset_path = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.n_labeled {
            cfg.n_labeled = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.oracle {
            cfg.eval.oracle = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| {
                Error::Config(format!("invalid generator spec {}: {e}", p.display()))
            })?
        }
        None => SynthSpec::acceptance(0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (ds, manifest) = generate(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    ds.save(a.out.join("dataset.json"))?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    let c = ds.counts();
    println!(
        "wrote {} ({} images, {} relationships)",
        a.out.join("dataset.json").display(),
        c.images,
        c.relationships
    );
    Ok(())
}

/// Runs one stage under the configured thread cap; on failure leaves a
/// `FAILED` marker in the output directory.
fn staged<R: Send>(
    cfg: &PipelineConfig,
    stage: &'static str,
    f: impl FnOnce(&SceneGraphDataset) -> relabel::Result<R> + Send,
) -> Result<R> {
    let ds = load_dataset(&cfg.dataset_path).map_err(|source| StageError {
        stage: "ingest",
        source,
    })?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let marker = cfg.output_dir.join("FAILED");
    let _ = fs::remove_file(&marker);
    let res = with_threads(cfg.threads, || f(&ds))?.map_err(|source| StageError { stage, source });
    if let Err(e) = &res {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    Ok(res?)
}

fn cmd_stage(cmd: &Command, a: &StageArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let dir = cfg.output_dir.clone();
    let mut outputs = Vec::new();
    match cmd {
        Command::Label(_) => {
            let lo = staged(&cfg, "label", |ds| {
                let split = split_stage(ds, &cfg)?;
                label_stage(ds, &split, &cfg, &dir, &mut outputs)
            })?;
            let abstained = lo.labels.iter().filter(|l| l.is_abstain()).count();
            println!("labeled {} pairs ({abstained} abstained)", lo.labels.len());
        }
        Command::Train(_) => {
            staged(&cfg, "train", |ds| {
                let split = split_stage(ds, &cfg)?;
                let labels = read_labels(ds, &split, &dir)?;
                train_stage(ds, &split, &labels, &cfg, &dir, &mut outputs)
            })?;
            println!("wrote {}", dir.join("classifier.json").display());
        }
        Command::Eval(_) => {
            let ev = staged(&cfg, "eval", |ds| {
                let split = split_stage(ds, &cfg)?;
                let labels = read_labels(ds, &split, &dir)?;
                let params = read_classifier(ds, &dir)?;
                eval_stage(ds, &split, &labels, &params, &cfg, &dir, &mut outputs)
            })?;
            print!(
                "{}",
                format_table(&[(cfg.method.as_str().to_string(), &ev.label_eval)])
            );
            println!("PREDCLS {}", ev.predcls.to_json());
        }
        Command::Analyze(_) => {
            let an = staged(&cfg, "analyze", |ds| {
                let split = split_stage(ds, &cfg)?;
                let labels = read_labels(ds, &split, &dir)?;
                let label_eval = relabel::pipeline::evaluate_labels(&split, &labels)?;
                analyze_stage(ds, &split, &label_eval, &cfg, &dir, &mut outputs)
            })?;
            for f in &an.fits {
                println!(
                    "{}: slope {:.4} intercept {:.4} R^2 {:.4}",
                    f.series, f.fit.slope, f.fit.intercept, f.fit.r_squared
                );
            }
        }
        Command::Pipeline(_) => {
            let r = run_pipeline(&cfg)?;
            for t in &r.timings {
                info!("{}: {:.3}s", t.stage, t.seconds);
            }
            print!(
                "{}",
                format_table(&[(r.method.as_str().to_string(), &r.label_eval)])
            );
            println!("PREDCLS {}", r.predcls.to_json());
            if let Some(o) = &r.oracle_predcls {
                println!("oracle PREDCLS {}", o.to_json());
            }
        }
        Command::Generate(_) => unreachable!(),
    }
    for o in &outputs {
        info!("wrote {}", dir.join(o).display());
    }
    Ok(())
}

/// The error and its causes, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let code = if let Some(s) = e.downcast_ref::<StageError>() {
        s.exit_code()
    } else if let Some(s) = e.downcast_ref::<Error>() {
        s.exit_code()
    } else {
        1
    };
    code as u8
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
    let res = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Label(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Analyze(a)
        | Command::Pipeline(a) => cmd_stage(&cli.command, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
