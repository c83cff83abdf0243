//! End-to-end orchestration: ingest, split, label, train, evaluate, analyze.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::{
    complexity_series, linear_fit_r2, subtype_reports, write_subtypes_csv, write_xy_csv, FitReport,
    SubtypeConfig, SubtypeReport,
};
use crate::baselines::{
    distributions_to_labels, frequency_baseline, label_propagation_split, single_tree_labeler,
    PropagationConfig,
};
use crate::dataset::{load_dataset, SceneGraphDataset, SplitConfig, SplitDataset};
use crate::downstream::{
    predict_scores, train_classifier, train_classifier_targets, ClassifierParams, TrainConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    format_table, macro_prf1, predcls_recall_at_k, EvalReport, ImageScores, RecallReport,
};
use crate::features::{featurize, featurize_all, FeatureMode};
use crate::heuristics::{
    generate_heuristics, predict_votes, HeuristicConfig, HeuristicSet, LabelMatrix, PairFeatures,
};
use crate::labelmodel::{
    aggregate_labels, aggregate_majority, phi_to_json, read_labels_jsonl, train_label_model,
    write_labels_jsonl, LabelModelConfig, LabelModelParams, ProbabilisticLabel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    MajorityVote,
    SingleTree,
    LabelPropagation,
    Freq,
    FreqOverlap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ours,
        Method::MajorityVote,
        Method::SingleTree,
        Method::LabelPropagation,
        Method::Freq,
        Method::FreqOverlap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::MajorityVote => "majority_vote",
            Method::SingleTree => "single_tree",
            Method::LabelPropagation => "label_propagation",
            Method::Freq => "freq",
            Method::FreqOverlap => "freq_overlap",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub holdout_fraction: f64,
    pub negative_ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitConfig::default();
        SplitSection {
            holdout_fraction: d.holdout_fraction,
            negative_ratio: d.negative_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub k_values: Vec<usize>,
    /// Also train the classifier on the hidden true labels of the
    /// unlabeled pool and report its recall as an upper reference.
    pub oracle: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k_values: vec![20, 50, 100],
            oracle: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub n_labeled: usize,
    pub seed: u64,
    pub method: Method,
    /// Worker cap; `None` uses the rayon default. Results do not depend on it.
    pub threads: Option<usize>,
    /// Minimum top posterior for a pair to receive a label.
    pub tau: f64,
    pub split: SplitSection,
    pub heuristics: HeuristicConfig,
    pub label_model: LabelModelConfig,
    pub classifier: TrainConfig,
    pub propagation: PropagationConfig,
    /// Depth of the single-tree baseline; `None` grows until pure.
    pub single_tree_depth: Option<usize>,
    pub subtypes: SubtypeConfig,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_path: PathBuf::from("dataset.json"),
            output_dir: PathBuf::from("out"),
            n_labeled: 10,
            seed: 0,
            method: Method::Ours,
            threads: None,
            tau: 0.5,
            split: SplitSection::default(),
            heuristics: HeuristicConfig::default(),
            label_model: LabelModelConfig::default(),
            classifier: TrainConfig::default(),
            propagation: PropagationConfig::default(),
            single_tree_depth: None,
            subtypes: SubtypeConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid pipeline config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            n: self.n_labeled,
            holdout_fraction: self.split.holdout_fraction,
            seed: self.seed,
            negative_ratio: self.split.negative_ratio,
        }
    }

    /// Configuration echo for reports: everything that affects results,
    /// without the output location and thread count.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            m.remove("threads");
            m.insert(
                "dataset_path".into(),
                Value::from(
                    self.dataset_path
                        .file_name()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                ),
            );
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labeled == 0 {
            return Err(Error::Config("n_labeled must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.eval.k_values.is_empty() {
            return Err(Error::Config("eval.k_values is empty".into()));
        }
        Ok(())
    }
}

/// A stage failure: which stage broke and why.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Labels for the unlabeled pool plus method-specific artifacts.
#[derive(Clone, Debug)]
pub struct LabelOutput {
    pub labels: Vec<ProbabilisticLabel>,
    pub heuristics: Option<HeuristicSet>,
    pub phi: Option<Vec<LabelModelParams>>,
    pub warnings: Vec<String>,
}

fn heuristic_matrices(
    split: &SplitDataset,
    cfg: &PipelineConfig,
) -> Result<(HeuristicSet, Vec<LabelMatrix>)> {
    let hs = generate_heuristics(split, &cfg.heuristics)?;
    let feats = PairFeatures::compute(&split.unlabeled, split.num_categories, &hs.modes())?;
    let votes = predict_votes(&hs, &feats)?;
    let matrices = (0..split.num_predicates)
        .map(|p| votes.label_matrix(p))
        .collect();
    Ok((hs, matrices))
}

/// Runs the configured labeling method over `split.unlabeled`.
pub fn produce_labels(split: &SplitDataset, cfg: &PipelineConfig) -> Result<LabelOutput> {
    use rayon::prelude::*;
    let ids: Vec<String> = split.unlabeled.iter().map(|p| p.pair_id()).collect();
    let mut warnings = Vec::new();
    let (labels, heuristics, phi) = match cfg.method {
        Method::Ours => {
            let (hs, matrices) = heuristic_matrices(split, cfg)?;
            if ids.is_empty() {
                (Vec::new(), Some(hs), Some(Vec::new()))
            } else {
                let models = matrices
                    .par_iter()
                    .map(|lm| train_label_model::<f64>(lm, &cfg.label_model).map(|t| t.params))
                    .collect::<Result<Vec<_>>>()?;
                let labels = aggregate_labels(&models, &matrices, cfg.tau)?;
                (labels, Some(hs), Some(models))
            }
        }
        Method::MajorityVote => {
            let (hs, matrices) = heuristic_matrices(split, cfg)?;
            let labels = aggregate_majority(&matrices, cfg.tau)?;
            (labels, Some(hs), None)
        }
        Method::SingleTree => {
            let (_, dists) = single_tree_labeler(split, cfg.single_tree_depth)?;
            (distributions_to_labels(&ids, dists), None, None)
        }
        Method::LabelPropagation => {
            if ids.is_empty() {
                (Vec::new(), None, None)
            } else {
                let res = label_propagation_split(split, &cfg.propagation)?;
                warnings.extend(res.warnings);
                (distributions_to_labels(&ids, res.unlabeled), None, None)
            }
        }
        Method::Freq | Method::FreqOverlap => {
            let (_, dists) =
                frequency_baseline(split, &split.unlabeled, cfg.method == Method::FreqOverlap);
            (distributions_to_labels(&ids, dists), None, None)
        }
    };
    Ok(LabelOutput {
        labels,
        heuristics,
        phi,
        warnings,
    })
}

/// Scores generated labels against the hidden truth of unlabeled pairs
/// that carry at least one relationship. For a pair with several gold
/// predicates the prediction counts as correct when it is any of them.
pub fn evaluate_labels(split: &SplitDataset, labels: &[ProbabilisticLabel]) -> Result<EvalReport> {
    if labels.len() != split.unlabeled.len() {
        return Err(Error::DimensionMismatch {
            expected: split.unlabeled.len(),
            found: labels.len(),
        });
    }
    let mut predicted = Vec::new();
    let mut gold = Vec::new();
    for (l, g) in labels.iter().zip(&split.unlabeled_gold) {
        if g.is_empty() {
            continue;
        }
        let pred = l.argmax();
        let g0 = match pred {
            Some(p) if g.contains(&p) => p,
            _ => g[0],
        };
        predicted.push((l.pair_id.clone(), pred));
        gold.push((l.pair_id.clone(), g0));
    }
    macro_prf1(&predicted, &gold, split.num_predicates)
}

fn combined(split: &SplitDataset) -> Result<Vec<Vec<f64>>> {
    featurize_all::<f64>(
        &split.unlabeled,
        split.num_categories,
        FeatureMode::Combined,
    )
}

/// Trains the downstream classifier on the generated labels.
pub fn train_downstream(
    split: &SplitDataset,
    labels: &[ProbabilisticLabel],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    let x = combined(split)?;
    Ok(train_classifier(&x, labels, split.num_predicates, cfg)?.params)
}

/// Per-pair one-hot truth of the unlabeled pool; sampled negatives get an
/// all-zero target.
pub fn oracle_targets(split: &SplitDataset) -> Vec<Vec<f64>> {
    split
        .unlabeled_gold
        .iter()
        .map(|g| {
            let mut t = vec![0.0; split.num_predicates];
            for &p in g {
                t[p] = 1.0;
            }
            t
        })
        .collect()
}

pub fn train_oracle(split: &SplitDataset, cfg: &TrainConfig) -> Result<ClassifierParams> {
    let x = combined(split)?;
    Ok(train_classifier_targets(&x, &oracle_targets(split), split.num_predicates, cfg)?.params)
}

/// Scores every ordered object pair of each held-out image.
pub fn predcls_images(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    params: &ClassifierParams,
) -> Result<Vec<ImageScores>> {
    use rayon::prelude::*;
    let nc = ds.num_categories();
    split
        .holdout_images
        .par_iter()
        .map(|&ii| {
            let im = &ds.images[ii];
            let mut candidates = Vec::new();
            for s in 0..im.objects.len() {
                for o in 0..im.objects.len() {
                    if s == o {
                        continue;
                    }
                    let pair = ds.pair(ii, s, o);
                    let v = featurize::<f64>(&pair, nc, FeatureMode::Combined)?;
                    candidates.push((pair.pair_id(), predict_scores(params, &v)?));
                }
            }
            let gold = im
                .relationships
                .iter()
                .map(|r| (ds.pair(ii, r.subject, r.object).pair_id(), r.predicate))
                .collect();
            Ok(ImageScores { candidates, gold })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedFit {
    pub series: String,
    pub fit: FitReport<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Correlates the three complexity series with per-predicate label F1.
pub fn complexity_fits(
    split: &SplitDataset,
    f1: &[f64],
    cfg: &SubtypeConfig,
) -> Result<Vec<NamedFit>> {
    let rows = complexity_series(split, cfg)?;
    let rows: Vec<_> = rows
        .into_iter()
        .filter(|r| r.predicate < f1.len())
        .collect();
    if rows.len() < 2 {
        return Ok(Vec::new());
    }
    let ys: Vec<f64> = rows.iter().map(|r| f1[r.predicate]).collect();
    let series: [(&str, Vec<f64>); 3] = [
        (
            "train_subtypes",
            rows.iter().map(|r| r.train_subtypes as f64).collect(),
        ),
        (
            "unlabeled_subtypes",
            rows.iter().map(|r| r.unlabeled_subtypes as f64).collect(),
        ),
        (
            "labeled_proportion",
            rows.iter().map(|r| r.labeled_proportion).collect(),
        ),
    ];
    series
        .into_iter()
        .map(|(name, xs)| {
            Ok(NamedFit {
                series: name.to_string(),
                fit: linear_fit_r2(&xs, &ys)?,
                xs,
                ys: ys.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub method: Method,
    pub timings: Vec<StageTiming>,
    pub label_eval: EvalReport,
    pub predcls: RecallReport,
    pub oracle_predcls: Option<RecallReport>,
    pub subtypes: Vec<SubtypeReport>,
    pub fits: Vec<NamedFit>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub unlabeled_pairs: usize,
    pub warnings: Vec<String>,
    pub config: Value,
    pub report_json: Value,
}

struct Timer {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        info!(
            "stage {stage} done in {:.3}s",
            (now - self.last).as_secs_f64()
        );
        self.last = now;
    }
}

pub fn write_file(
    dir: &Path,
    name: &str,
    outputs: &mut Vec<String>,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

pub fn write_json(dir: &Path, name: &str, outputs: &mut Vec<String>, v: &Value) -> Result<()> {
    write_file(dir, name, outputs, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        w.write_all(b"\n").map_err(|e| Error::io(dir.join(name), e))
    })
}

/// Runs `f` inside a rayon pool of `threads` workers (`None`: rayon default).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the dataset named in the config and runs every stage. On failure
/// a `FAILED` marker naming the stage is left in the output directory next
/// to any partial outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineReport, StageError> {
    cfg.validate().stage("config")?;
    let ds = load_dataset(&cfg.dataset_path).stage("ingest")?;
    run_pipeline_on(&ds, cfg)
}

/// As [`run_pipeline`] with an already loaded dataset.
pub fn run_pipeline_on(
    ds: &SceneGraphDataset,
    cfg: &PipelineConfig,
) -> std::result::Result<PipelineReport, StageError> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(&cfg.output_dir, e))
        .stage("output")?;
    let marker = cfg.output_dir.join("FAILED");
    let _ = fs::remove_file(&marker);
    let res = with_threads(cfg.threads, || stages(ds, cfg)).stage("config")?;
    if let Err(e) = &res {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    res
}

/// Evaluation results for one set of labels and one trained classifier.
#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub label_eval: EvalReport,
    pub predcls: RecallReport,
    pub oracle_predcls: Option<RecallReport>,
}

/// Subtype analysis and complexity fits.
#[derive(Clone, Debug)]
pub struct AnalysisOutput {
    pub subtypes: Vec<SubtypeReport>,
    pub fits: Vec<NamedFit>,
}

/// Deterministic split for `cfg`.
pub fn split_stage(ds: &SceneGraphDataset, cfg: &PipelineConfig) -> Result<SplitDataset> {
    let split = crate::dataset::split_with(ds, &cfg.split_config())?;
    info!("{split}");
    Ok(split)
}

/// Produces labels and writes `labels.jsonl`, `phi.json` and, for
/// heuristic methods, `heuristics.json` into `dir`.
pub fn label_stage(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<LabelOutput> {
    let vocab = &ds.predicates;
    let lo = produce_labels(split, cfg)?;
    write_file(dir, "labels.jsonl", outputs, |w| {
        write_labels_jsonl(w, &lo.labels, vocab)
    })?;
    let phi_json = lo
        .phi
        .as_ref()
        .map(|m| phi_to_json(m, vocab))
        .unwrap_or_else(|| Value::Object(Map::new()));
    write_json(dir, "phi.json", outputs, &phi_json)?;
    if let Some(hs) = &lo.heuristics {
        write_json(dir, "heuristics.json", outputs, &serde_json::to_value(hs)?)?;
    }
    Ok(lo)
}

/// Reads `labels.jsonl` from `dir` and checks it matches the unlabeled pool.
pub fn read_labels(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    dir: &Path,
) -> Result<Vec<ProbabilisticLabel>> {
    let path = dir.join("labels.jsonl");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let labels = read_labels_jsonl(BufReader::new(file), &ds.predicates)?;
    if labels.len() != split.unlabeled.len() {
        return Err(Error::Validation(format!(
            "{} holds {} labels but the split has {} unlabeled pairs",
            path.display(),
            labels.len(),
            split.unlabeled.len()
        )));
    }
    if let Some((l, p)) = labels
        .iter()
        .zip(&split.unlabeled)
        .find(|(l, p)| l.pair_id != p.pair_id())
    {
        return Err(Error::Validation(format!(
            "{}: pair {} does not match split pair {}",
            path.display(),
            l.pair_id,
            p.pair_id()
        )));
    }
    Ok(labels)
}

/// Trains the downstream classifier and writes `classifier.json`.
pub fn train_stage(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    labels: &[ProbabilisticLabel],
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<ClassifierParams> {
    let params = train_downstream(split, labels, &cfg.classifier)?;
    write_json(
        dir,
        "classifier.json",
        outputs,
        &params.to_json(&ds.predicates),
    )?;
    Ok(params)
}

pub fn read_classifier(ds: &SceneGraphDataset, dir: &Path) -> Result<ClassifierParams> {
    let path = dir.join("classifier.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        record: path.display().to_string(),
        message: e.to_string(),
    })?;
    ClassifierParams::from_json(&v, &ds.predicates)
}

/// Scores labels and PREDCLS recall; writes `eval.json` and `eval.txt`.
#[allow(clippy::too_many_arguments)]
pub fn eval_stage(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    labels: &[ProbabilisticLabel],
    params: &ClassifierParams,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<EvalOutput> {
    let vocab = &ds.predicates;
    let label_eval = evaluate_labels(split, labels)?;
    let images = predcls_images(ds, split, params)?;
    let predcls = predcls_recall_at_k(&images, &cfg.eval.k_values)?;
    let oracle_predcls = if cfg.eval.oracle {
        let op = train_oracle(split, &cfg.classifier)?;
        let oi = predcls_images(ds, split, &op)?;
        Some(predcls_recall_at_k(&oi, &cfg.eval.k_values)?)
    } else {
        None
    };
    let mut eval_json = Map::new();
    eval_json.insert("labels".into(), label_eval.to_json(vocab));
    eval_json.insert("predcls".into(), predcls.to_json());
    if let Some(o) = &oracle_predcls {
        eval_json.insert("oracle_predcls".into(), o.to_json());
    }
    write_json(dir, "eval.json", outputs, &Value::Object(eval_json))?;
    let table = format_table(&[(cfg.method.as_str().to_string(), &label_eval)]);
    write_file(dir, "eval.txt", outputs, |w| {
        w.write_all(table.as_bytes())
            .map_err(|e| Error::io(dir.join("eval.txt"), e))
    })?;
    Ok(EvalOutput {
        label_eval,
        predcls,
        oracle_predcls,
    })
}

/// Subtype counts per predicate and complexity fits against per-predicate
/// label F1; writes `subtypes.csv`, `fits.csv` and one `fit_<series>.csv`
/// per series.
pub fn analyze_stage(
    ds: &SceneGraphDataset,
    split: &SplitDataset,
    label_eval: &EvalReport,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<AnalysisOutput> {
    let subtypes = subtype_reports(ds, &cfg.subtypes)?;
    write_file(dir, "subtypes.csv", outputs, |w| {
        write_subtypes_csv(w, &subtypes, &ds.predicates)
    })?;
    let f1: Vec<f64> = label_eval.per_predicate.iter().map(|m| m.f1).collect();
    let fits = complexity_fits(split, &f1, &cfg.subtypes)?;
    write_file(dir, "fits.csv", outputs, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["series", "slope", "intercept", "r_squared"])?;
        for f in &fits {
            c.write_record([
                f.series.clone(),
                f.fit.slope.to_string(),
                f.fit.intercept.to_string(),
                f.fit.r_squared.to_string(),
            ])?;
        }
        c.flush().map_err(|e| Error::io(dir.join("fits.csv"), e))
    })?;
    for f in &fits {
        let name = format!("fit_{}.csv", f.series);
        write_file(dir, &name, outputs, |w| write_xy_csv(w, &f.xs, &f.ys))?;
    }
    Ok(AnalysisOutput { subtypes, fits })
}

fn stages(
    ds: &SceneGraphDataset,
    cfg: &PipelineConfig,
) -> std::result::Result<PipelineReport, StageError> {
    let dir = cfg.output_dir.as_path();
    let vocab = &ds.predicates;
    let mut timer = Timer::new();
    let mut outputs = Vec::new();

    let split = split_stage(ds, cfg).stage("split")?;
    timer.lap("split");

    let lo = label_stage(ds, &split, cfg, dir, &mut outputs).stage("label")?;
    let mut warnings = split.warnings.clone();
    warnings.extend(lo.warnings.iter().cloned());
    timer.lap("label");

    let params = train_stage(ds, &split, &lo.labels, cfg, dir, &mut outputs).stage("train")?;
    timer.lap("train");

    let ev = eval_stage(ds, &split, &lo.labels, &params, cfg, dir, &mut outputs).stage("eval")?;
    timer.lap("eval");

    let an = analyze_stage(ds, &split, &ev.label_eval, cfg, dir, &mut outputs).stage("analyze")?;
    timer.lap("analyze");

    outputs.push("report.json".into());
    outputs.push("timings.json".into());
    let mut report = Map::new();
    report.insert("method".into(), Value::from(cfg.method.as_str()));
    report.insert("config".into(), cfg.echo());
    report.insert("unlabeled_pairs".into(), Value::from(split.unlabeled.len()));
    report.insert(
        "abstained".into(),
        Value::from(lo.labels.iter().filter(|l| l.is_abstain()).count()),
    );
    report.insert("label_eval".into(), ev.label_eval.to_json(vocab));
    report.insert("macro_f1".into(), Value::from(ev.label_eval.macro_avg.f1));
    report.insert("predcls".into(), ev.predcls.to_json());
    if let Some(o) = &ev.oracle_predcls {
        report.insert("oracle_predcls".into(), o.to_json());
    }
    report.insert(
        "fits".into(),
        serde_json::to_value(
            an.fits
                .iter()
                .map(|f| (&f.series, &f.fit))
                .collect::<Vec<_>>(),
        )
        .map_err(Error::from)
        .stage("report")?,
    );
    report.insert("outputs".into(), Value::from(outputs.clone()));
    report.insert("warnings".into(), Value::from(warnings.clone()));
    let report = Value::Object(report);
    let mut scratch = Vec::new();
    write_json(dir, "report.json", &mut scratch, &report).stage("report")?;
    timer.lap("report");
    let timings = serde_json::to_value(&timer.timings)
        .map_err(Error::from)
        .stage("report")?;
    write_json(dir, "timings.json", &mut scratch, &timings).stage("report")?;

    Ok(PipelineReport {
        method: cfg.method,
        timings: timer.timings,
        label_eval: ev.label_eval,
        predcls: ev.predcls,
        oracle_predcls: ev.oracle_predcls,
        subtypes: an.subtypes,
        fits: an.fits,
        outputs,
        unlabeled_pairs: split.unlabeled.len(),
        warnings,
        config: cfg.echo(),
        report_json: report,
    })
}
