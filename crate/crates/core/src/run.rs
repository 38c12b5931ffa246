//! End-to-end runs driven by one versioned TOML file: data preparation,
//! training, evaluation, attribution export and budget replay. Every output
//! lands under `<out_dir>/<run_name>/` and is byte-identical for identical
//! configuration and seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    lr_attribute, lr_fit, lr_predict, rule_attribute, sp_attribute, sp_fit, sp_predict, LrConfig, Rule,
};
use crate::darnn::{
    attribute_encoded, load_model, save_model, train_two_stage, AttributionRecord, DarnnConfig, DarnnParams,
    EncodedSequence, InputDims, Mode, TrainingCurves,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    allocate_budget, auc, channel_credit, channel_spend, compute_roi, ecpa, events_from_sequences, logloss,
    read_events, replay, report_metrics, write_events, write_metrics_tsv, BudgetPlan, BUDGET_FRACTIONS,
};
use crate::seed::derive_seed;
use crate::seqdata::{
    build_sequences, build_vocab, filter_sequences, length_stats, load_sequences, negative_sample, parse_events,
    save_sequences, train_test_split, FeatureVocab, FilterConfig, SchemaConfig, Sequence,
};
use crate::synth::SynthConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Darnn,
    Arnn,
    Lr,
    Sp,
    First,
    Last,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Darnn,
        Method::Arnn,
        Method::Lr,
        Method::Sp,
        Method::First,
        Method::Last,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Darnn => "darnn",
            Method::Arnn => "arnn",
            Method::Lr => "lr",
            Method::Sp => "sp",
            Method::First => "first",
            Method::Last => "last",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }

    fn neural(self) -> Option<Mode> {
        match self {
            Method::Darnn => Some(Mode::Darnn),
            Method::Arnn => Some(Mode::Arnn),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Event log; exactly one of `events` and `synthetic` must be set.
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Non-converted sequences kept per converted one; `0` disables sampling.
    #[serde(default = "default_ratio")]
    pub negative_ratio: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    /// Carved out of the training split for the convergence rule.
    #[serde(default = "default_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
}

fn default_ratio() -> f64 {
    20.0
}
fn default_fraction() -> f64 {
    0.2
}
fn default_min_count() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Fractions of the test split's total cost.
    pub budget_fractions: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            budget_fractions: BUDGET_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_run_name")]
    pub run_name: String,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: DarnnConfig,
    #[serde(default)]
    pub lr: LrConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_run_name() -> String {
    "run".into()
}
fn default_out_dir() -> PathBuf {
    "runs".into()
}

impl RunConfig {
    /// Parses a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out_dir);
        cfg.data.events.as_mut().map(fix);
        cfg.data.schema.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let v: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match v.get("version").and_then(toml::Value::as_integer) {
            Some(n) if n == i64::from(CONFIG_VERSION) => {}
            Some(n) => {
                return Err(Error::Version(format!(
                    "config version {n} (supported: {CONFIG_VERSION})"
                )))
            }
            None => return Err(Error::Config("config needs `version = 1`".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run_name {:?} must be a plain directory name",
                self.run_name
            )));
        }
        let d = &self.data;
        match (&d.events, &d.synthetic) {
            (Some(events), None) => {
                if !events.exists() {
                    return Err(Error::Config(format!(
                        "events file {} does not exist",
                        events.display()
                    )));
                }
                match &d.schema {
                    Some(s) if s.exists() => {}
                    Some(s) => return Err(Error::Config(format!("schema file {} does not exist", s.display()))),
                    None => return Err(Error::Config("data.events needs data.schema".into())),
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "set exactly one of data.events and data.synthetic".into(),
                ))
            }
        }
        for (name, f) in [("test_fraction", d.test_fraction), ("val_fraction", d.val_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {f}")));
            }
        }
        if !(d.negative_ratio >= 0.0) {
            return Err(Error::Config(format!("negative_ratio {}", d.negative_ratio)));
        }
        if self.eval.budget_fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::Config("budget fractions must be positive".into()));
        }
        self.model.validate()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_name)
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> Self {
        RunPaths { root: cfg.run_dir() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn split(&self, split: &str) -> PathBuf {
        self.data().join(format!("{split}.jsonl"))
    }
    pub fn vocab(&self) -> PathBuf {
        self.data().join("vocab.tsv")
    }
    pub fn test_events(&self) -> PathBuf {
        self.data().join("test_events.tsv")
    }
    pub fn model(&self, mode: Mode) -> PathBuf {
        self.root.join("model").join(match mode {
            Mode::Darnn => "darnn",
            Mode::Arnn => "arnn",
        })
    }
    pub fn curves(&self, mode: Mode) -> PathBuf {
        self.root.join(match mode {
            Mode::Darnn => "curves_darnn.tsv",
            Mode::Arnn => "curves_arnn.tsv",
        })
    }
    pub fn attributions(&self, method: Method, split: &str) -> PathBuf {
        self.root.join(format!("attributions_{}_{split}.tsv", method.name()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub records: usize,
    pub skipped_rows: usize,
    pub sequences: usize,
    pub filtered: usize,
    pub sampled: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Parses (or generates) the event log and writes the split sequences,
/// vocabulary, length statistics and the test replay events.
pub fn prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let d = &cfg.data;
    let mut summary = PrepareSummary::default();
    let records = match (&d.events, &d.synthetic) {
        (Some(events), _) => {
            let schema = SchemaConfig::load(d.schema.as_deref().expect("validated"))?;
            let file = File::open(events).map_err(|e| Error::io(events, e))?;
            let out = parse_events(std::io::BufReader::new(file), &schema)?;
            summary.skipped_rows = out.skipped;
            out.records
        }
        (None, Some(synth)) => crate::synth::generate(synth, derive_seed(cfg.seed, "synth"))?,
        (None, None) => unreachable!("validated"),
    };
    summary.records = records.len();
    if records.is_empty() {
        log::warn!("event log is empty; writing empty artifacts");
    }
    let seqs = build_sequences(&records);
    summary.sequences = seqs.len();
    let seqs = filter_sequences(seqs, &d.filter)?;
    summary.filtered = seqs.len();
    let seqs = if d.negative_ratio > 0.0 {
        negative_sample(seqs, d.negative_ratio, derive_seed(cfg.seed, "sample"))?
    } else {
        seqs
    };
    summary.sampled = seqs.len();
    let (train, test) = train_test_split(seqs, d.test_fraction, derive_seed(cfg.seed, "test"))?;
    let (train, val) = train_test_split(train, d.val_fraction, derive_seed(cfg.seed, "val"))?;
    (summary.train, summary.val, summary.test) = (train.len(), val.len(), test.len());
    let vocab = build_vocab(&train, d.vocab_min_count)?;

    let paths = RunPaths::new(cfg);
    std::fs::create_dir_all(paths.data()).map_err(|e| Error::io(paths.data(), e))?;
    save_sequences(&paths.split("train"), &train)?;
    save_sequences(&paths.split("val"), &val)?;
    save_sequences(&paths.split("test"), &test)?;
    vocab.save(&paths.vocab())?;
    write_file(&paths.test_events(), |w| write_events(w, &events_from_sequences(&test)))?;

    let mut all = train.clone();
    all.extend(val.iter().cloned());
    all.extend(test.iter().cloned());
    write_file(&paths.data().join("length_stats.tsv"), |w| write_length_stats(w, &all))?;
    write_file(&paths.data().join("summary.tsv"), |w| {
        let s = &summary;
        writeln!(
            w,
            "records\tskipped_rows\tsequences\tfiltered\tsampled\ttrain\tval\ttest"
        )?;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.records, s.skipped_rows, s.sequences, s.filtered, s.sampled, s.train, s.val, s.test
        )?;
        Ok(())
    })?;
    write_file(&paths.root.join("config.toml"), |w| {
        Ok(w.write_all(cfg.to_toml()?.as_bytes())?)
    })?;
    Ok(summary)
}

pub fn write_length_stats<W: Write>(mut w: W, seqs: &[Sequence]) -> Result<()> {
    writeln!(w, "length\tsequences\tconverted\tconversion_rate")?;
    for s in length_stats(seqs) {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}",
            s.length, s.sequences, s.converted, s.conversion_rate
        )?;
    }
    Ok(())
}

/// Prepared splits and vocabulary read back from a run directory.
pub struct Dataset {
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub vocab: FeatureVocab,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let paths = RunPaths::new(cfg);
        for p in [
            paths.split("train"),
            paths.split("val"),
            paths.split("test"),
            paths.vocab(),
        ] {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{} is missing; run `mta prepare` with this config first",
                    p.display()
                )));
            }
        }
        Ok(Dataset {
            train: load_sequences(&paths.split("train"))?,
            val: load_sequences(&paths.split("val"))?,
            test: load_sequences(&paths.split("test"))?,
            vocab: FeatureVocab::load(&paths.vocab())?,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[Sequence]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!("unknown split {name:?} (train, val, test)"))),
        }
    }
}

fn neural_methods(methods: &[Method]) -> Vec<Mode> {
    methods.iter().filter_map(|m| m.neural()).collect()
}

/// Trains the neural models among `methods`; writes checkpoints and curves.
pub fn train(cfg: &RunConfig, methods: &[Method]) -> Result<()> {
    let data = Dataset::load(cfg)?;
    let paths = RunPaths::new(cfg);
    let enc = |s: &[Sequence]| EncodedSequence::encode_all(s, &data.vocab);
    let (train, val) = (enc(&data.train), enc(&data.val));
    for mode in neural_methods(methods) {
        let model_cfg = DarnnConfig {
            mode,
            ..cfg.model.clone()
        };
        let tag = if mode == Mode::Darnn { "darnn" } else { "arnn" };
        let dims = InputDims::of(&data.vocab);
        let seed = derive_seed(cfg.seed, tag);
        let (params, curves) = if train.is_empty() {
            log::warn!("no training sequences; saving an untrained {tag} model");
            let curves = TrainingCurves {
                epochs: Vec::new(),
                stage_boundary: 0,
                best_epoch: 0,
            };
            (DarnnParams::init(&model_cfg, dims, seed)?, curves)
        } else {
            log::info!("training {tag} on {} sequences", train.len());
            train_two_stage(&train, &val, &model_cfg, dims, seed)?
        };
        save_model(&paths.model(mode), &params, "../../data/vocab.tsv")?;
        write_file(&paths.curves(mode), |w| curves.write_tsv(w))?;
    }
    Ok(())
}

fn load_trained(cfg: &RunConfig, mode: Mode, vocab: &FeatureVocab) -> Result<DarnnParams> {
    let dir = RunPaths::new(cfg).model(mode);
    if !dir.exists() {
        return Err(Error::Config(format!(
            "{} is missing; run `mta train` with this config first",
            dir.display()
        )));
    }
    let (params, _) = load_model(&dir)?;
    if params.dims() != InputDims::of(vocab) {
        return Err(Error::Version(
            "checkpoint was trained against a different vocabulary".into(),
        ));
    }
    Ok(params)
}

/// Fitted models for a set of methods, trained on the train split.
pub struct Fitted {
    vocab: FeatureVocab,
    neural: BTreeMap<Method, DarnnParams>,
    sp: crate::baselines::ChannelStats,
    lr: Option<crate::baselines::LrModel>,
}

/// Per-sequence predictions and credits of one method.
pub struct MethodOutput {
    /// `None` for rule-based methods, which do not predict conversion.
    pub scores: Option<Vec<f64>>,
    pub credits: Vec<Vec<f64>>,
    /// Neural methods keep the full records for export.
    pub records: Option<Vec<AttributionRecord>>,
}

impl Fitted {
    pub fn new(cfg: &RunConfig, data: &Dataset, methods: &[Method]) -> Result<Self> {
        let mut neural = BTreeMap::new();
        for &m in methods {
            if let Some(mode) = m.neural() {
                neural.insert(m, load_trained(cfg, mode, &data.vocab)?);
            }
        }
        let lr = if methods.contains(&Method::Lr) && data.train.is_empty() {
            log::warn!("no training sequences; LR left unfitted");
            None
        } else if methods.contains(&Method::Lr) {
            Some(lr_fit(&data.train, &cfg.lr, derive_seed(cfg.seed, "lr"))?)
        } else {
            None
        };
        Ok(Fitted {
            vocab: data.vocab.clone(),
            neural,
            sp: sp_fit(&data.train),
            lr,
        })
    }

    pub fn run(&self, method: Method, seqs: &[Sequence]) -> Result<MethodOutput> {
        if let Some(params) = self.neural.get(&method) {
            let recs = attribute_encoded(params, &EncodedSequence::encode_all(seqs, &self.vocab))?;
            return Ok(MethodOutput {
                scores: Some(recs.iter().map(|r| r.conversion_prob).collect()),
                credits: recs.iter().map(|r| r.attr.clone()).collect(),
                records: Some(recs),
            });
        }
        let (scores, credits) = match method {
            Method::Sp => (
                Some(seqs.iter().map(|s| sp_predict(s, &self.sp)).collect()),
                seqs.iter().map(|s| sp_attribute(s, &self.sp)).collect(),
            ),
            Method::Lr if seqs.is_empty() => (Some(Vec::new()), Vec::new()),
            Method::Lr => {
                let m = self
                    .lr
                    .as_ref()
                    .ok_or_else(|| Error::Contract("LR was not fitted".into()))?;
                (
                    Some(seqs.iter().map(|s| lr_predict(s, m)).collect()),
                    seqs.iter().map(|s| lr_attribute(s, m)).collect(),
                )
            }
            Method::First => (None, seqs.iter().map(|s| rule_attribute(s, Rule::First)).collect()),
            Method::Last => (None, seqs.iter().map(|s| rule_attribute(s, Rule::Last)).collect()),
            Method::Darnn | Method::Arnn => return Err(Error::Contract(format!("{} was not loaded", method.name()))),
        };
        Ok(MethodOutput {
            scores,
            credits,
            records: None,
        })
    }
}

fn fmt_metric(r: Result<f64>) -> Result<String> {
    match r {
        Ok(v) => Ok(format!("{v:.6}")),
        Err(Error::UndefinedMetric(why)) => {
            log::warn!("{why}");
            Ok("NA".into())
        }
        Err(e) => Err(e),
    }
}

/// AUC and log-loss on the test split, one row per predicting method.
pub fn eval(cfg: &RunConfig, methods: &[Method]) -> Result<Vec<(Method, String, String)>> {
    let data = Dataset::load(cfg)?;
    let fitted = Fitted::new(cfg, &data, methods)?;
    let labels: Vec<bool> = data.test.iter().map(|s| s.converted).collect();
    let mut rows = Vec::new();
    for &m in methods {
        let Some(scores) = fitted.run(m, &data.test)?.scores else {
            continue;
        };
        rows.push((
            m,
            fmt_metric(auc(&scores, &labels))?,
            fmt_metric(logloss(&scores, &labels))?,
        ));
    }
    write_file(&RunPaths::new(cfg).root.join("metrics.tsv"), |w| {
        writeln!(w, "method\tauc\tlogloss\tn")?;
        for (m, a, l) in &rows {
            writeln!(w, "{}\t{a}\t{l}\t{}", m.name(), labels.len())?;
        }
        Ok(())
    })?;
    Ok(rows)
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Rows `sequence_id, position, channel, a_i2v, a_c2v, lambda, attr`, with
/// positions starting at 1 and `NA` for quantities the method lacks.
pub fn write_attributions<W: Write>(mut w: W, seqs: &[Sequence], out: &MethodOutput) -> Result<()> {
    writeln!(w, "sequence_id\tposition\tchannel\ta_i2v\ta_c2v\tlambda\tattr")?;
    for (i, s) in seqs.iter().enumerate() {
        let rec = out.records.as_ref().map(|r| &r[i]);
        for (j, p) in s.points.iter().enumerate() {
            let a_i2v = rec.map(|r| r.a_i2v[j]);
            let a_c2v = rec.and_then(|r| r.a_c2v.as_ref().map(|a| a[j]));
            let lambda = rec.map(|r| r.lambda);
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                s.id,
                j + 1,
                p.channel,
                na(a_i2v),
                na(a_c2v),
                na(lambda),
                out.credits[i][j]
            )?;
        }
    }
    Ok(())
}

pub fn attribute(cfg: &RunConfig, methods: &[Method], split: &str) -> Result<Vec<PathBuf>> {
    let data = Dataset::load(cfg)?;
    let seqs = data.split(split)?;
    let fitted = Fitted::new(cfg, &data, methods)?;
    let paths = RunPaths::new(cfg);
    let mut written = Vec::new();
    for &m in methods {
        let out = fitted.run(m, seqs)?;
        let path = paths.attributions(m, split);
        write_file(&path, |w| write_attributions(w, seqs, &out))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads the `sequence_id` and `attr` columns of an attribution file and
/// aligns them with `seqs`.
pub fn read_attributions(path: &Path, seqs: &[Sequence]) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(file);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("{}: no {name} column", path.display())))
    };
    let (c_id, c_pos, c_attr) = (col("sequence_id")?, col("position")?, col("attr")?);
    let mut by_seq: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Parse(format!("{} line {}", path.display(), i + 2));
        let pos: usize = rec.get(c_pos).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let attr: f64 = rec.get(c_attr).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        by_seq
            .entry(rec.get(c_id).ok_or_else(bad)?.to_string())
            .or_default()
            .push((pos, attr));
    }
    seqs.iter()
        .map(|s| {
            let mut rows = by_seq
                .remove(&s.id)
                .ok_or_else(|| Error::Contract(format!("{}: no credits for sequence {}", path.display(), s.id)))?;
            rows.sort_by_key(|r| r.0);
            if rows.iter().map(|r| r.0).ne(1..=s.len()) {
                return Err(Error::Contract(format!(
                    "{}: positions of {} do not match",
                    path.display(),
                    s.id
                )));
            }
            Ok(rows.into_iter().map(|r| r.1).collect())
        })
        .collect()
}

/// One replay result row.
pub type ReplayRow = (String, f64, crate::evalkit::Metrics);

/// For each method and budget fraction: ROI from train-split credits,
/// proportional allocation of the fraction of test cost, replay of the test
/// events. An `unlimited` row gives the log's raw totals. `external` adds a
/// method read from a train-split attribution file.
pub fn replay_eval(cfg: &RunConfig, methods: &[Method], external: Option<&Path>) -> Result<Vec<ReplayRow>> {
    let data = Dataset::load(cfg)?;
    let paths = RunPaths::new(cfg);
    let events = {
        let p = paths.test_events();
        read_events(File::open(&p).map_err(|e| Error::io(&p, e))?)?
    };
    let test_cost: f64 = data.test.iter().map(Sequence::total_cost).sum();
    let value = match ecpa(&data.train) {
        Ok(v) if test_cost > 0.0 => v,
        Ok(_) | Err(Error::UndefinedMetric(_)) => {
            log::warn!("no train conversions or no test spend; replay table left empty");
            write_file(&paths.root.join("replay.tsv"), |w| write_metrics_tsv(w, &[]))?;
            return Ok(Vec::new());
        }
        Err(e) => return Err(e),
    };
    let spend = channel_spend(&data.train);
    let event_channels: BTreeSet<&str> = events.iter().map(|e| e.channel.as_str()).collect();

    let mut credit_sets: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let fitted = Fitted::new(cfg, &data, methods)?;
    for &m in methods {
        credit_sets.push((m.name().to_string(), fitted.run(m, &data.train)?.credits));
    }
    if let Some(path) = external {
        let credits = read_attributions(path, &data.train)?;
        credit_sets.push(("external".into(), credits));
    }

    let unlimited = BudgetPlan::uniform(event_channels.iter().copied(), f64::INFINITY);
    let mut rows = vec![(
        "unlimited".to_string(),
        f64::INFINITY,
        report_metrics(&replay(&events, &unlimited)?, value),
    )];
    for (name, credits) in credit_sets {
        let credit = channel_credit(&credits, &data.train)?;
        if !credit.is_empty() && credit.keys().all(|c| !event_channels.contains(c.as_str())) {
            return Err(Error::Config(format!(
                "{name}: credited channels do not occur in the test events"
            )));
        }
        let roi = compute_roi(&credit, &spend, value)?;
        for &frac in &cfg.eval.budget_fractions {
            let plan = allocate_budget(&roi, frac * test_cost)?;
            rows.push((name.clone(), frac, report_metrics(&replay(&events, &plan)?, value)));
        }
    }
    write_file(&paths.root.join("replay.tsv"), |w| write_metrics_tsv(w, &rows))?;
    Ok(rows)
}

/// Everything in order: prepare, train, eval, attribute (test), replay.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    let methods = cfg.eval.methods.clone();
    prepare(cfg)?;
    train(cfg, &methods)?;
    eval(cfg, &methods)?;
    attribute(cfg, &methods, "test")?;
    replay_eval(cfg, &methods, None)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_required_and_checked() {
        let base = "[data]\nsynthetic = {}\n";
        assert!(matches!(RunConfig::from_toml(base), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml(&format!("version = 2\n{base}")),
            Err(Error::Version(_))
        ));
        let cfg = RunConfig::from_toml(&format!("version = 1\n{base}")).unwrap();
        assert_eq!(cfg.eval.methods, Method::ALL);
        assert_eq!(cfg.data.filter, FilterConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "version = 1\nbogus = 3\n[data]\nsynthetic = {}\n";
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn missing_events_file_is_config_error() {
        let text = "version = 1\n[data]\nevents = \"/nonexistent/log.tsv\"\nschema = \"/nonexistent/s.toml\"\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("ah").is_err());
    }
}
