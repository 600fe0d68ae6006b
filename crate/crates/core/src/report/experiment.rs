//! Config-driven experiment runs and their on-disk artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{gzsl_scores, per_class_acc, GzslScores};
use crate::basemodels::{GenerativeConfig, LearnerSpec, PrototypeConfig};
use crate::cotrain::{
    icot_zsl_run, CoTrainConfig, CoTrainOutcome, CoTrainProblem, Executor, FusionWeights,
    IterationRecord, LearnerEntry, SelectionMode,
};
use crate::datamodel::{load_dataset, ClassId, DatasetPaths, ZslData};
use crate::error::{Error, Result};
use crate::gzsl::{
    plain_gzsl_run, two_stage_ood_run, two_stage_sod_run, GzslConfig, GzslOutcome, GzslProblem,
};
use crate::oodgate::{build_gate, tnr_at_fnr, OodConfig, OodMethod, OodPoint, DEFAULT_FNR_TARGETS};
use crate::synthbench::{generate, reference_benchmark, SynthSpec};

pub const VERSION: &str = concat!("icot ", env!("CARGO_PKG_VERSION"));

/// Environment variable that replaces the configured output directory.
pub const OUT_DIR_ENV: &str = "ICOT_OUT_DIR";

/// Fusion weights of the α ablation.
pub const ALPHA_GRID: [f64; 7] = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    Zsl,
    Gzsl,
    Ood,
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GzslSetting {
    /// The unseen test pool is available separately.
    #[serde(rename = "1")]
    Separate,
    /// Only the compound pool is available.
    #[default]
    #[serde(rename = "2")]
    Compound,
    #[serde(rename = "plain")]
    Plain,
}

impl std::str::FromStr for GzslSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::Separate),
            "2" => Ok(Self::Compound),
            "plain" => Ok(Self::Plain),
            _ => Err(Error::Config(format!(
                "unknown GZSL setting {s:?}; expected 1, 2 or plain"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    AlphaSweep,
    IncrementalVsOneOff,
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// The frozen benchmark, optionally regenerated with another seed.
    Reference {
        #[serde(default)]
        seed: Option<u64>,
    },
    Synthetic(SynthSpec),
    /// A directory holding the standard dataset files.
    Dir(PathBuf),
    Files(DatasetPaths),
}

impl DatasetSource {
    pub fn load(&self) -> Result<ZslData> {
        match self {
            DatasetSource::Reference { seed } => {
                let spec = reference_benchmark();
                generate(&seed.map_or(spec.clone(), |s| spec.with_seed(s)))
            }
            DatasetSource::Synthetic(spec) => generate(spec),
            DatasetSource::Dir(dir) => ZslData::load_dir(dir),
            DatasetSource::Files(p) => {
                load_dataset(&p.features, &p.labels, &p.attributes, &p.split)
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSource::Dir(d) => fix(d),
            DatasetSource::Files(f) => {
                fix(&mut f.features);
                fix(&mut f.labels);
                fix(&mut f.attributes);
                fix(&mut f.split);
            }
            _ => {}
        }
    }
}

/// The A+B roster used on the reference benchmark.
pub fn reference_learners() -> Vec<LearnerEntry> {
    vec![
        LearnerEntry::new(
            "A",
            LearnerSpec::Prototype(PrototypeConfig {
                epochs: 60,
                lr: 3e-3,
                l2: 1e-2,
                warm_epochs: Some(10),
                ..Default::default()
            }),
        ),
        LearnerEntry::new("B", LearnerSpec::Generative(GenerativeConfig::default())),
    ]
}

/// Co-training settings used on the reference benchmark: library defaults
/// with warm starts.
pub fn reference_cotrain() -> CoTrainConfig {
    CoTrainConfig {
        warm_start: true,
        ..Default::default()
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_gate_fnr() -> f64 {
    0.05
}

fn default_gate_holdout() -> f64 {
    0.2
}

fn default_ood_method() -> OodMethod {
    OodMethod::Semantic
}

/// A complete, seeded experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub pipeline: Pipeline,
    pub dataset: DatasetSource,
    #[serde(default = "reference_learners")]
    pub learners: Vec<LearnerEntry>,
    #[serde(default = "reference_cotrain")]
    pub cotrain: CoTrainConfig,
    #[serde(default)]
    pub ood: OodConfig,
    #[serde(default = "default_ood_method")]
    pub ood_method: OodMethod,
    #[serde(default)]
    pub gzsl_setting: GzslSetting,
    #[serde(default = "default_gate_fnr")]
    pub gate_fnr: f64,
    #[serde(default = "default_gate_holdout")]
    pub gate_holdout: f64,
    #[serde(default)]
    pub gzsl_on_all_rows: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, dataset: DatasetSource, seed: u64) -> Self {
        Self {
            name: name.into(),
            pipeline: Pipeline::Zsl,
            dataset,
            learners: reference_learners(),
            cotrain: reference_cotrain(),
            ood: OodConfig::default(),
            ood_method: OodMethod::Semantic,
            gzsl_setting: GzslSetting::Compound,
            gate_fnr: default_gate_fnr(),
            gate_holdout: default_gate_holdout(),
            gzsl_on_all_rows: false,
            ablation: None,
            seed,
            out_dir: default_out_dir(),
        }
    }

    /// Parses a JSON config; relative dataset paths are taken relative to
    /// `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.dataset.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| e.context(format!("reading {}", path.display())))
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || self.name.contains(['/', '\\'])
            || self.name == "."
            || self.name == ".."
        {
            return Err(Error::Config(format!(
                "invalid experiment name {:?}",
                self.name
            )));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("the learner roster is empty".into()));
        }
        let mut names: Vec<&str> = self.learners.iter().map(|l| l.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("learner names must be unique".into()));
        }
        for l in &self.learners {
            l.spec
                .validate()
                .map_err(|e| e.context(format!("learner {:?}", l.name)))?;
        }
        self.gzsl_config().validate(self.learners.len())?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        match (self.pipeline, self.ablation) {
            (Pipeline::Ablation, None) => Err(Error::Config(
                "the ablation pipeline needs an `ablation` kind".into(),
            )),
            (Pipeline::Ablation, Some(Ablation::AlphaSweep | Ablation::Diversity))
                if self.learners.len() != 2 =>
            {
                Err(Error::Config(
                    "this ablation needs exactly two learners".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn gzsl_config(&self) -> GzslConfig {
        GzslConfig {
            cotrain: self.cotrain.clone(),
            ood: self.ood.clone(),
            gate_fnr: self.gate_fnr,
            gate_holdout: self.gate_holdout,
            gzsl_on_all_rows: self.gzsl_on_all_rows,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `<out_dir>/<name>`, with `ICOT_OUT_DIR` taking precedence.
    pub fn output_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out_dir.clone());
        root.join(&self.name)
    }

    fn label(&self) -> String {
        match self.pipeline {
            Pipeline::Zsl => "zsl".into(),
            Pipeline::Gzsl => format!(
                "gzsl-{}",
                match self.gzsl_setting {
                    GzslSetting::Separate => "1",
                    GzslSetting::Compound => "2",
                    GzslSetting::Plain => "plain",
                }
            ),
            Pipeline::Ood => format!(
                "ood-{}",
                serde_json::to_value(self.ood_method)
                    .expect("enum")
                    .as_str()
                    .unwrap_or("")
            ),
            Pipeline::Ablation => format!(
                "ablation-{}",
                self.ablation
                    .map(|a| serde_json::to_value(a)
                        .expect("enum")
                        .as_str()
                        .unwrap_or("")
                        .to_string())
                    .unwrap_or_default()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerAcc {
    pub name: String,
    /// Seen-only training.
    pub inductive: f64,
    pub last_iteration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub method: OodMethod,
    /// Size of the simulated unseen set, when one was built.
    pub simulated: Option<usize>,
    /// Fraction of the simulated set that is truly unseen.
    pub simulated_precision: Option<f64>,
    pub average_tnr: f64,
    pub points: Vec<OodPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub param: Option<f64>,
    pub acc: f64,
    pub apr: Option<f64>,
}

/// Everything a run reports. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub name: String,
    pub pipeline: String,
    pub version: String,
    pub config_fingerprint: String,
    pub seed: u64,
    /// Fused unseen ACC of a zero-shot run.
    pub acc: Option<f64>,
    pub per_class: BTreeMap<ClassId, f64>,
    pub learners: Vec<LearnerAcc>,
    pub gzsl: Option<GzslScores>,
    /// APR of the first two learners after seen-only training.
    pub apr: Option<f64>,
    pub ood: Option<OodSummary>,
    pub ablation: Vec<AblationRow>,
    /// Iteration records per co-training branch.
    pub history: BTreeMap<String, Vec<IterationRecord>>,
}

impl EvalResult {
    fn empty(cfg: &RunConfig) -> Self {
        Self {
            name: cfg.name.clone(),
            pipeline: cfg.label(),
            version: VERSION.into(),
            config_fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            acc: None,
            per_class: BTreeMap::new(),
            learners: vec![],
            gzsl: None,
            apr: None,
            ood: None,
            ablation: vec![],
            history: BTreeMap::new(),
        }
    }

    /// Long-format table: `section,key,value`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        let mut row = |s: &str, k: &str, v: f64| out.push_str(&format!("{s},{k},{v}\n"));
        if let Some(a) = self.acc {
            row("summary", "acc", a);
        }
        if let Some(a) = self.apr {
            row("summary", "apr", a);
        }
        if let Some(g) = &self.gzsl {
            row("gzsl", "U", g.unseen);
            row("gzsl", "S", g.seen);
            row("gzsl", "H", g.h);
        }
        for (c, a) in &self.per_class {
            row("per_class", &c.to_string(), *a);
        }
        for l in &self.learners {
            row("inductive", &l.name, l.inductive);
            row("last_iteration", &l.name, l.last_iteration);
        }
        if let Some(o) = &self.ood {
            row("ood", "average_tnr", o.average_tnr);
            for p in &o.points {
                row("tnr_at_fnr", &p.fnr_target.to_string(), p.tnr);
            }
        }
        for a in &self.ablation {
            let key = match a.param {
                Some(p) => format!("{}={p}", a.label),
                None => a.label.clone(),
            };
            row("ablation", &key, a.acc);
        }
        out
    }

    /// One JSON object per line, tagged with its branch.
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (branch, recs) in &self.history {
            for r in recs {
                let mut v = serde_json::to_value(r)?;
                v.as_object_mut()
                    .expect("records are objects")
                    .insert("branch".into(), branch.clone().into());
                out.push_str(&serde_json::to_string(&v)?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// Extra tables some pipelines emit next to the standard artifacts.
#[derive(Debug, Default)]
struct Extras {
    files: Vec<(&'static str, String)>,
}

/// Runs the configured pipeline and writes `summary.json`, `metrics.csv`,
/// `history.jsonl` and `config.json` into [`RunConfig::output_dir`].
pub fn run_experiment(cfg: &RunConfig, exec: &Executor) -> Result<EvalResult> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let (result, extras) = evaluate(cfg, &data, exec)?;
    write_artifacts(cfg, &result, &extras)?;
    Ok(result)
}

/// Runs the pipeline without touching the filesystem.
pub fn evaluate_config(cfg: &RunConfig, data: &ZslData, exec: &Executor) -> Result<EvalResult> {
    cfg.validate()?;
    evaluate(cfg, data, exec).map(|(r, _)| r)
}

fn evaluate(cfg: &RunConfig, data: &ZslData, exec: &Executor) -> Result<(EvalResult, Extras)> {
    let mut res = EvalResult::empty(cfg);
    let mut extras = Extras::default();
    match cfg.pipeline {
        Pipeline::Zsl => {
            let out = zsl_run(cfg, data, &cfg.learners, &cfg.cotrain, exec)?;
            fill_zsl(&mut res, data, &cfg.learners, &out)?;
        }
        Pipeline::Gzsl => {
            let out = gzsl_run(cfg, data, exec)?;
            let compound = data.compound();
            res.gzsl = Some(gzsl_scores(
                &out.prediction.labels,
                &compound.truth,
                &data.space,
            )?);
            res.per_class =
                per_class_acc(&out.prediction.labels, &compound.truth, &data.space.all())?
                    .per_class;
            if !out.zsl_history.is_empty() {
                res.history.insert("zsl".into(), out.zsl_history.clone());
            }
            if !out.gzsl_history.is_empty() {
                res.history.insert("gzsl".into(), out.gzsl_history.clone());
            }
            extras
                .files
                .push(("predictions.csv", out.prediction.to_csv()));
        }
        Pipeline::Ood => {
            let summary = ood_run(cfg, data)?;
            extras.files.push((
                "ood_curve.csv",
                crate::oodgate::OodCurve {
                    points: summary.points.clone(),
                    average_tnr: summary.average_tnr,
                }
                .to_csv(),
            ));
            res.ood = Some(summary);
        }
        Pipeline::Ablation => {
            res.ablation = ablation_rows(cfg, data, exec, &mut res)?;
            let mut csv = String::from("label,param,acc,apr\n");
            for r in &res.ablation {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.label,
                    opt(r.param),
                    r.acc,
                    opt(r.apr)
                ));
            }
            extras.files.push(("ablation.csv", csv));
        }
    }
    Ok((res, extras))
}

fn zsl_run(
    cfg: &RunConfig,
    data: &ZslData,
    learners: &[LearnerEntry],
    cotrain: &CoTrainConfig,
    exec: &Executor,
) -> Result<CoTrainOutcome> {
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: Some(&pool.truth),
    };
    icot_zsl_run(learners, problem, cotrain, cfg.seed, exec)
}

fn fill_zsl(
    res: &mut EvalResult,
    data: &ZslData,
    learners: &[LearnerEntry],
    out: &CoTrainOutcome,
) -> Result<()> {
    let truth = data.test_unseen().truth;
    let unseen = data.space.unseen();
    let acc = per_class_acc(&out.labels, &truth, unseen)?;
    res.acc = Some(acc.mean);
    res.per_class = acc.per_class;
    res.learners = learners
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(LearnerAcc {
                name: l.name.clone(),
                inductive: per_class_acc(&out.initial_labels[i], &truth, unseen)?.mean,
                last_iteration: per_class_acc(&out.final_labels(i), &truth, unseen)?.mean,
            })
        })
        .collect::<Result<_>>()?;
    res.apr = out.history.first().and_then(|h| h.apr);
    res.history.insert("zsl".into(), out.history.clone());
    Ok(())
}

fn gzsl_run(cfg: &RunConfig, data: &ZslData, exec: &Executor) -> Result<GzslOutcome> {
    if data.test_seen().is_none() {
        return Err(Error::InvalidInput("GZSL needs test-seen rows".into()));
    }
    let train = data.train_set();
    let compound = data.compound();
    let problem = GzslProblem {
        seen: &train,
        compound: &compound.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: Some(&compound.truth),
    };
    let gcfg = cfg.gzsl_config();
    match cfg.gzsl_setting {
        GzslSetting::Separate => two_stage_ood_run(
            &cfg.learners,
            problem,
            &data.test_unseen().pool,
            &gcfg,
            cfg.seed,
            exec,
        ),
        GzslSetting::Compound => two_stage_sod_run(&cfg.learners, problem, &gcfg, cfg.seed, exec),
        GzslSetting::Plain => plain_gzsl_run(&cfg.learners, problem, &gcfg, cfg.seed, exec),
    }
}

fn ood_run(cfg: &RunConfig, data: &ZslData) -> Result<OodSummary> {
    if data.test_seen().is_none() {
        return Err(Error::InvalidInput(
            "OOD evaluation needs test-seen rows".into(),
        ));
    }
    let train = data.train_set();
    let compound = data.compound();
    let x = compound.pool.features();
    let gate = build_gate(
        cfg.ood_method,
        &train,
        x,
        &data.semantics,
        &data.space,
        &cfg.ood,
        cfg.seed,
    )?;
    let scores = gate.scores(x);
    let (mut seen, mut unseen) = (vec![], vec![]);
    for (s, t) in scores.iter().zip(&compound.truth) {
        if data.space.is_unseen(*t) {
            unseen.push(*s);
        } else {
            seen.push(*s);
        }
    }
    let curve = tnr_at_fnr(&seen, &unseen, &DEFAULT_FNR_TARGETS)?;
    let precision = gate.simulated.as_ref().filter(|s| !s.is_empty()).map(|s| {
        s.rows
            .iter()
            .filter(|&&r| data.space.is_unseen(compound.truth[r]))
            .count() as f64
            / s.len() as f64
    });
    Ok(OodSummary {
        method: cfg.ood_method,
        simulated: gate.simulated.as_ref().map(|s| s.len()),
        simulated_precision: precision,
        average_tnr: curve.average_tnr,
        points: curve.points,
    })
}

fn ablation_rows(
    cfg: &RunConfig,
    data: &ZslData,
    exec: &Executor,
    res: &mut EvalResult,
) -> Result<Vec<AblationRow>> {
    let truth = data.test_unseen().truth;
    let unseen = data.space.unseen();
    let acc = |labels: &[ClassId]| per_class_acc(labels, &truth, unseen).map(|a| a.mean);
    match cfg.ablation.expect("validated") {
        Ablation::AlphaSweep => {
            let out = zsl_run(cfg, data, &cfg.learners, &cfg.cotrain, exec)?;
            fill_zsl(res, data, &cfg.learners, &out)?;
            ALPHA_GRID
                .iter()
                .map(|&a| {
                    Ok(AblationRow {
                        label: "alpha".into(),
                        param: Some(a),
                        acc: acc(&out.refuse(&FusionWeights::alpha(a)?)?)?,
                        apr: None,
                    })
                })
                .collect()
        }
        Ablation::IncrementalVsOneOff => [SelectionMode::Incremental, SelectionMode::OneOff]
            .into_iter()
            .map(|mode| {
                let out = zsl_run(
                    cfg,
                    data,
                    &cfg.learners,
                    &CoTrainConfig {
                        mode,
                        ..cfg.cotrain.clone()
                    },
                    exec,
                )?;
                Ok(AblationRow {
                    label: match mode {
                        SelectionMode::Incremental => "incremental",
                        SelectionMode::OneOff => "one-off",
                    }
                    .into(),
                    param: None,
                    acc: acc(&out.labels)?,
                    apr: None,
                })
            })
            .collect(),
        Ablation::Diversity => {
            let twin = |l: &LearnerEntry| LearnerEntry {
                name: format!("{}'", l.name),
                stream: None,
                spec: l.spec.clone(),
            };
            let (a, b) = (&cfg.learners[0], &cfg.learners[1]);
            [
                vec![a.clone(), b.clone()],
                vec![a.clone(), twin(a)],
                vec![b.clone(), twin(b)],
            ]
            .into_iter()
            .map(|pair| {
                let out = zsl_run(cfg, data, &pair, &cfg.cotrain, exec)?;
                Ok(AblationRow {
                    label: format!("{}+{}", pair[0].name, pair[1].name),
                    param: None,
                    acc: acc(&out.labels)?,
                    apr: out.history.first().and_then(|h| h.apr),
                })
            })
            .collect()
        }
    }
}

fn write_artifacts(cfg: &RunConfig, res: &EvalResult, extras: &Extras) -> Result<()> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("summary.json", serde_json::to_string_pretty(res)? + "\n")?;
    write("metrics.csv", res.metrics_csv())?;
    write("history.jsonl", res.history_jsonl()?)?;
    write("config.json", serde_json::to_string_pretty(cfg)? + "\n")?;
    for (name, body) in &extras.files {
        write(name, body.clone())?;
    }
    Ok(())
}

/// Reads `summary.json` from a run directory.
pub fn load_summary(dir: &Path) -> Result<EvalResult> {
    let p = dir.join("summary.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, "summary", e.to_string()))
}
