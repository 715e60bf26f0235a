//! Repeated seeded experiments: accuracy curves with confidence intervals,
//! query-rate calibration, parameter grids and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{
    Bbq, BbqVariant, ModifiedPerceptron, Perceptron, RandomizedBudgetPerceptron,
    SecondOrderPerceptron, SelectiveSampling, ShiftingPerceptron,
};
use crate::bounds::{theorem1_rhs, theorem2_rhs, BoundInputs};
use crate::data::{
    apply_label_shifts, generate_synthetic_drift, load_dataset, DataFormat, DriftScenario, Example,
    RawExample, ReferenceSequence, ShiftSpec,
};
use crate::error::{Error, Result};
use crate::lasec::{Lasec, LasecParams};
use crate::learner::{OnlineLearner, Param, RoundOutcome};

pub const CURVE_HEADER: &str = "round,mean_accuracy,ci_halfwidth,mean_query_rate";
pub const SUMMARY_HEADER: &str =
    "algorithm,params,final_accuracy,final_ci,realized_query_rate,mistakes_mean,bound_rhs";
pub const RUNS_HEADER: &str = "run,seed,rounds,mistakes,queries,accuracy,query_rate,bound_rhs";
pub const SWEEP_HEADER: &str =
    "target,realized_query_rate,mean_accuracy,ci_halfwidth,knob,value,achieved";

/// Realized pilot query rate must land this close to the target.
pub const SWEEP_TOLERANCE: f64 = 0.02;
/// Bisection keeps going until the pilot rate is this close, so that the
/// evaluation runs (other seeds) still land inside [`SWEEP_TOLERANCE`].
pub const PILOT_AIM: f64 = 0.005;
pub const PILOT_REPEATS: usize = 5;
pub const MAX_BISECTION_STEPS: usize = 40;

const PILOT_SALT: u64 = 0x5049_4c4f_5453_4545;
const TUNING_SALT: u64 = 0x5455_4e49_4e47_5f5f;
const LEARNER_SALT: u64 = 0x4c45_4152_4e45_5221;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Lasec,
    LasecSs,
    Perceptron,
    PerceptronSs,
    Sop,
    SopSs,
    ShiftingPerceptron,
    ModifiedPerceptron,
    BudgetPerceptron,
    Bbq,
    BbqI,
}

impl Algorithm {
    pub const ALL: [Algorithm; 11] = [
        Algorithm::Lasec,
        Algorithm::LasecSs,
        Algorithm::Perceptron,
        Algorithm::PerceptronSs,
        Algorithm::Sop,
        Algorithm::SopSs,
        Algorithm::ShiftingPerceptron,
        Algorithm::ModifiedPerceptron,
        Algorithm::BudgetPerceptron,
        Algorithm::Bbq,
        Algorithm::BbqI,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Lasec => "lasec",
            Algorithm::LasecSs => "lasec-ss",
            Algorithm::Perceptron => "perceptron",
            Algorithm::PerceptronSs => "perceptron-ss",
            Algorithm::Sop => "sop",
            Algorithm::SopSs => "sop-ss",
            Algorithm::ShiftingPerceptron => "shifting-perceptron",
            Algorithm::ModifiedPerceptron => "modified-perceptron",
            Algorithm::BudgetPerceptron => "budget-perceptron",
            Algorithm::Bbq => "bbq",
            Algorithm::BbqI => "bbq-i",
        }
    }

    /// The parameter that controls how many labels are requested, if any.
    pub fn query_knob(self) -> Option<&'static str> {
        match self {
            Algorithm::LasecSs | Algorithm::PerceptronSs | Algorithm::SopSs => Some("a"),
            Algorithm::Bbq | Algorithm::BbqI => Some("kappa"),
            _ => None,
        }
    }

    fn relevant_params(self) -> &'static [&'static str] {
        match self {
            Algorithm::Lasec => &["b", "c"],
            Algorithm::LasecSs => &["a", "b", "c"],
            Algorithm::Perceptron | Algorithm::ModifiedPerceptron => &[],
            Algorithm::PerceptronSs => &["a"],
            Algorithm::Sop => &["ridge"],
            Algorithm::SopSs => &["a", "ridge"],
            Algorithm::ShiftingPerceptron => &["lambda"],
            Algorithm::BudgetPerceptron => &["budget"],
            Algorithm::Bbq | Algorithm::BbqI => &["kappa", "threshold_scale"],
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s.trim())
            .ok_or_else(|| {
                let known: Vec<_> = Algorithm::ALL.iter().map(|a| a.id()).collect();
                Error::Config(format!(
                    "unknown algorithm `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Parameters for every algorithm; each learner reads only its own.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmParams {
    pub a: Param,
    pub b: f64,
    pub c: Param,
    pub lambda: f64,
    pub budget: usize,
    pub kappa: f64,
    pub threshold_scale: f64,
    pub ridge: f64,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            a: Param::Finite(1.0),
            b: 1.0,
            c: Param::Finite(100.0),
            lambda: 0.01,
            budget: 100,
            kappa: 0.5,
            threshold_scale: 1.0,
            ridge: 1.0,
        }
    }
}

impl AlgorithmParams {
    fn get(&self, key: &str) -> String {
        match key {
            "a" => self.a.to_string(),
            "b" => self.b.to_string(),
            "c" => self.c.to_string(),
            "lambda" => self.lambda.to_string(),
            "budget" => self.budget.to_string(),
            "kappa" => self.kappa.to_string(),
            "threshold_scale" => self.threshold_scale.to_string(),
            "ridge" => self.ridge.to_string(),
            _ => unreachable!("unknown parameter {key}"),
        }
    }

    /// `key=value` pairs of the parameters `algorithm` uses, `;`-separated.
    pub fn describe(&self, algorithm: Algorithm) -> String {
        algorithm
            .relevant_params()
            .iter()
            .map(|k| format!("{k}={}", self.get(k)))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn parse_param(key: &str, value: &str) -> Result<Param> {
    value
        .parse::<Param>()
        .map_err(|_| Error::Config(format!("`{key}` expects a number or `inf`, got `{value}`")))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

pub fn build_learner(
    algorithm: Algorithm,
    p: &AlgorithmParams,
    dim: usize,
) -> Result<Box<dyn OnlineLearner>> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    Ok(match algorithm {
        Algorithm::Lasec | Algorithm::LasecSs => Box::new(build_lasec(algorithm, p, dim)?),
        Algorithm::Perceptron => Box::new(SelectiveSampling::supervised(Perceptron::new(dim))),
        Algorithm::PerceptronSs => Box::new(SelectiveSampling::new(Perceptron::new(dim), p.a)?),
        Algorithm::Sop => Box::new(SelectiveSampling::supervised(SecondOrderPerceptron::new(
            dim, p.ridge,
        )?)),
        Algorithm::SopSs => Box::new(SelectiveSampling::new(
            SecondOrderPerceptron::new(dim, p.ridge)?,
            p.a,
        )?),
        Algorithm::ShiftingPerceptron => Box::new(SelectiveSampling::supervised(
            ShiftingPerceptron::new(dim, p.lambda)?,
        )),
        Algorithm::ModifiedPerceptron => {
            Box::new(SelectiveSampling::supervised(ModifiedPerceptron::new(dim)))
        }
        Algorithm::BudgetPerceptron => Box::new(SelectiveSampling::supervised(
            RandomizedBudgetPerceptron::new(dim, p.budget)?,
        )),
        Algorithm::Bbq => Box::new(Bbq::with_threshold_scale(
            dim,
            p.kappa,
            p.threshold_scale,
            BbqVariant::Bbq,
        )?),
        Algorithm::BbqI => Box::new(Bbq::with_threshold_scale(
            dim,
            p.kappa,
            p.threshold_scale,
            BbqVariant::BbqI,
        )?),
    })
}

fn lasec_params(algorithm: Algorithm, p: &AlgorithmParams) -> LasecParams {
    LasecParams {
        b: p.b,
        c: p.c,
        a: if algorithm == Algorithm::Lasec {
            Param::Infinite
        } else {
            p.a
        },
    }
}

fn build_lasec(algorithm: Algorithm, p: &AlgorithmParams, dim: usize) -> Result<Lasec> {
    Lasec::new(lasec_params(algorithm, p), dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Synthetic,
    File,
}

/// Where streams come from. Synthetic streams and label shifts are redrawn
/// for every run from that run's seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub rounds: usize,
    pub dim: usize,
    /// Concept redraw period for synthetic data, label-shift period for files.
    pub segment_length: usize,
    pub path: Option<PathBuf>,
    pub format: DataFormat,
    pub classes: Vec<i64>,
    pub shuffle: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = DriftScenario::default();
        Self {
            kind: DataKind::Synthetic,
            rounds: s.rounds,
            dim: s.dim,
            segment_length: s.segment_length,
            path: None,
            format: DataFormat::DenseCsv,
            classes: (0..10).collect(),
            shuffle: true,
        }
    }
}

impl DataConfig {
    pub fn scenario(&self, seed: u64) -> DriftScenario {
        DriftScenario {
            rounds: self.rounds,
            dim: self.dim,
            segment_length: self.segment_length,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub params: AlgorithmParams,
    pub data: DataConfig,
    pub repeats: usize,
    pub master_seed: u64,
    /// Curve checkpoint spacing in rounds; 0 disables the curve.
    pub checkpoint_every: usize,
    /// Margin threshold used only for bound diagnostics.
    pub gamma: f64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Lasec,
            params: AlgorithmParams::default(),
            data: DataConfig::default(),
            repeats: 50,
            master_seed: 0,
            checkpoint_every: 100,
            gamma: 0.1,
            output: None,
        }
    }
}

/// Keys accepted by config files and `--param` overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "algorithm",
    "repeats",
    "seed",
    "checkpoint_every",
    "gamma",
    "out",
    "a",
    "b",
    "c",
    "lambda",
    "budget",
    "kappa",
    "threshold_scale",
    "ridge",
    "data",
    "rounds",
    "dim",
    "segment_length",
    "path",
    "format",
    "classes",
    "shuffle",
];

impl ExperimentConfig {
    /// Parses a flat TOML document of `key = value` lines; see [`CONFIG_KEYS`].
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (key, value) in &table {
            let rendered = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => Param::from(*f).to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => {
                    return Err(Error::Config(format!("`{key}`: unsupported value {other}")));
                }
            };
            cfg.set(key, &rendered)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "algorithm" => self.algorithm = v.parse()?,
            "repeats" => self.repeats = parse_num(key, v)?,
            "seed" => self.master_seed = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "out" => self.output = Some(PathBuf::from(v)),
            "a" => self.params.a = parse_param(key, v)?,
            "b" => self.params.b = parse_num(key, v)?,
            "c" => self.params.c = parse_param(key, v)?,
            "lambda" => self.params.lambda = parse_num(key, v)?,
            "budget" => self.params.budget = parse_num(key, v)?,
            "kappa" => self.params.kappa = parse_num(key, v)?,
            "threshold_scale" => self.params.threshold_scale = parse_num(key, v)?,
            "ridge" => self.params.ridge = parse_num(key, v)?,
            "data" => {
                self.data.kind = match v {
                    "synthetic" => DataKind::Synthetic,
                    "file" => DataKind::File,
                    _ => {
                        return Err(Error::Config(format!(
                            "`data` must be synthetic or file, got `{v}`"
                        )))
                    }
                }
            }
            "rounds" => self.data.rounds = parse_num(key, v)?,
            "dim" => self.data.dim = parse_num(key, v)?,
            "segment_length" => self.data.segment_length = parse_num(key, v)?,
            "path" => {
                self.data.path = Some(PathBuf::from(v));
                self.data.kind = DataKind::File;
            }
            "format" => self.data.format = v.parse()?,
            "classes" => {
                self.data.classes = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "shuffle" => self.data.shuffle = parse_num(key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` (expected one of {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{item}`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        match self.data.kind {
            DataKind::Synthetic => self.data.scenario(0).validate()?,
            DataKind::File => {
                if self.data.path.is_none() {
                    return Err(Error::Config("file data needs `path`".into()));
                }
                if self.data.segment_length == 0 {
                    return Err(Error::Parameter("segment length must be at least 1".into()));
                }
                if self.data.classes.len() < 2 {
                    return Err(Error::Parameter(
                        "label shifts need at least two classes".into(),
                    ));
                }
            }
        }
        build_learner(self.algorithm, &self.params, 1).map(|_| ())
    }
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `index` under `master`.
pub fn run_seed(master: u64, index: usize) -> u64 {
    mix(mix(master) ^ (index as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Everything recorded about one run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub run_index: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub params: String,
    pub outcomes: Vec<RoundOutcome>,
    /// Mistakes against the true label over rounds `1..=t`, queried or not.
    pub cumulative_mistakes: Vec<u32>,
    pub cumulative_queries: Vec<u32>,
    /// `Σ xᵀS⁻¹x` over update rounds.
    pub update_quad_sum: f64,
    pub elapsed: Duration,
    /// Present for LASEC runs with a known comparator sequence.
    pub bound_inputs: Option<BoundInputs>,
}

impl RunTrace {
    pub fn rounds(&self) -> usize {
        self.outcomes.len()
    }

    pub fn mistakes(&self) -> u32 {
        self.cumulative_mistakes.last().copied().unwrap_or(0)
    }

    pub fn queries(&self) -> u32 {
        self.cumulative_queries.last().copied().unwrap_or(0)
    }

    /// Fraction correct over the first `t` rounds.
    pub fn accuracy_at(&self, t: usize) -> f64 {
        1.0 - f64::from(self.cumulative_mistakes[t - 1]) / t as f64
    }

    pub fn query_rate_at(&self, t: usize) -> f64 {
        f64::from(self.cumulative_queries[t - 1]) / t as f64
    }

    /// Fraction correct over rounds `from..=to` (1-based).
    pub fn window_accuracy(&self, from: usize, to: usize) -> f64 {
        assert!(1 <= from && from <= to && to <= self.rounds());
        let before = if from == 1 {
            0
        } else {
            self.cumulative_mistakes[from - 2]
        };
        1.0 - f64::from(self.cumulative_mistakes[to - 1] - before) / (to - from + 1) as f64
    }

    pub fn final_accuracy(&self) -> f64 {
        self.accuracy_at(self.rounds())
    }

    pub fn final_query_rate(&self) -> f64 {
        self.query_rate_at(self.rounds())
    }

    /// The mistake-bound right-hand side matching the run's query mode.
    pub fn bound_rhs(&self) -> Option<f64> {
        let inputs = self.bound_inputs.as_ref()?;
        if inputs.a.is_infinite() {
            theorem1_rhs(inputs).ok()
        } else {
            theorem2_rhs(inputs).ok()
        }
    }
}

fn drive<L: OnlineLearner + ?Sized>(
    learner: &mut L,
    stream: &[Example],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RoundOutcome>, Vec<u32>, Vec<u32>, f64)> {
    let mut outcomes = Vec::with_capacity(stream.len());
    let mut mistakes = Vec::with_capacity(stream.len());
    let mut queries = Vec::with_capacity(stream.len());
    let (mut m, mut q, mut quad) = (0u32, 0u32, 0.0);
    for ex in stream {
        let mut asked = false;
        let o = learner.step(
            &ex.x,
            &mut || {
                asked = true;
                ex.y
            },
            rng,
        )?;
        debug_assert_eq!(asked, o.queried);
        // Every round is scored against the true label, including unqueried ones.
        m += u32::from(o.prediction != ex.y);
        q += u32::from(o.queried);
        if o.updated {
            quad += o.quad_form;
        }
        outcomes.push(o);
        mistakes.push(m);
        queries.push(q);
    }
    Ok((outcomes, mistakes, queries, quad))
}

/// Runs one learner over one stream.
pub fn run_single(
    algorithm: Algorithm,
    params: &AlgorithmParams,
    stream: &[Example],
    reference: Option<&ReferenceSequence>,
    gamma: f64,
    run_index: usize,
    seed: u64,
) -> Result<RunTrace> {
    let dim = stream
        .first()
        .map(|e| e.x.len())
        .ok_or_else(|| Error::Schema("empty stream".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ LEARNER_SALT));
    let started = Instant::now();
    let (outcomes, cumulative_mistakes, cumulative_queries, update_quad_sum, bound_inputs) =
        match algorithm {
            Algorithm::Lasec | Algorithm::LasecSs => {
                let mut learner = build_lasec(algorithm, params, dim)?;
                let (o, m, q, quad) = drive(&mut learner, stream, &mut rng)?;
                let bound = reference
                    .map(|r| {
                        BoundInputs::from_run(
                            stream,
                            r,
                            &o,
                            learner.params(),
                            learner.state(),
                            gamma,
                        )
                    })
                    .transpose()?;
                (o, m, q, quad, bound)
            }
            _ => {
                let mut learner = build_learner(algorithm, params, dim)?;
                let (o, m, q, quad) = drive(learner.as_mut(), stream, &mut rng)?;
                (o, m, q, quad, None)
            }
        };
    Ok(RunTrace {
        run_index,
        seed,
        algorithm,
        params: params.describe(algorithm),
        outcomes,
        cumulative_mistakes,
        cumulative_queries,
        update_quad_sum,
        elapsed: started.elapsed(),
        bound_inputs,
    })
}

/// Streams for an experiment; file data is read once and relabelled per run.
pub struct StreamSource {
    data: DataConfig,
    raw: Option<Vec<RawExample>>,
}

impl StreamSource {
    pub fn new(data: &DataConfig) -> Result<Self> {
        let raw = match data.kind {
            DataKind::Synthetic => None,
            DataKind::File => {
                let path = data
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("file data needs `path`".into()))?;
                let rows = load_dataset(path, data.format)?;
                if rows.is_empty() {
                    return Err(Error::Schema(format!(
                        "{} holds no examples",
                        path.display()
                    )));
                }
                Some(rows)
            }
        };
        Ok(Self {
            data: data.clone(),
            raw,
        })
    }

    pub fn stream(&self, seed: u64) -> Result<(Vec<Example>, Option<ReferenceSequence>)> {
        match &self.raw {
            None => {
                let (stream, reference) = generate_synthetic_drift(&self.data.scenario(seed))?;
                Ok((stream, Some(reference)))
            }
            Some(raw) => {
                let spec = ShiftSpec {
                    segment_length: self.data.segment_length,
                    seed,
                    classes: self.data.classes.clone(),
                    shuffle: self.data.shuffle,
                };
                Ok((apply_label_shifts(raw, &spec)?.examples, None))
            }
        }
    }
}

fn run_repeats(
    cfg: &ExperimentConfig,
    source: &StreamSource,
    master: u64,
    repeats: usize,
) -> Result<Vec<RunTrace>> {
    (0..repeats)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(master, i);
            let (stream, reference) = source.stream(seed)?;
            run_single(
                cfg.algorithm,
                &cfg.params,
                &stream,
                reference.as_ref(),
                cfg.gamma,
                i,
                seed,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStat {
    pub round: usize,
    pub mean_accuracy: f64,
    pub ci_halfwidth: f64,
    pub mean_query_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_index: usize,
    pub seed: u64,
    pub rounds: usize,
    pub mistakes: u32,
    pub queries: u32,
    pub accuracy: f64,
    pub query_rate: f64,
    pub bound_rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub algorithm: String,
    pub params: String,
    pub checkpoints: Vec<CheckpointStat>,
    /// Sorted by run index.
    pub runs: Vec<RunMetrics>,
    pub final_accuracy: f64,
    pub final_ci: f64,
    pub realized_query_rate: f64,
    pub mistakes_mean: f64,
    pub bound_rhs: Option<f64>,
}

/// Mean and 95% normal-approximation half-width `1.96·s/√n` (0 when `n = 1`).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Rounds `every, 2·every, …`, ending with the last round.
pub fn checkpoint_rounds(rounds: usize, every: usize) -> Vec<usize> {
    if every == 0 || rounds == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (every..=rounds).step_by(every).collect();
    if out.last() != Some(&rounds) {
        out.push(rounds);
    }
    out
}

/// Aggregates runs of equal length. The result does not depend on the
/// order of `traces`.
pub fn aggregate_runs(traces: &[RunTrace], checkpoint_every: usize) -> Result<AggregateResult> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Aggregation("no runs to aggregate".into()))?;
    let rounds = first.rounds();
    if rounds == 0 {
        return Err(Error::Aggregation("runs are empty".into()));
    }
    if let Some(bad) = traces.iter().find(|t| t.rounds() != rounds) {
        return Err(Error::Aggregation(format!(
            "run {} has {} rounds, expected {rounds}",
            bad.run_index,
            bad.rounds()
        )));
    }
    let mut sorted: Vec<&RunTrace> = traces.iter().collect();
    sorted.sort_by_key(|t| t.run_index);
    let n = sorted.len() as f64;
    let checkpoints = checkpoint_rounds(rounds, checkpoint_every)
        .into_iter()
        .map(|round| {
            let acc: Vec<f64> = sorted.iter().map(|t| t.accuracy_at(round)).collect();
            let (mean_accuracy, ci_halfwidth) = mean_ci(&acc);
            CheckpointStat {
                round,
                mean_accuracy,
                ci_halfwidth,
                mean_query_rate: sorted.iter().map(|t| t.query_rate_at(round)).sum::<f64>() / n,
            }
        })
        .collect();
    let runs: Vec<RunMetrics> = sorted
        .iter()
        .map(|t| RunMetrics {
            run_index: t.run_index,
            seed: t.seed,
            rounds,
            mistakes: t.mistakes(),
            queries: t.queries(),
            accuracy: t.final_accuracy(),
            query_rate: t.final_query_rate(),
            bound_rhs: t.bound_rhs(),
        })
        .collect();
    let (final_accuracy, final_ci) = mean_ci(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let bound_inputs: Option<Vec<BoundInputs>> =
        sorted.iter().map(|t| t.bound_inputs.clone()).collect();
    let bound_rhs = match bound_inputs {
        Some(inputs) if inputs.first().is_some_and(|i| i.a.is_infinite()) => {
            Some(runs.iter().filter_map(|r| r.bound_rhs).sum::<f64>() / n)
        }
        Some(inputs) => BoundInputs::mean(&inputs)
            .ok()
            .and_then(|m| theorem2_rhs(&m).ok()),
        None => None,
    };
    Ok(AggregateResult {
        algorithm: first.algorithm.id().to_string(),
        params: first.params.clone(),
        checkpoints,
        final_accuracy,
        final_ci,
        realized_query_rate: runs.iter().map(|r| r.query_rate).sum::<f64>() / n,
        mistakes_mean: runs.iter().map(|r| f64::from(r.mistakes)).sum::<f64>() / n,
        bound_rhs,
        runs,
    })
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub result: AggregateResult,
    pub traces: Vec<RunTrace>,
}

/// Runs `cfg.repeats` independent seeded runs in parallel and aggregates
/// them; writes CSV files when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let source = StreamSource::new(&cfg.data)?;
    let traces = run_repeats(cfg, &source, cfg.master_seed, cfg.repeats)?;
    let result = aggregate_runs(&traces, cfg.checkpoint_every)?;
    if let Some(dir) = &cfg.output {
        emit_csv(&result, dir)?;
    }
    Ok(Experiment { result, traces })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn curve_csv(result: &AggregateResult) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for c in &result.checkpoints {
        writeln!(
            out,
            "{},{},{},{}",
            c.round, c.mean_accuracy, c.ci_halfwidth, c.mean_query_rate
        )
        .unwrap();
    }
    out
}

pub fn summary_csv(result: &AggregateResult) -> String {
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{}\n",
        result.algorithm,
        result.params,
        result.final_accuracy,
        result.final_ci,
        result.realized_query_rate,
        result.mistakes_mean,
        opt(result.bound_rhs)
    )
}

pub fn runs_csv(result: &AggregateResult) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for r in &result.runs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.run_index,
            r.seed,
            r.rounds,
            r.mistakes,
            r.queries,
            r.accuracy,
            r.query_rate,
            opt(r.bound_rhs)
        )
        .unwrap();
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `curve.csv`, `summary.csv` and `runs.csv` into `dir`.
pub fn emit_csv(result: &AggregateResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("curve.csv"), &curve_csv(result))?;
    write_file(&dir.join("summary.csv"), &summary_csv(result))?;
    write_file(&dir.join("runs.csv"), &runs_csv(result))
}

/// Outcome of tuning the query knob toward a target rate on pilot runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub knob: &'static str,
    pub value: Param,
    pub pilot_rate: f64,
    pub achieved: bool,
    pub steps: usize,
}

impl AlgorithmParams {
    fn with_knob(&self, knob: &str, value: Param) -> Self {
        let mut p = self.clone();
        match knob {
            "a" => p.a = value,
            "kappa" => p.kappa = value.value(),
            _ => unreachable!(),
        }
        p
    }
}

/// Log-space bisection on `a` (or `κ` for BBQ) on the mean query rate of
/// [`PILOT_REPEATS`] pilot runs. Stops once within [`PILOT_AIM`] of `target`;
/// the closest value counts as achieved when within [`SWEEP_TOLERANCE`].
/// Both knobs raise the query rate as they grow. A target of 1 selects
/// `a = ∞` directly.
pub fn calibrate_query_rate(
    cfg: &ExperimentConfig,
    source: &StreamSource,
    target: f64,
) -> Result<Calibration> {
    let knob = cfg.algorithm.query_knob().ok_or_else(|| {
        Error::Config(format!(
            "{} has no query-rate parameter to sweep",
            cfg.algorithm
        ))
    })?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Parameter(format!(
            "target query rate must lie in (0, 1], got {target}"
        )));
    }
    let pilot_master = mix(cfg.master_seed ^ PILOT_SALT);
    let pilot_rate = |value: Param| -> Result<f64> {
        let pilot = ExperimentConfig {
            params: cfg.params.with_knob(knob, value),
            ..cfg.clone()
        };
        let traces = run_repeats(&pilot, source, pilot_master, PILOT_REPEATS)?;
        Ok(traces.iter().map(RunTrace::final_query_rate).sum::<f64>() / traces.len() as f64)
    };
    if target == 1.0 && knob == "a" {
        return Ok(Calibration {
            knob,
            value: Param::Infinite,
            pilot_rate: pilot_rate(Param::Infinite)?,
            achieved: true,
            steps: 0,
        });
    }
    let (mut lo, mut hi) = match knob {
        "a" => (1e-6f64.ln(), 1e6f64.ln()),
        _ => (1e-4f64.ln(), 1e2f64.ln()),
    };
    let mut best: Option<(f64, f64)> = None;
    for step in 1..=MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let value = mid.exp();
        let rate = pilot_rate(Param::Finite(value))?;
        if best.is_none_or(|(_, r)| (rate - target).abs() < (r - target).abs()) {
            best = Some((value, rate));
        }
        if (rate - target).abs() <= PILOT_AIM {
            return Ok(Calibration {
                knob,
                value: Param::Finite(value),
                pilot_rate: rate,
                achieved: true,
                steps: step,
            });
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (value, rate) = best.expect("at least one bisection step");
    Ok(Calibration {
        knob,
        value: Param::Finite(value),
        pilot_rate: rate,
        achieved: (rate - target).abs() <= SWEEP_TOLERANCE,
        steps: MAX_BISECTION_STEPS,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub target: f64,
    pub calibration: Calibration,
    pub result: AggregateResult,
}

/// For each target rate: calibrate the query knob on pilot runs, then do
/// the full experiment at the chosen value. Writes `sweep.csv` when
/// `cfg.output` is set.
pub fn sweep_query_rate(cfg: &ExperimentConfig, targets: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let source = StreamSource::new(&cfg.data)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let calibration = calibrate_query_rate(cfg, &source, target)?;
        let full = ExperimentConfig {
            params: cfg.params.with_knob(calibration.knob, calibration.value),
            ..cfg.clone()
        };
        let traces = run_repeats(&full, &source, full.master_seed, full.repeats)?;
        let result = aggregate_runs(&traces, full.checkpoint_every)?;
        rows.push(SweepRow {
            target,
            calibration,
            result,
        });
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.target,
            r.result.realized_query_rate,
            r.result.final_accuracy,
            r.result.final_ci,
            r.calibration.knob,
            r.calibration.value,
            r.calibration.achieved
        )
        .unwrap();
    }
    out
}

/// Candidate values per parameter key.
pub type ParamGrid = Vec<(&'static str, Vec<String>)>;

/// Logarithmic grids spanning 1e-3…1e3 over the parameters each algorithm
/// exposes (query knobs are left to calibration).
pub fn default_grid(algorithm: Algorithm) -> ParamGrid {
    let log: Vec<String> = (-3..=3).map(|e| format!("1e{e}")).collect();
    let with_inf = |mut v: Vec<String>| {
        v.push("inf".into());
        v
    };
    match algorithm {
        Algorithm::Lasec | Algorithm::LasecSs => vec![("b", log.clone()), ("c", with_inf(log))],
        Algorithm::Sop | Algorithm::SopSs => vec![("ridge", log)],
        Algorithm::ShiftingPerceptron => vec![("lambda", log)],
        Algorithm::BudgetPerceptron => vec![(
            "budget",
            ["10", "20", "50", "100", "200", "500"]
                .map(String::from)
                .to_vec(),
        )],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridChoice {
    pub params: AlgorithmParams,
    pub mean_accuracy: f64,
    pub evaluated: usize,
}

/// Picks the grid point with the best mean final accuracy over `repeats`
/// runs drawn from a seed stream disjoint from the evaluation seeds.
/// Points the algorithm rejects (e.g. `b ≥ c`) are skipped; ties keep the
/// earlier point.
pub fn grid_search(cfg: &ExperimentConfig, grid: &ParamGrid, repeats: usize) -> Result<GridChoice> {
    let source = StreamSource::new(&cfg.data)?;
    let tuning_master = mix(cfg.master_seed ^ TUNING_SALT);
    let mut points: Vec<ExperimentConfig> = vec![cfg.clone()];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.set(key, v)?;
                next.push(q);
            }
        }
        points = next;
    }
    let mut best: Option<GridChoice> = None;
    let mut evaluated = 0;
    for point in points {
        if point.validate().is_err() {
            continue;
        }
        evaluated += 1;
        let traces = run_repeats(&point, &source, tuning_master, repeats)?;
        let acc = traces.iter().map(RunTrace::final_accuracy).sum::<f64>() / traces.len() as f64;
        if best.as_ref().is_none_or(|b| acc > b.mean_accuracy) {
            best = Some(GridChoice {
                params: point.params,
                mean_accuracy: acc,
                evaluated: 0,
            });
        }
    }
    let mut best = best.ok_or_else(|| Error::Config("no valid grid point".into()))?;
    best.evaluated = evaluated;
    Ok(best)
}
