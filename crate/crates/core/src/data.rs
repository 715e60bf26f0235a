//! Streams: synthetic drifting concepts, local dataset files and the
//! shifting-label transform for multiclass data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, sign};

/// One labelled round of a binary stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    /// `±1`.
    pub y: f64,
}

/// A row of a dataset file before any label transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub x: Vec<f64>,
    pub label: i64,
}

/// Piecewise-constant comparator sequence `u_1, …, u_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSequence {
    rounds: usize,
    /// 0-based first round of each piece, strictly increasing, starting at 0.
    starts: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl ReferenceSequence {
    pub fn piecewise(rounds: usize, starts: Vec<usize>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if starts.len() != vectors.len() || starts.first() != Some(&0) {
            return Err(Error::Schema(
                "reference pieces must start at round 0 and pair with vectors".into(),
            ));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) || starts.last().is_some_and(|&s| s >= rounds) {
            return Err(Error::Schema(
                "reference piece starts must increase within the stream".into(),
            ));
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Schema(
                "reference vectors have inconsistent dimensions".into(),
            ));
        }
        Ok(Self {
            rounds,
            starts,
            vectors,
        })
    }

    /// One vector per round; consecutive duplicates are merged.
    pub fn from_rounds(per_round: Vec<Vec<f64>>) -> Result<Self> {
        let rounds = per_round.len();
        let mut starts = Vec::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        for (t, u) in per_round.into_iter().enumerate() {
            if vectors.last() != Some(&u) {
                starts.push(t);
                vectors.push(u);
            }
        }
        Self::piecewise(rounds, starts, vectors)
    }

    pub fn constant(rounds: usize, u: Vec<f64>) -> Self {
        Self {
            rounds,
            starts: vec![0],
            vectors: vec![u],
        }
    }

    pub fn len(&self) -> usize {
        self.rounds
    }

    pub fn is_empty(&self) -> bool {
        self.rounds == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.starts
            .iter()
            .copied()
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// `u_t` for 0-based round `t`.
    pub fn at(&self, t: usize) -> &[f64] {
        assert!(t < self.rounds, "round {t} out of range");
        let piece = self.starts.partition_point(|&s| s <= t) - 1;
        &self.vectors[piece]
    }

    /// `V = Σ_{t≥2} ‖u_t − u_{t−1}‖²` over all rounds.
    pub fn drift(&self) -> f64 {
        self.vectors.windows(2).map(|w| dist_sq(&w[0], &w[1])).sum()
    }

    /// Drift restricted to a subsequence of rounds, e.g. the update rounds:
    /// `V_m = Σ_{k≥2} ‖u_{t_k} − u_{t_{k−1}}‖²`.
    pub fn drift_over(&self, rounds: &[usize]) -> f64 {
        rounds
            .windows(2)
            .map(|w| dist_sq(self.at(w[0]), self.at(w[1])))
            .sum()
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.vectors.iter().map(|v| norm_sq(v)).fold(0.0, f64::max)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Gaussian inputs labelled by a Gaussian concept that is redrawn every
/// `segment_length` rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriftScenario {
    pub rounds: usize,
    pub dim: usize,
    pub segment_length: usize,
    pub seed: u64,
}

impl Default for DriftScenario {
    fn default() -> Self {
        Self {
            rounds: 10_000,
            dim: 50,
            segment_length: 500,
            seed: 0,
        }
    }
}

impl DriftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.dim == 0 || self.segment_length == 0 {
            return Err(Error::Parameter(
                "rounds, dimension and segment length must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.rounds.div_ceil(self.segment_length)
    }
}

/// `x_t ~ N(0, I)`, `u` redrawn from `N(0, I)` at each segment start and
/// `y_t = sign(x_tᵀu_t)` with `sign(0) = +1`.
pub fn generate_synthetic_drift(s: &DriftScenario) -> Result<(Vec<Example>, ReferenceSequence)> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut gaussian =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let mut stream = Vec::with_capacity(s.rounds);
    let mut starts = Vec::with_capacity(s.segments());
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(s.segments());
    for t in 0..s.rounds {
        if t % s.segment_length == 0 {
            starts.push(t);
            vectors.push(gaussian(s.dim));
        }
        let x = gaussian(s.dim);
        let y = sign(dot(&x, vectors.last().expect("segment vector drawn")));
        stream.push(Example { x, y });
    }
    let reference = ReferenceSequence::piecewise(s.rounds, starts, vectors)?;
    Ok((stream, reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `label,f_1,…,f_d` per line.
    DenseCsv,
    /// `label idx:val idx:val …` per line, 1-based indices.
    SparseIndexValue,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "csv" => Ok(DataFormat::DenseCsv),
            "sparse-index-value" | "sparse" | "libsvm" => Ok(DataFormat::SparseIndexValue),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

fn parse_label(token: &str, line: usize) -> Result<i64> {
    let v: f64 = token.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid label `{}`", token.trim()),
    })?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("label `{}` is not an integer", token.trim()),
        });
    }
    Ok(v as i64)
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid feature value `{}`", token.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite feature value `{}`", token.trim()),
        });
    }
    Ok(v)
}

/// Loads a dataset in file order. Blank lines and lines starting with `#`
/// are skipped.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DataFormat) -> Result<Vec<RawExample>> {
    let rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match format {
        DataFormat::DenseCsv => {
            let mut out = Vec::new();
            let mut dim = None;
            for (line, l) in rows {
                let mut fields = l.split(',');
                let label = parse_label(fields.next().unwrap_or_default(), line)?;
                let x = fields
                    .map(|f| parse_value(f, line))
                    .collect::<Result<Vec<_>>>()?;
                match dim {
                    None => dim = Some(x.len()),
                    Some(d) if d != x.len() => {
                        return Err(Error::Schema(format!(
                            "line {line}: expected {d} features, found {}",
                            x.len()
                        )))
                    }
                    _ => {}
                }
                out.push(RawExample { x, label });
            }
            Ok(out)
        }
        DataFormat::SparseIndexValue => {
            let mut parsed = Vec::new();
            let mut dim = 0;
            for (line, l) in rows {
                let mut tokens = l.split_whitespace();
                let label = parse_label(tokens.next().unwrap_or_default(), line)?;
                let mut entries = Vec::new();
                for tok in tokens {
                    let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                        line,
                        message: format!("expected idx:val, found `{tok}`"),
                    })?;
                    let idx: usize = idx.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid index `{idx}`"),
                    })?;
                    if idx == 0 {
                        return Err(Error::Parse {
                            line,
                            message: "feature indices are 1-based".into(),
                        });
                    }
                    dim = dim.max(idx);
                    entries.push((idx - 1, parse_value(val, line)?));
                }
                parsed.push((label, entries));
            }
            Ok(parsed
                .into_iter()
                .map(|(label, entries)| {
                    let mut x = vec![0.0; dim];
                    for (i, v) in entries {
                        x[i] = v;
                    }
                    RawExample { x, label }
                })
                .collect())
        }
    }
}

/// Renders rows in the dense CSV format. Values use Rust's shortest
/// round-trip formatting, so loading the output reproduces them exactly.
pub fn to_dense_csv<'a>(rows: impl IntoIterator<Item = (f64, &'a [f64])>) -> String {
    let mut out = String::new();
    for (label, x) in rows {
        write!(out, "{label}").unwrap();
        for v in x {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dense_csv(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let text = to_dense_csv(examples.iter().map(|e| (e.y, e.x.as_slice())));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per piece: 1-based first round, then the vector.
pub fn write_reference_csv(path: impl AsRef<Path>, reference: &ReferenceSequence) -> Result<()> {
    let path = path.as_ref();
    let text = to_dense_csv(reference.pieces().map(|(start, u)| ((start + 1) as f64, u)));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Controls the multiclass-to-binary transform with periodically reshuffled
/// positive classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub segment_length: usize,
    pub seed: u64,
    /// All raw labels that may appear.
    pub classes: Vec<i64>,
    /// One global seeded shuffle of the examples before segmentation.
    pub shuffle: bool,
}

impl ShiftSpec {
    pub fn digits(segment_length: usize, seed: u64) -> Self {
        Self {
            segment_length,
            seed,
            classes: (0..10).collect(),
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedStream {
    pub examples: Vec<Example>,
    /// Positive classes of each segment.
    pub positive_sets: Vec<Vec<i64>>,
}

/// Relabels with the positive set drawn independently for every segment:
/// each class joins with probability 1/2, redrawn until the set is neither
/// empty nor the whole universe.
pub fn apply_label_shifts(examples: &[RawExample], spec: &ShiftSpec) -> Result<ShiftedStream> {
    if spec.classes.len() < 2 {
        return Err(Error::Parameter(
            "class universe needs at least two labels to form a proper positive subset".into(),
        ));
    }
    if spec.segment_length == 0 {
        return Err(Error::Parameter("segment length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<&RawExample> = examples.iter().collect();
    if spec.shuffle {
        order.shuffle(&mut rng);
    }
    let segments = order.len().div_ceil(spec.segment_length);
    let positive_sets: Vec<Vec<i64>> = (0..segments)
        .map(|_| loop {
            let subset: Vec<i64> = spec
                .classes
                .iter()
                .copied()
                .filter(|_| rng.random::<bool>())
                .collect();
            if !subset.is_empty() && subset.len() < spec.classes.len() {
                break subset;
            }
        })
        .collect();
    let examples = relabel(&order, spec.segment_length, &positive_sets, &spec.classes)?;
    Ok(ShiftedStream {
        examples,
        positive_sets,
    })
}

/// Relabels with explicit per-segment positive sets, in the given order.
pub fn apply_label_shifts_with(
    examples: &[RawExample],
    segment_length: usize,
    positive_sets: &[Vec<i64>],
    classes: &[i64],
) -> Result<Vec<Example>> {
    let order: Vec<&RawExample> = examples.iter().collect();
    relabel(&order, segment_length, positive_sets, classes)
}

fn relabel(
    order: &[&RawExample],
    segment_length: usize,
    positive_sets: &[Vec<i64>],
    classes: &[i64],
) -> Result<Vec<Example>> {
    if classes.is_empty() {
        return Err(Error::Parameter("class universe is empty".into()));
    }
    if segment_length == 0 {
        return Err(Error::Parameter("segment length must be at least 1".into()));
    }
    if positive_sets.len() < order.len().div_ceil(segment_length) {
        return Err(Error::Parameter(
            "not enough positive sets for all segments".into(),
        ));
    }
    for set in positive_sets {
        if set.is_empty() || classes.iter().all(|c| set.contains(c)) {
            return Err(Error::Parameter(format!(
                "positive set {set:?} must be a proper nonempty subset of {classes:?}"
            )));
        }
    }
    order
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            if !classes.contains(&raw.label) {
                return Err(Error::Schema(format!(
                    "label {} is outside the class universe",
                    raw.label
                )));
            }
            let positive = positive_sets[i / segment_length].contains(&raw.label);
            Ok(Example {
                x: raw.x.clone(),
                y: if positive { 1.0 } else { -1.0 },
            })
        })
        .collect()
}
