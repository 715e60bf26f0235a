//! The interface shared by LASEC and every baseline.

use rand::RngCore;

use crate::error::Result;

/// A positive parameter that may also be set to `+∞` as an explicit mode.
///
/// `c = ∞` switches off the drift penalty and `a = ∞` queries every label;
/// both are exact reductions, not large sentinels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Param {
    Finite(f64),
    Infinite,
}

impl Param {
    pub fn finite(self) -> Option<f64> {
        match self {
            Param::Finite(v) => Some(v),
            Param::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Param::Infinite)
    }

    /// The value as `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            Param::Infinite
        } else {
            Param::Finite(v)
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Param::Finite(v) => write!(f, "{v}"),
            Param::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Param {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Param::Infinite);
        }
        t.parse::<f64>().map(Param::from)
    }
}

/// What a learner reports about one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    /// Real-valued score; the prediction is its sign.
    pub margin: f64,
    /// `±1`, with `sign(0) = +1`.
    pub prediction: f64,
    pub queried: bool,
    /// Probability with which the label was requested (1 for deterministic queries).
    pub query_probability: f64,
    /// `xᵀ S⁻¹ x` for second-order learners, `0` otherwise.
    pub quad_form: f64,
    /// Known only when the label was observed.
    pub mistake: Option<bool>,
    /// Whether the model state changed this round.
    pub updated: bool,
}

/// A source of the current round's label. Calling it spends a query.
pub type LabelSource<'a> = dyn FnMut() -> f64 + 'a;

/// A sequential online binary classifier.
pub trait OnlineLearner: Send {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Predicts on `x`, decides whether to ask for the label and updates.
    fn step(
        &mut self,
        x: &[f64],
        label: &mut LabelSource<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RoundOutcome>;
}
