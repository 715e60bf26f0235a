//! Comparison learners: the Perceptron family, the second-order perceptron,
//! the margin-based selective-sampling wrapper and BBQ.
//!
//! None of these come with pseudocode in the LASEC setting; each follows the
//! standard published statement of the algorithm. Two choices are ours and
//! marked where they appear: the Shifting Perceptron decay schedule and the
//! zero-weight start of the Modified Perceptron.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::lasec::query_decision;
use crate::learner::{LabelSource, OnlineLearner, Param, RoundOutcome};
use crate::linalg::{dot, norm_sq, sherman_morrison_in_place, sign, SpdMatrix};

/// A learner that produces a real margin and updates on mistakes, so that it
/// can be driven either fully supervised or through [`SelectiveSampling`].
pub trait MarginLearner: Send {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn margin(&self, x: &[f64]) -> f64;
    /// Applied on (observed) mistakes only.
    fn update(&mut self, x: &[f64], y: f64, rng: &mut dyn RngCore) -> Result<()>;
}

/// Runs a [`MarginLearner`] with the randomized query rule `a / (a + |margin|)`.
/// `a = ∞` queries every round and reproduces the supervised learner.
#[derive(Debug, Clone)]
pub struct SelectiveSampling<L> {
    inner: L,
    a: Param,
}

impl<L: MarginLearner> SelectiveSampling<L> {
    pub fn new(inner: L, a: Param) -> Result<Self> {
        if let Param::Finite(v) = a {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("a must be positive, got {v}")));
            }
        }
        Ok(Self { inner, a })
    }

    pub fn supervised(inner: L) -> Self {
        Self {
            inner,
            a: Param::Infinite,
        }
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }
}

impl<L: MarginLearner> OnlineLearner for SelectiveSampling<L> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn step(
        &mut self,
        x: &[f64],
        label: &mut LabelSource<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RoundOutcome> {
        let margin = self.inner.margin(x);
        let prediction = sign(margin);
        let query = query_decision(margin, self.a, rng);
        let mut outcome = RoundOutcome {
            margin,
            prediction,
            queried: query.queried,
            query_probability: query.probability,
            quad_form: 0.0,
            mistake: None,
            updated: false,
        };
        if query.queried {
            let y = label();
            let mistake = y != prediction;
            outcome.mistake = Some(mistake);
            if mistake {
                self.inner.update(x, y, rng)?;
                outcome.updated = true;
            }
        }
        Ok(outcome)
    }
}

fn axpy(w: &mut [f64], alpha: f64, x: &[f64]) {
    w.iter_mut().zip(x).for_each(|(wi, xi)| *wi += alpha * xi);
}

/// Rosenblatt's Perceptron.
#[derive(Debug, Clone)]
pub struct Perceptron {
    w: Vec<f64>,
    mistakes: usize,
}

impl Perceptron {
    pub fn new(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            mistakes: 0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn mistakes(&self) -> usize {
        self.mistakes
    }
}

impl MarginLearner for Perceptron {
    fn name(&self) -> &'static str {
        "perceptron"
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    fn update(&mut self, x: &[f64], y: f64, _rng: &mut dyn RngCore) -> Result<()> {
        axpy(&mut self.w, y, x);
        self.mistakes += 1;
        Ok(())
    }
}

/// Second-order perceptron: margin `xᵀ(A + xxᵀ)⁻¹ v` with `A = ridge·I + Σ xxᵀ`
/// over mistaken rounds. `A⁻¹` is kept current by rank-one updates.
#[derive(Debug, Clone)]
pub struct SecondOrderPerceptron {
    a: SpdMatrix,
    a_inv: SpdMatrix,
    v: Vec<f64>,
    a_inv_v: Vec<f64>,
}

impl SecondOrderPerceptron {
    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) || !ridge.is_finite() {
            return Err(Error::Parameter(format!(
                "ridge must be positive, got {ridge}"
            )));
        }
        Ok(Self {
            a: SpdMatrix::scaled_identity(dim, ridge),
            a_inv: SpdMatrix::scaled_identity(dim, 1.0 / ridge),
            v: vec![0.0; dim],
            a_inv_v: vec![0.0; dim],
        })
    }

    pub fn correlation(&self) -> &SpdMatrix {
        &self.a
    }
}

impl MarginLearner for SecondOrderPerceptron {
    fn name(&self) -> &'static str {
        "sop"
    }

    fn dim(&self) -> usize {
        self.v.len()
    }

    fn margin(&self, x: &[f64]) -> f64 {
        // xᵀ(A + xxᵀ)⁻¹v = xᵀA⁻¹v / (1 + xᵀA⁻¹x)
        dot(x, &self.a_inv_v) / (1.0 + self.a_inv.quad_form(x))
    }

    fn update(&mut self, x: &[f64], y: f64, _rng: &mut dyn RngCore) -> Result<()> {
        self.a.add_outer(x, 1.0);
        sherman_morrison_in_place(&mut self.a_inv, x);
        axpy(&mut self.v, y, x);
        self.a_inv_v = self.a_inv.mul_vec(&self.v);
        Ok(())
    }
}

/// Shifting Perceptron: on the k-th mistake `w ← (1 − λ_k) w + y x` with
/// `λ_k = λ / (λ + k)`.
#[derive(Debug, Clone)]
pub struct ShiftingPerceptron {
    w: Vec<f64>,
    lambda: f64,
    mistakes: usize,
}

impl ShiftingPerceptron {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            w: vec![0.0; dim],
            lambda,
            mistakes: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Shrink factor `1 − λ_k` applied on mistake number `k` (1-based).
    pub fn shrink_factor(lambda: f64, k: usize) -> f64 {
        1.0 - lambda / (lambda + k as f64)
    }
}

impl MarginLearner for ShiftingPerceptron {
    fn name(&self) -> &'static str {
        "shifting-perceptron"
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    fn update(&mut self, x: &[f64], y: f64, _rng: &mut dyn RngCore) -> Result<()> {
        self.mistakes += 1;
        let keep = Self::shrink_factor(self.lambda, self.mistakes);
        self.w.iter_mut().for_each(|wi| *wi *= keep);
        axpy(&mut self.w, y, x);
        Ok(())
    }
}

/// Modified Perceptron: reflects `w` across the hyperplane orthogonal to a
/// misclassified unit-norm input, `w ← w − 2(wᵀx)x`.
///
/// Inputs are normalized to unit length on entry. Since a reflection of the
/// zero vector is still zero, the first mistake sets `w = y·x`.
#[derive(Debug, Clone)]
pub struct ModifiedPerceptron {
    w: Vec<f64>,
}

impl ModifiedPerceptron {
    pub fn new(dim: usize) -> Self {
        Self { w: vec![0.0; dim] }
    }

    pub fn with_weights(w: Vec<f64>) -> Self {
        Self { w }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    fn normalized(x: &[f64]) -> Vec<f64> {
        let n = norm_sq(x).sqrt();
        if n > 0.0 {
            x.iter().map(|v| v / n).collect()
        } else {
            x.to_vec()
        }
    }
}

impl MarginLearner for ModifiedPerceptron {
    fn name(&self) -> &'static str {
        "modified-perceptron"
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, &Self::normalized(x))
    }

    fn update(&mut self, x: &[f64], y: f64, _rng: &mut dyn RngCore) -> Result<()> {
        let x = Self::normalized(x);
        if self.w.iter().all(|v| *v == 0.0) {
            self.w = x.iter().map(|v| y * v).collect();
        } else {
            let proj = dot(&self.w, &x);
            axpy(&mut self.w, -2.0 * proj, &x);
        }
        Ok(())
    }
}

/// Randomized Budget Perceptron: keeps at most `budget` mistaken examples and
/// evicts one uniformly at random when full.
#[derive(Debug, Clone)]
pub struct RandomizedBudgetPerceptron {
    w: Vec<f64>,
    budget: usize,
    stored: Vec<(Vec<f64>, f64)>,
    last_evicted: Option<usize>,
}

impl RandomizedBudgetPerceptron {
    pub fn new(dim: usize, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Parameter("budget must be at least 1".into()));
        }
        Ok(Self {
            w: vec![0.0; dim],
            budget,
            stored: Vec::with_capacity(budget),
            last_evicted: None,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn stored(&self) -> &[(Vec<f64>, f64)] {
        &self.stored
    }

    /// Slot index evicted by the most recent update, if any.
    pub fn last_evicted(&self) -> Option<usize> {
        self.last_evicted
    }
}

impl MarginLearner for RandomizedBudgetPerceptron {
    fn name(&self) -> &'static str {
        "budget-perceptron"
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    fn update(&mut self, x: &[f64], y: f64, rng: &mut dyn RngCore) -> Result<()> {
        self.last_evicted = None;
        if self.stored.len() == self.budget {
            let slot = rng.random_range(0..self.budget);
            self.stored.swap_remove(slot);
            self.last_evicted = Some(slot);
        }
        self.stored.push((x.to_vec(), y));
        self.w.iter_mut().for_each(|v| *v = 0.0);
        for (xs, ys) in &self.stored {
            axpy(&mut self.w, *ys, xs);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbqVariant {
    /// Updates on every queried round.
    Bbq,
    /// Updates only on queried rounds where the prediction was wrong.
    BbqI,
}

/// BBQ: queries when `r_t = xᵀA⁻¹x ≥ scale · t^{−κ}`, where `A = I + Σ xxᵀ` over
/// the examples used for updates so far, and predicts `sign(xᵀA⁻¹v)`.
#[derive(Debug, Clone)]
pub struct Bbq {
    a_inv: SpdMatrix,
    v: Vec<f64>,
    a_inv_v: Vec<f64>,
    kappa: f64,
    threshold_scale: f64,
    variant: BbqVariant,
    round: u64,
}

impl Bbq {
    pub fn new(dim: usize, kappa: f64, variant: BbqVariant) -> Result<Self> {
        Self::with_threshold_scale(dim, kappa, 1.0, variant)
    }

    pub fn with_threshold_scale(
        dim: usize,
        kappa: f64,
        threshold_scale: f64,
        variant: BbqVariant,
    ) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Parameter(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if !(threshold_scale > 0.0) || !threshold_scale.is_finite() {
            return Err(Error::Parameter(format!(
                "threshold scale must be positive, got {threshold_scale}"
            )));
        }
        Ok(Self {
            a_inv: SpdMatrix::identity(dim),
            v: vec![0.0; dim],
            a_inv_v: vec![0.0; dim],
            kappa,
            threshold_scale,
            variant,
            round: 0,
        })
    }

    pub fn threshold(&self, t: u64) -> f64 {
        self.threshold_scale * (t as f64).powf(-self.kappa)
    }
}

impl OnlineLearner for Bbq {
    fn name(&self) -> &'static str {
        match self.variant {
            BbqVariant::Bbq => "bbq",
            BbqVariant::BbqI => "bbq-i",
        }
    }

    fn dim(&self) -> usize {
        self.v.len()
    }

    fn step(
        &mut self,
        x: &[f64],
        label: &mut LabelSource<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<RoundOutcome> {
        self.round += 1;
        let margin = dot(x, &self.a_inv_v);
        let prediction = sign(margin);
        let r = self.a_inv.quad_form(x);
        let queried = r >= self.threshold(self.round);
        let mut outcome = RoundOutcome {
            margin,
            prediction,
            queried,
            query_probability: if queried { 1.0 } else { 0.0 },
            quad_form: r,
            mistake: None,
            updated: false,
        };
        if queried {
            let y = label();
            let mistake = y != prediction;
            outcome.mistake = Some(mistake);
            if mistake || self.variant == BbqVariant::Bbq {
                sherman_morrison_in_place(&mut self.a_inv, x);
                axpy(&mut self.v, y, x);
                self.a_inv_v = self.a_inv.mul_vec(&self.v);
                outcome.updated = true;
            }
        }
        Ok(outcome)
    }
}
