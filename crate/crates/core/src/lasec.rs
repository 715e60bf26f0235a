//! LASEC and its selective-sampling variant LASEC-SS.
//!
//! The learner keeps the sufficient statistics `(D, e, f)` of the drifting
//! ridge objective
//!
//! ```text
//! Q_t(u_1..u_t) = b‖u_1‖² + c Σ ‖u_{s+1} − u_s‖² + Σ (y_s − u_sᵀx_s)²
//! ```
//!
//! restricted to the rounds it updated on, and predicts with the sign of
//!
//! ```text
//! p̂ = xᵀ S⁻¹ (I + D/c)⁻¹ e,    S = (D⁻¹ + I/c)⁻¹ + x xᵀ.
//! ```
//!
//! `S` is never formed. With `A = (D⁻¹ + I/c)⁻¹` and `g = (I + D/c)⁻¹ e` one
//! has `A⁻¹ g = D⁻¹ e`, so a single Sherman–Morrison step collapses the
//! margin to `xᵀD⁻¹e / (1 + xᵀA⁻¹x)` and the quadratic form `xᵀS⁻¹x` to
//! `q / (1 + q)` with `q = xᵀA⁻¹x`. Prediction is therefore `O(d²)`; the
//! `O(d³)` refresh of the cached matrices only happens on update rounds.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::learner::{LabelSource, OnlineLearner, Param, RoundOutcome};
use crate::linalg::{dot, sign, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LasecParams {
    /// Penalty on `‖u_1‖²`.
    pub b: f64,
    /// Drift penalty; `Infinite` recovers the second-order perceptron.
    pub c: Param,
    /// Query aggressiveness; `Infinite` is the fully supervised LASEC.
    pub a: Param,
}

impl LasecParams {
    pub fn supervised(b: f64, c: Param) -> Self {
        Self {
            b,
            c,
            a: Param::Infinite,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::Parameter(format!(
                "b must be positive, got {}",
                self.b
            )));
        }
        if let Param::Finite(c) = self.c {
            if !(c > self.b) || !c.is_finite() {
                return Err(Error::Parameter(format!(
                    "c must satisfy 0 < b < c, got b = {}, c = {c}",
                    self.b
                )));
            }
        }
        if let Param::Finite(a) = self.a {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Parameter(format!("a must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// Sufficient statistics after `k − 1` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct LasecState {
    drift: Param,
    d: SpdMatrix,
    e: Vec<f64>,
    f: f64,
    k: usize,
    // (D⁻¹ + I/c)⁻¹ and its inverse
    cached_a: SpdMatrix,
    cached_a_inv: SpdMatrix,
    // (I + D/c)⁻¹ e
    cached_g: Vec<f64>,
    // D⁻¹ e
    d_inv_e: Vec<f64>,
}

impl LasecState {
    /// Initial state: `D₀ = bc/(c − b)·I` (or `b·I` when `c = ∞`), `e₀ = 0`.
    pub fn new(params: &LasecParams, dim: usize) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        let b = params.b;
        let d0 = match params.c {
            Param::Finite(c) => b * c / (c - b),
            Param::Infinite => b,
        };
        // D₀⁻¹ + I/c = I/b exactly, so A₀ = b·I regardless of c.
        Ok(Self {
            drift: params.c,
            d: SpdMatrix::scaled_identity(dim, d0),
            e: vec![0.0; dim],
            f: 0.0,
            k: 1,
            cached_a: SpdMatrix::scaled_identity(dim, b),
            cached_a_inv: SpdMatrix::scaled_identity(dim, 1.0 / b),
            cached_g: vec![0.0; dim],
            d_inv_e: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    /// `D_{k−1}`.
    pub fn d(&self) -> &SpdMatrix {
        &self.d
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    /// One plus the number of updates applied so far.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn updates(&self) -> usize {
        self.k - 1
    }

    /// `(D⁻¹ + I/c)⁻¹`.
    pub fn cached_a(&self) -> &SpdMatrix {
        &self.cached_a
    }

    /// `(I + D/c)⁻¹ e`.
    pub fn cached_g(&self) -> &[f64] {
        &self.cached_g
    }

    /// `f − eᵀD⁻¹e`, the minimum of `Q` over the rounds used for updates.
    pub fn min_objective(&self) -> f64 {
        self.f - dot(&self.e, &self.d_inv_e)
    }

    /// `ln |D / b|`.
    pub fn log_det_ratio(&self, b: f64) -> Result<f64> {
        Ok(self.d.cholesky()?.log_det() - self.dim() as f64 * b.ln())
    }

    /// Margin `p̂` and `xᵀS⁻¹x` for input `x`; the state is not modified.
    pub fn predict_margin(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        let q = self.cached_a_inv.quad_form(x);
        let denom = 1.0 + q;
        (dot(x, &self.d_inv_e) / denom, q / denom)
    }

    /// Folds `(x, y)` into the statistics:
    ///
    /// ```text
    /// D_k = (D_{k−1}⁻¹ + I/c)⁻¹ + x xᵀ
    /// e_k = (I + D_{k−1}/c)⁻¹ e_{k−1} + y x
    /// f_k = f_{k−1} − e_{k−1}ᵀ (cI + D_{k−1})⁻¹ e_{k−1} + y²
    /// ```
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        // eᵀ(cI + D)⁻¹e = eᵀ g / c
        let shrink = match self.drift {
            Param::Finite(c) => dot(&self.e, &self.cached_g) / c,
            Param::Infinite => 0.0,
        };
        self.f += y * y - shrink;

        let mut d = self.cached_a.clone();
        d.add_outer(x, 1.0);
        let e: Vec<f64> = self
            .cached_g
            .iter()
            .zip(x)
            .map(|(g, xi)| g + y * xi)
            .collect();
        let d_inv = d.cholesky()?.inverse();
        let d_inv_e = d_inv.mul_vec(&e);

        match self.drift {
            Param::Finite(c) => {
                let mut a_inv = d_inv;
                a_inv.add_diagonal(1.0 / c);
                let a = a_inv.cholesky()?.inverse();
                // (I + D/c)⁻¹ = A D⁻¹
                self.cached_g = a.mul_vec(&d_inv_e);
                self.cached_a = a;
                self.cached_a_inv = a_inv;
            }
            Param::Infinite => {
                self.cached_g = e.clone();
                self.cached_a = d.clone();
                self.cached_a_inv = d_inv;
            }
        }
        self.d = d;
        self.e = e;
        self.d_inv_e = d_inv_e;
        self.k += 1;
        Ok(())
    }
}

/// Outcome of the randomized query rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryDecision {
    pub queried: bool,
    pub probability: f64,
}

/// Draws `Z ~ Bernoulli(a / (a + |p̂|))`. With `a = ∞` the label is always
/// queried and no randomness is consumed.
pub fn query_decision(margin: f64, a: Param, rng: &mut dyn RngCore) -> QueryDecision {
    match a {
        Param::Infinite => QueryDecision {
            queried: true,
            probability: 1.0,
        },
        Param::Finite(a) => {
            let probability = query_probability(margin, a);
            let draw: f64 = rng.random();
            QueryDecision {
                queried: draw < probability,
                probability,
            }
        }
    }
}

#[inline]
pub fn query_probability(margin: f64, a: f64) -> f64 {
    a / (a + margin.abs())
}

/// LASEC (`a = ∞`) or LASEC-SS.
#[derive(Debug, Clone)]
pub struct Lasec {
    params: LasecParams,
    state: LasecState,
}

impl Lasec {
    pub fn new(params: LasecParams, dim: usize) -> Result<Self> {
        let state = LasecState::new(&params, dim)?;
        Ok(Self { params, state })
    }

    pub fn params(&self) -> &LasecParams {
        &self.params
    }

    pub fn state(&self) -> &LasecState {
        &self.state
    }
}

impl OnlineLearner for Lasec {
    fn name(&self) -> &'static str {
        if self.params.a.is_infinite() {
            "lasec"
        } else {
            "lasec-ss"
        }
    }

    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn step(
        &mut self,
        x: &[f64],
        label: &mut LabelSource<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RoundOutcome> {
        let (margin, quad_form) = self.state.predict_margin(x);
        let prediction = sign(margin);
        let query = query_decision(margin, self.params.a, rng);
        let mut outcome = RoundOutcome {
            margin,
            prediction,
            queried: query.queried,
            query_probability: query.probability,
            quad_form,
            mistake: None,
            updated: false,
        };
        if query.queried {
            let y = label();
            let mistake = y != prediction;
            outcome.mistake = Some(mistake);
            if mistake {
                self.state.update(x, y)?;
                outcome.updated = true;
            }
        }
        Ok(outcome)
    }
}
