//! Computable right-hand sides of the mistake bounds, used to audit runs.
//!
//! Sums indexed by update `k` run over the rounds on which the learner
//! updated, in order; `u_1` is the comparator at the first such round and
//! `V_m` is the drift of the comparator sampled at those rounds. Quadratic
//! forms are the `xᵀS_t⁻¹x` values the learner reported, where `S_t` already
//! includes `x_t x_tᵀ`, so on update rounds they equal `x_tᵀD_k⁻¹x_t`.

use crate::data::{Example, ReferenceSequence};
use crate::error::{Error, Result};
use crate::lasec::{LasecParams, LasecState};
use crate::learner::{Param, RoundOutcome};
use crate::linalg::{dot, norm_sq};

/// Everything the bounds need, extracted from one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub gamma: f64,
    pub b: f64,
    pub c: Param,
    pub a: Param,
    pub dim: usize,
    pub rounds: usize,
    /// `m`, the number of update rounds.
    pub updates: f64,
    /// Observed mistakes over all rounds, queried or not.
    pub mistakes: f64,
    /// Realized number of queries.
    pub queries: f64,
    /// `Σ_t a/(a + |p̂_t|)` over all rounds.
    pub expected_queries: f64,
    /// `max_t ‖x_t‖²`.
    pub x_sq_max: f64,
    /// `Σ_t ℓ_γ(u_t)` over all rounds.
    pub hinge_loss: f64,
    pub u1_norm_sq: f64,
    pub drift_updates: f64,
    /// `Σ_k (u_kᵀx_k)²`.
    pub sum_ux_sq: f64,
    /// `Σ_k x_kᵀD_k⁻¹x_k`.
    pub sum_quad: f64,
    /// `ln |D_m / b|`.
    pub log_det_ratio: f64,
    /// `Tr(D₀)`.
    pub trace_d0: f64,
}

/// Hinge loss `max{0, γ − y uᵀx}`.
pub fn hinge(gamma: f64, u: &[f64], x: &[f64], y: f64) -> f64 {
    (gamma - y * dot(u, x)).max(0.0)
}

impl BoundInputs {
    /// Gathers the bound terms from a LASEC run: the stream with its true
    /// labels, the comparator sequence, the per-round outcomes and the final
    /// learner state.
    pub fn from_run(
        stream: &[Example],
        reference: &ReferenceSequence,
        outcomes: &[RoundOutcome],
        params: &LasecParams,
        state: &LasecState,
        gamma: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if stream.len() != outcomes.len() || stream.len() != reference.len() {
            return Err(Error::Schema(format!(
                "stream ({}), outcomes ({}) and reference ({}) lengths differ",
                stream.len(),
                outcomes.len(),
                reference.len()
            )));
        }
        let dim = state.dim();
        let update_rounds: Vec<usize> = outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.updated)
            .map(|(t, _)| t)
            .collect();
        let mut inputs = Self {
            gamma,
            b: params.b,
            c: params.c,
            a: params.a,
            dim,
            rounds: stream.len(),
            updates: update_rounds.len() as f64,
            mistakes: 0.0,
            queries: 0.0,
            expected_queries: 0.0,
            x_sq_max: 0.0,
            hinge_loss: 0.0,
            u1_norm_sq: update_rounds
                .first()
                .map_or(0.0, |&t| norm_sq(reference.at(t))),
            drift_updates: reference.drift_over(&update_rounds),
            sum_ux_sq: 0.0,
            sum_quad: 0.0,
            log_det_ratio: state.log_det_ratio(params.b)?,
            trace_d0: dim as f64 * initial_scale(params.b, params.c),
        };
        for (t, (ex, o)) in stream.iter().zip(outcomes).enumerate() {
            let u = reference.at(t);
            inputs.x_sq_max = inputs.x_sq_max.max(norm_sq(&ex.x));
            inputs.hinge_loss += hinge(gamma, u, &ex.x, ex.y);
            inputs.mistakes += f64::from(u8::from(o.prediction != ex.y));
            inputs.queries += f64::from(u8::from(o.queried));
            inputs.expected_queries += o.query_probability;
            if o.updated {
                inputs.sum_ux_sq += dot(u, &ex.x).powi(2);
                inputs.sum_quad += o.quad_form;
            }
        }
        Ok(inputs)
    }

    /// `b‖u₁‖² + cV_m + Σ_k (u_kᵀx_k)²`. With `c = ∞` the drift term is
    /// zero when there is no drift and infinite otherwise.
    pub fn comparator_term(&self) -> f64 {
        let drift = match self.c {
            Param::Finite(c) => c * self.drift_updates,
            Param::Infinite if self.drift_updates == 0.0 => 0.0,
            Param::Infinite => f64::INFINITY,
        };
        self.b * self.u1_norm_sq + drift + self.sum_ux_sq
    }

    /// Field-wise average over runs sharing `γ, a, b, c`, giving the
    /// empirical expectations used by the selective-sampling bound.
    pub fn mean(runs: &[BoundInputs]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Aggregation("no runs to average".into()))?;
        if runs.iter().any(|r| {
            r.gamma != first.gamma
                || r.b != first.b
                || r.c != first.c
                || r.a != first.a
                || r.dim != first.dim
        }) {
            return Err(Error::Aggregation("runs use different parameters".into()));
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&BoundInputs) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            updates: avg(|r| r.updates),
            mistakes: avg(|r| r.mistakes),
            queries: avg(|r| r.queries),
            expected_queries: avg(|r| r.expected_queries),
            x_sq_max: runs.iter().map(|r| r.x_sq_max).fold(0.0, f64::max),
            hinge_loss: avg(|r| r.hinge_loss),
            u1_norm_sq: avg(|r| r.u1_norm_sq),
            drift_updates: avg(|r| r.drift_updates),
            sum_ux_sq: avg(|r| r.sum_ux_sq),
            sum_quad: avg(|r| r.sum_quad),
            log_det_ratio: avg(|r| r.log_det_ratio),
            trace_d0: first.trace_d0,
            ..first.clone()
        })
    }
}

fn initial_scale(b: f64, c: Param) -> f64 {
    match c {
        Param::Finite(c) => b * c / (c - b),
        Param::Infinite => b,
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "margin threshold γ must be positive, got {gamma}"
        )))
    }
}

/// Supervised bound: `L/γ + (1/γ)√(comparator_term · Σ quad)`.
pub fn theorem1_rhs(inputs: &BoundInputs) -> Result<f64> {
    check_gamma(inputs.gamma)?;
    let root = if inputs.sum_quad == 0.0 {
        0.0
    } else {
        (inputs.comparator_term() * inputs.sum_quad).sqrt()
    };
    Ok((inputs.hinge_loss + root) / inputs.gamma)
}

/// Selective-sampling bound on expected mistakes:
/// `L̄/γ + (a/2γ²)·comparator_term + (1/2a)·Σ quad`.
pub fn theorem2_rhs(inputs: &BoundInputs) -> Result<f64> {
    check_gamma(inputs.gamma)?;
    let a = match inputs.a {
        Param::Finite(a) if a > 0.0 => a,
        other => {
            return Err(Error::Parameter(format!(
                "the selective-sampling bound needs a finite a > 0, got {other}"
            )))
        }
    };
    let g = inputs.gamma;
    Ok(inputs.hinge_loss / g
        + a / (2.0 * g * g) * inputs.comparator_term()
        + inputs.sum_quad / (2.0 * a))
}

/// The `a` minimizing the last two terms of [`theorem2_rhs`].
pub fn optimal_a(inputs: &BoundInputs) -> f64 {
    inputs.gamma * (inputs.sum_quad / inputs.comparator_term()).sqrt()
}

/// Per-update constant `max{(3X² + √(X⁴ + 4X²c))/2, b + X²}`.
pub fn a4_step_constant(b: f64, c: f64, x_sq: f64) -> f64 {
    let first = (3.0 * x_sq + (x_sq * x_sq + 4.0 * x_sq * c).sqrt()) / 2.0;
    first.max(b + x_sq)
}

/// `ln|D_m/b| + Tr(D₀)/c + (m/c)·d·max{…}`; only the log-determinant
/// survives when `c = ∞`.
pub fn trace_bound_a4(inputs: &BoundInputs) -> f64 {
    match inputs.c {
        Param::Infinite => inputs.log_det_ratio,
        Param::Finite(c) => {
            inputs.log_det_ratio
                + inputs.trace_d0 / c
                + inputs.updates / c
                    * inputs.dim as f64
                    * a4_step_constant(inputs.b, c, inputs.x_sq_max)
        }
    }
}

/// Largest `m` allowed by `m ≤ D/γ + √(A(B + mC))/γ`:
/// `D/γ + AC/(2γ²) + (1/γ)√(DAC/γ + (AC)²/(4γ²) + AB)`.
pub fn lemma3_solve(a: f64, b: f64, c: f64, d: f64, gamma: f64) -> Result<f64> {
    for (name, v) in [("A", a), ("B", b), ("D", d), ("γ", gamma)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C must be nonnegative, got {c}")));
    }
    let ac = a * c;
    Ok(d / gamma
        + ac / (2.0 * gamma * gamma)
        + (d * ac / gamma + ac * ac / (4.0 * gamma * gamma) + a * b).sqrt() / gamma)
}

/// `max{(9/8)X², (b + X²)²/(8X²)}`.
pub fn mu(b: f64, x_sq: f64) -> f64 {
    (9.0 / 8.0 * x_sq).max((b + x_sq).powi(2) / (8.0 * x_sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftTuning {
    pub c: f64,
    pub b: f64,
    /// Whether `V_m ≤ T√2·dX/μ^{3/2}`, under which the tuned bound applies.
    pub feasible: bool,
}

/// `c = (√2·T·d·X/V_m)^{2/3}` and `b = εc`.
pub fn corollary_tune_c(
    rounds: usize,
    dim: usize,
    x: f64,
    drift: f64,
    epsilon: f64,
) -> Result<DriftTuning> {
    if drift == 0.0 {
        return Err(Error::Parameter(
            "no drift: use the c = inf mode instead of tuning c".into(),
        ));
    }
    if !(drift > 0.0 && drift.is_finite()) {
        return Err(Error::Parameter(format!(
            "drift must be positive, got {drift}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!(
            "ε must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(x > 0.0 && x.is_finite()) || rounds == 0 || dim == 0 {
        return Err(Error::Parameter("T, d and X must be positive".into()));
    }
    let scale = std::f64::consts::SQRT_2 * rounds as f64 * dim as f64 * x;
    let c = (scale / drift).powf(2.0 / 3.0);
    let b = epsilon * c;
    let feasible = drift <= scale / mu(b, x * x).powf(1.5);
    Ok(DriftTuning { c, b, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs() -> BoundInputs {
        BoundInputs {
            gamma: 1.0,
            b: 1.0,
            c: Param::Finite(2.0),
            a: Param::Finite(1.0),
            dim: 3,
            rounds: 100,
            updates: 5.0,
            mistakes: 5.0,
            queries: 10.0,
            expected_queries: 10.0,
            x_sq_max: 1.0,
            hinge_loss: 10.0,
            u1_norm_sq: 1.0,
            drift_updates: 0.0,
            sum_ux_sq: 3.0,
            sum_quad: 4.0,
            log_det_ratio: 2.0,
            trace_d0: 6.0,
        }
    }

    #[test]
    fn theorem1_arithmetic() {
        assert!((theorem1_rhs(&inputs()).unwrap() - 14.0).abs() < 1e-12);
        let doubled = BoundInputs {
            gamma: 2.0,
            ..inputs()
        };
        assert!((theorem1_rhs(&doubled).unwrap() - 7.0).abs() < 1e-12);
        let bad = BoundInputs {
            gamma: 0.0,
            ..inputs()
        };
        assert!(matches!(theorem1_rhs(&bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn infinite_c_drift_term() {
        let stationary = BoundInputs {
            c: Param::Infinite,
            ..inputs()
        };
        assert_eq!(stationary.comparator_term(), 4.0);
        let drifting = BoundInputs {
            drift_updates: 1.0,
            ..stationary
        };
        assert_eq!(drifting.comparator_term(), f64::INFINITY);
    }

    #[test]
    fn theorem2_arithmetic() {
        // 10 + (1/2)·4 + (1/2)·4
        assert!((theorem2_rhs(&inputs()).unwrap() - 14.0).abs() < 1e-12);
        let degenerate = BoundInputs {
            hinge_loss: 0.0,
            u1_norm_sq: 0.0,
            sum_ux_sq: 0.0,
            a: Param::Finite(0.5),
            ..inputs()
        };
        assert!((theorem2_rhs(&degenerate).unwrap() - 4.0).abs() < 1e-12);
        for a in [Param::Finite(0.0), Param::Finite(-1.0), Param::Infinite] {
            assert!(matches!(
                theorem2_rhs(&BoundInputs { a, ..inputs() }),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn optimal_a_recovers_theorem1() {
        let base = BoundInputs {
            sum_ux_sq: 7.0,
            sum_quad: 2.5,
            gamma: 0.3,
            ..inputs()
        };
        let a_star = optimal_a(&base);
        let at = |a: f64| {
            theorem2_rhs(&BoundInputs {
                a: Param::Finite(a),
                ..base.clone()
            })
            .unwrap()
        };
        let best = at(a_star);
        assert!((best - theorem1_rhs(&base).unwrap()).abs() < 1e-10);
        for f in [0.5, 0.9, 1.1, 2.0] {
            assert!(at(a_star * f) > best);
        }
    }

    #[test]
    fn a4_constants() {
        assert_eq!(a4_step_constant(1.0, 2.0, 1.0), 3.0);
        let stationary = BoundInputs {
            c: Param::Infinite,
            ..inputs()
        };
        assert_eq!(trace_bound_a4(&stationary), 2.0);
        // 2 + 6/2 + (5/2)·3·3
        assert!((trace_bound_a4(&inputs()) - 27.5).abs() < 1e-12);
    }

    #[test]
    fn lemma3_examples() {
        assert!((lemma3_solve(1.0, 1.0, 1.0, 1.0, 1.0).unwrap() - 3.0).abs() < 1e-15);
        let (a, b, d, g) = (2.0, 8.0, 3.0, 0.5);
        assert!((lemma3_solve(a, b, 0.0, d, g).unwrap() - (d + (a * b).sqrt()) / g).abs() < 1e-12);
        for bad in [
            (0.0, 1.0, 1.0, 1.0, 1.0),
            (1.0, -1.0, 1.0, 1.0, 1.0),
            (1.0, 1.0, 1.0, 0.0, 1.0),
            (1.0, 1.0, 1.0, 1.0, 0.0),
        ] {
            assert!(lemma3_solve(bad.0, bad.1, bad.2, bad.3, bad.4).is_err());
        }
        assert!(lemma3_solve(1.0, 1.0, -1.0, 1.0, 1.0).is_err());
    }

    /// Largest `m` with `m ≤ D/γ + √(A(B + mC))/γ`, by bisection on the
    /// implicit inequality.
    fn lemma3_bisect(a: f64, b: f64, c: f64, d: f64, gamma: f64) -> f64 {
        let holds = |m: f64| m <= d / gamma + (a * (b + m * c)).sqrt() / gamma;
        let mut lo = 0.0;
        let mut hi = 1.0;
        while holds(hi) {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if holds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn lemma3_against_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut draw = || 10f64.powf(rng.random_range(-2.0..1.0));
            let (a, b, c, d, g) = (draw(), draw(), draw(), draw(), draw().max(0.1));
            let closed = lemma3_solve(a, b, c, d, g).unwrap();
            let implicit = lemma3_bisect(a, b, c, d, g);
            assert!(implicit <= closed + 1e-9, "{implicit} > {closed}");
            assert!(closed - implicit <= 1e-9 * closed.max(1.0));
        }
    }

    #[test]
    fn tune_c_example() {
        let t = corollary_tune_c(10_000, 50, 1.0, std::f64::consts::SQRT_2 * 50.0, 0.1).unwrap();
        assert!((t.c - 10_000f64.powf(2.0 / 3.0)).abs() < 1e-9);
        assert!((t.c - 464.1588833612779).abs() < 1e-9);
        assert!((t.b - 0.1 * t.c).abs() < 1e-12);
        assert!(t.feasible);
        let heavy = corollary_tune_c(100, 50, 1.0, 1e9, 0.1).unwrap();
        assert!(!heavy.feasible);
        assert!(heavy.c > 0.0);
        assert!(matches!(
            corollary_tune_c(100, 5, 1.0, 0.0, 0.1),
            Err(Error::Parameter(_))
        ));
        assert!(corollary_tune_c(100, 5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mean_averages_runs() {
        let a = inputs();
        let b = BoundInputs {
            mistakes: 7.0,
            sum_quad: 6.0,
            ..inputs()
        };
        let m = BoundInputs::mean(&[a.clone(), b]).unwrap();
        assert_eq!(m.mistakes, 6.0);
        assert_eq!(m.sum_quad, 5.0);
        let other = BoundInputs { gamma: 2.0, ..a };
        assert!(BoundInputs::mean(&[inputs(), other]).is_err());
        assert!(BoundInputs::mean(&[]).is_err());
    }

    proptest! {
        #[test]
        fn tuned_constant_within_root_identity(
            t in 10usize..100_000,
            d in 1usize..100,
            x in 0.1f64..10.0,
            v in 1e-3f64..1e4,
            eps in 0.01f64..0.99,
        ) {
            let tuning = corollary_tune_c(t, d, x, v, eps).unwrap();
            if tuning.feasible {
                let k = a4_step_constant(tuning.b, tuning.c, x * x);
                prop_assert!(k <= 2.0 * x * (2.0 * tuning.c).sqrt() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn theorem1_monotone(
            dv in 0.0f64..10.0,
            dl in 0.0f64..10.0,
            du in 0.0f64..10.0,
            dq in 0.0f64..10.0,
        ) {
            let base = inputs();
            let r0 = theorem1_rhs(&base).unwrap();
            for bumped in [
                BoundInputs { drift_updates: base.drift_updates + dv, ..base.clone() },
                BoundInputs { hinge_loss: base.hinge_loss + dl, ..base.clone() },
                BoundInputs { sum_ux_sq: base.sum_ux_sq + du, ..base.clone() },
                BoundInputs { sum_quad: base.sum_quad + dq, ..base.clone() },
            ] {
                prop_assert!(theorem1_rhs(&bumped).unwrap() >= r0);
            }
        }

        #[test]
        fn lemma3_root_satisfies_inequality_with_equality(
            a in 0.01f64..10.0, b in 0.01f64..10.0, c in 0.0f64..10.0, d in 0.01f64..10.0, g in 0.1f64..10.0,
        ) {
            let m = lemma3_solve(a, b, c, d, g).unwrap();
            let rhs = d / g + (a * (b + m * c)).sqrt() / g;
            prop_assert!((m - rhs).abs() <= 1e-9 * m.max(1.0));
        }
    }
}
