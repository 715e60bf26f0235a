//! Brute-force ground truth for the LASEC recurrences.
//!
//! The drifting objective `Q_t` is minimized directly over the stacked
//! variable `(u_1, …, u_t) ∈ R^{td}` with a dense nalgebra solve, and the
//! one-step min-max game is settled by enumerating all four label pairs.
//! Nothing here touches [`crate::linalg`] or [`crate::lasec`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest stacked dimension `t·d` the dense solve accepts.
pub const MAX_STACKED_DIM: usize = 2000;

/// Examples `(x_s, y_s)`, `s = 1..t`, and the penalties of `Q_t`.
#[derive(Debug, Clone)]
pub struct QProblem {
    pub examples: Vec<(Vec<f64>, f64)>,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct QSolution {
    pub value: f64,
    /// Minimizing comparator sequence `u_1, …, u_t`.
    pub argmin: Vec<Vec<f64>>,
}

impl QProblem {
    fn validate(&self) -> Result<usize> {
        if self.examples.is_empty() {
            return Err(Error::Parameter("Q needs at least one example".into()));
        }
        if !(self.b > 0.0 && self.c > 0.0) {
            return Err(Error::Parameter(format!(
                "b and c must be positive, got b = {}, c = {}",
                self.b, self.c
            )));
        }
        let dim = self.examples[0].0.len();
        if self.examples.iter().any(|(x, _)| x.len() != dim) {
            return Err(Error::Schema(
                "examples have inconsistent dimensions".into(),
            ));
        }
        if dim * self.examples.len() > MAX_STACKED_DIM {
            return Err(Error::Parameter(format!(
                "stacked dimension {} exceeds {MAX_STACKED_DIM}",
                dim * self.examples.len()
            )));
        }
        Ok(dim)
    }

    /// `Q_t` evaluated at an arbitrary sequence.
    pub fn objective(&self, us: &[Vec<f64>]) -> f64 {
        assert_eq!(us.len(), self.examples.len());
        let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let mut q = self.b * sq(&us[0]);
        for w in us.windows(2) {
            let diff: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            q += self.c * sq(&diff);
        }
        for ((x, y), u) in self.examples.iter().zip(us) {
            let pred: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
            q += (y - pred).powi(2);
        }
        q
    }
}

/// Minimizes `Q_t` by solving the block-tridiagonal normal equations
/// `H u = r` of the stacked quadratic form.
pub fn brute_force_min_q(problem: &QProblem) -> Result<QSolution> {
    let dim = problem.validate()?;
    let t = problem.examples.len();
    let n = t * dim;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (s, (x, y)) in problem.examples.iter().enumerate() {
        let base = s * dim;
        let mut ridge = 0.0;
        if s == 0 {
            ridge += problem.b;
        }
        if s > 0 {
            ridge += problem.c;
        }
        if s + 1 < t {
            ridge += problem.c;
        }
        for i in 0..dim {
            for j in 0..dim {
                h[(base + i, base + j)] += x[i] * x[j];
            }
            h[(base + i, base + i)] += ridge;
            r[base + i] = y * x[i];
            if s + 1 < t {
                h[(base + i, base + dim + i)] -= problem.c;
                h[(base + dim + i, base + i)] -= problem.c;
            }
        }
    }
    let sol = h
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::NumericDegeneracy("stacked system is singular".into()))?;
    let argmin: Vec<Vec<f64>> = (0..t)
        .map(|s| sol.rows(s * dim, dim).iter().copied().collect())
        .collect();
    let value = problem.objective(&argmin);
    Ok(QSolution { value, argmin })
}

/// Settles `argmin_{ŷ} max_{y} [(y − ŷ)² − min Q_T]` by enumeration, with the
/// prefix's own loss terms dropped since they do not depend on `(ŷ, y)`.
/// Ties go to `+1`.
pub fn brute_force_minmax_label(
    prefix: &[(Vec<f64>, f64)],
    x_last: &[f64],
    b: f64,
    c: f64,
) -> Result<f64> {
    let mut worst = [f64::NEG_INFINITY; 2];
    for y in [-1.0, 1.0] {
        let mut examples = prefix.to_vec();
        examples.push((x_last.to_vec(), y));
        let min_q = brute_force_min_q(&QProblem { examples, b, c })?.value;
        for (slot, y_hat) in [-1.0f64, 1.0].into_iter().enumerate() {
            worst[slot] = worst[slot].max((y - y_hat).powi(2) - min_q);
        }
    }
    Ok(if worst[1] <= worst[0] { 1.0 } else { -1.0 })
}
