//! Characteristic-time upper bounds evaluated at an allocation, and the
//! closed-form minimizer of the relaxed bound `Ũ`.
//!
//! Every bound here has the shape
//!
//! ```text
//! max_{(s,a) suboptimal} [ a(s,a) / w(s,a) + b(s,a) * max_{s'} c(s') / w(s', pi*(s')) ]
//! ```
//!
//! which [`MinimaxForm`] evaluates and differentiates. `U0` and `Ũ` use
//! `b = 1`, so their two maxima separate.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::quantities::InstanceQuantities;

/// `(1 + sqrt 5) / 2`.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("regularizer lambda must be finite and >= 0, got {0}")]
    Lambda(f64),
    #[error("moment order {k} outside 1..={k_max}")]
    MomentOrder { k: usize, k_max: usize },
    #[error("a suboptimal pair has zero gap and lambda = 0; pass lambda > 0")]
    DegenerateGap,
    #[error("no suboptimal pair to bound")]
    NoSuboptimalPair,
    #[error("allocation shape {got:?} does not match ({0}, {1})", .expected.0, .expected.1)]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid allocation: {0}")]
    Allocation(String),
}

/// Which moment order feeds the `U` coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    /// Each pair uses the order maximizing its moment root.
    PerPair,
}

impl Default for KChoice {
    fn default() -> Self {
        KChoice::Fixed(1)
    }
}

/// A distribution over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub weights: Array2<f64>,
    pub navigation_feasible: bool,
}

impl Allocation {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let n = (n_states * n_actions) as f64;
        Self {
            weights: Array2::from_elem((n_states, n_actions), 1.0 / n),
            navigation_feasible: false,
        }
    }

    /// Normalizes nonnegative weights to sum to one.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self, BoundError> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(BoundError::Allocation(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total = weights.sum();
        if !(total > 0.0) {
            return Err(BoundError::Allocation("weights sum to zero".into()));
        }
        Ok(Self {
            weights: weights / total,
            navigation_feasible: false,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.weights.dim()
    }

    /// `|sum w - 1|`, plus the magnitude of any negative entry.
    pub fn simplex_residual(&self) -> f64 {
        let neg = self.weights.iter().fold(0.0f64, |m, &w| m.max(-w));
        (self.weights.sum() - 1.0).abs().max(neg)
    }

    /// Action distribution at `state` obtained by normalizing its row; uniform
    /// when the row carries no mass.
    pub fn state_policy(&self, state: usize) -> Vec<f64> {
        let row = self.weights.row(state);
        let total: f64 = row.iter().map(|w| w.max(0.0)).sum();
        if total > 0.0 {
            row.iter().map(|w| w.max(0.0) / total).collect()
        } else {
            vec![1.0 / row.len() as f64; row.len()]
        }
    }
}

/// `max_s |sum_a w(s,a) - sum_{s',a'} P(s | s',a') w(s',a')|`.
pub fn flow_residual(weights: &Array2<f64>, transition: &Array3<f64>) -> f64 {
    let (ns, na) = weights.dim();
    let mut inflow = vec![0.0; ns];
    for sp in 0..ns {
        for ap in 0..na {
            let w = weights[[sp, ap]];
            for s in 0..ns {
                inflow[s] += transition[[sp, ap, s]] * w;
            }
        }
    }
    (0..ns)
        .map(|s| (weights.row(s).sum() - inflow[s]).abs())
        .fold(0.0, f64::max)
}

/// Per-pair tables the bounds are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub gap: Array2<f64>,
    pub gap_min: f64,
    pub greedy: Vec<usize>,
    pub variance: Array2<f64>,
    pub span: Array2<f64>,
    /// `M^k_sa^(2^(1-k))` at the order selected by `k_choice`.
    pub moment_terms: Array2<f64>,
    pub k_choice: KChoice,
    pub discount: f64,
    pub lambda: f64,
}

impl BoundInputs {
    pub fn from_quantities(
        q: &InstanceQuantities,
        discount: f64,
        lambda: f64,
        k_choice: KChoice,
    ) -> Result<Self, BoundError> {
        check_lambda(lambda)?;
        let moment_terms = match k_choice {
            KChoice::Fixed(k) => {
                if k == 0 || k > q.k_max {
                    return Err(BoundError::MomentOrder { k, k_max: q.k_max });
                }
                Array2::from_shape_fn(q.gap.dim(), |(s, a)| q.moment_term(k, s, a))
            }
            KChoice::PerPair => {
                Array2::from_shape_fn(q.gap.dim(), |(s, a)| q.moment_term(q.k_sup[[s, a]], s, a))
            }
        };
        Ok(Self {
            gap: q.gap.clone(),
            gap_min: q.gap_min,
            greedy: q.greedy.clone(),
            variance: q.variance.clone(),
            span: q.span.clone(),
            moment_terms,
            k_choice,
            discount,
            lambda,
        })
    }

    /// Inputs estimated from a Q-table and a table of `2^k`-th moment estimates
    /// (as learned by stochastic approximation). Greedy actions break ties by
    /// lowest index; the span is not observable this way and is set to zero.
    pub fn from_estimates(
        q_values: &Array2<f64>,
        m_values: &Array2<f64>,
        k: usize,
        discount: f64,
        lambda: f64,
    ) -> Result<Self, BoundError> {
        check_lambda(lambda)?;
        if k == 0 {
            return Err(BoundError::MomentOrder {
                k,
                k_max: usize::MAX,
            });
        }
        let (ns, na) = q_values.dim();
        if m_values.dim() != (ns, na) {
            return Err(BoundError::Shape {
                expected: (ns, na),
                got: m_values.dim(),
            });
        }
        let greedy: Vec<usize> = q_values
            .rows()
            .into_iter()
            .map(|row| crate::dp::argmax(row.iter().copied()))
            .collect();
        let gap = Array2::from_shape_fn((ns, na), |(s, a)| {
            q_values[[s, greedy[s]]] - q_values[[s, a]]
        });
        let gap_min = (0..ns)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .filter(|&(s, a)| a != greedy[s])
            .map(|(s, a)| gap[[s, a]])
            .fold(f64::INFINITY, f64::min);
        let moment_terms = m_values.mapv(|m| moment_power(m, k));
        Ok(Self {
            gap,
            gap_min,
            greedy,
            variance: moment_terms.clone(),
            span: Array2::zeros((ns, na)),
            moment_terms,
            k_choice: KChoice::Fixed(k),
            discount,
            lambda,
        })
    }

    pub fn n_states(&self) -> usize {
        self.gap.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.gap.ncols()
    }

    fn suboptimal_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let na = self.n_actions();
        (0..self.n_states())
            .flat_map(move |s| (0..na).map(move |a| (s, a)))
            .filter(move |&(s, a)| a != self.greedy[s])
    }

    fn reg_gap(&self, s: usize, a: usize) -> Result<f64, BoundError> {
        let d = self.gap[[s, a]].max(0.0) + self.lambda;
        if d > 0.0 {
            Ok(d)
        } else {
            Err(BoundError::DegenerateGap)
        }
    }

    fn reg_gap_min(&self) -> Result<f64, BoundError> {
        if !self.gap_min.is_finite() {
            return Err(BoundError::NoSuboptimalPair);
        }
        let d = self.gap_min.max(0.0) + self.lambda;
        if d > 0.0 {
            Ok(d)
        } else {
            Err(BoundError::DegenerateGap)
        }
    }
}

/// `m^(2^(1-k))` for a nonnegative `2^k`-th moment `m`.
pub fn moment_power(m: f64, k: usize) -> f64 {
    let m = m.max(0.0);
    if k == 1 {
        m
    } else {
        m.powf(0.5f64.powi(k as i32 - 1))
    }
}

fn check_lambda(lambda: f64) -> Result<(), BoundError> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(BoundError::Lambda(lambda))
    }
}

/// `max_i (a_i / w_i + b_i * max_j c_j / w_j)` over flat pair indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxForm {
    pub n_states: usize,
    pub n_actions: usize,
    /// `(pair, a_i, b_i)` for every suboptimal pair.
    pub sub_terms: Vec<(usize, f64, f64)>,
    /// `(pair, c_j)` for every greedy pair.
    pub opt_terms: Vec<(usize, f64)>,
}

impl MinimaxForm {
    fn check(&self, w: &Array2<f64>) -> Result<(), BoundError> {
        if w.dim() != (self.n_states, self.n_actions) {
            return Err(BoundError::Shape {
                expected: (self.n_states, self.n_actions),
                got: w.dim(),
            });
        }
        Ok(())
    }

    fn weight(&self, w: &Array2<f64>, pair: usize) -> f64 {
        w[[pair / self.n_actions, pair % self.n_actions]]
    }

    /// `(j*, max_j c_j / w_j)`, or `None` when some referenced weight is zero.
    fn opt_max(&self, w: &Array2<f64>) -> Option<(usize, f64)> {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, &(pair, c)) in self.opt_terms.iter().enumerate() {
            let wj = self.weight(w, pair);
            if !(wj > 0.0) {
                return None;
            }
            let v = c / wj;
            if v > best.1 {
                best = (j, v);
            }
        }
        Some(best)
    }

    fn sub_max(&self, w: &Array2<f64>, opt: f64) -> Option<(usize, f64)> {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &(pair, a, b)) in self.sub_terms.iter().enumerate() {
            let wi = self.weight(w, pair);
            if !(wi > 0.0) {
                return None;
            }
            let v = a / wi + b * opt;
            if v > best.1 {
                best = (i, v);
            }
        }
        Some(best)
    }

    /// Bound value; `f64::INFINITY` when a referenced pair has zero weight.
    pub fn value(&self, w: &Array2<f64>) -> Result<f64, BoundError> {
        self.check(w)?;
        Ok(self
            .opt_max(w)
            .and_then(|(_, opt)| self.sub_max(w, opt))
            .map_or(f64::INFINITY, |(_, v)| v))
    }

    /// Gradient of the active term (first maximizer on ties). `None` at
    /// points where the bound is infinite.
    pub fn subgradient(&self, w: &Array2<f64>) -> Option<Array2<f64>> {
        let (j, opt) = self.opt_max(w)?;
        let (i, _) = self.sub_max(w, opt)?;
        let mut g = Array2::zeros((self.n_states, self.n_actions));
        let (pi, a, b) = self.sub_terms[i];
        let wi = self.weight(w, pi);
        g[[pi / self.n_actions, pi % self.n_actions]] -= a / (wi * wi);
        let (pj, c) = self.opt_terms[j];
        let wj = self.weight(w, pj);
        g[[pj / self.n_actions, pj % self.n_actions]] -= b * c / (wj * wj);
        Some(g)
    }
}

fn opt_pairs(inputs: &BoundInputs) -> impl Iterator<Item = (usize, usize)> + '_ {
    inputs.greedy.iter().copied().enumerate()
}

fn flat(inputs: &BoundInputs, s: usize, a: usize) -> usize {
    s * inputs.n_actions() + a
}

/// Coefficients of `U0(w)`.
pub fn u0_form(inputs: &BoundInputs) -> Result<MinimaxForm, BoundError> {
    let gamma = inputs.discount;
    let dmin = inputs.reg_gap_min()?;
    let one_minus = 1.0 - gamma;
    let mut sub_terms = Vec::new();
    for (s, a) in inputs.suboptimal_pairs() {
        let d = inputs.reg_gap(s, a)?;
        let var = inputs.variance[[s, a]];
        let md = inputs.span[[s, a]];
        let h = 2.0 / (d * d)
            + f64::max(
                16.0 * var / (d * d),
                6.0 * md.powf(4.0 / 3.0) / d.powf(4.0 / 3.0),
            );
        sub_terms.push((flat(inputs, s, a), h, 1.0));
    }
    let max_var = opt_pairs(inputs)
        .map(|(s, a)| inputs.variance[[s, a]])
        .fold(0.0, f64::max);
    let max_md = opt_pairs(inputs)
        .map(|(s, a)| inputs.span[[s, a]])
        .fold(0.0, f64::max);
    let d2 = dmin * dmin;
    let h_star = 2.0 / (d2 * one_minus.powi(2))
        + f64::min(
            27.0 / (d2 * one_minus.powi(3)),
            f64::max(
                16.0 * max_var / (d2 * one_minus.powi(2)),
                6.0 * max_md.powf(4.0 / 3.0) / (dmin.powf(4.0 / 3.0) * one_minus.powf(4.0 / 3.0)),
            ),
        );
    let opt_terms = opt_pairs(inputs)
        .map(|(s, a)| (flat(inputs, s, a), h_star))
        .collect();
    finish(inputs, sub_terms, opt_terms)
}

fn finish(
    inputs: &BoundInputs,
    sub_terms: Vec<(usize, f64, f64)>,
    opt_terms: Vec<(usize, f64)>,
) -> Result<MinimaxForm, BoundError> {
    if sub_terms.is_empty() {
        return Err(BoundError::NoSuboptimalPair);
    }
    Ok(MinimaxForm {
        n_states: inputs.n_states(),
        n_actions: inputs.n_actions(),
        sub_terms,
        opt_terms,
    })
}

fn c_coefficient(gamma: f64, x: f64) -> f64 {
    f64::max(4.0, 16.0 * gamma * gamma * GOLDEN_RATIO * GOLDEN_RATIO * x)
}

fn numerator(x: f64) -> f64 {
    2.0 + 8.0 * GOLDEN_RATIO * GOLDEN_RATIO * x
}

fn u_form_with(inputs: &BoundInputs, x: &Array2<f64>) -> Result<MinimaxForm, BoundError> {
    let gamma = inputs.discount;
    let ratio = ((1.0 + gamma) / (1.0 - gamma)).powi(2);
    let mut sub_terms = Vec::new();
    for (s, a) in inputs.suboptimal_pairs() {
        let d2 = inputs.reg_gap(s, a)?.powi(2);
        sub_terms.push((flat(inputs, s, a), numerator(x[[s, a]]) / d2, ratio / d2));
    }
    let opt_terms = opt_pairs(inputs)
        .map(|(s, a)| (flat(inputs, s, a), c_coefficient(gamma, x[[s, a]])))
        .collect();
    finish(inputs, sub_terms, opt_terms)
}

/// Coefficients of `U(w)` with the moment order of `inputs.k_choice`.
pub fn u_form(inputs: &BoundInputs) -> Result<MinimaxForm, BoundError> {
    u_form_with(inputs, &inputs.moment_terms)
}

/// Coefficients of `U1(w)`: `U` with the variance in place of the moment terms.
pub fn u1_form(inputs: &BoundInputs) -> Result<MinimaxForm, BoundError> {
    u_form_with(inputs, &inputs.variance)
}

/// `(s, a, H(s,a))` for each suboptimal pair.
type PairCoefficients = Vec<(usize, usize, f64)>;

/// `H(s,a)` for suboptimal pairs and the common `H` of the greedy pairs.
fn tilde_coefficients(inputs: &BoundInputs) -> Result<(PairCoefficients, f64), BoundError> {
    let gamma = inputs.discount;
    let mut per_pair = Vec::new();
    for (s, a) in inputs.suboptimal_pairs() {
        let d = inputs.reg_gap(s, a)?;
        per_pair.push((s, a, numerator(inputs.moment_terms[[s, a]]) / (d * d)));
    }
    if per_pair.is_empty() {
        return Err(BoundError::NoSuboptimalPair);
    }
    let dmin = inputs.reg_gap_min()?;
    let max_c = opt_pairs(inputs)
        .map(|(s, a)| c_coefficient(gamma, inputs.moment_terms[[s, a]]))
        .fold(0.0, f64::max);
    let h = max_c * (1.0 + gamma).powi(2) / (dmin * dmin * (1.0 - gamma).powi(2));
    Ok((per_pair, h))
}

/// Coefficients of `Ũ(w) = max_sub H(s,a)/w(s,a) + H / min_s w(s, pi*(s))`.
pub fn tilde_u_form(inputs: &BoundInputs) -> Result<MinimaxForm, BoundError> {
    let (per_pair, h) = tilde_coefficients(inputs)?;
    let sub_terms = per_pair
        .into_iter()
        .map(|(s, a, hs)| (flat(inputs, s, a), hs, 1.0))
        .collect();
    let opt_terms = opt_pairs(inputs)
        .map(|(s, a)| (flat(inputs, s, a), h))
        .collect();
    finish(inputs, sub_terms, opt_terms)
}

fn eval(form: Result<MinimaxForm, BoundError>, omega: &Allocation) -> Result<f64, BoundError> {
    form?.value(&omega.weights)
}

pub fn u0(inputs: &BoundInputs, omega: &Allocation) -> Result<f64, BoundError> {
    eval(u0_form(inputs), omega)
}

pub fn u(inputs: &BoundInputs, omega: &Allocation) -> Result<f64, BoundError> {
    eval(u_form(inputs), omega)
}

pub fn u1(inputs: &BoundInputs, omega: &Allocation) -> Result<f64, BoundError> {
    eval(u1_form(inputs), omega)
}

pub fn tilde_u(inputs: &BoundInputs, omega: &Allocation) -> Result<f64, BoundError> {
    eval(tilde_u_form(inputs), omega)
}

/// Minimizer of `Ũ` over the simplex: suboptimal pairs get mass proportional
/// to `H(s,a)`, greedy pairs to `sqrt(H * sum H(s,a) / |S|)`.
pub fn closed_form_allocation(inputs: &BoundInputs) -> Result<Allocation, BoundError> {
    let (per_pair, h) = tilde_coefficients(inputs)?;
    let ns = inputs.n_states();
    let total: f64 = per_pair.iter().map(|p| p.2).sum();
    let opt_weight = (h * total / ns as f64).sqrt();
    let mut weights = Array2::zeros((ns, inputs.n_actions()));
    for (s, a, hs) in per_pair {
        weights[[s, a]] = hs;
    }
    for (s, a) in opt_pairs(inputs) {
        weights[[s, a]] = opt_weight;
    }
    Allocation::from_weights(weights)
}

/// `min_w Ũ(w) = (sqrt(sum H(s,a)) + sqrt(|S| H))^2`.
pub fn closed_form_value(inputs: &BoundInputs) -> Result<f64, BoundError> {
    let (per_pair, h) = tilde_coefficients(inputs)?;
    let total: f64 = per_pair.iter().map(|p| p.2).sum();
    let ns = inputs.n_states() as f64;
    Ok((total.sqrt() + (ns * h).sqrt()).powi(2))
}
