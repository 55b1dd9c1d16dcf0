use std::io::Write;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bounds::{u0_form, u1_form, u_form, BoundInputs, KChoice, MinimaxForm};
use crate::dp::{value_iteration, DEFAULT_MAX_ITER};
use crate::env::{EnvFamily, EnvSpec};
use crate::mdp::TabularMdp;
use crate::quantities::compute_instance_quantities;
use crate::solver::{
    minimize_on_simplex, minimize_with_navigation, NavigationProjector, Objective, StepSchedule,
    DEFAULT_NAVIGATION_ITERS, DEFAULT_SIMPLEX_ITERS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityRow {
    pub size: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub span_min: f64,
    pub span_max: f64,
    pub var_min: f64,
    pub var_max: f64,
    pub moment_root_max: f64,
}

fn min_max<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Table row of one MDP.
pub fn quantities_for_mdp(
    mdp: &TabularMdp,
    size: usize,
    k_max: usize,
) -> Result<QuantityRow, HarnessError> {
    let sol = value_iteration(mdp, 1e-12, DEFAULT_MAX_ITER)?;
    let q = compute_instance_quantities(mdp, &sol, k_max)?;
    let (span_min, span_max) = min_max(q.span.iter());
    let (var_min, var_max) = min_max(q.variance.iter());
    Ok(QuantityRow {
        size,
        delta_min: q.gap_min,
        delta_max: min_max(q.gap.iter()).1,
        span_min,
        span_max,
        var_min,
        var_max,
        moment_root_max: q.max_moment_root(),
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One row per size. Random MDP rows are column-wise medians over `draws`
/// instances seeded `template.seed, template.seed + 1, ...`.
pub fn quantities_report(
    template: &EnvSpec,
    sizes: &[usize],
    discount: f64,
    k_max: usize,
    draws: usize,
) -> Result<Vec<QuantityRow>, HarnessError> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let specs: Vec<EnvSpec> = match template.family {
            EnvFamily::Random => (0..draws.max(1) as u64)
                .map(|i| EnvSpec {
                    size,
                    seed: template.seed + i,
                    ..template.clone()
                })
                .collect(),
            _ => vec![EnvSpec {
                size,
                ..template.clone()
            }],
        };
        let per_draw = specs
            .iter()
            .map(|spec| quantities_for_mdp(&spec.build(discount)?, size, k_max))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let col = |f: fn(&QuantityRow) -> f64| median(per_draw.iter().map(f).collect());
        rows.push(QuantityRow {
            size,
            delta_min: col(|r| r.delta_min),
            delta_max: col(|r| r.delta_max),
            span_min: col(|r| r.span_min),
            span_max: col(|r| r.span_max),
            var_min: col(|r| r.var_min),
            var_max: col(|r| r.var_max),
            moment_root_max: col(|r| r.moment_root_max),
        });
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quantities_csv(rows: &[QuantityRow], out: impl Write) -> Result<(), HarnessError> {
    write_csv(rows, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub size: usize,
    /// `omega_star`, `omega0_star` or `omega1_star`: the minimizer of `U`,
    /// `U0` or `U1` respectively.
    pub alloc: String,
    /// `U0`, `U` or `U1`.
    pub eval_bound: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub rows: Vec<BoundRow>,
    /// Sizes where `U(omega*)` exceeds `U(omega0*)` or `U(omega1*)`.
    pub violations: Vec<String>,
}

impl BoundsReport {
    pub fn value(&self, size: usize, alloc: &str, eval_bound: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.size == size && r.alloc == alloc && r.eval_bound == eval_bound)
            .map(|r| r.value)
    }
}

pub const ALLOCATIONS: [&str; 3] = ["omega_star", "omega0_star", "omega1_star"];
pub const EVAL_BOUNDS: [&str; 3] = ["U0", "U", "U1"];

fn minimize(
    form: &MinimaxForm,
    projector: Option<&NavigationProjector>,
) -> Result<ndarray::Array2<f64>, HarnessError> {
    let out = match projector {
        Some(p) => {
            minimize_with_navigation(form, p, DEFAULT_NAVIGATION_ITERS, StepSchedule::default())?
        }
        None => minimize_on_simplex(form, DEFAULT_SIMPLEX_ITERS, StepSchedule::default())?,
    };
    Ok(out.weights)
}

/// Minimizes `U` (per-pair moment order), `U0` and `U1` at `lambda = 0`, then
/// evaluates each minimizer under all three bounds.
pub fn bounds_compare(
    template: &EnvSpec,
    sizes: &[usize],
    discount: f64,
    navigation: bool,
) -> Result<BoundsReport, HarnessError> {
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for &size in sizes {
        let spec = EnvSpec {
            size,
            ..template.clone()
        };
        let mdp = spec.build(discount)?;
        let sol = value_iteration(&mdp, 1e-12, DEFAULT_MAX_ITER)?;
        let q = compute_instance_quantities(&mdp, &sol, crate::quantities::DEFAULT_K_MAX)?;
        let inputs = BoundInputs::from_quantities(&q, discount, 0.0, KChoice::PerPair)?;
        let forms = [u_form(&inputs)?, u0_form(&inputs)?, u1_form(&inputs)?];
        let projector = if navigation {
            Some(NavigationProjector::for_mdp(&mdp)?)
        } else {
            None
        };
        let minimizers = forms
            .iter()
            .map(|f| minimize(f, projector.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let evaluators = [&forms[1], &forms[0], &forms[2]];
        for (alloc, w) in ALLOCATIONS.iter().zip(&minimizers) {
            for (bound, form) in EVAL_BOUNDS.iter().zip(evaluators) {
                rows.push(BoundRow {
                    size,
                    alloc: alloc.to_string(),
                    eval_bound: bound.to_string(),
                    value: Objective::value(form, w),
                });
            }
        }
        let u = |w| Objective::value(&forms[0], w);
        let best = u(&minimizers[0]);
        for (name, w) in [
            ("omega0_star", &minimizers[1]),
            ("omega1_star", &minimizers[2]),
        ] {
            let other = u(w);
            if best > other * (1.0 + 1e-9) {
                let msg =
                    format!("size {size}: U(omega_star) = {best:e} exceeds U({name}) = {other:e}");
                log::warn!("{msg}");
                violations.push(msg);
            }
        }
    }
    Ok(BoundsReport { rows, violations })
}

pub fn write_bounds_csv(rows: &[BoundRow], out: impl Write) -> Result<(), HarnessError> {
    write_csv(rows, out)
}
