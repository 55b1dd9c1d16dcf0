use ndarray::Array2;

use super::{mirror_step, step_scale, Minimization, Objective, SolverError, StepSchedule};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &Array2<f64>) -> Array2<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

/// Exponentiated-gradient descent from the uniform allocation. Returns the
/// best iterate seen.
pub fn minimize_on_simplex(
    objective: &dyn Objective,
    iters: usize,
    schedule: StepSchedule,
) -> Result<Minimization, SolverError> {
    let (ns, na) = objective.dims();
    let mut w = Array2::from_elem((ns, na), 1.0 / (ns * na) as f64);
    let mut best_value = objective.value(&w);
    if !best_value.is_finite() {
        return Err(SolverError::InfiniteStart);
    }
    let mut best = w.clone();
    let mut trace = Vec::with_capacity(iters);
    let mut scale = None;
    for t in 1..=iters {
        let Some(g) = objective.subgradient(&w) else {
            break;
        };
        let c = *scale.get_or_insert_with(|| step_scale(schedule, &w, &g));
        w = mirror_step(&w, &g, c / (t as f64).sqrt());
        let v = objective.value(&w);
        if v < best_value {
            best_value = v;
            best.assign(&w);
        }
        trace.push(best_value);
    }
    Ok(Minimization {
        weights: best,
        value: best_value,
        trace,
    })
}
