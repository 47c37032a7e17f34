//! Brute-force reference computations used to check the main code paths.
//!
//! Nothing here calls into the forward pass, gradient, LP or weighting code it is
//! meant to check; every routine recomputes from raw parameters with plain loops.

use crate::error::{Error, Result};
use crate::lp::{AbsObjective, LpProblem};
use crate::tensor::{GradientVector, MlpModel, Sample};

/// Largest decision dimension [`grid_min`] will enumerate.
pub const GRID_MAX_DIM: usize = 4;

/// Softmax probabilities recomputed index by index from the raw parameter slices.
pub fn reference_probs(model: &MlpModel, features: &[f64]) -> Vec<f64> {
    reference_probs_with(model, model.params(), features)
}

fn reference_probs_with(model: &MlpModel, params: &[f64], x: &[f64]) -> Vec<f64> {
    let din = model.input_dim();
    let h = model.hidden_dim();
    let c = model.num_classes();
    let w1 = &params[0..din * h];
    let b1 = &params[din * h..din * h + h];
    let w2 = &params[din * h + h..din * h + h + h * c];
    let b2 = &params[din * h + h + h * c..];

    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut s = b1[j];
        for i in 0..din {
            s += x[i] * w1[i * h + j];
        }
        hidden[j] = if s > 0.0 { s } else { 0.0 };
    }
    let mut logits = vec![0.0; c];
    for k in 0..c {
        let mut s = b2[k];
        for j in 0..h {
            s += hidden[j] * w2[j * c + k];
        }
        logits[k] = s;
    }
    let mut m = logits[0];
    for &l in &logits {
        if l > m {
            m = l;
        }
    }
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        z += *l;
    }
    logits.into_iter().map(|e| e / z).collect()
}

fn reference_loss_with(model: &MlpModel, params: &[f64], samples: &[Sample]) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let p = reference_probs_with(model, params, &s.features);
        total += -(p[s.label].max(1e-300)).ln();
    }
    total / samples.len() as f64
}

/// Mean cross-entropy of `model` on `samples`, recomputed independently.
pub fn reference_mean_loss(model: &MlpModel, samples: &[Sample]) -> f64 {
    reference_loss_with(model, model.params(), samples)
}

/// Central differences of the mean loss over the last-layer parameters.
pub fn finite_diff_grad(model: &MlpModel, batch: &[Sample], step: f64) -> Result<GradientVector> {
    if step <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Empty("finite differences on an empty batch".into()));
    }
    let offset = model.param_count() - model.last_layer_len();
    let mut params = model.params().to_vec();
    let mut out = Vec::with_capacity(model.last_layer_len());
    for idx in offset..params.len() {
        out.push(central_difference(model, &mut params, batch, idx, step));
    }
    Ok(GradientVector::raw(out))
}

/// Central differences over every parameter.
pub fn finite_diff_full_grad(model: &MlpModel, batch: &[Sample], step: f64) -> Vec<f64> {
    let mut params = model.params().to_vec();
    (0..params.len())
        .map(|idx| central_difference(model, &mut params, batch, idx, step))
        .collect()
}

fn central_difference(
    model: &MlpModel,
    params: &mut [f64],
    batch: &[Sample],
    idx: usize,
    step: f64,
) -> f64 {
    let orig = params[idx];
    params[idx] = orig + step;
    let plus = reference_loss_with(model, params, batch);
    params[idx] = orig - step;
    let minus = reference_loss_with(model, params, batch);
    params[idx] = orig;
    (plus - minus) / (2.0 * step)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute error when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

/// Exhaustive minimization of `objective` over `{0, step, …, 1}^n`.
///
/// Ties keep the first point visited, so a constant objective returns the origin.
pub fn grid_min<F>(objective: F, n: usize, step: f64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    if n > GRID_MAX_DIM {
        return Err(Error::Config(format!(
            "grid search over {n} dimensions refused (limit {GRID_MAX_DIM})"
        )));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!(
            "grid step must be in (0, 1], got {step}"
        )));
    }
    let ticks = (1.0 / step).round() as usize;
    let coord = |k: usize| ((k as f64) * step).min(1.0);
    let mut idx = vec![0usize; n];
    let mut point = vec![0.0; n];
    let mut best_point = point.clone();
    let mut best = objective(&point);
    loop {
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] <= ticks {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
        for (p, &k) in point.iter_mut().zip(&idx) {
            *p = coord(k);
        }
        let v = objective(&point);
        if v < best {
            best = v;
            best_point.copy_from_slice(&point);
        }
    }
    Ok((best_point, best))
}

/// Value of `Σ αᵢ|aᵢ − bᵢᵀw| + Σ βⱼ(cⱼ − dⱼᵀw)`, evaluated term by term.
pub fn eval_abs_objective(obj: &AbsObjective, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in &obj.abs_terms {
        let mut r = t.constant;
        for i in 0..w.len() {
            r -= t.coeffs[i] * w[i];
        }
        total += t.weight * r.abs();
    }
    for t in &obj.lin_terms {
        let mut r = t.constant;
        for i in 0..w.len() {
            r -= t.coeffs[i] * w[i];
        }
        total += t.weight * r;
    }
    total
}

/// Lipschitz constant (w.r.t. the Euclidean norm) of the objective: `Σ|αᵢ|‖bᵢ‖ + ‖Σβⱼdⱼ‖`.
pub fn lipschitz_constant(obj: &AbsObjective) -> f64 {
    let n = obj.num_vars;
    let mut abs_part = 0.0;
    for t in &obj.abs_terms {
        abs_part += t.weight.abs() * t.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    }
    let mut lin = vec![0.0; n];
    for t in &obj.lin_terms {
        for i in 0..n {
            lin[i] += t.weight * t.coeffs[i];
        }
    }
    abs_part + lin.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Tolerance within which a grid minimum must match the true minimum: `L · step · √n`.
pub fn grid_gap_bound(obj: &AbsObjective, step: f64) -> f64 {
    lipschitz_constant(obj) * step * (obj.num_vars as f64).sqrt()
}

/// Minimum objective over all basic solutions of a box-bounded equality LP.
///
/// Every choice of `m` basic columns and every lower/upper assignment of the rest is
/// tried; `None` when no vertex is feasible. All bounds must be finite.
pub fn vertex_enum_min(p: &LpProblem) -> Option<f64> {
    let n = p.objective.len();
    let m = p.constraints.len();
    assert!(p.lower.iter().chain(&p.upper).all(|b| b.is_finite()));
    let mut best: Option<f64> = None;
    let mut chosen = Vec::with_capacity(m);
    for_each_subset(n, m, 0, &mut chosen, &mut |basic| {
        let nonbasic: Vec<usize> = (0..n).filter(|j| !basic.contains(j)).collect();
        for mask in 0u64..(1u64 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (k, &j) in nonbasic.iter().enumerate() {
                x[j] = if mask >> k & 1 == 1 {
                    p.upper[j]
                } else {
                    p.lower[j]
                };
            }
            let mut mat = vec![vec![0.0; m + 1]; m];
            for r in 0..m {
                let mut rhs = p.rhs[r];
                for &j in &nonbasic {
                    rhs -= p.constraints[r][j] * x[j];
                }
                for (c, &j) in basic.iter().enumerate() {
                    mat[r][c] = p.constraints[r][j];
                }
                mat[r][m] = rhs;
            }
            let Some(sol) = gauss_solve(mat) else {
                continue;
            };
            let mut feasible = true;
            for (c, &j) in basic.iter().enumerate() {
                if sol[c] < p.lower[j] - 1e-9 || sol[c] > p.upper[j] + 1e-9 {
                    feasible = false;
                }
                x[j] = sol[c];
            }
            if feasible {
                let mut v = p.objective_offset;
                for j in 0..n {
                    v += p.objective[j] * x[j];
                }
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
    });
    best
}

fn for_each_subset(
    n: usize,
    k: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for j in start..n {
        chosen.push(j);
        for_each_subset(n, k, j + 1, chosen, f);
        chosen.pop();
    }
}

/// Solves an augmented `m × (m+1)` system; `None` if (numerically) singular.
fn gauss_solve(mut mat: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = mat.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&a, &b| mat[a][col].abs().total_cmp(&mat[b][col].abs()))?;
        if mat[piv][col].abs() < 1e-10 {
            return None;
        }
        mat.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = mat[r][col] / mat[col][col];
                for c in col..=m {
                    mat[r][c] -= f * mat[col][c];
                }
            }
        }
    }
    Some((0..m).map(|r| mat[r][m] / mat[r][r]).collect())
}

/// Loss of `group` after one plain gradient step of size `eta` on the last layer,
/// using the gradient `(1/|task|) Σ wᵢ ∇ℓ(dᵢ)`.
pub fn exact_loss_after_step(
    model: &MlpModel,
    group: &[Sample],
    task: &[Sample],
    weights: &[f64],
    eta: f64,
) -> Result<f64> {
    if task.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} task samples but {} weights",
            task.len(),
            weights.len()
        )));
    }
    if group.is_empty() || task.is_empty() {
        return Err(Error::Empty("group and task must be nonempty".into()));
    }
    let h = model.hidden_dim();
    let c = model.num_classes();
    let din = model.input_dim();
    let offset = din * h + h;
    let params = model.params();
    let w1 = &params[0..din * h];
    let b1 = &params[din * h..offset];

    let mut grad = vec![0.0; h * c + c];
    for (s, &wt) in task.iter().zip(weights) {
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            let mut v = b1[j];
            for i in 0..din {
                v += s.features[i] * w1[i * h + j];
            }
            hidden[j] = v.max(0.0);
        }
        let p = reference_probs(model, &s.features);
        for k in 0..c {
            let delta = p[k] - if k == s.label { 1.0 } else { 0.0 };
            for j in 0..h {
                grad[j * c + k] += wt * hidden[j] * delta;
            }
            grad[h * c + k] += wt * delta;
        }
    }
    let scale = eta / task.len() as f64;
    let mut stepped = params.to_vec();
    for (p, g) in stepped[offset..].iter_mut().zip(&grad) {
        *p -= scale * g;
    }
    Ok(reference_loss_with(model, &stepped, group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{AbsTerm, LinTerm};

    #[test]
    fn constant_objective_returns_origin() {
        let (w, v) = grid_min(|_| 3.0, 2, 0.1).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        assert_eq!(v, 3.0);
    }

    #[test]
    fn grid_finds_interior_kink() {
        let (w, v) = grid_min(|w| (0.5 - w[0]).abs(), 1, 0.01).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn grid_refuses_large_dimension() {
        assert!(grid_min(|_| 0.0, 5, 0.5).is_err());
    }

    #[test]
    fn abs_objective_evaluation() {
        let obj = AbsObjective {
            num_vars: 1,
            abs_terms: vec![AbsTerm::new(1.0, vec![1.0], 1.0)],
            lin_terms: vec![LinTerm::new(1.0, vec![1.0], 1.0)],
        };
        assert_eq!(eval_abs_objective(&obj, &[0.0]), 2.0);
        assert_eq!(eval_abs_objective(&obj, &[1.0]), 0.0);
        assert_eq!(lipschitz_constant(&obj), 2.0);
    }

    #[test]
    fn zero_step_leaves_loss_unchanged() {
        let model = MlpModel::from_params(1, 1, 2, vec![1.0, 0.0, 0.5, -0.5, 0.1, 0.0]).unwrap();
        let group = vec![Sample::new(vec![1.0], 0, None)];
        let task = vec![Sample::new(vec![2.0], 1, None)];
        let before = reference_mean_loss(&model, &group);
        let after = exact_loss_after_step(&model, &group, &task, &[1.0], 0.0).unwrap();
        assert_eq!(before, after);
    }
}
