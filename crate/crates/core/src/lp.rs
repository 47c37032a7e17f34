//! Linear programs with box-bounded variables.
//!
//! [`build_abs_lp`] turns a sum of absolute values of affine functions plus affine
//! terms into a linear program by splitting each absolute value into a pair of
//! nonnegative slacks. [`solve_lp`] is a dense bounded-variable primal simplex
//! (two phases, Dantzig pricing, Bland's rule once the objective stalls).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
/// Consecutive non-improving pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

/// `weight · |constant − coeffsᵀw|`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsTerm {
    pub constant: f64,
    pub coeffs: Vec<f64>,
    pub weight: f64,
}

impl AbsTerm {
    pub fn new(constant: f64, coeffs: Vec<f64>, weight: f64) -> Self {
        Self {
            constant,
            coeffs,
            weight,
        }
    }
}

/// `weight · (constant − coeffsᵀw)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinTerm {
    pub constant: f64,
    pub coeffs: Vec<f64>,
    pub weight: f64,
}

impl LinTerm {
    pub fn new(constant: f64, coeffs: Vec<f64>, weight: f64) -> Self {
        Self {
            constant,
            coeffs,
            weight,
        }
    }
}

/// Objective `Σ αᵢ|aᵢ − bᵢᵀw| + Σ βⱼ(cⱼ − dⱼᵀw)` over `w ∈ [0,1]^num_vars`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbsObjective {
    pub num_vars: usize,
    pub abs_terms: Vec<AbsTerm>,
    pub lin_terms: Vec<LinTerm>,
}

impl AbsObjective {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad_abs = self
            .abs_terms
            .iter()
            .position(|t| t.coeffs.len() != self.num_vars);
        let bad_lin = self
            .lin_terms
            .iter()
            .position(|t| t.coeffs.len() != self.num_vars);
        if let Some(i) = bad_abs {
            return Err(Error::Dimension(format!(
                "abs term {i} has {} coefficients, expected {}",
                self.abs_terms[i].coeffs.len(),
                self.num_vars
            )));
        }
        if let Some(i) = bad_lin {
            return Err(Error::Dimension(format!(
                "linear term {i} has {} coefficients, expected {}",
                self.lin_terms[i].coeffs.len(),
                self.num_vars
            )));
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let affine = |constant: f64, coeffs: &[f64]| {
            constant - coeffs.iter().zip(w).map(|(c, x)| c * x).sum::<f64>()
        };
        let abs: f64 = self
            .abs_terms
            .iter()
            .map(|t| t.weight * affine(t.constant, &t.coeffs).abs())
            .sum();
        let lin: f64 = self
            .lin_terms
            .iter()
            .map(|t| t.weight * affine(t.constant, &t.coeffs))
            .sum();
        abs + lin
    }
}

/// `min cᵀx + offset` subject to `Ax = b`, `lower ≤ x ≤ upper`.
///
/// Bounds may be infinite. Rows of `constraints` are dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// The first `decision_vars` columns are the decision variables; the rest are auxiliary.
    pub decision_vars: usize,
    pub var_names: Vec<String>,
}

impl LpProblem {
    /// Empty problem over `n` variables boxed in `[0, 1]`.
    pub fn unit_box(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            objective_offset: 0.0,
            constraints: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            decision_vars: n,
            var_names: (0..n).map(|i| format!("w{i}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add_equality(&mut self, row: Vec<f64>, rhs: f64) {
        self.constraints.push(row);
        self.rhs.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "{n} objective coefficients but {}/{} bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.rhs.len() != self.constraints.len() {
            return Err(Error::Dimension(format!(
                "{} constraint rows but {} right-hand sides",
                self.constraints.len(),
                self.rhs.len()
            )));
        }
        if let Some(i) = self.constraints.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "constraint {i} has {} coefficients, expected {n}",
                self.constraints[i].len()
            )));
        }
        if self.decision_vars > n {
            return Err(Error::Dimension(
                "more decision variables than columns".into(),
            ));
        }
        let finite = self
            .objective
            .iter()
            .chain(&self.rhs)
            .all(|v| v.is_finite())
            && self.constraints.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("LP coefficients must be finite".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::Config(format!(
                    "variable {j} has empty bound range [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }

    /// Problem text in CPLEX LP format, for cross-checking with external solvers.
    pub fn to_lp_format(&self) -> String {
        let name = |j: usize| {
            self.var_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("x{j}"))
        };
        let linear = |coeffs: &[f64]| {
            let mut s = String::new();
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let sign = if c < 0.0 { "-" } else { "+" };
                let _ = write!(s, " {sign} {:e} {}", c.abs(), name(j));
            }
            if s.is_empty() {
                s.push_str(" 0 ");
                s.push_str(&name(0));
            }
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "\\ objective offset {:e}", self.objective_offset);
        let _ = writeln!(out, "Minimize");
        let _ = writeln!(out, " obj:{}", linear(&self.objective));
        let _ = writeln!(out, "Subject To");
        for (i, (row, rhs)) in self.constraints.iter().zip(&self.rhs).enumerate() {
            let _ = writeln!(out, " c{i}:{} = {:e}", linear(row), rhs);
        }
        let _ = writeln!(out, "Bounds");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => {
                    let _ = writeln!(out, " {:e} <= {} <= {:e}", lo, name(j), hi);
                }
                (true, false) => {
                    let _ = writeln!(out, " {} >= {:e}", name(j), lo);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {} <= {:e}", name(j), hi);
                }
                (false, false) => {
                    let _ = writeln!(out, " {} free", name(j));
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Full primal vector (decision variables first). Meaningful only when optimal.
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    decision_vars: usize,
}

impl LpSolution {
    /// The decision-variable block of the primal vector.
    pub fn decision(&self) -> &[f64] {
        &self.x[..self.decision_vars]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Abs-term slack pair `(y⁺, y⁻)` column indices in a problem built by [`build_abs_lp`].
pub fn slack_pair(num_decision: usize, term: usize) -> (usize, usize) {
    (num_decision + 2 * term, num_decision + 2 * term + 1)
}

/// One slack pair and one equality `y⁺ − y⁻ + bᵢᵀw = aᵢ` per absolute-value term.
///
/// The objective is `Σ αᵢ(y⁺ᵢ + y⁻ᵢ) + Σ βⱼ(cⱼ − dⱼᵀw)`. Complementarity `y⁺y⁻ = 0`
/// is not encoded; a minimizer never needs both slacks positive.
pub fn build_abs_lp(obj: &AbsObjective) -> Result<LpProblem> {
    obj.validate()?;
    let n = obj.num_vars;
    let k = obj.abs_terms.len();
    let total = n + 2 * k;

    let mut objective = vec![0.0; total];
    let mut offset = 0.0;
    for t in &obj.lin_terms {
        offset += t.weight * t.constant;
        for (o, d) in objective.iter_mut().zip(&t.coeffs) {
            *o -= t.weight * d;
        }
    }
    let mut problem = LpProblem {
        objective,
        objective_offset: offset,
        constraints: Vec::with_capacity(k),
        rhs: Vec::with_capacity(k),
        lower: vec![0.0; total],
        upper: vec![1.0; n]
            .into_iter()
            .chain(std::iter::repeat_n(f64::INFINITY, 2 * k))
            .collect(),
        decision_vars: n,
        var_names: (0..n).map(|i| format!("w{i}")).collect(),
    };
    for (i, t) in obj.abs_terms.iter().enumerate() {
        let (plus, minus) = slack_pair(n, i);
        problem.objective[plus] = t.weight;
        problem.objective[minus] = t.weight;
        problem.var_names.push(format!("yp{i}"));
        problem.var_names.push(format!("ym{i}"));
        let mut row = vec![0.0; total];
        row[..n].copy_from_slice(&t.coeffs);
        row[plus] = 1.0;
        row[minus] = -1.0;
        problem.add_equality(row, t.constant);
    }
    Ok(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pricing {
    Dantzig,
    Bland,
}

struct Simplex<'a> {
    a: &'a [Vec<f64>],
    b: &'a [f64],
    m: usize,
    /// Structural columns; artificial column `n + i` is `art_sign[i] · eᵢ`.
    n: usize,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn column_entry(&self, j: usize, row: usize) -> f64 {
        if j < self.n {
            self.a[row][j]
        } else if j - self.n == row {
            self.art_sign[row]
        } else {
            0.0
        }
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.m).map(|r| self.column_entry(j, r)).collect()
    }

    /// Dense inverse of the current basis matrix (Gauss-Jordan, partial pivoting).
    fn basis_inverse(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.m;
        let mut mat: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                self.basis
                    .iter()
                    .map(|&j| self.column_entry(j, r))
                    .collect()
            })
            .collect();
        let mut inv: Vec<Vec<f64>> = (0..m)
            .map(|r| (0..m).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        for col in 0..m {
            let mut piv = col;
            for r in col + 1..m {
                if mat[r][col].abs() > mat[piv][col].abs() {
                    piv = r;
                }
            }
            if mat[piv][col].abs() < 1e-13 {
                return Err(Error::Solver(format!(
                    "singular basis after {} iterations",
                    self.iterations
                )));
            }
            mat.swap(col, piv);
            inv.swap(col, piv);
            let p = mat[col][col];
            for c in 0..m {
                mat[col][c] /= p;
                inv[col][c] /= p;
            }
            for r in 0..m {
                if r != col {
                    let f = mat[r][col];
                    if f != 0.0 {
                        for c in 0..m {
                            mat[r][c] -= f * mat[col][c];
                            inv[r][c] -= f * inv[col][c];
                        }
                    }
                }
            }
        }
        Ok(inv)
    }

    /// Recomputes basic values from the nonbasic ones.
    fn refresh_basic(&mut self, inv: &[Vec<f64>]) {
        let mut resid = self.b.to_vec();
        for j in 0..self.n + self.m {
            if self.is_basic[j] || self.x[j] == 0.0 {
                continue;
            }
            for (r, res) in resid.iter_mut().enumerate() {
                *res -= self.column_entry(j, r) * self.x[j];
            }
        }
        for (i, &j) in self.basis.iter().enumerate() {
            self.x[j] = inv[i].iter().zip(&resid).map(|(a, b)| a * b).sum();
        }
    }

    fn run_phase(&mut self, cost: &[f64]) -> Result<PhaseOutcome> {
        let total = self.n + self.m;
        let mut pricing = Pricing::Dantzig;
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::Solver(format!(
                    "iteration cap {} reached ({} rows, {} columns, pricing {:?})",
                    self.max_iterations, self.m, self.n, pricing
                )));
            }
            let inv = self.basis_inverse()?;
            self.refresh_basic(&inv);

            let obj: f64 = cost.iter().zip(&self.x).map(|(c, x)| c * x).sum();
            if obj < last_obj - 1e-12 * (1.0 + obj.abs()) {
                stall = 0;
            } else {
                stall += 1;
                if stall > STALL_LIMIT && pricing == Pricing::Dantzig {
                    log::debug!("simplex stalled at objective {obj}; switching to Bland's rule");
                    pricing = Pricing::Bland;
                }
            }
            last_obj = last_obj.min(obj);

            // duals: yᵀ = c_Bᵀ B⁻¹
            let mut duals = vec![0.0; self.m];
            for (i, &j) in self.basis.iter().enumerate() {
                let cb = cost[j];
                if cb != 0.0 {
                    for (d, v) in duals.iter_mut().zip(&inv[i]) {
                        *d += cb * v;
                    }
                }
            }

            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..total {
                if self.is_basic[j] || self.lower[j] == self.upper[j] {
                    continue;
                }
                let reduced = cost[j]
                    - (0..self.m)
                        .map(|r| duals[r] * self.column_entry(j, r))
                        .sum::<f64>();
                let dir = if reduced < -OPT_TOL && self.x[j] < self.upper[j] {
                    1.0
                } else if reduced > OPT_TOL && self.x[j] > self.lower[j] {
                    -1.0
                } else {
                    continue;
                };
                match pricing {
                    Pricing::Bland => {
                        entering = Some((j, dir, reduced));
                        break;
                    }
                    Pricing::Dantzig => {
                        if entering.is_none_or(|(_, _, best)| reduced.abs() > best.abs()) {
                            entering = Some((j, dir, reduced));
                        }
                    }
                }
            }
            let Some((enter, dir, _)) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };

            let col = self.column(enter);
            let alpha: Vec<f64> = inv
                .iter()
                .map(|row| row.iter().zip(&col).map(|(a, b)| a * b).sum())
                .collect();

            let own_range = self.upper[enter] - self.lower[enter];
            let mut step = own_range;
            let mut leaving: Option<(usize, f64)> = None;
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let bj = self.basis[i];
                let rate = -dir * a;
                let room = if rate < 0.0 {
                    if self.lower[bj].is_finite() {
                        (self.x[bj] - self.lower[bj]).max(0.0) / -rate
                    } else {
                        continue;
                    }
                } else if self.upper[bj].is_finite() {
                    (self.upper[bj] - self.x[bj]).max(0.0) / rate
                } else {
                    continue;
                };
                let better = match leaving {
                    None => room < step,
                    Some((li, _)) => {
                        if room < step - 1e-14 {
                            true
                        } else if room <= step + 1e-14 {
                            match pricing {
                                Pricing::Bland => bj < self.basis[li],
                                Pricing::Dantzig => a.abs() > alpha[li].abs(),
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = room;
                    let bound = if rate < 0.0 {
                        self.lower[bj]
                    } else {
                        self.upper[bj]
                    };
                    leaving = Some((i, bound));
                }
            }

            if !step.is_finite() {
                return Ok(PhaseOutcome::Unbounded);
            }
            self.iterations += 1;

            self.x[enter] += dir * step;
            for (i, &a) in alpha.iter().enumerate() {
                let bj = self.basis[i];
                self.x[bj] -= dir * step * a;
            }
            match leaving {
                None => {
                    // bound flip
                    self.x[enter] = if dir > 0.0 {
                        self.upper[enter]
                    } else {
                        self.lower[enter]
                    };
                }
                Some((i, bound)) => {
                    let out = self.basis[i];
                    self.x[out] = bound;
                    self.is_basic[out] = false;
                    self.is_basic[enter] = true;
                    self.basis[i] = enter;
                }
            }
        }
    }
}

fn initial_value(lower: f64, upper: f64) -> f64 {
    if lower.is_finite() {
        lower
    } else if upper.is_finite() {
        upper
    } else {
        0.0
    }
}

/// Solves `p` to an optimal vertex, or reports infeasibility / unboundedness.
///
/// Iteration-cap exhaustion and numerical breakdown are errors, never panics.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let m = p.num_constraints();
    let n = p.num_vars();
    let total = n + m;

    let mut lower = p.lower.clone();
    let mut upper = p.upper.clone();
    lower.extend(std::iter::repeat_n(0.0, m));
    upper.extend(std::iter::repeat_n(f64::INFINITY, m));

    let mut x: Vec<f64> = (0..n)
        .map(|j| initial_value(p.lower[j], p.upper[j]))
        .collect();
    let mut art_sign = Vec::with_capacity(m);
    for (row, &rhs) in p.constraints.iter().zip(&p.rhs) {
        let resid = rhs - row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
        art_sign.push(if resid >= 0.0 { 1.0 } else { -1.0 });
    }
    x.extend(std::iter::repeat_n(0.0, m));

    let mut is_basic = vec![false; total];
    for flag in &mut is_basic[n..] {
        *flag = true;
    }
    let mut simplex = Simplex {
        a: &p.constraints,
        b: &p.rhs,
        m,
        n,
        art_sign,
        lower,
        upper,
        x,
        basis: (n..total).collect(),
        is_basic,
        iterations: 0,
        max_iterations: 10_000 + 50 * total,
    };

    let scale = 1.0 + p.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m > 0 {
        let mut phase1 = vec![0.0; total];
        for c in &mut phase1[n..] {
            *c = 1.0;
        }
        simplex.run_phase(&phase1)?;
        let infeas: f64 = simplex.x[n..].iter().sum();
        if infeas > FEAS_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: simplex.x[..n].to_vec(),
                objective_value: f64::NAN,
                iterations: simplex.iterations,
                decision_vars: p.decision_vars,
            });
        }
        for j in n..total {
            simplex.upper[j] = 0.0;
        }
    }

    let mut cost = p.objective.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    let outcome = simplex.run_phase(&cost)?;
    let mut xs = simplex.x[..n].to_vec();
    for j in 0..n {
        xs[j] = xs[j].clamp(p.lower[j], p.upper[j]);
    }
    if let PhaseOutcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: xs,
            objective_value: f64::NEG_INFINITY,
            iterations: simplex.iterations,
            decision_vars: p.decision_vars,
        });
    }

    let worst = p
        .constraints
        .iter()
        .zip(&p.rhs)
        .map(|(row, rhs)| (row.iter().zip(&xs).map(|(a, v)| a * v).sum::<f64>() - rhs).abs())
        .fold(0.0f64, f64::max);
    if worst > FEAS_TOL * scale {
        return Err(Error::Solver(format!(
            "final residual {worst:e} exceeds feasibility tolerance"
        )));
    }
    let objective_value =
        p.objective.iter().zip(&xs).map(|(c, v)| c * v).sum::<f64>() + p.objective_offset;
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x: xs,
        objective_value,
        iterations: simplex.iterations,
        decision_vars: p.decision_vars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_var(abs: Vec<(f64, f64)>, lin: Vec<(f64, f64)>) -> AbsObjective {
        AbsObjective {
            num_vars: 1,
            abs_terms: abs
                .into_iter()
                .map(|(a, b)| AbsTerm::new(a, vec![b], 1.0))
                .collect(),
            lin_terms: lin
                .into_iter()
                .map(|(c, d)| LinTerm::new(c, vec![d], 1.0))
                .collect(),
        }
    }

    fn solve_abs(obj: &AbsObjective) -> LpSolution {
        let sol = solve_lp(&build_abs_lp(obj).unwrap()).unwrap();
        assert!(sol.is_optimal());
        sol
    }

    #[test]
    fn abs_distance_to_three_is_minimized_at_upper_bound() {
        let obj = one_var(vec![(3.0, 1.0)], vec![]);
        let sol = solve_abs(&obj);
        let (gw, gv) = oracles::grid_min(|w| (3.0 - w[0]).abs(), 1, 0.01).unwrap();
        assert!((sol.decision()[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective_value - 2.0).abs() < 1e-9);
        assert!((gw[0] - 1.0).abs() < 1e-12 && (gv - 2.0).abs() < 1e-12);
    }

    #[test]
    fn abs_of_w_is_zero_at_origin() {
        let sol = solve_abs(&one_var(vec![(0.0, 1.0)], vec![]));
        assert!(sol.decision()[0].abs() < 1e-9);
        assert!(sol.objective_value.abs() < 1e-9);
    }

    #[test]
    fn abs_and_linear_terms_agree() {
        let obj = one_var(vec![(1.0, 1.0)], vec![(1.0, 1.0)]);
        let sol = solve_abs(&obj);
        let (_, gv) = oracles::grid_min(|w| oracles::eval_abs_objective(&obj, w), 1, 0.01).unwrap();
        assert!((sol.decision()[0] - 1.0).abs() < 1e-9);
        assert!(sol.objective_value.abs() < 1e-9);
        assert!(gv.abs() < 1e-12);
    }

    #[test]
    fn box_corner() {
        let p = LpProblem::unit_box(vec![-1.0, -1.0]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.decision(), &[1.0, 1.0]);
        assert!((sol.objective_value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn slack_pair_reaches_zero() {
        // min y⁺ + y⁻ s.t. y⁺ − y⁻ + w = 0.5
        let mut p = LpProblem::unit_box(vec![0.0, 1.0, 1.0]);
        p.lower = vec![0.0, 0.0, 0.0];
        p.upper = vec![1.0, f64::INFINITY, f64::INFINITY];
        p.decision_vars = 1;
        p.add_equality(vec![1.0, 1.0, -1.0], 0.5);
        let sol = solve_lp(&p).unwrap();
        assert!(sol.objective_value.abs() < 1e-12);
        assert!((sol.decision()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        let mut p = LpProblem::unit_box(vec![1.0, 1.0]);
        p.add_equality(vec![1.0, 1.0], 3.0);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_problem_is_reported() {
        // min −x1 s.t. x0 − x1 + s = 0, x0 ∈ [0,1], x1, s ≥ 0
        let mut p = LpProblem::unit_box(vec![0.0, -1.0, 0.0]);
        p.upper[1] = f64::INFINITY;
        p.upper[2] = f64::INFINITY;
        p.add_equality(vec![1.0, -1.0, 1.0], 0.0);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_are_supported() {
        // min x s.t. x - w = -2, x free, w in [0,1] → x = -2 at w = 0
        let mut p = LpProblem::unit_box(vec![0.0, 1.0]);
        p.lower[1] = f64::NEG_INFINITY;
        p.upper[1] = f64::INFINITY;
        p.add_equality(vec![-1.0, 1.0], -2.0);
        let sol = solve_lp(&p).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.objective_value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_problem_is_rejected() {
        let mut p = LpProblem::unit_box(vec![1.0, 1.0]);
        p.add_equality(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&p), Err(Error::Dimension(_))));
        let mut p = LpProblem::unit_box(vec![1.0]);
        p.lower[0] = 2.0;
        assert!(matches!(solve_lp(&p), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Many redundant rows through the same vertex.
        let mut p = LpProblem::unit_box(vec![-1.0, -1.0, -1.0]);
        for k in 0..6 {
            let f = 1.0 + k as f64;
            p.add_equality(vec![f, f, 0.0], f);
        }
        let sol = solve_lp(&p).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.objective_value + 2.0).abs() < 1e-9);
    }

    fn random_dense_lp(rng: &mut ChaCha8Rng) -> LpProblem {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=3.min(n - 1));
        let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.5)).collect();
        let upper: Vec<f64> = lower
            .iter()
            .map(|l| l + rng.random_range(0.2..2.0))
            .collect();
        let x0: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| rng.random_range(*l..*u))
            .collect();
        let mut p = LpProblem::unit_box((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        p.lower = lower;
        p.upper = upper;
        for _ in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rhs = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
            p.add_equality(row, rhs);
        }
        p
    }

    #[test]
    fn random_dense_lps_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..10 {
            let p = random_dense_lp(&mut rng);
            let sol = solve_lp(&p).unwrap();
            assert!(sol.is_optimal(), "case {case}");
            let best = oracles::vertex_enum_min(&p).expect("feasible by construction");
            assert!(
                (sol.objective_value - best).abs() < 1e-6,
                "case {case}: simplex {} vs vertices {best}",
                sol.objective_value
            );
            for (j, &v) in sol.x.iter().enumerate() {
                assert!(v >= p.lower[j] - 1e-9 && v <= p.upper[j] + 1e-9);
            }
        }
    }

    #[test]
    fn lp_dump_lists_every_section() {
        let obj = one_var(vec![(3.0, 1.0)], vec![(1.0, 2.0)]);
        let text = build_abs_lp(&obj).unwrap().to_lp_format();
        for needle in ["Minimize", "Subject To", "c0:", "Bounds", "yp0 >= 0", "End"] {
            assert!(text.contains(needle), "missing {needle}:\n{text}");
        }
    }

    fn abs_objective_strategy() -> impl Strategy<Value = AbsObjective> {
        (1usize..=3).prop_flat_map(|n| {
            let term = (
                -2.0f64..2.0,
                proptest::collection::vec(-2.0f64..2.0, n),
                0.1f64..1.5,
            );
            (
                proptest::collection::vec(term.clone(), 1..=4),
                proptest::collection::vec(term, 0..=2),
            )
                .prop_map(move |(abs, lin)| AbsObjective {
                    num_vars: n,
                    abs_terms: abs
                        .into_iter()
                        .map(|(a, b, w)| AbsTerm::new(a, b, w))
                        .collect(),
                    lin_terms: lin
                        .into_iter()
                        .map(|(c, d, w)| LinTerm::new(c, d, w))
                        .collect(),
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn transform_is_sound(obj in abs_objective_strategy()) {
            let problem = build_abs_lp(&obj).unwrap();
            let sol = solve_lp(&problem).unwrap();
            prop_assert!(sol.is_optimal());
            let (_, grid) = oracles::grid_min(|w| oracles::eval_abs_objective(&obj, w), obj.num_vars, 0.01).unwrap();
            let gap = oracles::grid_gap_bound(&obj, 0.01);
            prop_assert!(sol.objective_value <= grid + 1e-9);
            prop_assert!(grid - sol.objective_value <= gap + 1e-9);
            // LP value equals the original objective at the returned weights
            prop_assert!((obj.value(sol.decision()) - sol.objective_value).abs() < 1e-8);
            for t in 0..obj.abs_terms.len() {
                let (p, m) = slack_pair(obj.num_vars, t);
                prop_assert!(sol.x[p].min(sol.x[m]) <= 1e-8);
            }
        }

        #[test]
        fn solver_is_deterministic(obj in abs_objective_strategy()) {
            let problem = build_abs_lp(&obj).unwrap();
            let a = solve_lp(&problem).unwrap();
            let b = solve_lp(&problem).unwrap();
            prop_assert_eq!(a.x, b.x);
            prop_assert_eq!(a.iterations, b.iterations);
        }
    }
}
