//! Oracle suite: brute-force cross-checks of the solver, the first-order loss forms,
//! gradients and metric definitions. Shared by `faircil verify` and the acceptance tests.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fsw::FairnessMeasure;
use crate::groups::{
    approx_group_loss, compute_group_stats, linear_forms, sample_gradients, GroupKey, GroupingMode,
};
use crate::lp::{build_abs_lp, slack_pair, solve_lp, AbsObjective, AbsTerm, LinTerm, LpStatus};
use crate::metrics::{average_accuracy, disparity};
use crate::oracles::{
    eval_abs_objective, exact_loss_after_step, finite_diff_grad, grid_gap_bound, grid_min,
    relative_error,
};
use crate::tensor::{last_layer_grad, MlpModel, Sample};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(serialize_with = "as_secs")]
    pub elapsed: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {} ({:.2?}): {}",
            self.name, self.elapsed, self.detail
        )
    }
}

fn timed(
    name: &'static str,
    body: impl FnOnce() -> Result<(bool, String)>,
) -> Result<CheckOutcome> {
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    })
}

fn random_abs_objective(rng: &mut ChaCha8Rng) -> AbsObjective {
    let n = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let mut obj = AbsObjective::new(n);
    let vec = |rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    for _ in 0..k {
        let coeffs = vec(rng);
        obj.abs_terms.push(AbsTerm::new(
            rng.random_range(-1.0..1.0),
            coeffs,
            rng.random_range(0.1..1.0),
        ));
    }
    for _ in 0..rng.random_range(0..=2) {
        let coeffs = vec(rng);
        obj.lin_terms.push(LinTerm::new(
            rng.random_range(-1.0..1.0),
            coeffs,
            rng.random_range(0.0..1.0),
        ));
    }
    obj
}

/// LP optimum of random absolute-value objectives against an exhaustive grid.
pub fn lp_soundness(instances: usize, seed: u64) -> Result<CheckOutcome> {
    timed("lp_soundness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = 0.01;
        let (mut ok, mut worst_gap, mut worst_slack) = (0, 0.0_f64, 0.0_f64);
        for _ in 0..instances {
            let obj = random_abs_objective(&mut rng);
            let lp = build_abs_lp(&obj)?;
            let sol = solve_lp(&lp)?;
            if sol.status != LpStatus::Optimal {
                continue;
            }
            let lp_value = eval_abs_objective(&obj, sol.decision());
            let (_, grid_value) = grid_min(|w| eval_abs_objective(&obj, w), obj.num_vars, step)?;
            let bound = grid_gap_bound(&obj, step);
            // the grid can never beat the true minimum, and is at most `bound` above it
            let gap = grid_value - lp_value;
            let sound = lp_value <= grid_value + 1e-9 && grid_value - lp_value <= bound;
            let slack = (0..obj.abs_terms.len())
                .map(|i| {
                    let (p, m) = slack_pair(obj.num_vars, i);
                    sol.x[p].min(sol.x[m])
                })
                .fold(0.0, f64::max);
            worst_gap = worst_gap.max(gap);
            worst_slack = worst_slack.max(slack);
            if sound && slack <= 1e-8 {
                ok += 1;
            }
        }
        Ok((
            ok == instances,
            format!("{ok}/{instances} instances; max grid gap {worst_gap:.2e}; max min(y+,y-) {worst_slack:.1e}"),
        ))
    })
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, din: usize, classes: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let f = (0..din).map(|_| rng.random_range(-1.0..1.0)).collect();
            Sample::new(f, rng.random_range(0..classes), None)
        })
        .collect()
}

fn taylor_error(
    model: &MlpModel,
    group: &[Sample],
    task: &[Sample],
    w: &[f64],
    eta: f64,
) -> Result<f64> {
    let stats = compute_group_stats(model, task, group, GroupingMode::Class, false)?;
    let grads = sample_gradients(model, task, false)?;
    let forms = linear_forms(&stats, &grads, eta)?;
    let approx = approx_group_loss(&forms[&GroupKey::class(group[0].label)], w)?;
    Ok((approx - exact_loss_after_step(model, group, task, w, eta)?).abs())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Error of the linear loss form against a real step shrinks ~4x per halving of the step.
pub fn taylor_fidelity(fixtures: usize, seed: u64) -> Result<CheckOutcome> {
    timed("taylor_fidelity", || {
        let etas = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
        let mut ratios = vec![Vec::new(); etas.len() - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..fixtures {
            let model = MlpModel::random(3, 6, 3, &mut rng);
            let task = random_samples(&mut rng, 10, 3, 2);
            let group: Vec<Sample> = random_samples(&mut rng, 6, 3, 1)
                .into_iter()
                .map(|mut s| {
                    s.label = 2;
                    s
                })
                .collect();
            let w: Vec<f64> = (0..task.len())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let errs = etas
                .iter()
                .map(|&eta| taylor_error(&model, &group, &task, &w, eta))
                .collect::<Result<Vec<_>>>()?;
            for (i, pair) in errs.windows(2).enumerate() {
                ratios[i].push(pair[0] / pair[1]);
            }
        }
        let medians: Vec<f64> = ratios.into_iter().map(median).collect();
        let passed = medians.iter().all(|m| (3.5..=4.5).contains(m));
        Ok((passed, format!("median ratio per halving {medians:.3?}")))
    })
}

/// Loss disparity grows when the current sample helps the better-off group and hurts the other.
pub fn unfair_forgetting(instances: usize, seed: u64) -> Result<CheckOutcome> {
    timed("unfair_forgetting", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut built, mut held, mut tries) = (0, 0, 0);
        while built < instances && tries < 100 * instances.max(1) {
            tries += 1;
            let model = MlpModel::random(2, 4, 3, &mut rng);
            let point = |rng: &mut ChaCha8Rng, label| {
                Sample::new(
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    label,
                    None,
                )
            };
            let buffer: Vec<Sample> = (0..8).map(|i| point(&mut rng, i / 4)).collect();
            let current = vec![point(&mut rng, 2)];
            let stats = compute_group_stats(&model, &current, &buffer, GroupingMode::Class, true)?;
            let grads = sample_gradients(&model, &current, true)?;
            let (s0, s1) = (&stats[&GroupKey::class(0)], &stats[&GroupKey::class(1)]);
            let (better, worse) = if s0.loss < s1.loss {
                (s0, s1)
            } else {
                (s1, s0)
            };
            if !(better.loss < worse.loss
                && better.gradient().dot(&grads[0]) > 0.0
                && worse.gradient().dot(&grads[0]) < 0.0)
            {
                continue;
            }
            built += 1;
            let forms = linear_forms(&stats, &grads, 0.1)?;
            let before = (better.loss - worse.loss).abs();
            let after = (approx_group_loss(&forms[&better.key], &[1.0])?
                - approx_group_loss(&forms[&worse.key], &[1.0])?)
            .abs();
            if after > before {
                held += 1;
            }
        }
        Ok((
            built == instances && held == built,
            format!("{held}/{built} constructed instances (wanted {instances}, {tries} draws)"),
        ))
    })
}

/// Analytic last-layer gradients against central differences.
pub fn gradient_check(fixtures: usize, seed: u64) -> Result<CheckOutcome> {
    timed("gradient_check", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        let mut ok = 0;
        for _ in 0..fixtures {
            let din = rng.random_range(1..=5);
            let h = rng.random_range(1..=8);
            let c = rng.random_range(2..=5);
            let model = MlpModel::random(din, h, c, &mut rng);
            let n = rng.random_range(1..=8);
            let batch = random_samples(&mut rng, n, din, c);
            let analytic = last_layer_grad(&model, &batch)?;
            let numeric = finite_diff_grad(&model, &batch, 1e-5)?;
            let err = relative_error(&analytic.values, &numeric.values);
            worst = worst.max(err);
            if err < 1e-4 {
                ok += 1;
            }
        }
        Ok((
            ok == fixtures,
            format!("{ok}/{fixtures} fixtures; max relative error {worst:.2e}"),
        ))
    })
}

/// Hand-computed metric examples.
pub fn metric_examples() -> Result<CheckOutcome> {
    timed("metric_examples", || {
        // class 0: 1/10 wrong, class 1: 3/10 wrong, overall 0.2
        let labels: Vec<usize> = [vec![0; 10], vec![1; 10]].concat();
        let mut preds = labels.clone();
        preds[0] = 1;
        preds[10..13].fill(0);
        let eer = disparity(FairnessMeasure::Eer, &preds, &labels, None, &[0, 1])?;

        let (per_task, avg) = average_accuracy(&[vec![0.9], vec![0.5, 0.8]])?;

        let labels = vec![0, 1, 2, 0, 1, 2];
        let z = vec![0, 0, 0, 1, 1, 1];
        let perfect: Vec<f64> = [
            FairnessMeasure::Eer,
            FairnessMeasure::Eo,
            FairnessMeasure::Dp,
        ]
        .into_iter()
        .map(|m| disparity(m, &labels, &labels, Some(&z), &[0, 1, 2]))
        .collect::<Result<_>>()?;

        // exact up to the last bit of the decimal literals
        let passed = (eer - 0.1).abs() < 1e-15
            && (per_task[0] - 0.9).abs() < 1e-15
            && (per_task[1] - 0.65).abs() < 1e-15
            && (avg - 0.775).abs() < 1e-15
            && perfect.iter().all(|&d| d == 0.0);
        Ok((
            passed,
            format!("eer {eer}; A {per_task:?}; mean {avg}; perfect eer/eo/dp {perfect:?}"),
        ))
    })
}

/// Every oracle check at its acceptance size.
pub fn oracle_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        lp_soundness(100, seed)?,
        taylor_fidelity(20, seed.wrapping_add(1))?,
        unfair_forgetting(50, seed.wrapping_add(2))?,
        gradient_check(50, seed.wrapping_add(3))?,
        metric_examples()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        for outcome in [
            lp_soundness(10, 1).unwrap(),
            taylor_fidelity(5, 2).unwrap(),
            unfair_forgetting(5, 3).unwrap(),
            gradient_check(5, 4).unwrap(),
            metric_examples().unwrap(),
        ] {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
