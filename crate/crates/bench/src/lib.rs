//! Fixtures shared by the benchmarks.

use faircil_core::datasets::{gen_toy_gaussians, TaskStream};
use faircil_core::lp::{AbsObjective, AbsTerm, LinTerm};
use faircil_core::replay::{BudgetMode, ReplayBuffer};
use faircil_core::{MlpModel, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random objective with `n` weights and `k` absolute-value terms, shaped like an FSW objective.
pub fn random_objective(n: usize, k: usize, seed: u64) -> AbsObjective {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obj = AbsObjective::new(n);
    for _ in 0..k {
        let coeffs = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
        obj.abs_terms.push(AbsTerm::new(
            rng.random_range(-1.0..1.0),
            coeffs,
            1.0 / k as f64,
        ));
    }
    let coeffs = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
    obj.lin_terms.push(LinTerm::new(1.0, coeffs, 0.5));
    obj
}

/// Second toy task, a filled buffer from the first, and a random model.
pub fn toy_weighting_fixture(
    n_per_class: usize,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>, MlpModel) {
    let stream: TaskStream = gen_toy_gaussians(n_per_class, seed).expect("toy stream");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(32, BudgetMode::PerSensitiveGroup);
    buffer.store(&stream.tasks[0], &mut rng).expect("store");
    let model = MlpModel::random(stream.input_dim, 32, stream.num_classes(), &mut rng);
    (stream.tasks[1].samples.clone(), buffer.merged(), model)
}
