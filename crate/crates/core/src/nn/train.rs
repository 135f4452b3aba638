use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use super::network::{backward, batch_from_rows, build_network, forward, Mode, NetworkState};
use super::spec::{ArchOptions, Architecture, NetworkSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerSlots};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Architecture plus training hyperparameters for one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub options: ArchOptions,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Builds and trains a network on `data`. Initialisation and batch order
/// draw from separate streams derived from `seed`.
pub fn fit_network(
    config: &NetworkConfig,
    data: &Dataset,
    class_count: usize,
    seed: u64,
) -> Result<(NetworkSpec, NetworkState, Vec<f64>)> {
    let (spec, mut state) = build_network(
        config.architecture,
        data.n_features(),
        class_count,
        &config.options,
        seed,
    )?;
    let train_config = TrainConfig {
        optimizer: config.optimizer,
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: seed.wrapping_add(0x5EED),
    };
    let history = train(&spec, &mut state, data, &train_config)?;
    Ok((spec, state, history))
}

/// Mini-batch training. Rows are reshuffled every epoch and the final partial
/// batch is kept. Returns the mean batch loss of each epoch.
pub fn train(spec: &NetworkSpec, state: &mut NetworkState, data: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    if data.n_features() != spec.input_features {
        return Err(Error::shape(format!(
            "network expects {} features, data has {}",
            spec.input_features,
            data.n_features()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= spec.class_count) {
        return Err(Error::config(format!(
            "label {bad} outside the {} network classes",
            spec.class_count
        )));
    }
    state.check(spec)?;
    let expected_slots = match config.optimizer.kind {
        OptimizerKind::Sgd => 0,
        _ => state.params.len(),
    };
    let mut slots = match state.slots.take() {
        Some(s) if s.first.len() == expected_slots => s,
        _ => OptimizerSlots::new(config.optimizer.kind, &state.params),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(config.batch_size) {
            let x = batch_from_rows(data, rows);
            let labels: Vec<usize> = rows.iter().map(|&r| data.labels()[r]).collect();
            let mode = Mode::Train { seed: rng.gen() };
            let (logits, cache) = forward(spec, state, &x, mode)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                state.slots = Some(slots);
                return Err(Error::Numeric(format!("loss became {loss} in epoch {}", epoch + 1)));
            }
            let grads = backward(spec, state, &cache, &dlogits)?;
            optimizer_step(&config.optimizer, &mut slots, &mut state.params, &grads)?;
            state.batches_trained += 1;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    state.slots = Some(slots);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{build_network, predict};
    use crate::nn::spec::{ArchOptions, Architecture};

    /// Three well-separated 2-D clusters, padded with two zero columns so the
    /// vanilla convolution stack has enough length.
    fn separable_toy() -> Dataset {
        let centers = [(0.1, 0.1), (0.9, 0.1), (0.5, 0.9)];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..20 {
                let x: f64 = cx + rng.gen_range(-0.08..0.08);
                let y: f64 = cy + rng.gen_range(-0.08..0.08);
                rows.push(vec![x, y, 0.0, 0.0]);
                labels.push(c);
            }
        }
        Dataset::from_rows(&rows, labels).unwrap()
    }

    fn adam(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::new(OptimizerKind::Adam, lr),
            epochs,
            batch_size,
            seed,
        }
    }

    #[test]
    fn vanilla_fits_separable_toy() {
        let data = separable_toy();
        let (spec, mut state) = build_network(Architecture::Vanilla, 4, 3, &ArchOptions::default(), 3).unwrap();
        let history = train(&spec, &mut state, &data, &adam(1e-3, 200, 16, 5)).unwrap();
        assert_eq!(history.len(), 200);
        assert!(history[199] < history[0]);
        let preds = predict(&spec, &state, &data).unwrap();
        assert_eq!(preds, data.labels());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let data = separable_toy();
        let run = || {
            let (spec, mut state) = build_network(Architecture::Cnn2, 12, 3, &ArchOptions::default(), 1).unwrap();
            let padded: Vec<Vec<f64>> = (0..data.n_rows())
                .map(|i| {
                    let mut r = data.row(i).to_vec();
                    r.resize(12, 0.5);
                    r
                })
                .collect();
            let d = Dataset::from_rows(&padded, data.labels().to_vec()).unwrap();
            let h = train(&spec, &mut state, &d, &adam(1e-3, 3, 7, 9)).unwrap();
            (state, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(
            ha.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            hb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // 60 rows in batches of 7 is 9 batches per epoch, the last one partial.
        assert_eq!(a.batches_trained, 27);
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let data = separable_toy();
        let (spec, mut state) = build_network(Architecture::Vanilla, 4, 3, &ArchOptions::default(), 3).unwrap();
        assert!(matches!(
            train(&spec, &mut state, &data, &adam(1e-3, 1, 0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergent_rate_reports_numeric_error_or_collapses() {
        let data = separable_toy();
        let (spec, mut state) = build_network(Architecture::Vanilla, 4, 3, &ArchOptions::default(), 3).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::new(OptimizerKind::Sgd, 1e6),
            epochs: 5,
            batch_size: 8,
            seed: 0,
        };
        match train(&spec, &mut state, &data, &cfg) {
            Err(Error::Numeric(_)) => {}
            Ok(h) => assert!(h.iter().all(|v| v.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn constant_predictor_on_balanced_data_scores_one_third() {
        // A collapsed network predicting one class everywhere.
        let data = separable_toy();
        let (spec, mut state) = build_network(Architecture::Vanilla, 4, 3, &ArchOptions::default(), 3).unwrap();
        for p in state.params.iter_mut() {
            p.data_mut().fill(0.0);
        }
        let last = state.params.len() - 1;
        state.params[last].data_mut()[1] = 5.0;
        let preds = predict(&spec, &state, &data).unwrap();
        let hits = preds.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
        let accuracy = (hits as f64 / data.n_rows() as f64 * 10000.0).round() / 100.0;
        assert_eq!(accuracy, 33.33);
    }
}
