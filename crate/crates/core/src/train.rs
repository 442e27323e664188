//! The training loop: per epoch, shuffled minibatches, both paths, the joint
//! objective and one Adam update per batch.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::checkpoint::Checkpoint;
use crate::data::{batches, CorpusSplit, EncodedSample};
use crate::error::{Error, Result};
use crate::eval::{macro_prf, score, PrfReport};
use crate::network::{forward_graph, init_network, Architecture, Dropout, NetworkParams, ParamVars};
use crate::objective::{consistency_loss, total_loss_graph, LossBreakdown, RampSchedule};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::seed::derive_seed;

/// Stream tag for weight initialisation.
const INIT_STREAM: u64 = 0x1417;
const DESIGNATION_STREAM: u64 = 0x5E1EC7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Final consistency weight; `None` uses the labeled fraction `M/N` of the split.
    pub w_max: Option<f64>,
    pub t_ramp: f64,
    pub labeled_ratio: f64,
    pub seed: u64,
    pub arch: Architecture,
}

impl TrainConfig {
    pub fn new(arch: Architecture) -> Self {
        TrainConfig {
            batch_size: 25,
            epochs: 200,
            lr: 0.001,
            dropout: 0.5,
            w_max: None,
            t_ramp: 80.0,
            labeled_ratio: 0.1,
            seed: 0,
            arch,
        }
    }

    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Invalid(format!("{field}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(w) = self.w_max {
            if !(w >= 0.0 && w.is_finite()) {
                return bad("w_max", format!("must be a nonnegative number, got {w}"));
            }
        }
        if !(self.t_ramp > 0.0 && self.t_ramp.is_finite()) {
            return bad("t_ramp", format!("must be positive, got {}", self.t_ramp));
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio <= 1.0) {
            return bad("labeled_ratio", format!("must lie in (0, 1], got {}", self.labeled_ratio));
        }
        self.arch
            .validate()
            .map_err(|e| Error::Invalid(format!("architecture: {e}")))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Seed for choosing the labeled subset of training portion `portion`.
    pub fn designation_seed(&self, portion: u64) -> u64 {
        derive_seed(&[self.seed, portion, DESIGNATION_STREAM])
    }

    pub fn schedule(&self, split: &CorpusSplit) -> Result<RampSchedule> {
        let w_max = self
            .w_max
            .unwrap_or(split.labeled_count() as f64 / split.len().max(1) as f64);
        RampSchedule::new(w_max, self.t_ramp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: u64,
    pub params: NetworkParams,
    pub optimizer: AdamState,
    /// Batch-mean losses of every completed epoch.
    pub history: Vec<LossBreakdown>,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        let params = init_network(config.arch, derive_seed(&[config.seed, INIT_STREAM]))?;
        let optimizer = AdamState::for_network(config.adam(), &params)?;
        Ok(TrainState {
            epoch: 0,
            params,
            optimizer,
            history: Vec::new(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Self {
        TrainState {
            epoch: checkpoint.epoch,
            params: checkpoint.params,
            optimizer: checkpoint.optimizer,
            history: checkpoint.history,
        }
    }
}

/// Telemetry for one epoch; serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub weight: f64,
    pub total: f64,
    pub steps: usize,
    pub wall_ms: u64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch log serializes")
    }
}

/// Losses and parameter gradients (checkpoint order) for one minibatch.
pub fn compute_gradients(
    params: &NetworkParams,
    inputs: &Tensor,
    labels: &[Option<usize>],
    weight: f64,
    dropout: &Dropout,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params);
    let x = g.constant(inputs.clone());
    let out = forward_graph(&mut g, params, &vars, x, dropout)?;
    if !(g.value(out.z).all_finite() && g.value(out.z_prime).all_finite()) {
        let unsupervised = consistency_loss(g.value(out.z), g.value(out.z_prime))?;
        let breakdown = LossBreakdown {
            supervised: f64::NAN,
            unsupervised,
            weight,
            total: f64::NAN,
        };
        return Ok((breakdown, Vec::new()));
    }
    let loss = total_loss_graph(&mut g, out.z, out.z_prime, labels, weight)?;
    let breakdown = loss.breakdown(&g, weight);
    if !breakdown.total.is_finite() {
        return Ok((breakdown, Vec::new()));
    }
    let mut grads = g.backward(loss.total, &Tensor::scalar(1.0))?;
    let grads = vars
        .vars()
        .iter()
        .map(|&v| grads.take(v).expect("every parameter is a trainable leaf"))
        .collect();
    Ok((breakdown, grads))
}

/// Drives training over one split, one epoch at a time.
#[derive(Debug)]
pub struct Trainer<'a> {
    split: &'a CorpusSplit,
    config: TrainConfig,
    schedule: RampSchedule,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(split: &'a CorpusSplit, config: TrainConfig) -> Result<Self> {
        let state = TrainState::fresh(&config)?;
        Self::with_state(split, config, state)
    }

    /// Continues from a saved state; the architecture must match the config.
    pub fn resume(split: &'a CorpusSplit, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.params.arch != config.arch {
            return Err(Error::Architecture(format!(
                "checkpoint has {:?}, configuration has {:?}",
                checkpoint.params.arch, config.arch
            )));
        }
        Self::with_state(split, config, TrainState::from_checkpoint(checkpoint))
    }

    fn with_state(split: &'a CorpusSplit, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if split.is_empty() || split.labeled_count() == 0 {
            return Err(Error::Invalid("training split needs at least one labeled sample".into()));
        }
        if let Some(s) = split.samples().first() {
            let expected = [1, config.arch.max_len, config.arch.embed_dim];
            if s.matrix.shape() != expected {
                return Err(Error::Architecture(format!(
                    "samples are {:?}, configuration expects {:?}",
                    s.matrix.shape(),
                    expected
                )));
            }
        }
        let schedule = config.schedule(split)?;
        Ok(Trainer {
            split,
            config,
            schedule,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs as u64
    }

    /// Runs the next epoch `t` (1-based). The consistency weight is
    /// evaluated once, at `t - 1`, so the first epoch starts the ramp at
    /// its bottom.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let started = Instant::now();
        let t = self.state.epoch + 1;
        let weight = self.schedule.weight((t - 1) as f64)?;
        let seed = self.config.seed;
        let mut sums = [0.0f64; 3];
        let mut steps = 0;
        for (b, batch) in batches(self.split, self.config.batch_size, seed, t)?.into_iter().enumerate() {
            let dropout = Dropout::training(self.config.dropout, derive_seed(&[seed, t, b as u64]));
            let (loss, grads) = compute_gradients(&self.state.params, &batch.inputs, &batch.labels, weight, &dropout)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch: t as usize,
                    batch: b,
                    supervised: loss.supervised,
                    unsupervised: loss.unsupervised,
                    weight,
                });
            }
            adam_step(&mut self.state.params, &grads, &mut self.state.optimizer)?;
            sums[0] += loss.supervised;
            sums[1] += loss.unsupervised;
            sums[2] += loss.total;
            steps += 1;
        }
        let n = steps as f64;
        let mean = LossBreakdown {
            supervised: sums[0] / n,
            unsupervised: sums[1] / n,
            weight,
            total: sums[2] / n,
        };
        self.state.epoch = t;
        self.state.history.push(mean);
        let log = EpochLog {
            epoch: t,
            supervised: mean.supervised,
            unsupervised: mean.unsupervised,
            weight,
            total: mean.total,
            steps,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        info!("{}", log.to_json_line());
        Ok(log)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(mut self, mut on_epoch: impl FnMut(&EpochLog, &TrainState) -> Result<()>) -> Result<TrainState> {
        while !self.is_done() {
            let log = self.run_epoch()?;
            on_epoch(&log, &self.state)?;
        }
        Ok(self.state)
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(split: &CorpusSplit, config: &TrainConfig) -> Result<TrainState> {
    Trainer::new(split, config.clone())?.run(|_, _| Ok(()))
}

/// Macro scores of the current parameters on `heldout`; does not modify
/// the state.
pub fn evaluate_epoch_hook(state: &TrainState, heldout: &[EncodedSample]) -> Result<PrfReport> {
    if !heldout.iter().any(|s| s.label.is_some()) {
        return Err(Error::Invalid("held-out set has no labeled samples".into()));
    }
    let cm = score(&state.params, heldout)?;
    Ok(macro_prf(&cm))
}
