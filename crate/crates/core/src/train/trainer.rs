//! The training loop: sample → forward → loss → backward → Adam, repeated
//! over one or more stages that each restart the schedule and optimizer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{span_backward, span_forward, Mode, SpanModel};
use crate::train::adam::AdamState;
use crate::train::data::{ImageSet, PatchSampler};
use crate::train::loss::LossKind;
use crate::train::schedule::lr_at;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// HR patch side in pixels.
    pub patch_size: usize,
    pub base_lr: f64,
    pub halving_period: u64,
    /// Iterations per stage.
    pub iterations: u64,
    pub loss: LossKind,
    pub seed: u64,
    pub stages: u64,
    pub log_every: u64,
}

impl TrainConfig {
    /// Full-size recipe: 64 patches of 256², 5e-4 halved every 2e5 of 1e6 iterations, three stages.
    pub fn paper() -> Self {
        Self {
            batch_size: 64,
            patch_size: 256,
            base_lr: 5e-4,
            halving_period: 200_000,
            iterations: 1_000_000,
            loss: LossKind::L1,
            seed: 0,
            stages: 3,
            log_every: 1000,
        }
    }

    /// Minutes-on-a-CPU recipe: the full-size LR schedule, cut off after 2000
    /// iterations (so the rate never halves), on small batches of small patches.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            patch_size: 64,
            base_lr: 5e-4,
            halving_period: 200_000,
            iterations: 2000,
            loss: LossKind::L1,
            seed: 0,
            stages: 1,
            log_every: 10,
        }
    }

    pub fn validate(&self, scale: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.patch_size == 0 || scale == 0 || !self.patch_size.is_multiple_of(scale) {
            problems.push(format!("patch_size {} must be a positive multiple of scale {scale}", self.patch_size));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            problems.push(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.halving_period == 0 {
            problems.push("halving_period must be positive".to_string());
        }
        if self.stages == 0 {
            problems.push("stages must be positive".to_string());
        }
        if self.log_every == 0 {
            problems.push("log_every must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.iterations * self.stages
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Where a run is: enough to resume it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub stage: u64,
    /// Iteration within the stage.
    pub iteration: u64,
    pub adam: AdamState,
}

impl TrainState {
    pub fn fresh(model: &SpanModel<f32>) -> Self {
        let (a, b) = model.trainable_attention();
        let sizes: Vec<usize> = model.params.slices(a, b).iter().map(|s| s.len()).collect();
        Self {
            stage: 0,
            iteration: 0,
            adam: AdamState::new(&sizes),
        }
    }

    /// Steps completed across all stages.
    pub fn global_step(&self, cfg: &TrainConfig) -> u64 {
        self.stage * cfg.iterations + self.iteration
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Global step count after this step.
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub wallclock_ms: u128,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iteration,loss,lr,wallclock_ms";

    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.iteration, self.loss, self.lr, self.wallclock_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub stage: u64,
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

pub struct Trainer<'a> {
    model: SpanModel<f32>,
    cfg: TrainConfig,
    sampler: PatchSampler<'a, f32>,
    state: TrainState,
    /// Final loss of each finished stage.
    stage_losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: SpanModel<f32>, cfg: TrainConfig, data: &'a ImageSet<f32>) -> Result<Self> {
        let state = TrainState::fresh(&model);
        Self::resume(model, cfg, data, state)
    }

    pub fn resume(model: SpanModel<f32>, cfg: TrainConfig, data: &'a ImageSet<f32>, state: TrainState) -> Result<Self> {
        cfg.validate(model.config.scale)?;
        model.validate()?;
        let (a, b) = model.trainable_attention();
        let sizes: Vec<usize> = model.params.slices(a, b).iter().map(|s| s.len()).collect();
        if state.adam.sizes() != sizes {
            return Err(Error::InvalidArgument(
                "optimizer state does not match the model's parameters".into(),
            ));
        }
        if state.stage > cfg.stages || (state.stage == cfg.stages && state.iteration != 0) || state.iteration > cfg.iterations {
            return Err(Error::InvalidArgument(format!(
                "resume point stage {} iteration {} lies outside {} stages of {} iterations",
                state.stage, state.iteration, cfg.stages, cfg.iterations
            )));
        }
        let sampler = PatchSampler::new(data, cfg.patch_size, model.config.scale)?;
        Ok(Self {
            model,
            cfg,
            sampler,
            state,
            stage_losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &SpanModel<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn stage_losses(&self) -> &[f64] {
        &self.stage_losses
    }

    pub fn into_parts(self) -> (SpanModel<f32>, TrainState) {
        (self.model, self.state)
    }

    pub fn is_done(&self) -> bool {
        self.normalised().0 >= self.cfg.stages
    }

    /// Moves past a finished stage so the next step starts a fresh schedule.
    fn normalised(&self) -> (u64, u64) {
        if self.state.iteration >= self.cfg.iterations {
            (self.state.stage + 1, 0)
        } else {
            (self.state.stage, self.state.iteration)
        }
    }

    /// One optimisation step. Non-finite losses abort with the offending batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let (stage, iteration) = self.normalised();
        if stage >= self.cfg.stages {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        if stage != self.state.stage {
            self.state = TrainState {
                stage,
                iteration: 0,
                adam: TrainState::fresh(&self.model).adam,
            };
        }
        let lr = lr_at(iteration, self.cfg.base_lr, self.cfg.halving_period);
        let batch = self.sampler.sample(self.cfg.batch_size, self.cfg.seed, stage, iteration)?;
        let (pred, tape) = span_forward(&batch.lr, &self.model, Mode::Train)?;
        let (loss, d_pred) = self.cfg.loss.eval(&pred, &batch.hr)?;
        if !loss.is_finite() {
            let crops: Vec<String> = batch
                .crops
                .iter()
                .map(|c| format!("image {} at ({}, {}) code {}", c.image, c.top, c.left, c.code))
                .collect();
            return Err(Error::NonFinite(format!(
                "loss {loss} at stage {stage} iteration {iteration}; batch: [{}]",
                crops.join("; ")
            )));
        }
        let grads = span_backward(tape.as_ref(), &d_pred, &self.model)?;
        let (a, b) = self.model.trainable_attention();
        let g = grads.slices(a, b);
        self.state.adam.step(&mut self.model.params.slices_mut(a, b), &g, lr)?;
        self.state.iteration = iteration + 1;
        if self.state.iteration == self.cfg.iterations {
            self.stage_losses.push(loss);
        }
        Ok(StepReport {
            stage,
            iteration,
            loss,
            lr,
        })
    }

    /// Runs until finished or `max_steps` more steps, handing log rows to `sink`.
    pub fn run(&mut self, max_steps: Option<u64>, mut sink: impl FnMut(&LogRow) -> Result<()>) -> Result<Vec<LogRow>> {
        let started = Instant::now();
        let mut rows = Vec::new();
        let mut taken = 0u64;
        while !self.is_done() && max_steps.is_none_or(|m| taken < m) {
            let report = self.step()?;
            taken += 1;
            let done = self.state.global_step(&self.cfg);
            if done.is_multiple_of(self.cfg.log_every) || done == 1 || self.is_done() {
                let row = LogRow {
                    iteration: done,
                    loss: report.loss,
                    lr: report.lr,
                    wallclock_ms: started.elapsed().as_millis(),
                };
                sink(&row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }
}
