//! Rectified-flow training on freshly generated scenes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::data::{ConditionBuilder, ConditionConfig};
use crate::error::{Error, Result};
use crate::flow::{drop_conditions, flow_loss_and_grad, gaussian_grid, shift_time, FlowState};
use crate::model::{Conditions, FlowTransformer, ModelConfig};
use crate::nn::{Adam, AdamConfig};
use crate::synth::{generate_scene, AugmentConfig, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub p_ref_drop: f64,
    pub p_text_drop: f64,
    /// Training times are `shift_time(u, train_shift)` for uniform `u`.
    pub train_shift: f64,
    pub log_every: usize,
    /// Save every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub scene: SceneConfig,
    pub conditions: ConditionConfig,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            seed: 0,
            adam: AdamConfig::default(),
            p_ref_drop: 0.1,
            p_text_drop: 0.1,
            train_shift: 1.0,
            log_every: 10,
            checkpoint_every: 0,
            scene: SceneConfig::default(),
            conditions: ConditionConfig::default(),
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for p in [self.p_ref_drop, self.p_text_drop] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("drop probabilities must lie in [0, 1]"));
            }
        }
        if !(self.train_shift > 0.0) {
            return Err(Error::invalid("train_shift must be positive"));
        }
        self.scene.validate()?;
        let s = &self.scene;
        if [s.frames, s.height, s.width, s.channels] != model.grid_dims() {
            return Err(Error::invalid("scene dimensions differ from the model grid"));
        }
        if s.max_entities > model.max_refs {
            return Err(Error::invalid("scenes may hold more entities than max_refs"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

pub struct Trainer {
    pub model: FlowTransformer,
    pub adam: Adam,
    pub cfg: TrainConfig,
    builder: ConditionBuilder,
    started: Instant,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(&model_cfg)?;
        let model = FlowTransformer::new(model_cfg)?;
        let adam = Adam::new(cfg.adam, &model.store);
        Ok(Self::assemble(model, adam, cfg))
    }

    /// Continues from a checkpoint written with optimizer state.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(&ck.model.cfg)?;
        if ck.header.seed != cfg.seed {
            return Err(Error::invalid(format!("checkpoint seed {} differs from config seed {}", ck.header.seed, cfg.seed)));
        }
        let mut adam = ck.optimizer.ok_or_else(|| Error::invalid("checkpoint has no optimizer state"))?;
        adam.cfg = cfg.adam;
        Ok(Self::assemble(ck.model, adam, cfg))
    }

    fn assemble(model: FlowTransformer, adam: Adam, cfg: TrainConfig) -> Self {
        let builder = ConditionBuilder::new(&model.cfg, &cfg.conditions);
        Self { model, adam, cfg, builder, started: Instant::now() }
    }

    pub fn step(&self) -> usize {
        self.adam.step
    }

    /// The `b`-th training example of step `step`; a pure function of the
    /// seed and the indices.
    pub fn example(&self, step: usize, b: usize) -> Result<(FlowState, Conditions)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream((step * self.cfg.batch_size + b) as u64);
        let scene = generate_scene(&mut rng, &self.cfg.scene)?;
        let cond = self.builder.build(&scene, self.cfg.augment.as_ref(), &mut rng)?;
        let cond = drop_conditions(&cond, self.cfg.p_ref_drop, self.cfg.p_text_drop, &mut rng);
        let eps = gaussian_grid(scene.video.dims(), &mut rng);
        let t = shift_time(rng.gen::<f64>(), self.cfg.train_shift);
        Ok((FlowState::new(scene.video, eps, t)?, cond))
    }

    pub fn train_step(&mut self) -> Result<StepLog> {
        let step = self.step();
        let mut grads = self.model.store.zero_grads();
        let mut loss = 0.0;
        for b in 0..self.cfg.batch_size {
            let (state, cond) = self.example(step, b)?;
            loss += flow_loss_and_grad(&self.model, &state, &cond, &mut grads)
                .map_err(|e| match e {
                    Error::Numeric { detail, .. } => Error::Numeric { step, detail },
                    other => other,
                })?;
        }
        let n = self.cfg.batch_size as f64;
        loss /= n;
        grads.scale(1.0 / n);
        if !loss.is_finite() || !grads.global_norm().is_finite() {
            return Err(Error::Numeric { step, detail: format!("loss {loss}") });
        }
        let lr = self.adam.update(&mut self.model.store, &mut grads);
        if !self.model.store.all_finite() {
            return Err(Error::Numeric { step, detail: "non-finite parameters after update".into() });
        }
        Ok(StepLog { step, loss, lr, wall_time: self.started.elapsed().as_secs_f64() })
    }

    /// Trains until `cfg.steps`, writing JSON lines to `log` and
    /// checkpoints into `ckpt_dir` when given.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>, ckpt_dir: Option<&Path>) -> Result<Vec<StepLog>> {
        let mut logs = Vec::new();
        while self.step() < self.cfg.steps {
            let entry = self.train_step()?;
            let done = self.step();
            if self.cfg.log_every > 0 && (done % self.cfg.log_every == 0 || done == self.cfg.steps) {
                if let Some(out) = log.as_deref_mut() {
                    writeln!(out, "{}", serde_json::to_string(&entry)?)?;
                }
            }
            logs.push(entry);
            if let Some(dir) = ckpt_dir {
                if self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0 && done < self.cfg.steps {
                    self.save(dir)?;
                }
            }
        }
        if let Some(dir) = ckpt_dir {
            self.save(dir)?;
        }
        Ok(logs)
    }

    /// Writes `step_<n>.bin` and `last.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let step = self.step();
        checkpoint::save(&dir.join(format!("step_{step}.bin")), &self.model, Some(&self.adam), self.cfg.seed, step)?;
        checkpoint::save(&dir.join("last.bin"), &self.model, Some(&self.adam), self.cfg.seed, step)
    }
}
