//! Positional-encoding and tag-embedding ablation grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::ConditionBuilder;
use crate::error::Result;
use crate::eval::{run_benchmark, BenchConfig, BenchManifest, EvalReport, ModelGenerator, NoiseGenerator};
use crate::flow::{CfgWeights, SamplerConfig};
use crate::interval::{IntervalMode, RightAnchor};
use crate::model::ModelConfig;
use crate::nn::AdamConfig;
use crate::synth::SceneConfig;
use crate::train::{TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub mode: IntervalMode,
    pub use_tags: bool,
}

impl Variant {
    /// The six combinations, tags first within each mode.
    pub fn grid() -> Vec<Variant> {
        IntervalMode::ALL
            .iter()
            .flat_map(|&mode| [true, false].map(|use_tags| Variant { mode, use_tags }))
            .collect()
    }

    pub fn name(&self) -> String {
        let mode = match self.mode {
            IntervalMode::None => "no-rope",
            IntervalMode::Mid => "mid-rope",
            IntervalMode::We => "we-rope",
        };
        format!("{mode}{}", if self.use_tags { "+tags" } else { "" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bench_cases: usize,
    pub bench_seed: u64,
    pub bench: BenchConfig,
    pub guidance: CfgWeights,
    pub sampler: SamplerConfig,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bench_cases: 50,
            bench_seed: 1_000_000,
            bench: BenchConfig::default(),
            guidance: CfgWeights::default(),
            sampler: SamplerConfig::default(),
            variants: Variant::grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mode: IntervalMode,
    pub use_tags: bool,
    pub t_l2: f64,
    pub t_iou: f64,
    pub pattern_sim: f64,
    /// Mean pattern similarity over two-reference cases.
    pub pattern_sim_2ref: f64,
    pub failed_cases: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub noise_t_iou: f64,
}

impl AblationTable {
    pub fn row(&self, mode: IntervalMode, use_tags: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode && r.use_tags == use_tags)
    }

    /// Variant rows, metric columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "variant,t_l2,t_iou,pattern_sim")?;
        for r in &self.rows {
            writeln!(out, "{},{:.4},{:.4},{:.4}", r.variant, r.t_l2, r.t_iou, r.pattern_sim)?;
        }
        Ok(())
    }

    pub fn write_markdown<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "| variant | t-L2 | t-IoU | pattern sim |")?;
        writeln!(out, "|---|---|---|---|")?;
        for r in &self.rows {
            writeln!(out, "| {} | {:.4} | {:.4} | {:.4} |", r.variant, r.t_l2, r.t_iou, r.pattern_sim)?;
        }
        Ok(())
    }
}

impl AblationConfig {
    /// The small setting used for the learning check: 12 frames of a 2x2
    /// grid with static single-cell entities, presence lengths of 1 to 10
    /// frames, and a model that trains 20k steps in about ten minutes on one
    /// CPU core. Uses the mirrored right anchor, light guidance and a 0.9
    /// detection threshold.
    pub fn toy() -> Self {
        let model = ModelConfig {
            frames: 12,
            height: 2,
            width: 2,
            channels: 16,
            hidden: 64,
            blocks: 2,
            heads: 4,
            d_x: 4,
            d_y: 4,
            d_t: 8,
            temporal_base: 100.0,
            tag_dim: 16,
            tag_hidden: 32,
            tag_tokens: 4,
            time_dim: 32,
            max_refs: 2,
            right_anchor: RightAnchor::Mirrored,
            ..Default::default()
        };
        let scene = SceneConfig {
            frames: 12,
            height: 2,
            width: 2,
            channels: 16,
            pattern_height: 1,
            pattern_width: 1,
            min_len: 1,
            max_len: 10,
            max_drift: 0,
            ..Default::default()
        };
        let train = TrainConfig {
            steps: 20_000,
            batch_size: 4,
            adam: AdamConfig { lr: 2e-3, warmup_steps: 200, ..Default::default() },
            scene,
            ..Default::default()
        };
        Self {
            model,
            train,
            bench_cases: 50,
            bench_seed: 2_000_000,
            bench: BenchConfig { detect_threshold: 0.9 },
            guidance: CfgWeights { w_text: 1.0, w_ref: 1.0, w_both: 1.0 },
            sampler: SamplerConfig { steps: 20, ..Default::default() },
            variants: Variant::grid(),
        }
    }
}

/// Outcome of training and evaluating one variant.
pub struct VariantRun {
    pub row: AblationRow,
    pub report: EvalReport,
    pub trainer: Trainer,
}

pub fn run_variant(cfg: &AblationConfig, variant: Variant, manifest: &BenchManifest) -> Result<VariantRun> {
    let model = ModelConfig { mode: variant.mode, use_tags: variant.use_tags, ..cfg.model.clone() };
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let logs = trainer.run(None, None)?;
    let tail = &logs[logs.len().saturating_sub(100)..];
    let final_loss = if tail.is_empty() { f64::NAN } else { tail.iter().map(|l| l.loss).sum::<f64>() / tail.len() as f64 };
    let builder = ConditionBuilder::new(&trainer.model.cfg, &cfg.train.conditions);
    let generator = ModelGenerator { model: &trainer.model, cfg: cfg.guidance, sampler: cfg.sampler };
    let report = run_benchmark(&generator, manifest, &builder, &cfg.bench)?;
    let all = report.all().cloned();
    let row = AblationRow {
        variant: variant.name(),
        mode: variant.mode,
        use_tags: variant.use_tags,
        t_l2: all.as_ref().map_or(f64::NAN, |a| a.t_l2),
        t_iou: all.as_ref().map_or(f64::NAN, |a| a.t_iou),
        pattern_sim: all.as_ref().map_or(f64::NAN, |a| a.pattern_sim),
        pattern_sim_2ref: report.by_ref_count(2).map_or(f64::NAN, |a| a.pattern_sim),
        failed_cases: report.failed_cases,
        final_loss,
    };
    Ok(VariantRun { row, report, trainer })
}

/// Trains and evaluates every variant on one shared benchmark.
pub fn run_ablation(cfg: &AblationConfig, mut progress: impl FnMut(&AblationRow)) -> Result<AblationTable> {
    let manifest = BenchManifest::build(&cfg.train.scene, cfg.bench_cases, cfg.bench_seed)?;
    let builder = ConditionBuilder::new(&cfg.model, &cfg.train.conditions);
    let noise = run_benchmark(&NoiseGenerator, &manifest, &builder, &cfg.bench)?;
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &v in &cfg.variants {
        let run = run_variant(cfg, v, &manifest)?;
        progress(&run.row);
        rows.push(run.row);
    }
    Ok(AblationTable { rows, noise_t_iou: noise.all().map_or(f64::NAN, |a| a.t_iou) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_six_named_variants() {
        let names: Vec<String> = Variant::grid().iter().map(Variant::name).collect();
        assert_eq!(names, ["no-rope+tags", "no-rope", "mid-rope+tags", "mid-rope", "we-rope+tags", "we-rope"]);
    }

    #[test]
    fn tiny_ablation_produces_full_table() {
        let model = ModelConfig {
            frames: 6,
            height: 3,
            width: 3,
            channels: 4,
            hidden: 8,
            blocks: 1,
            heads: 1,
            d_x: 2,
            d_y: 2,
            d_t: 4,
            tag_dim: 4,
            tag_hidden: 4,
            tag_tokens: 2,
            time_dim: 4,
            max_refs: 2,
            ..Default::default()
        };
        let scene = SceneConfig {
            frames: 6,
            height: 3,
            width: 3,
            channels: 4,
            pattern_height: 1,
            pattern_width: 1,
            max_len: 3,
            ..Default::default()
        };
        let cfg = AblationConfig {
            model,
            train: TrainConfig { steps: 2, batch_size: 1, scene, ..Default::default() },
            bench_cases: 2,
            sampler: SamplerConfig { steps: 2, ..Default::default() },
            ..Default::default()
        };
        let mut seen = 0;
        let table = run_ablation(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 6);
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
    }
}
