//! A short training run with a checkpoint and a resume.
//!
//! Usage: train_toy [steps]

use reflab::checkpoint;
use reflab::model::ModelConfig;
use reflab::synth::SceneConfig;
use reflab::train::{TrainConfig, Trainer};

fn main() -> reflab::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let model = ModelConfig {
        frames: 8, height: 3, width: 3, channels: 8, hidden: 32, blocks: 1, heads: 2,
        d_x: 4, d_y: 4, d_t: 8, tag_dim: 8, tag_hidden: 16, tag_tokens: 2, time_dim: 16, max_refs: 2,
        ..Default::default()
    };
    let scene = SceneConfig { frames: 8, height: 3, width: 3, channels: 8, pattern_height: 1, pattern_width: 1, ..Default::default() };
    let cfg = TrainConfig { steps, batch_size: 2, scene, log_every: (steps / 4).max(1), ..Default::default() };

    let dir = std::env::temp_dir().join("reflab-train-example");
    let mut first = Trainer::new(model, TrainConfig { steps: steps / 2, ..cfg.clone() })?;
    println!("{} parameters", first.model.param_count());
    let mut log = std::io::stdout();
    first.run(Some(&mut log), Some(&dir))?;

    let ck = checkpoint::load(&dir.join("last.bin"))?;
    println!("resuming from step {}", ck.header.step);
    let mut second = Trainer::resume(ck, cfg)?;
    second.run(Some(&mut log), Some(&dir))?;
    println!("finished at step {}", second.step());
    Ok(())
}
