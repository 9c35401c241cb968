//! The interval benchmark scored for the two reference generators: the
//! ground-truth oracle and pure noise.

use reflab::data::{ConditionBuilder, ConditionConfig};
use reflab::eval::{run_benchmark, t_iou, t_l2, BenchConfig, BenchManifest, IntervalPair, NoiseGenerator, OracleGenerator};
use reflab::model::ModelConfig;
use reflab::synth::SceneConfig;

fn main() -> reflab::Result<()> {
    let pair = IntervalPair::of(Some((4.0, 8.0)), (2.0, 6.0), 16);
    println!("gt [2,6] vs pred [4,8] at T=16: t-IoU {:.4}, t-L2 {:.4}", t_iou(&pair), t_l2(&pair));

    let manifest = BenchManifest::build(&SceneConfig::default(), 50, 1_000_000)?;
    let builder = ConditionBuilder::new(&ModelConfig::default(), &ConditionConfig::default());
    let cfg = BenchConfig::default();
    for (name, report) in [
        ("oracle", run_benchmark(&OracleGenerator, &manifest, &builder, &cfg)?),
        ("noise", run_benchmark(&NoiseGenerator, &manifest, &builder, &cfg)?),
    ] {
        for (split, a) in &report.aggregates {
            println!("{name:6} refs={split:3} rows {:3}  t-IoU {:.3}  t-L2 {:.3}  sim {:.3}", a.rows, a.t_iou, a.t_l2, a.pattern_sim);
        }
    }
    Ok(())
}
