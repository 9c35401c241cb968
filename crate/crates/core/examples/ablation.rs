//! The positional-encoding x tag-embedding grid on the toy setting.
//!
//! Usage: ablation [steps] [cases]
//!
//! With no arguments this is the full run (several minutes per variant).

use reflab::ablate::{run_ablation, AblationConfig};

fn main() -> reflab::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let mut cfg = AblationConfig::toy();
    if let Some(steps) = args.next() {
        cfg.train.steps = steps;
        cfg.train.adam.warmup_steps = cfg.train.adam.warmup_steps.min(steps / 2);
    }
    if let Some(cases) = args.next() {
        cfg.bench_cases = cases;
    }
    println!("{} steps per variant, {} benchmark cases", cfg.train.steps, cfg.bench_cases);
    let table = run_ablation(&cfg, |row| {
        println!(
            "{:14} t-IoU {:.3}  t-L2 {:.3}  sim {:.3}  sim(2 refs) {:.3}  final loss {:.4}",
            row.variant, row.t_iou, row.t_l2, row.pattern_sim, row.pattern_sim_2ref, row.final_loss
        );
    })?;
    println!();
    table.write_markdown(std::io::stdout())?;
    println!("noise baseline t-IoU {:.3}", table.noise_t_iou);
    Ok(())
}
