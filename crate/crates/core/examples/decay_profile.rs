//! Temporal attention decay of interval-encoded reference tokens.
//!
//! Two intervals with the same midpoint, [8, 10] and [1, 17] over 18
//! frames: the midpoint encoding cannot tell them apart, the weighted one
//! can.

use reflab::interval::{decay_profile, IntervalMode, IntervalSpec, WeRoPEWeights};
use reflab::rope::make_frequency_bank;

fn bar(score: f64) -> String {
    let n = ((score + 1.0) * 20.0).round().clamp(0.0, 40.0) as usize;
    "#".repeat(n)
}

fn main() -> reflab::Result<()> {
    let bank = make_frequency_bank(32, 10_000.0)?;
    let w = WeRoPEWeights::default();
    for mode in [IntervalMode::Mid, IntervalMode::We] {
        for (t0, t1) in [(8.0, 10.0), (1.0, 17.0)] {
            let interval = IntervalSpec::new(t0, t1, 18)?;
            let p = decay_profile(mode, &interval, w, &bank)?;
            println!("{} [{t0}, {t1}]  argmax frame {}", mode.name(), p.argmax());
            for (f, s) in p.offsets.iter().zip(&p.scores) {
                println!("  {f:2} {s:+.3} {}", bar(*s));
            }
        }
    }
    Ok(())
}
