//! Rotary embedding basics: rotation preserves length and attention
//! scores depend only on the position offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflab::rope::{make_frequency_bank, phase_1d, phase_3d, rotary_score, rotate, AxisBanks, AxisSplit, TokenVector};

fn main() -> reflab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bank = make_frequency_bank(64, 10_000.0)?;
    let q = TokenVector::new((0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let k = TokenVector::new((0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let rotated = rotate(&q, &phase_1d(&bank, 37.0))?;
    println!("|q| = {:.12}, |R q| = {:.12}", q.norm(), rotated.norm());

    for (m, n) in [(3.0, 1.0), (10.0, 8.0), (1002.0, 1000.0)] {
        let s = rotary_score(&q, &k, &phase_1d(&bank, m), &phase_1d(&bank, n))?;
        println!("score(q@{m}, k@{n}) = {s:.10}");
    }

    // Video tokens rotate per axis: x, y, then t channel groups.
    let split = AxisSplit::new(16, 16, 32)?;
    let banks = AxisBanks::new(split, 10_000.0, 10_000.0)?;
    let p = phase_3d(&banks, split, 2.0, 1.0, 5.0)?;
    println!("3-D phase has {} pairs; first x/y/t phases: {:.3} {:.3} {:.3}", p.len(), p.as_slice()[0], p.as_slice()[8], p.as_slice()[16]);
    Ok(())
}
