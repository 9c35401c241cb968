//! Rectified flow pieces with analytic velocity fields: the loss, the
//! four-pass guidance combiner and the shifted Euler sampler.

use ndarray::Array4;
use reflab::flow::{flow_loss, multi_cfg, sample, CfgWeights, CountingField, FlowState, SamplerConfig};
use reflab::model::{Conditions, VelocityField};
use reflab::tokens::TokenGrid;

/// Always points from the current state straight at `target`.
struct Toward {
    target: TokenGrid,
}

impl VelocityField for Toward {
    fn velocity(&self, z_t: &TokenGrid, t: f64, _cond: &Conditions) -> reflab::Result<TokenGrid> {
        let data = (&z_t.data - &self.target.data) / t.max(1e-12);
        TokenGrid::from_array(data)
    }
}

fn main() -> reflab::Result<()> {
    let target = TokenGrid::from_array(Array4::from_shape_fn((4, 2, 2, 3), |(t, y, x, c)| (t + y + x + c) as f64 * 0.1))?;
    let eps = TokenGrid::from_array(Array4::from_elem((4, 2, 2, 3), 0.5))?;
    let field = Toward { target: target.clone() };
    let cond = Conditions::unconditional(8);

    let state = FlowState::new(target.clone(), eps, 0.3)?;
    println!("loss of the exact field: {:e}", flow_loss(&field, &state, &cond)?);

    let counting = CountingField::new(Toward { target: target.clone() });
    multi_cfg(&counting, &state.z_t, state.t, &cond, CfgWeights::default())?;
    println!("forward passes per guided step: {}", counting.calls.get());

    let sc = SamplerConfig { steps: 40, shift: 5.66, seed: 1 };
    let ts = sc.timesteps();
    println!("first timesteps {:.3?} ... last {:.3?}", &ts[..4], &ts[ts.len() - 2..]);
    let out = sample(&field, &cond, CfgWeights::NONE, &sc, target.dims())?;
    let err = (&out.data - &target.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("sampler recovers the target, max error {err:e}");
    Ok(())
}
