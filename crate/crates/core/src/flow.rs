//! Rectified-flow objective, condition dropping, multi-condition
//! guidance and the shifted Euler sampler.

use std::cell::Cell;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conditions, FlowTransformer, VelocityField};
use crate::nn::Grads;
use crate::tokens::TokenGrid;

/// `z_t = (1 - t) z + t eps`.
pub fn interpolate(z: &TokenGrid, eps: &TokenGrid, t: f64) -> Result<TokenGrid> {
    if z.dims() != eps.dims() {
        return Err(Error::invalid(format!("shape mismatch {:?} vs {:?}", z.dims(), eps.dims())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} is outside [0, 1]")));
    }
    let mut data = z.data.clone();
    ndarray::Zip::from(&mut data).and(&eps.data).for_each(|a, &e| *a = (1.0 - t) * *a + t * e);
    Ok(TokenGrid { data })
}

/// One training example's flow state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub z: TokenGrid,
    pub eps: TokenGrid,
    pub t: f64,
    pub z_t: TokenGrid,
}

impl FlowState {
    pub fn new(z: TokenGrid, eps: TokenGrid, t: f64) -> Result<Self> {
        let z_t = interpolate(&z, &eps, t)?;
        Ok(Self { z, eps, t, z_t })
    }

    /// `eps - z`.
    pub fn target(&self) -> TokenGrid {
        TokenGrid { data: &self.eps.data - &self.z.data }
    }
}

/// Mean squared error between a predicted velocity and `eps - z`.
pub fn velocity_mse(pred: &TokenGrid, state: &FlowState) -> Result<f64> {
    if pred.dims() != state.z.dims() {
        return Err(Error::invalid("prediction shape does not match latent"));
    }
    let target = state.target();
    let n = pred.data.len() as f64;
    let loss = ndarray::Zip::from(&pred.data).and(&target.data).fold(0.0, |acc, p, t| acc + (p - t) * (p - t)) / n;
    if !loss.is_finite() {
        return Err(Error::Numeric { step: 0, detail: format!("flow loss is {loss}") });
    }
    Ok(loss)
}

/// Flow-matching loss on video tokens only.
pub fn flow_loss<V: VelocityField>(model: &V, state: &FlowState, cond: &Conditions) -> Result<f64> {
    let pred = model.velocity(&state.z_t, state.t, cond)?;
    velocity_mse(&pred, state)
}

/// Loss plus parameter gradients, accumulated into `grads`.
pub fn flow_loss_and_grad(model: &FlowTransformer, state: &FlowState, cond: &Conditions, grads: &mut Grads) -> Result<f64> {
    let (pred, cache) = model.forward(&state.z_t, state.t, cond)?;
    let loss = velocity_mse(&pred, state)?;
    let n = pred.data.len() as f64;
    let target = state.target();
    let dvel = TokenGrid { data: (&pred.data - &target.data).mapv(|d| 2.0 * d / n) };
    model.backward(&cache, &dvel, grads);
    Ok(loss)
}

/// Drops the reference set and the caption with independent coin flips.
/// Dropped tokens keep their positions; the model swaps their features
/// for learned null vectors.
pub fn drop_conditions<R: Rng>(cond: &Conditions, p_ref_drop: f64, p_text_drop: f64, rng: &mut R) -> Conditions {
    let drop_ref = rng.gen::<f64>() < p_ref_drop;
    let drop_text = rng.gen::<f64>() < p_text_drop;
    Conditions {
        ref_dropped: cond.ref_dropped || drop_ref,
        text_dropped: cond.text_dropped || drop_text,
        ..cond.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgWeights {
    pub w_text: f64,
    pub w_ref: f64,
    pub w_both: f64,
}

impl Default for CfgWeights {
    fn default() -> Self {
        Self { w_text: 8.0, w_ref: 2.0, w_both: 3.0 }
    }
}

impl CfgWeights {
    pub const NONE: CfgWeights = CfgWeights { w_text: 0.0, w_ref: 0.0, w_both: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if [self.w_text, self.w_ref, self.w_both].iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("CFG weights must be finite"))
        }
    }
}

/// Guided velocity from four passes:
/// `e(r,c) + w_text (e(r,c) - e(r,0)) + w_ref (e(r,c) - e(0,c)) + w_both (e(r,c) - e(0,0))`.
pub fn multi_cfg<V: VelocityField>(model: &V, z_t: &TokenGrid, t: f64, cond: &Conditions, w: CfgWeights) -> Result<TokenGrid> {
    let both = model.velocity(z_t, t, &cond.with_drops(false, false))?;
    let ref_only = model.velocity(z_t, t, &cond.with_drops(false, true))?;
    let text_only = model.velocity(z_t, t, &cond.with_drops(true, false))?;
    let neither = model.velocity(z_t, t, &cond.with_drops(true, true))?;
    let mut out = both.data.clone();
    ndarray::Zip::from(&mut out)
        .and(&both.data)
        .and(&ref_only.data)
        .and(&text_only.data)
        .and(&neither.data)
        .for_each(|o, &e, &r, &x, &n| {
            *o = e + w.w_text * (e - r) + w.w_ref * (e - x) + w.w_both * (e - n);
        });
    Ok(TokenGrid { data: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub shift: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 40, shift: 5.66, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        if !(self.shift > 0.0 && self.shift.is_finite()) {
            return Err(Error::invalid("time shift must be positive"));
        }
        Ok(())
    }

    /// Noise levels from 1 down to 0, `steps + 1` entries.
    pub fn timesteps(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| shift_time(1.0 - k as f64 / self.steps as f64, self.shift))
            .collect()
    }
}

/// `shift * u / (1 + (shift - 1) u)`.
pub fn shift_time(u: f64, shift: f64) -> f64 {
    shift * u / (1.0 + (shift - 1.0) * u)
}

pub fn gaussian_grid<R: Rng>(dims: [usize; 4], rng: &mut R) -> TokenGrid {
    TokenGrid { data: Array4::from_shape_simple_fn((dims[0], dims[1], dims[2], dims[3]), || rng.sample(StandardNormal)) }
}

/// Euler integration from pure noise at `t = 1` to `t = 0` using guided
/// velocities.
pub fn sample<V: VelocityField>(model: &V, cond: &Conditions, cfg: CfgWeights, sc: &SamplerConfig, dims: [usize; 4]) -> Result<TokenGrid> {
    sc.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut z = gaussian_grid(dims, &mut rng);
    let ts = sc.timesteps();
    for (k, pair) in ts.windows(2).enumerate() {
        let v = multi_cfg(model, &z, pair[0], cond, cfg).map_err(|e| match e {
            Error::Numeric { detail, .. } => Error::Numeric { step: k, detail },
            other => other,
        })?;
        let dt = pair[1] - pair[0];
        z.data.zip_mut_with(&v.data, |a, &b| *a += dt * b);
        if !z.is_finite() {
            return Err(Error::Numeric { step: k, detail: "sampler state became non-finite".into() });
        }
    }
    Ok(z)
}

/// Wraps a field and counts forward passes.
#[derive(Debug)]
pub struct CountingField<V> {
    pub inner: V,
    pub calls: Cell<usize>,
}

impl<V> CountingField<V> {
    pub fn new(inner: V) -> Self {
        Self { inner, calls: Cell::new(0) }
    }
}

impl<V: VelocityField> VelocityField for CountingField<V> {
    fn velocity(&self, z_t: &TokenGrid, t: f64, cond: &Conditions) -> Result<TokenGrid> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(z_t, t, cond)
    }
}
