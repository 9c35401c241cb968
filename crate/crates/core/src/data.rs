//! Turning synthetic scenes into model conditions.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conditions, ModelConfig};
use crate::synth::{augment, sample_reference, AugmentConfig, SynthScene};
use crate::tokens::{ReferenceSpec, TagEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionConfig {
    /// Cells an entity must cover for a frame to count as present.
    pub area_threshold: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { area_threshold: 1 }
    }
}

/// Builds references (one per entity, index = entity order) and a caption
/// holding one pooled tag embedding per entity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionBuilder {
    pub embedder: TagEmbedder,
    pub area_threshold: usize,
}

impl ConditionBuilder {
    pub fn new(model: &ModelConfig, cfg: &ConditionConfig) -> Self {
        Self { embedder: TagEmbedder { dim: model.tag_dim, k: model.tag_tokens }, area_threshold: cfg.area_threshold }
    }

    pub fn caption(&self, tags: &[&str]) -> Array2<f64> {
        let mut out = Array2::zeros((tags.len(), self.embedder.dim));
        for (mut row, tag) in out.rows_mut().into_iter().zip(tags) {
            row.assign(&self.embedder.embed(tag).mean_axis(Axis(0)).expect("k >= 1"));
        }
        out
    }

    pub fn build<R: Rng>(&self, scene: &SynthScene, aug: Option<&AugmentConfig>, rng: &mut R) -> Result<Conditions> {
        let frames = scene.video.frames();
        let mut refs = Vec::with_capacity(scene.entities.len());
        for (index, e) in scene.entities.iter().enumerate() {
            let r = sample_reference(scene, e.id, (0, frames - 1), self.area_threshold, rng)?;
            let image = match aug {
                Some(cfg) => augment(&r.image, rng, cfg),
                None => r.image,
            };
            refs.push(ReferenceSpec { image, interval: r.interval, tag_tokens: self.embedder.embed(&e.tag), index });
        }
        if refs.iter().any(|r| !r.image.iter().all(|v| v.is_finite())) {
            return Err(Error::Generation("non-finite reference crop".into()));
        }
        let tags: Vec<&str> = scene.entities.iter().map(|e| e.tag.as_str()).collect();
        Ok(Conditions::new(refs, self.caption(&tags)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene_with_intervals, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conditions_follow_entities() {
        let cfg = SceneConfig::default();
        let scene = generate_scene_with_intervals(&cfg, &[(1, 3), (4, 7)], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = ConditionBuilder::new(&ModelConfig::default(), &ConditionConfig::default());
        let c = b.build(&scene, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.refs.len(), 2);
        assert_eq!((c.refs[1].interval.t0, c.refs[1].interval.t1), (4.0, 7.0));
        assert_eq!(c.refs[0].tag_tokens.dim(), (4, 32));
        assert_eq!(c.caption.dim(), (2, 32));
        assert_eq!(c.refs[1].index, 1);
    }
}
