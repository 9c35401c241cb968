use ndarray::{s, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::track::MaskTrack;
use crate::error::{Error, Result};
use crate::tokens::TokenGrid;

/// Synthetic tag words. Scenes draw distinct words from this list.
pub const VOCABULARY: [&str; 32] = [
    "zorb", "kipu", "muva", "tesh", "lorn", "quab", "fyzo", "drem", "snib", "vald", "orpa", "gule", "hux", "jent",
    "wimo", "cray", "blit", "nofu", "prax", "seld", "tuvo", "yarn", "emko", "fask", "idra", "kolt", "mirv", "nexa",
    "plom", "rusk", "uzzi", "zeph",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Entity count is drawn uniformly from `min_entities..=max_entities`.
    pub min_entities: usize,
    pub max_entities: usize,
    pub pattern_height: usize,
    pub pattern_width: usize,
    /// Presence length in frames, drawn uniformly from this inclusive range.
    pub min_len: usize,
    pub max_len: usize,
    pub background_std: f64,
    pub pattern_scale: f64,
    /// Largest per-frame move of an entity along each axis.
    pub max_drift: usize,
    pub placement_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 4,
            width: 4,
            channels: 16,
            min_entities: 1,
            max_entities: 2,
            pattern_height: 2,
            pattern_width: 2,
            min_len: 2,
            max_len: 6,
            background_std: 0.5,
            pattern_scale: 1.0,
            max_drift: 1,
            placement_attempts: 64,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.frames, self.height, self.width, self.channels, self.pattern_height, self.pattern_width]
            .iter()
            .any(|d| *d == 0)
        {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.pattern_height > self.height || self.pattern_width > self.width {
            return Err(Error::invalid("pattern is larger than the frame"));
        }
        if self.min_entities > self.max_entities || self.max_entities > VOCABULARY.len() {
            return Err(Error::invalid("bad entity count range"));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > self.frames {
            return Err(Error::invalid("presence lengths must satisfy 1 <= min_len <= max_len <= frames"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub tag: String,
    /// `pattern_height x pattern_width x channels`.
    pub pattern: Array3<f64>,
    pub track: MaskTrack,
    /// Construction interval (inclusive frames).
    pub first_frame: usize,
    pub last_frame: usize,
    /// Top-left corner per frame while present.
    pub positions: Vec<Option<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub video: TokenGrid,
    pub entities: Vec<Entity>,
}

impl SynthScene {
    pub fn entity(&self, id: usize) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Zero-mean, unit-RMS Gaussian pattern scaled by `scale`.
pub fn random_pattern<R: Rng>(h: usize, w: usize, c: usize, scale: f64, rng: &mut R) -> Array3<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = Array3::from_shape_simple_fn((h, w, c), || normal.sample(rng));
    let mean = p.mean().unwrap_or(0.0);
    p.mapv_inplace(|v| v - mean);
    let rms = (p.mapv(|v| v * v).sum() / p.len() as f64).sqrt();
    if rms > 0.0 {
        p.mapv_inplace(|v| scale * v / rms);
    }
    p
}

/// Random walk over `[first, last]` that never overlaps `others` on the
/// same frame; `None` when it gets boxed in.
fn drift_path<R: Rng>(
    cfg: &SceneConfig,
    first: usize,
    last: usize,
    others: &[Entity],
    rng: &mut R,
) -> Option<Vec<Option<(usize, usize)>>> {
    let max_y = cfg.height - cfg.pattern_height;
    let max_x = cfg.width - cfg.pattern_width;
    let free = |f: usize, p: (usize, usize)| {
        others.iter().all(|o| match o.positions[f] {
            Some(q) => !footprint_overlaps(p, q, cfg.pattern_height, cfg.pattern_width),
            None => true,
        })
    };
    let mut path = vec![None; cfg.frames];
    let mut prev: Option<(usize, usize)> = None;
    for f in first..=last {
        let (ylo, yhi, xlo, xhi) = match prev {
            None => (0, max_y, 0, max_x),
            Some((y, x)) => (
                y.saturating_sub(cfg.max_drift),
                (y + cfg.max_drift).min(max_y),
                x.saturating_sub(cfg.max_drift),
                (x + cfg.max_drift).min(max_x),
            ),
        };
        let options: Vec<(usize, usize)> =
            (ylo..=yhi).flat_map(|y| (xlo..=xhi).map(move |x| (y, x))).filter(|p| free(f, *p)).collect();
        let p = *options.choose(rng)?;
        path[f] = Some(p);
        prev = Some(p);
    }
    Some(path)
}

fn footprint_overlaps(a: (usize, usize), b: (usize, usize), h: usize, w: usize) -> bool {
    a.0 < b.0 + h && b.0 < a.0 + h && a.1 < b.1 + w && b.1 < a.1 + w
}

/// Renders patterns into a background at the given positions.
pub fn render(background: &TokenGrid, entities: &[Entity]) -> TokenGrid {
    let mut video = background.clone();
    for e in entities {
        let (ph, pw, _) = e.pattern.dim();
        for (f, pos) in e.positions.iter().enumerate() {
            if let Some((y, x)) = pos {
                video.data.slice_mut(s![f, *y..*y + ph, *x..*x + pw, ..]).assign(&e.pattern);
            }
        }
    }
    video
}

fn track_for(cfg: &SceneConfig, positions: &[Option<(usize, usize)>]) -> MaskTrack {
    let mut t = MaskTrack::empty(cfg.frames, cfg.height, cfg.width);
    for (f, pos) in positions.iter().enumerate() {
        if let Some((y, x)) = pos {
            for dy in 0..cfg.pattern_height {
                for dx in 0..cfg.pattern_width {
                    t.set(f, y + dy, x + dx, true);
                }
            }
        }
    }
    t
}

/// Places entities whose presence intervals are given, drawing patterns,
/// tags and drift paths from `rng`.
pub fn generate_scene_with_intervals<R: Rng>(
    cfg: &SceneConfig,
    intervals: &[(usize, usize)],
    rng: &mut R,
) -> Result<SynthScene> {
    cfg.validate()?;
    if intervals.len() > VOCABULARY.len() {
        return Err(Error::Generation("more entities than tag words".into()));
    }
    for &(a, b) in intervals {
        if a > b || b >= cfg.frames {
            return Err(Error::invalid(format!("entity interval [{a}, {b}] outside {} frames", cfg.frames)));
        }
    }
    let bg = Normal::new(0.0, cfg.background_std.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let background = TokenGrid {
        data: Array4::from_shape_simple_fn((cfg.frames, cfg.height, cfg.width, cfg.channels), || bg.sample(rng)),
    };
    let mut words: Vec<&str> = VOCABULARY.to_vec();
    words.shuffle(rng);

    let patterns: Vec<Array3<f64>> = intervals
        .iter()
        .map(|_| random_pattern(cfg.pattern_height, cfg.pattern_width, cfg.channels, cfg.pattern_scale, rng))
        .collect();

    // Paths are laid out entity by entity; a dead end restarts the layout.
    let mut entities: Vec<Entity> = Vec::with_capacity(intervals.len());
    let mut attempts = 0;
    while entities.len() < intervals.len() {
        let id = entities.len();
        let (first, last) = intervals[id];
        match drift_path(cfg, first, last, &entities, rng) {
            Some(positions) => entities.push(Entity {
                id,
                tag: words[id].to_string(),
                pattern: patterns[id].clone(),
                track: track_for(cfg, &positions),
                first_frame: first,
                last_frame: last,
                positions,
            }),
            None => {
                attempts += 1;
                if attempts >= cfg.placement_attempts.max(1) {
                    return Err(Error::Generation(format!(
                        "entity {id} does not fit beside the others after {attempts} attempts"
                    )));
                }
                entities.clear();
            }
        }
    }
    let video = render(&background, &entities);
    Ok(SynthScene { video, entities })
}

/// Background noise plus randomly timed, drifting entity patterns.
pub fn generate_scene<R: Rng>(rng: &mut R, cfg: &SceneConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let n = rng.gen_range(cfg.min_entities..=cfg.max_entities);
    let intervals: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let start = rng.gen_range(0..=cfg.frames - len);
            (start, start + len - 1)
        })
        .collect();
    generate_scene_with_intervals(cfg, &intervals, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::track::extract_interval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_scene_is_background_only() {
        let cfg = SceneConfig { min_entities: 0, max_entities: 0, ..Default::default() };
        let s = generate_scene(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        assert!(s.entities.is_empty());
    }

    #[test]
    fn single_entity_track_matches_interval() {
        let cfg = SceneConfig::default();
        let s = generate_scene_with_intervals(&cfg, &[(2, 5)], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let areas = s.entities[0].track.areas();
        for (f, a) in areas.iter().enumerate() {
            assert_eq!(*a > 0, (2..=5).contains(&f), "frame {f}");
        }
    }

    #[test]
    fn pattern_appears_exactly_where_track_is_set() {
        let cfg = SceneConfig::default();
        let s = generate_scene(&mut ChaCha8Rng::seed_from_u64(12), &cfg).unwrap();
        for e in &s.entities {
            for (f, pos) in e.positions.iter().enumerate() {
                if let Some((y, x)) = pos {
                    let win = s.video.data.slice(s![f, *y..*y + 2, *x..*x + 2, ..]);
                    assert_eq!(win, e.pattern);
                }
                assert_eq!(pos.is_some(), e.track.area(f) > 0);
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&mut ChaCha8Rng::seed_from_u64(77), &cfg).unwrap();
        let b = generate_scene(&mut ChaCha8Rng::seed_from_u64(77), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tags_are_unique_within_scene() {
        let cfg = SceneConfig { min_entities: 3, max_entities: 3, height: 6, width: 6, ..Default::default() };
        let s = generate_scene(&mut ChaCha8Rng::seed_from_u64(3), &cfg).unwrap();
        let mut tags: Vec<_> = s.entities.iter().map(|e| e.tag.clone()).collect();
        tags.sort();
        tags.dedup();
        assert_eq!(tags.len(), 3);
    }

    #[test]
    fn crowded_scene_fails_to_place() {
        let cfg = SceneConfig { height: 2, width: 2, max_drift: 0, placement_attempts: 8, ..Default::default() };
        let err = generate_scene_with_intervals(&cfg, &[(0, 3), (1, 4)], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Generation(_))));
    }

    #[test]
    fn extraction_recovers_construction_interval() {
        let cfg = SceneConfig::default();
        for seed in 0..20 {
            let s = generate_scene(&mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
            for e in &s.entities {
                let p = extract_interval(&e.track, 1).unwrap();
                assert_eq!((p.t0, p.t1), (e.first_frame, e.last_frame));
            }
        }
    }
}
