use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::SynthScene;
use super::track::extract_interval;
use crate::error::{Error, Result};
use crate::interval::IntervalSpec;

/// Reference crop drawn from a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledReference {
    /// `height x width x channels`, masked crop centered on a blank grid.
    pub image: Array3<f64>,
    /// Presence interval in window-relative frames, over `f_b - f_a + 1` frames.
    pub interval: IntervalSpec,
    /// Source frame (scene coordinates).
    pub frame: usize,
    /// Whether `frame` lies outside the window.
    pub outside: bool,
}

/// Crops the masked cells of `entity_id` at `frame` by their bounding box
/// and re-centers them on a blank grid of the frame's size.
pub fn centered_crop(scene: &SynthScene, entity_id: usize, frame: usize) -> Result<Array3<f64>> {
    let e = scene.entity(entity_id).ok_or_else(|| Error::invalid(format!("no entity {entity_id}")))?;
    let (y0, x0, y1, x1) = e.track.bbox(frame).ok_or(Error::NoPresence)?;
    let [_, h, w, c] = scene.video.dims();
    let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
    let (oy, ox) = ((h - bh) / 2, (w - bw) / 2);
    let mut out = Array3::zeros((h, w, c));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if e.track.get(frame, y, x) {
                out.slice_mut(ndarray::s![oy + y - y0, ox + x - x0, ..])
                    .assign(&scene.video.data.slice(ndarray::s![frame, y, x, ..]));
            }
        }
    }
    Ok(out)
}

/// Picks a frame where the entity is present, outside `[f_a, f_b]` when
/// possible, and returns its centered crop with the entity's presence
/// interval clipped to the window.
pub fn sample_reference<R: Rng>(
    scene: &SynthScene,
    entity_id: usize,
    window: (usize, usize),
    area_threshold: usize,
    rng: &mut R,
) -> Result<SampledReference> {
    let (fa, fb) = window;
    if fa > fb || fb >= scene.video.frames() {
        return Err(Error::invalid(format!("window [{fa}, {fb}] outside the scene")));
    }
    let e = scene.entity(entity_id).ok_or_else(|| Error::invalid(format!("no entity {entity_id}")))?;
    let present: Vec<usize> = (0..e.track.frames()).filter(|f| e.track.area(*f) > 0).collect();
    let outside: Vec<usize> = present.iter().copied().filter(|f| *f < fa || *f > fb).collect();
    let (pool, is_outside) = if outside.is_empty() { (&present, false) } else { (&outside, true) };
    let frame = *pool.choose(rng).ok_or(Error::NoPresence)?;

    let p = extract_interval(&e.track, area_threshold).ok_or(Error::NoPresence)?;
    let (t0, t1) = (p.t0.max(fa), p.t1.min(fb));
    if t0 > t1 {
        return Err(Error::NoPresence);
    }
    let interval = IntervalSpec::new((t0 - fa) as f64, (t1 - fa) as f64, fb - fa + 1)?;
    Ok(SampledReference { image: centered_crop(scene, entity_id, frame)?, interval, frame, outside: is_outside })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub zoom_prob: f64,
    /// Largest zoom factor above 1.
    pub zoom_max: f64,
    pub jitter_prob: f64,
    /// Per-channel offset drawn from `[-a, a]`.
    pub jitter_amplitude: f64,
    pub smooth_prob: f64,
    /// Blend weight of the 3x3 box blur.
    pub smooth_weight: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            zoom_prob: 0.0,
            zoom_max: 0.25,
            jitter_prob: 0.5,
            jitter_amplitude: 0.1,
            smooth_prob: 0.0,
            smooth_weight: 0.3,
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        flip_prob: 0.0,
        zoom_prob: 0.0,
        zoom_max: 0.0,
        jitter_prob: 0.0,
        jitter_amplitude: 0.0,
        smooth_prob: 0.0,
        smooth_weight: 0.0,
    };
}

pub fn flip_horizontal(img: &Array3<f64>) -> Array3<f64> {
    let mut out = img.clone();
    out.invert_axis(Axis(1));
    out.as_standard_layout().into_owned()
}

/// Nearest-neighbour zoom about the grid center.
pub fn zoom(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    let (h, w, _) = img.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Array3::zeros(img.dim());
    for y in 0..h {
        for x in 0..w {
            let sy = (cy + (y as f64 - cy) / factor).round().clamp(0.0, h as f64 - 1.0) as usize;
            let sx = (cx + (x as f64 - cx) / factor).round().clamp(0.0, w as f64 - 1.0) as usize;
            out.slice_mut(ndarray::s![y, x, ..]).assign(&img.slice(ndarray::s![sy, sx, ..]));
        }
    }
    out
}

/// `(1 - weight) * img + weight * box3x3(img)`, edges averaged over the
/// cells that exist.
pub fn smooth(img: &Array3<f64>, weight: f64) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let mut out = img * (1.0 - weight);
    for y in 0..h {
        for x in 0..w {
            let mut acc = vec![0.0; c];
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    for (a, v) in acc.iter_mut().zip(img.slice(ndarray::s![yy, xx, ..])) {
                        *a += v;
                    }
                    n += 1.0;
                }
            }
            for (k, a) in acc.into_iter().enumerate() {
                out[[y, x, k]] += weight * a / n;
            }
        }
    }
    out
}

pub fn augment<R: Rng>(img: &Array3<f64>, rng: &mut R, cfg: &AugmentConfig) -> Array3<f64> {
    let mut out = img.clone();
    if rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0)) {
        out = flip_horizontal(&out);
    }
    if rng.gen_bool(cfg.zoom_prob.clamp(0.0, 1.0)) {
        let f = 1.0 + rng.gen_range(0.0..=cfg.zoom_max.max(0.0));
        out = zoom(&out, f);
    }
    if rng.gen_bool(cfg.jitter_prob.clamp(0.0, 1.0)) {
        let a = cfg.jitter_amplitude.abs();
        let c = out.dim().2;
        let offsets: Vec<f64> = (0..c).map(|_| rng.gen_range(-a..=a)).collect();
        for mut px in out.lanes_mut(Axis(2)) {
            for (v, o) in px.iter_mut().zip(&offsets) {
                *v += o;
            }
        }
    }
    if rng.gen_bool(cfg.smooth_prob.clamp(0.0, 1.0)) {
        out = smooth(&out, cfg.smooth_weight);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::{generate_scene_with_intervals, Entity, SceneConfig};
    use crate::synth::track::MaskTrack;
    use crate::tokens::TokenGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gapped_scene() -> SynthScene {
        // One 2x2 entity present only at frames 1 and 9 of 12.
        let cfg = SceneConfig { frames: 12, height: 6, width: 6, channels: 3, ..Default::default() };
        let mut scene = generate_scene_with_intervals(&cfg, &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut track = MaskTrack::empty(12, 6, 6);
        let mut positions = vec![None; 12];
        for (f, (y, x)) in [(1, (0, 0)), (9, (3, 4))] {
            positions[f] = Some((y, x));
            for dy in 0..2 {
                for dx in 0..2 {
                    track.set(f, y + dy, x + dx, true);
                    scene.video.data.slice_mut(ndarray::s![f, y + dy, x + dx, ..]).fill(1.0 + dy as f64);
                }
            }
        }
        let e = Entity {
            id: 0,
            tag: "zorb".into(),
            pattern: Array3::ones((2, 2, 3)),
            track,
            first_frame: 1,
            last_frame: 9,
            positions,
        };
        SynthScene { video: scene.video, entities: vec![e] }
    }

    #[test]
    fn prefers_frames_outside_window() {
        let scene = gapped_scene();
        for seed in 0..20 {
            let r = sample_reference(&scene, 0, (4, 8), 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(r.frame == 1 || r.frame == 9);
            assert!(r.outside);
            assert_eq!((r.interval.t0, r.interval.t1, r.interval.total_frames), (0.0, 4.0, 5));
        }
    }

    #[test]
    fn falls_back_to_inside_frames() {
        let cfg = SceneConfig::default();
        let scene = generate_scene_with_intervals(&cfg, &[(2, 5)], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r = sample_reference(&scene, 0, (0, 7), 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!r.outside);
        assert!((2..=5).contains(&r.frame));
        assert_eq!((r.interval.t0, r.interval.t1), (2.0, 5.0));
    }

    #[test]
    fn never_samples_absent_frames() {
        let cfg = SceneConfig::default();
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = generate_scene_with_intervals(&cfg, &[(1, 3)], &mut rng).unwrap();
            let r = sample_reference(&scene, 0, (3, 7), 1, &mut rng).unwrap();
            assert!(scene.entities[0].track.area(r.frame) > 0);
            assert_eq!((r.interval.t0, r.interval.t1), (0.0, 0.0));
        }
    }

    #[test]
    fn crop_is_centered() {
        let scene = gapped_scene();
        let crop = centered_crop(&scene, 0, 9).unwrap();
        let (h, w, _) = crop.dim();
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if crop.slice(ndarray::s![y, x, ..]).iter().any(|v| *v != 0.0) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        let (cy, cx) = (sy / n, sx / n);
        assert!((cy - (h as f64 - 1.0) / 2.0).abs() <= 1.0);
        assert!((cx - (w as f64 - 1.0) / 2.0).abs() <= 1.0);
        assert_eq!(crop[[2, 2, 0]], 1.0);
        assert_eq!(crop[[3, 2, 0]], 2.0);
    }

    #[test]
    fn missing_entity_presence_is_reported() {
        let cfg = SceneConfig::default();
        let mut scene = generate_scene_with_intervals(&cfg, &[(2, 3)], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        scene.entities[0].track = MaskTrack::empty(8, 4, 4);
        let err = sample_reference(&scene, 0, (0, 7), 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::NoPresence)));
    }

    fn image(seed: u64) -> Array3<f64> {
        let g = TokenGrid { data: ndarray::Array4::zeros((1, 4, 5, 3)) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.data.index_axis(Axis(0), 0).mapv(|_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn no_augmentation_is_identity() {
        let img = image(1);
        assert_eq!(augment(&img, &mut ChaCha8Rng::seed_from_u64(3), &AugmentConfig::NONE), img);
    }

    #[test]
    fn flip_is_involution() {
        let img = image(2);
        assert_ne!(flip_horizontal(&img), img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn jitter_bounded_by_amplitude() {
        let img = image(4);
        let cfg = AugmentConfig { jitter_prob: 1.0, jitter_amplitude: 0.07, ..AugmentConfig::NONE };
        for seed in 0..50 {
            let out = augment(&img, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let dev = (&out - &img).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dev <= 0.07 + 1e-15);
        }
    }

    #[test]
    fn augment_is_deterministic() {
        let img = image(5);
        let cfg = AugmentConfig { zoom_prob: 0.5, smooth_prob: 0.5, ..Default::default() };
        let a = augment(&img, &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        let b = augment(&img, &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn smoothing_preserves_constants_and_zoom_one_is_identity() {
        let c = Array3::from_elem((3, 4, 2), 0.7);
        assert!((smooth(&c, 0.4) - &c).iter().all(|v| v.abs() < 1e-15));
        let img = image(6);
        assert_eq!(zoom(&img, 1.0), img);
    }
}
