use ndarray::{s, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalSpec;
use crate::synth::{extract_from_areas, PresenceInterval};
use crate::tokens::TokenGrid;

/// A predicted interval (or none) against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPair {
    pub predicted: Option<(f64, f64)>,
    pub ground_truth: (f64, f64),
    pub total_frames: usize,
}

impl IntervalPair {
    pub fn new(predicted: Option<PresenceInterval>, ground_truth: &IntervalSpec) -> Self {
        Self {
            predicted: predicted.map(|p| (p.t0 as f64, p.t1 as f64)),
            ground_truth: (ground_truth.t0, ground_truth.t1),
            total_frames: ground_truth.total_frames,
        }
    }

    pub fn of(predicted: Option<(f64, f64)>, ground_truth: (f64, f64), total_frames: usize) -> Self {
        Self { predicted, ground_truth, total_frames }
    }
}

/// Overlap of the two closed segments over their union. Two identical
/// degenerate segments score 1; a missing prediction scores 0.
pub fn t_iou(p: &IntervalPair) -> f64 {
    let Some((a0, a1)) = p.predicted else { return 0.0 };
    let (b0, b1) = p.ground_truth;
    if (a0, a1) == (b0, b1) {
        return 1.0;
    }
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = a1.max(b1) - a0.min(b0);
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// RMS of the start and end errors, each divided by `T`. A missing
/// prediction scores 1.
pub fn t_l2(p: &IntervalPair) -> f64 {
    let Some((a0, a1)) = p.predicted else { return 1.0 };
    let (b0, b1) = p.ground_truth;
    let t = p.total_frames as f64;
    let (ds, de) = ((a0 - b0) / t, (a1 - b1) / t);
    ((ds * ds + de * de) / 2.0).sqrt()
}

fn centered(view: impl Iterator<Item = f64>) -> (Vec<f64>, f64) {
    let v: Vec<f64> = view.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// Pattern prepared for normalized cross-correlation.
#[derive(Debug, Clone)]
pub struct Template {
    dims: (usize, usize, usize),
    centered: Vec<f64>,
    norm: f64,
}

impl Template {
    pub fn new(pattern: &Array3<f64>) -> Result<Self> {
        let (centered, norm) = centered(pattern.iter().copied());
        if !(norm > 1e-12) {
            return Err(Error::invalid("pattern has zero variance"));
        }
        Ok(Self { dims: pattern.dim(), centered, norm })
    }

    /// Highest correlation over all placements in `frame`, or `None` when
    /// every window has zero variance.
    pub fn peak(&self, frame: ArrayView3<'_, f64>) -> Result<Option<f64>> {
        let (ph, pw, pc) = self.dims;
        let (h, w, c) = frame.dim();
        if ph > h || pw > w || pc != c {
            return Err(Error::invalid(format!("pattern {:?} does not fit frame {:?}", self.dims, frame.dim())));
        }
        let mut best: Option<f64> = None;
        for y in 0..=h - ph {
            for x in 0..=w - pw {
                let (win, norm) = centered(frame.slice(s![y..y + ph, x..x + pw, ..]).iter().copied());
                if norm <= 1e-12 {
                    continue;
                }
                let r = win.iter().zip(&self.centered).map(|(a, b)| a * b).sum::<f64>() / (norm * self.norm);
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
        }
        Ok(best)
    }
}

/// Per-frame peak correlation of `pattern` in `video`.
pub fn correlation_track(video: &TokenGrid, pattern: &Array3<f64>) -> Result<Vec<Option<f64>>> {
    let tpl = Template::new(pattern)?;
    (0..video.frames()).map(|f| tpl.peak(video.frame(f))).collect()
}

/// First and last frame whose peak correlation reaches `threshold`.
pub fn detect_presence(video: &TokenGrid, pattern: &Array3<f64>, threshold: f64) -> Result<Option<PresenceInterval>> {
    let hits: Vec<usize> =
        correlation_track(video, pattern)?.iter().map(|r| matches!(r, Some(v) if *v >= threshold) as usize).collect();
    Ok(extract_from_areas(&hits, 1))
}

/// Mean peak correlation over frames `t0..=t1`; `None` for an empty or
/// out-of-range interval.
pub fn pattern_similarity(video: &TokenGrid, interval: (usize, usize), pattern: &Array3<f64>) -> Result<Option<f64>> {
    let (t0, t1) = interval;
    if t0 > t1 || t1 >= video.frames() {
        return Ok(None);
    }
    let tpl = Template::new(pattern)?;
    let mut sum = 0.0;
    for f in t0..=t1 {
        sum += tpl.peak(video.frame(f))?.unwrap_or(0.0);
    }
    Ok(Some(sum / (t1 - t0 + 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::gaussian_grid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(p: (f64, f64), g: (f64, f64), t: usize) -> IntervalPair {
        IntervalPair::of(Some(p), g, t)
    }

    #[test]
    fn metric_examples() {
        let p = pair((4.0, 8.0), (2.0, 6.0), 16);
        assert!((t_iou(&p) - 1.0 / 3.0).abs() < 1e-12);
        assert!((t_l2(&p) - 0.125).abs() < 1e-12);
        let same = pair((3.0, 9.0), (3.0, 9.0), 16);
        assert_eq!((t_iou(&same), t_l2(&same)), (1.0, 0.0));
        assert_eq!(t_iou(&pair((0.0, 2.0), (5.0, 7.0), 16)), 0.0);
        assert_eq!(t_l2(&pair((16.0, 16.0), (0.0, 0.0), 16)), 1.0);
        let none = IntervalPair::of(None, (2.0, 6.0), 16);
        assert_eq!((t_iou(&none), t_l2(&none)), (0.0, 1.0));
        assert_eq!(t_iou(&pair((4.0, 4.0), (4.0, 4.0), 8)), 1.0);
        assert_eq!(t_iou(&pair((4.0, 4.0), (3.0, 5.0), 8)), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_shift_invariant(a0 in 0.0..10.0f64, la in 0.0..6.0f64, b0 in 0.0..10.0f64, lb in 0.0..6.0f64, d in 0.0..4.0f64) {
            let (a, b) = ((a0, a0 + la), (b0, b0 + lb));
            let p = pair(a, b, 20);
            let q = pair(b, a, 20);
            prop_assert!((t_iou(&p) - t_iou(&q)).abs() < 1e-12);
            prop_assert!((t_l2(&p) - t_l2(&q)).abs() < 1e-12);
            let s = pair((a.0 + d, a.1 + d), (b.0 + d, b.1 + d), 20);
            prop_assert!((t_iou(&p) - t_iou(&s)).abs() < 1e-12);
            prop_assert!((t_l2(&p) - t_l2(&s)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&t_iou(&p)));
        }
    }

    fn pattern(seed: u64) -> Array3<f64> {
        let g = gaussian_grid([1, 2, 2, 4], &mut ChaCha8Rng::seed_from_u64(seed));
        g.frame(0).to_owned()
    }

    #[test]
    fn exact_and_negated_pattern() {
        let p = pattern(1);
        let mut video = gaussian_grid([3, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(2));
        for f in 0..3 {
            video.data.slice_mut(s![f, 1..3, 2..4, ..]).assign(&p);
        }
        let sim = pattern_similarity(&video, (0, 2), &p).unwrap().unwrap();
        assert!((sim - 1.0).abs() < 1e-6);
        let neg = video.data.mapv(|v| -v);
        let neg = TokenGrid::from_array(neg).unwrap();
        let tpl = Template::new(&p.mapv(|v| -v)).unwrap();
        assert!((tpl.peak(neg.frame(0)).unwrap().unwrap() - 1.0).abs() < 1e-6);
        // Only the negated pattern is present: similarity is its correlation.
        let mut only_neg = TokenGrid::zeros(1, 2, 2, 4);
        only_neg.data.slice_mut(s![0, .., .., ..]).assign(&p.mapv(|v| -v));
        assert!((pattern_similarity(&only_neg, (0, 0), &p).unwrap().unwrap() + 1.0).abs() < 1e-6);
        assert_eq!(pattern_similarity(&video, (2, 1), &p).unwrap(), None);
    }

    #[test]
    fn null_similarity_is_small() {
        let p = pattern(3);
        let mut total = 0.0;
        for trial in 0..64 {
            let v = gaussian_grid([1, 2, 2, 4], &mut ChaCha8Rng::seed_from_u64(100 + trial));
            total += pattern_similarity(&v, (0, 0), &p).unwrap().unwrap();
        }
        assert!((total / 64.0).abs() < 0.2);
    }

    #[test]
    fn detection_thresholds() {
        let p = pattern(4);
        let mut video = gaussian_grid([6, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(5));
        for f in 2..=4 {
            video.data.slice_mut(s![f, 0..2, 0..2, ..]).assign(&p);
        }
        let d = detect_presence(&video, &p, 0.999).unwrap().unwrap();
        assert_eq!((d.t0, d.t1), (2, 4));
        let all = detect_presence(&video, &p, 0.0).unwrap().unwrap();
        assert_eq!((all.t0, all.t1), (0, 5));
        let absent = gaussian_grid([6, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(detect_presence(&absent, &p, 0.999).unwrap(), None);
    }

    #[test]
    fn flat_pattern_is_rejected() {
        let video = TokenGrid::zeros(2, 2, 2, 3);
        assert!(matches!(detect_presence(&video, &Array3::ones((1, 1, 3)), 0.5), Err(Error::InvalidArgument(_))));
        assert!(detect_presence(&video, &pattern(1), 0.5).is_err());
    }
}
