use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame binary masks for one entity on a `height x width` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RleTrack", try_from = "RleTrack")]
pub struct MaskTrack {
    height: usize,
    width: usize,
    masks: Vec<Vec<bool>>,
}

impl MaskTrack {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self { height, width, masks: vec![vec![false; height * width]; frames] }
    }

    pub fn from_masks(height: usize, width: usize, masks: Vec<Vec<bool>>) -> Result<Self> {
        if masks.iter().any(|m| m.len() != height * width) {
            return Err(Error::invalid("mask size does not match grid"));
        }
        Ok(Self { height, width, masks })
    }

    /// Builds a track from per-frame areas by filling cells in raster order.
    pub fn from_areas(height: usize, width: usize, areas: &[usize]) -> Result<Self> {
        let masks = areas
            .iter()
            .map(|&a| {
                if a > height * width {
                    return Err(Error::invalid("area larger than grid"));
                }
                Ok((0..height * width).map(|i| i < a).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { height, width, masks })
    }

    pub fn frames(&self) -> usize {
        self.masks.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self, frame: usize) -> &[bool] {
        &self.masks[frame]
    }

    pub fn get(&self, frame: usize, y: usize, x: usize) -> bool {
        self.masks[frame][y * self.width + x]
    }

    pub fn set(&mut self, frame: usize, y: usize, x: usize, v: bool) {
        self.masks[frame][y * self.width + x] = v;
    }

    pub fn area(&self, frame: usize) -> usize {
        self.masks[frame].iter().filter(|b| **b).count()
    }

    pub fn areas(&self) -> Vec<usize> {
        (0..self.frames()).map(|f| self.area(f)).collect()
    }

    /// Inclusive `(y0, x0, y1, x1)` of the set cells in `frame`.
    pub fn bbox(&self, frame: usize) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(frame, y, x) {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        bb
    }
}

/// `[t0, t1]` frame span (inclusive) where area meets the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceInterval {
    pub t0: usize,
    pub t1: usize,
    pub area_threshold: usize,
}

/// First and last frame whose area reaches `threshold`; `None` when no
/// frame does.
pub fn extract_interval(track: &MaskTrack, threshold: usize) -> Option<PresenceInterval> {
    extract_from_areas(&track.areas(), threshold)
}

pub fn extract_from_areas(areas: &[usize], threshold: usize) -> Option<PresenceInterval> {
    let first = areas.iter().position(|a| *a >= threshold)?;
    let last = areas.iter().rposition(|a| *a >= threshold)?;
    Some(PresenceInterval { t0: first, t1: last, area_threshold: threshold })
}

fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean mask IoU over frames where both tracks are non-empty; 0 if there
/// are none.
pub fn mean_track_iou(a: &MaskTrack, b: &MaskTrack) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in 0..a.frames().min(b.frames()) {
        if a.area(f) > 0 && b.area(f) > 0 {
            sum += mask_iou(a.mask(f), b.mask(f));
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Greedy, order-stable removal of tracks whose mean IoU with an earlier
/// surviving track exceeds `iou_threshold`.
pub fn dedup_tracks(tracks: &[MaskTrack], iou_threshold: f64) -> Result<Vec<MaskTrack>> {
    if let Some(first) = tracks.first() {
        if tracks.iter().any(|t| t.frames() != first.frames()) {
            return Err(Error::invalid("tracks differ in frame count"));
        }
    }
    let mut kept: Vec<MaskTrack> = Vec::new();
    for t in tracks {
        if kept.iter().all(|k| mean_track_iou(k, t) <= iou_threshold) {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}

/// Serialized form of a [`MaskTrack`]: each frame stores alternating run
/// lengths over the raster-order mask, starting with a run of unset cells
/// (possibly zero).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleTrack {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<usize>>,
}

pub fn encode_rle(mask: &[bool]) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0;
    for &b in mask {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

pub fn decode_rle(counts: &[usize], len: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(len);
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat(i % 2 == 1).take(c));
    }
    if out.len() != len {
        return Err(Error::Format(format!("RLE covers {} cells, expected {len}", out.len())));
    }
    Ok(out)
}

impl From<MaskTrack> for RleTrack {
    fn from(t: MaskTrack) -> Self {
        Self { height: t.height, width: t.width, frames: t.masks.iter().map(|m| encode_rle(m)).collect() }
    }
}

impl TryFrom<RleTrack> for MaskTrack {
    type Error = Error;

    fn try_from(r: RleTrack) -> Result<Self> {
        let n = r.height * r.width;
        let masks = r.frames.iter().map(|c| decode_rle(c, n)).collect::<Result<Vec<_>>>()?;
        Ok(MaskTrack { height: r.height, width: r.width, masks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extract_examples() {
        let t = MaskTrack::from_areas(4, 4, &[0, 0, 9, 12, 3, 0]).unwrap();
        assert_eq!(extract_interval(&t, 5), Some(PresenceInterval { t0: 2, t1: 3, area_threshold: 5 }));
        let full = MaskTrack::from_areas(2, 2, &[1, 4, 2, 3]).unwrap();
        assert_eq!(extract_interval(&full, 1).map(|p| (p.t0, p.t1)), Some((0, 3)));
        assert_eq!(extract_interval(&t, 100), None);
    }

    fn block(frames: usize, present: &[usize], cells: &[(usize, usize)]) -> MaskTrack {
        let mut t = MaskTrack::empty(frames, 4, 5);
        for &f in present {
            for &(y, x) in cells {
                t.set(f, y, x, true);
            }
        }
        t
    }

    #[test]
    fn dedup_identical_and_disjoint() {
        let a = block(4, &[0, 1, 2], &[(0, 0), (0, 1)]);
        assert_eq!(dedup_tracks(&[a.clone(), a.clone()], 0.5).unwrap().len(), 1);
        let b = block(4, &[0, 1, 2], &[(3, 3), (3, 4)]);
        assert_eq!(dedup_tracks(&[a, b], 0.5).unwrap().len(), 2);
    }

    #[test]
    fn dedup_partial_overlap_threshold() {
        // Five cells vs four of them: IoU 4/5 = 0.8 on the two shared
        // frames; each track has two more frames the other lacks.
        let five = [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)];
        let a = block(6, &[0, 1, 2, 3], &five);
        let b = block(6, &[2, 3, 4, 5], &five[..4]);
        assert!((mean_track_iou(&a, &b) - 0.8).abs() < 1e-12);
        assert_eq!(dedup_tracks(&[a.clone(), b.clone()], 0.75).unwrap(), vec![a.clone()]);
        assert_eq!(dedup_tracks(&[a, b], 0.85).unwrap().len(), 2);
    }

    #[test]
    fn dedup_rejects_mismatched_lengths() {
        assert!(dedup_tracks(&[MaskTrack::empty(3, 2, 2), MaskTrack::empty(4, 2, 2)], 0.5).is_err());
    }

    #[test]
    fn rle_json_round_trip() {
        let t = block(3, &[1, 2], &[(1, 1), (1, 2), (2, 0)]);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"frames\":[[20],"));
        let back: MaskTrack = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(decode_rle(&[3, 2], 6).is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trips(mask in proptest::collection::vec(any::<bool>(), 0..64)) {
            let n = mask.len();
            prop_assert_eq!(decode_rle(&encode_rle(&mask), n).unwrap(), mask);
        }

        #[test]
        fn dedup_is_idempotent(seeds in proptest::collection::vec((0usize..4, 0usize..4, 0usize..6, 1usize..4), 1..6)) {
            let tracks: Vec<MaskTrack> = seeds
                .iter()
                .map(|&(y, x, start, len)| {
                    let frames: Vec<usize> = (start..(start + len).min(8)).collect();
                    block(8, &frames, &[(y, x), (y, x + 1)])
                })
                .collect();
            let once = dedup_tracks(&tracks, 0.4).unwrap();
            prop_assert_eq!(dedup_tracks(&once, 0.4).unwrap(), once);
        }
    }
}
