//! Interval-conditioned temporal encodings for reference tokens.
//!
//! A reference that should be present during `[t0, t1]` of a `T`-frame
//! video gets one of three temporal encodings:
//!
//! * `None` places it at temporal position 0.
//! * `Mid` rotates it to the midpoint `(t0 + t1) / 2`.
//! * `We` takes a weighted sum of rotated copies: weight `w_p` at the
//!   midpoint and `w_n` at each of the anchors `t_l = t0 / 2` and
//!   `t_r = (T - t1) / 2`.
//!
//! The weighted sum only touches the temporal channel group. Spatial
//! channels always get their ordinary rotation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{phase_1d, phase_3d, AxisBanks, AxisSplit, FrequencyBank, Rotor, TokenVector};

/// Presence window `[t0, t1]` inside a `total_frames`-long latent video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub t0: f64,
    pub t1: f64,
    pub total_frames: usize,
}

impl IntervalSpec {
    pub fn new(t0: f64, t1: f64, total_frames: usize) -> Result<Self> {
        let s = Self { t0, t1, total_frames };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.total_frames as f64;
        if self.total_frames == 0 {
            return Err(Error::invalid("interval needs at least one frame"));
        }
        if !(self.t0.is_finite() && self.t1.is_finite()) || self.t0 < 0.0 || self.t0 > self.t1 || self.t1 > t {
            return Err(Error::invalid(format!(
                "interval [{}, {}] is not inside [0, {}]",
                self.t0, self.t1, self.total_frames
            )));
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        (self.t0 + self.t1) / 2.0
    }

    pub fn left_anchor(&self) -> f64 {
        self.t0 / 2.0
    }

    pub fn right_anchor(&self, rule: RightAnchor) -> f64 {
        let t = self.total_frames as f64;
        match rule {
            RightAnchor::Literal => (t - self.t1) / 2.0,
            RightAnchor::Mirrored => (self.t1 + t) / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Placement rule for the right-hand negative lobe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RightAnchor {
    /// `(T - t1) / 2`.
    #[default]
    Literal,
    /// `(t1 + T) / 2`, halfway between the interval end and the video end.
    Mirrored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeRoPEWeights {
    pub w_p: f64,
    pub w_n: f64,
}

impl Default for WeRoPEWeights {
    fn default() -> Self {
        Self { w_p: 1.0, w_n: -0.5 }
    }
}

impl WeRoPEWeights {
    pub fn new(w_p: f64, w_n: f64) -> Result<Self> {
        let w = Self { w_p, w_n };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_p.is_finite() && self.w_n.is_finite()) {
            return Err(Error::invalid("WeRoPE weights must be finite"));
        }
        if self.w_p <= 0.0 || self.w_n > 0.0 {
            return Err(Error::invalid(format!(
                "WeRoPE needs w_p > 0 and w_n <= 0, got ({}, {})",
                self.w_p, self.w_n
            )));
        }
        Ok(())
    }
}

/// Which temporal encoding reference tokens receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMode {
    None,
    Mid,
    We,
}

impl IntervalMode {
    pub const ALL: [IntervalMode; 3] = [IntervalMode::None, IntervalMode::Mid, IntervalMode::We];

    pub fn name(&self) -> &'static str {
        match self {
            IntervalMode::None => "none",
            IntervalMode::Mid => "mid",
            IntervalMode::We => "we",
        }
    }
}

impl std::str::FromStr for IntervalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(IntervalMode::None),
            "mid" => Ok(IntervalMode::Mid),
            "we" => Ok(IntervalMode::We),
            other => Err(Error::invalid(format!("unknown interval mode `{other}`"))),
        }
    }
}

/// Full description of how an interval becomes a temporal rotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEncoding {
    pub mode: IntervalMode,
    pub weights: WeRoPEWeights,
    #[serde(default)]
    pub right_anchor: RightAnchor,
}

impl IntervalEncoding {
    pub fn new(mode: IntervalMode, weights: WeRoPEWeights) -> Self {
        Self { mode, weights, right_anchor: RightAnchor::Literal }
    }

    /// `(weight, temporal position)` terms of the encoding.
    pub fn terms(&self, interval: &IntervalSpec) -> Vec<(f64, f64)> {
        match self.mode {
            IntervalMode::None => vec![(1.0, 0.0)],
            IntervalMode::Mid => vec![(1.0, interval.mid())],
            IntervalMode::We => vec![
                (self.weights.w_p, interval.mid()),
                (self.weights.w_n, interval.left_anchor()),
                (self.weights.w_n, interval.right_anchor(self.right_anchor)),
            ],
        }
    }

    /// Multipliers for the temporal pairs alone.
    pub fn temporal_rotor(&self, bank: &FrequencyBank, interval: &IntervalSpec) -> Result<Rotor> {
        interval.validate()?;
        if self.mode == IntervalMode::We {
            self.weights.validate()?;
        }
        let rotors: Vec<(f64, Rotor)> = self
            .terms(interval)
            .into_iter()
            .map(|(w, t)| (w, Rotor::from_phases(&phase_1d(bank, t))))
            .collect();
        let refs: Vec<(f64, &Rotor)> = rotors.iter().map(|(w, r)| (*w, r)).collect();
        Rotor::weighted_sum(&refs)
    }

    /// Full-width multipliers: standard spatial rotation at `(x, y)` and the
    /// interval encoding on the temporal group.
    pub fn rotor(&self, banks: &AxisBanks, split: AxisSplit, x: f64, y: f64, interval: &IntervalSpec) -> Result<Rotor> {
        let mut r = Rotor::from_phases(&phase_3d(banks, split, x, y, 0.0)?);
        r.splice(split.temporal_pair_offset(), &self.temporal_rotor(&banks.t, interval)?);
        Ok(r)
    }
}

/// Rotation of a reference token to the interval midpoint.
pub fn mid_rope(
    v: &TokenVector,
    x: f64,
    y: f64,
    interval: &IntervalSpec,
    banks: &AxisBanks,
    split: AxisSplit,
) -> Result<TokenVector> {
    interval.validate()?;
    crate::rope::rotate(v, &phase_3d(banks, split, x, y, interval.mid())?)
}

/// Weighted sum of rotated copies at the midpoint and the two anchors.
pub fn we_rope(
    v: &TokenVector,
    x: f64,
    y: f64,
    interval: &IntervalSpec,
    w: WeRoPEWeights,
    banks: &AxisBanks,
    split: AxisSplit,
) -> Result<TokenVector> {
    we_rope_with(v, x, y, interval, w, RightAnchor::Literal, banks, split)
}

#[allow(clippy::too_many_arguments)]
pub fn we_rope_with(
    v: &TokenVector,
    x: f64,
    y: f64,
    interval: &IntervalSpec,
    w: WeRoPEWeights,
    right_anchor: RightAnchor,
    banks: &AxisBanks,
    split: AxisSplit,
) -> Result<TokenVector> {
    let enc = IntervalEncoding { mode: IntervalMode::We, weights: w, right_anchor };
    let r = enc.rotor(banks, split, x, y, interval)?;
    r.apply(v.as_slice())
        .map(TokenVector)
        .ok_or_else(|| Error::invalid("token length does not match split"))
}

/// Expected attention logit of a unit video query at each frame against
/// an interval-encoded unit key, normalised so that zero offset scores 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub variant: IntervalMode,
    pub interval: IntervalSpec,
    pub weights: WeRoPEWeights,
    pub offsets: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn decay_profile(
    variant: IntervalMode,
    interval: &IntervalSpec,
    w: WeRoPEWeights,
    bank: &FrequencyBank,
) -> Result<DecayProfile> {
    decay_profile_with(IntervalEncoding { mode: variant, weights: w, right_anchor: RightAnchor::Literal }, interval, bank)
}

pub fn decay_profile_with(enc: IntervalEncoding, interval: &IntervalSpec, bank: &FrequencyBank) -> Result<DecayProfile> {
    let key_rotor = enc.temporal_rotor(bank, interval)?;
    let pairs = bank.pairs();
    let unit = TokenVector::unit_pairs(pairs);
    let key = TokenVector(key_rotor.apply(unit.as_slice()).expect("bank-sized"));
    let origin = phase_1d(bank, 0.0);
    let norm = pairs as f64;
    let mut offsets = Vec::with_capacity(interval.total_frames);
    let mut scores = Vec::with_capacity(interval.total_frames);
    for t in 0..interval.total_frames {
        let s = crate::rope::rotary_score(&unit, &key, &phase_1d(bank, t as f64), &origin)?;
        offsets.push(t);
        scores.push(s / norm);
    }
    Ok(DecayProfile { variant: enc.mode, interval: *interval, weights: enc.weights, offsets, scores })
}

/// `g(delta) = (2/d) sum_i cos(delta w_i)`, the normalised single-lobe decay.
pub fn unit_decay(bank: &FrequencyBank, delta: f64) -> f64 {
    bank.freqs().iter().map(|w| (delta * w).cos()).sum::<f64>() / bank.pairs() as f64
}

impl DecayProfile {
    /// Frame with the largest score; ties resolve to the earliest frame.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        self.offsets[best]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "frame,score,variant,t0,t1,w_p,w_n")?;
        for (f, s) in self.offsets.iter().zip(&self.scores) {
            writeln!(
                out,
                "{f},{s:.17e},{},{},{},{},{}",
                self.variant.name(),
                self.interval.t0,
                self.interval.t1,
                self.weights.w_p,
                self.weights.w_n
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::{make_frequency_bank, rotate};

    fn setup() -> (AxisBanks, AxisSplit) {
        let split = AxisSplit::new(4, 4, 8).unwrap();
        (AxisBanks::new(split, 10_000.0, 10_000.0).unwrap(), split)
    }

    fn generic_unit(len: usize) -> TokenVector {
        let v: Vec<f64> = (0..len).map(|i| ((i * 7 + 3) as f64 * 0.37).sin()).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        TokenVector(v.into_iter().map(|c| c / n).collect())
    }

    #[test]
    fn interval_validation() {
        assert!(IntervalSpec::new(2.0, 1.0, 8).is_err());
        assert!(IntervalSpec::new(-1.0, 1.0, 8).is_err());
        assert!(IntervalSpec::new(0.0, 9.0, 8).is_err());
        assert!(IntervalSpec::new(0.0, 8.0, 8).is_ok());
        let i = IntervalSpec::new(4.0, 10.0, 16).unwrap();
        assert_eq!((i.mid(), i.left_anchor(), i.right_anchor(RightAnchor::Literal)), (7.0, 2.0, 3.0));
        assert_eq!(i.right_anchor(RightAnchor::Mirrored), 13.0);
    }

    #[test]
    fn weights_validation() {
        assert!(WeRoPEWeights::new(1.0, -0.5).is_ok());
        assert!(WeRoPEWeights::new(1.0, 0.0).is_ok());
        assert!(WeRoPEWeights::new(0.0, -0.5).is_err());
        assert!(WeRoPEWeights::new(1.0, 0.1).is_err());
        assert!(WeRoPEWeights::new(f64::NAN, -0.1).is_err());
    }

    #[test]
    fn mid_rope_full_range_and_point() {
        let (banks, split) = setup();
        let v = generic_unit(16);
        let full = IntervalSpec::new(0.0, 16.0, 16).unwrap();
        let want = rotate(&v, &phase_3d(&banks, split, 1.0, 2.0, 8.0).unwrap()).unwrap();
        assert_eq!(mid_rope(&v, 1.0, 2.0, &full, &banks, split).unwrap(), want);

        let point = IntervalSpec::new(4.0, 4.0, 16).unwrap();
        let frame4 = rotate(&v, &phase_3d(&banks, split, 3.0, 0.0, 4.0).unwrap()).unwrap();
        assert_eq!(mid_rope(&v, 3.0, 0.0, &point, &banks, split).unwrap(), frame4);
    }

    #[test]
    fn mid_rope_cannot_tell_same_midpoint_apart() {
        let (banks, split) = setup();
        let v = generic_unit(16);
        let a = IntervalSpec::new(8.0, 10.0, 18).unwrap();
        let b = IntervalSpec::new(1.0, 17.0, 18).unwrap();
        assert_eq!(
            mid_rope(&v, 1.0, 1.0, &a, &banks, split).unwrap(),
            mid_rope(&v, 1.0, 1.0, &b, &banks, split).unwrap()
        );
    }

    #[test]
    fn we_rope_degenerate_weights_equal_mid_rope() {
        let (banks, split) = setup();
        let v = generic_unit(16);
        let i = IntervalSpec::new(3.0, 9.0, 16).unwrap();
        let w = WeRoPEWeights::new(1.0, 0.0).unwrap();
        assert_eq!(
            we_rope(&v, 2.0, 1.0, &i, w, &banks, split).unwrap(),
            mid_rope(&v, 2.0, 1.0, &i, &banks, split).unwrap()
        );
    }

    #[test]
    fn we_rope_zero_vector_and_linearity() {
        let (banks, split) = setup();
        let i = IntervalSpec::new(3.0, 9.0, 16).unwrap();
        let w = WeRoPEWeights::default();
        let z = TokenVector(vec![0.0; 16]);
        assert!(we_rope(&z, 2.0, 1.0, &i, w, &banks, split).unwrap().0.iter().all(|c| *c == 0.0));

        let v = generic_unit(16);
        let a = we_rope(&v, 2.0, 1.0, &i, w, &banks, split).unwrap();
        let scaled = TokenVector(v.0.iter().map(|c| -2.5 * c).collect());
        let b = we_rope(&scaled, 2.0, 1.0, &i, w, &banks, split).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((-2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn we_rope_distinguishes_same_midpoint() {
        let (banks, split) = setup();
        let v = generic_unit(16);
        let w = WeRoPEWeights::new(1.0, -0.5).unwrap();
        let a = we_rope(&v, 0.0, 0.0, &IntervalSpec::new(8.0, 10.0, 16).unwrap(), w, &banks, split).unwrap();
        let b = we_rope(&v, 0.0, 0.0, &IntervalSpec::new(1.0, 16.0, 16).unwrap(), w, &banks, split).unwrap();
        let diff = a.0.iter().zip(&b.0).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff / a.norm() > 1e-3, "relative difference {}", diff / a.norm());
    }

    #[test]
    fn spatial_channels_are_untouched_by_interval() {
        let (banks, split) = setup();
        let v = generic_unit(16);
        let w = WeRoPEWeights::default();
        let a = we_rope(&v, 2.0, 3.0, &IntervalSpec::new(1.0, 5.0, 16).unwrap(), w, &banks, split).unwrap();
        let b = we_rope(&v, 2.0, 3.0, &IntervalSpec::new(7.0, 15.0, 16).unwrap(), w, &banks, split).unwrap();
        let spatial = split.d_x + split.d_y;
        assert_eq!(a.0[..spatial], b.0[..spatial]);
        let std = rotate(&v, &phase_3d(&banks, split, 2.0, 3.0, 0.0).unwrap()).unwrap();
        assert_eq!(a.0[..spatial], std.0[..spatial]);
    }

    #[test]
    fn profile_examples() {
        let bank = make_frequency_bank(32, 10_000.0).unwrap();
        let w = WeRoPEWeights::default();
        let i = IntervalSpec::new(4.0, 8.0, 16).unwrap();
        let mid = decay_profile(IntervalMode::Mid, &i, w, &bank).unwrap();
        assert!((mid.scores[6] - 1.0).abs() < 1e-12);

        let we = decay_profile(IntervalMode::We, &i, w, &bank).unwrap();
        for (t, s) in we.offsets.iter().zip(&we.scores) {
            let t = *t as f64;
            let closed = w.w_p * unit_decay(&bank, t - 6.0)
                + w.w_n * (unit_decay(&bank, t - 2.0) + unit_decay(&bank, t - 4.0));
            assert!((s - closed).abs() < 1e-10);
        }

        let none = decay_profile(IntervalMode::None, &i, w, &bank).unwrap();
        assert!((none.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_csv_header_and_rows() {
        let bank = make_frequency_bank(8, 10_000.0).unwrap();
        let p = decay_profile(IntervalMode::We, &IntervalSpec::new(1.0, 3.0, 5).unwrap(), WeRoPEWeights::default(), &bank)
            .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "frame,score,variant,t0,t1,w_p,w_n");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,") && lines[1].ends_with(",we,1,3,1,-0.5"));
    }
}
