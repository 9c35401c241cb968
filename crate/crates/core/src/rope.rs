//! Rotary positional embedding primitives.
//!
//! Coordinates are grouped into adjacent complex pairs `(v[2i], v[2i+1])`.
//! Pair `i` at position `n` is rotated by the phase `n * freqs[i]`, with
//! `freqs[i] = base^(-2i/d)`. Video tokens split their pairs across the
//! `(x, y, t)` axes, each axis with its own bank, in that channel order.
//!
//! All phase math is 64-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

/// Angular frequencies for one rotary axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    dim: usize,
    base: f64,
    freqs: Vec<f64>,
}

impl FrequencyBank {
    /// A zero-width bank for an axis that receives no channels.
    pub fn empty(base: f64) -> Self {
        Self { dim: 0, base, freqs: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn pairs(&self) -> usize {
        self.freqs.len()
    }
}

/// Builds the bank `freqs[i] = base^(-2i/dim)` for `i in 0..dim/2`.
pub fn make_frequency_bank(dim: usize, base: f64) -> Result<FrequencyBank> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::invalid(format!("rotary dim must be even and >= 2, got {dim}")));
    }
    if !(base > 1.0) || !base.is_finite() {
        return Err(Error::invalid(format!("rotary base must be finite and > 1, got {base}")));
    }
    let freqs = (0..dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
        .collect();
    Ok(FrequencyBank { dim, base, freqs })
}

/// Channel counts given to each of the three video axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSplit {
    pub d_x: usize,
    pub d_y: usize,
    pub d_t: usize,
}

impl AxisSplit {
    pub fn new(d_x: usize, d_y: usize, d_t: usize) -> Result<Self> {
        if d_x % 2 != 0 || d_y % 2 != 0 || d_t % 2 != 0 {
            return Err(Error::invalid(format!(
                "axis split ({d_x}, {d_y}, {d_t}) must use even channel counts"
            )));
        }
        if d_x + d_y + d_t == 0 {
            return Err(Error::invalid("axis split is empty"));
        }
        Ok(Self { d_x, d_y, d_t })
    }

    pub fn dim(&self) -> usize {
        self.d_x + self.d_y + self.d_t
    }

    /// Index of the first temporal pair.
    pub fn temporal_pair_offset(&self) -> usize {
        (self.d_x + self.d_y) / 2
    }
}

/// Per-axis banks. Axes with zero channels carry an empty bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBanks {
    pub x: FrequencyBank,
    pub y: FrequencyBank,
    pub t: FrequencyBank,
}

impl AxisBanks {
    pub fn new(split: AxisSplit, spatial_base: f64, temporal_base: f64) -> Result<Self> {
        let bank = |d: usize, base: f64| {
            if d == 0 {
                Ok(FrequencyBank::empty(base))
            } else {
                make_frequency_bank(d, base)
            }
        };
        Ok(Self {
            x: bank(split.d_x, spatial_base)?,
            y: bank(split.d_y, spatial_base)?,
            t: bank(split.d_t, temporal_base)?,
        })
    }

    pub fn split(&self) -> AxisSplit {
        AxisSplit { d_x: self.x.dim, d_y: self.y.dim, d_t: self.t.dim }
    }
}

/// One phase (radians) per complex pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector(pub Vec<f64>);

impl PhaseVector {
    pub fn zeros(pairs: usize) -> Self {
        Self(vec![0.0; pairs])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add(&self, other: &PhaseVector) -> Result<PhaseVector> {
        if self.len() != other.len() {
            return Err(Error::invalid("phase vectors differ in length"));
        }
        Ok(PhaseVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }
}

/// A real vector read as `len/2` adjacent complex pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVector(pub Vec<f64>);

impl TokenVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::invalid("token vector length must be even"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("token vector has non-finite entries"));
        }
        Ok(Self(coords))
    }

    /// `pairs` copies of the complex unit `1 + 0i`.
    pub fn unit_pairs(pairs: usize) -> Self {
        let mut v = vec![0.0; 2 * pairs];
        for p in v.chunks_exact_mut(2) {
            p[0] = 1.0;
        }
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &TokenVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `phases[i] = n * freqs[i]`.
pub fn phase_1d(bank: &FrequencyBank, n: f64) -> PhaseVector {
    PhaseVector(bank.freqs.iter().map(|w| n * w).collect())
}

/// Concatenated axis phases in `(x, y, t)` channel order.
pub fn phase_3d(banks: &AxisBanks, split: AxisSplit, x: f64, y: f64, t: f64) -> Result<PhaseVector> {
    if banks.split() != split {
        return Err(Error::invalid(format!(
            "bank dims {:?} do not match split {:?}",
            banks.split(),
            split
        )));
    }
    let mut phases = Vec::with_capacity(split.dim() / 2);
    phases.extend(phase_1d(&banks.x, x).0);
    phases.extend(phase_1d(&banks.y, y).0);
    phases.extend(phase_1d(&banks.t, t).0);
    Ok(PhaseVector(phases))
}

/// Multiplies each complex pair of `v` by `exp(i * p)`.
pub fn rotate(v: &TokenVector, p: &PhaseVector) -> Result<TokenVector> {
    if v.len() != 2 * p.len() {
        return Err(Error::invalid(format!(
            "token has {} coords but phase vector has {} pairs",
            v.len(),
            p.len()
        )));
    }
    Ok(Rotor::from_phases(p).apply(v.as_slice()).map(TokenVector).expect("checked length"))
}

/// `Re[sum_i q_i conj(k_i) exp(i (pq_i - pk_i))]`, the attention logit
/// between `q` rotated at `pq` and `k` rotated at `pk`.
pub fn rotary_score(q: &TokenVector, k: &TokenVector, pq: &PhaseVector, pk: &PhaseVector) -> Result<f64> {
    if q.len() != k.len() || pq.len() != pk.len() || q.len() != 2 * pq.len() {
        return Err(Error::invalid("rotary_score dimension mismatch"));
    }
    let mut s = 0.0;
    for (i, (a, b)) in q.0.chunks_exact(2).zip(k.0.chunks_exact(2)).enumerate() {
        // q conj(k) = (a0 b0 + a1 b1) + i (a1 b0 - a0 b1)
        let re = a[0] * b[0] + a[1] * b[1];
        let im = a[1] * b[0] - a[0] * b[1];
        let d = pq.0[i] - pk.0[i];
        s += re * d.cos() - im * d.sin();
    }
    Ok(s)
}

/// Per-pair complex multipliers.
///
/// A plain rotation has unit-modulus entries `exp(i p)`. Linear
/// combinations of rotations (the weighted interval encodings) are still
/// one complex multiplier per pair, so a single type covers both. The
/// transpose of the induced real map is multiplication by the conjugate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rotor {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Rotor {
    pub fn identity(pairs: usize) -> Self {
        Self { re: vec![1.0; pairs], im: vec![0.0; pairs] }
    }

    pub fn from_phases(p: &PhaseVector) -> Self {
        Self {
            re: p.0.iter().map(|a| a.cos()).collect(),
            im: p.0.iter().map(|a| a.sin()).collect(),
        }
    }

    pub fn pairs(&self) -> usize {
        self.re.len()
    }

    /// `sum_j w_j * rotors[j]`.
    pub fn weighted_sum(terms: &[(f64, &Rotor)]) -> Result<Rotor> {
        let pairs = terms.first().map(|(_, r)| r.pairs()).unwrap_or(0);
        if terms.iter().any(|(_, r)| r.pairs() != pairs) {
            return Err(Error::invalid("rotors differ in pair count"));
        }
        let mut out = Rotor { re: vec![0.0; pairs], im: vec![0.0; pairs] };
        for (w, r) in terms {
            for i in 0..pairs {
                out.re[i] += w * r.re[i];
                out.im[i] += w * r.im[i];
            }
        }
        Ok(out)
    }

    /// Replaces pairs `start..start+other.pairs()` with `other`.
    pub fn splice(&mut self, start: usize, other: &Rotor) {
        let n = other.pairs();
        self.re[start..start + n].copy_from_slice(&other.re);
        self.im[start..start + n].copy_from_slice(&other.im);
    }

    pub fn apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        if v.len() != 2 * self.pairs() {
            return None;
        }
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        Some(out)
    }

    /// Writes `self * v` into `out`; both of length `2 * pairs`.
    #[inline]
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.pairs() {
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            let (c, s) = (self.re[i], self.im[i]);
            out[2 * i] = c * a - s * b;
            out[2 * i + 1] = s * a + c * b;
        }
    }

    /// Writes `conj(self) * v` into `out`, the adjoint of `apply_into`.
    #[inline]
    pub fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.pairs() {
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            let (c, s) = (self.re[i], self.im[i]);
            out[2 * i] = c * a + s * b;
            out[2 * i + 1] = -s * a + c * b;
        }
    }
}
