//! Assembly of the joint token stream.
//!
//! Order: all video tokens `(t, y, x)`, then for each reference its
//! `H*W` image tokens `(y, x)` followed by its `K` word-tag tokens.
//! Reference image and tag tokens both get the reference's interval
//! encoding on the temporal channels and the reference's index embedding
//! added to their features. Tag tokens sit on a diagonal spatial track
//! just past the video grid.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interval::{IntervalEncoding, IntervalSpec};
use crate::nn::{Grads, Mlp, MlpCache, ParamId, ParamStore};
use crate::rope::{phase_3d, AxisBanks, AxisSplit, PhaseVector, Rotor};

/// Latent video (or a single latent frame when `frames == 1`), laid out
/// as `frames x height x width x channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub data: Array4<f64>,
}

impl TokenGrid {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self { data: Array4::zeros((frames, height, width, channels)) }
    }

    pub fn from_array(data: Array4<f64>) -> Result<Self> {
        if data.shape().iter().any(|d| *d == 0) {
            return Err(Error::invalid("token grid dims must be >= 1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token grid has non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames(), self.height(), self.width(), self.channels()]
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn num_tokens(&self) -> usize {
        self.frames() * self.height() * self.width()
    }

    /// `(frames*height*width) x channels`, rows in `(t, y, x)` order.
    pub fn to_tokens(&self) -> Array2<f64> {
        let [t, h, w, c] = self.dims();
        self.data.as_standard_layout().into_owned().into_shape_with_order((t * h * w, c)).expect("contiguous")
    }

    pub fn from_tokens(tokens: Array2<f64>, frames: usize, height: usize, width: usize) -> Result<Self> {
        let c = tokens.ncols();
        if tokens.nrows() != frames * height * width {
            return Err(Error::invalid("token count does not match grid"));
        }
        let data = tokens
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((frames, height, width, c))
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One conditioning reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// `height x width x channels`, one latent frame's worth of tokens.
    pub image: Array3<f64>,
    pub interval: IntervalSpec,
    /// `K x E_text` word-tag embeddings.
    pub tag_tokens: Array2<f64>,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Video,
    RefImage,
    RefText,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub stream: Stream,
    pub ref_index: Option<usize>,
    pub x: f64,
    pub y: f64,
    /// `(weight, temporal position)` terms; a single `(1, t)` for plain RoPE.
    pub temporal: Vec<(f64, f64)>,
    pub index_embedding_id: Option<usize>,
    pub rotor: Rotor,
}

impl TokenRecord {
    /// The phase vector of each temporal term, with the token's spatial phases.
    pub fn phases(&self, banks: &AxisBanks) -> Result<Vec<PhaseVector>> {
        self.temporal
            .iter()
            .map(|(_, t)| phase_3d(banks, banks.split(), self.x, self.y, *t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub records: Vec<TokenRecord>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rotors(&self) -> Vec<Rotor> {
        self.records.iter().map(|r| r.rotor.clone()).collect()
    }

    pub fn count(&self, stream: Stream) -> usize {
        self.records.iter().filter(|r| r.stream == stream).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Learned per-reference-index vectors added to reference features.
#[derive(Debug, Clone)]
pub struct IndexEmbeddingTable {
    pub table: ParamId,
    pub max_refs: usize,
}

impl IndexEmbeddingTable {
    pub fn new<R: Rng>(store: &mut ParamStore, max_refs: usize, dim: usize, init_std: f64, rng: &mut R) -> Result<Self> {
        let table = store.normal("index_embedding", max_refs, dim, init_std, rng);
        let t = store.get(table);
        for i in 0..max_refs {
            for j in i + 1..max_refs {
                let d: f64 = (&t.row(i) - &t.row(j)).mapv(|v| v * v).sum();
                if !(d > 0.0) {
                    return Err(Error::invalid("index embeddings are not distinct"));
                }
            }
        }
        Ok(Self { table, max_refs })
    }
}

/// Two-layer MLP taking word-tag embeddings into the latent channel space.
#[derive(Debug, Clone)]
pub struct TagProjector {
    pub mlp: Mlp,
}

impl TagProjector {
    pub fn in_dim(&self, store: &ParamStore) -> usize {
        self.mlp.fc1.in_dim(store)
    }

    pub fn project(&self, store: &ParamStore, tags: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if tags.ncols() != self.in_dim(store) {
            return Err(Error::invalid(format!(
                "tag embeddings have width {} but the projector expects {}",
                tags.ncols(),
                self.in_dim(store)
            )));
        }
        Ok(self.mlp.forward(store, tags))
    }
}

/// `project_tags`: `K x E_text -> K x C`.
pub fn project_tags(store: &ParamStore, projector: &TagProjector, tags: &Array2<f64>) -> Result<Array2<f64>> {
    projector.project(store, tags).map(|(y, _)| y)
}

/// Spatial phases for the `position`-th tag token of a block. The
/// temporal component is left at zero; the interval encoding supplies it.
pub fn diagonal_text_phase(position: usize, grid_extent: usize, banks: &AxisBanks, split: AxisSplit) -> Result<PhaseVector> {
    let d = diagonal_coordinate(position, grid_extent);
    phase_3d(banks, split, d, d, 0.0)
}

/// `max(H, W) + position`: the first free diagonal cell past the grid.
pub fn diagonal_coordinate(position: usize, grid_extent: usize) -> f64 {
    (grid_extent + position) as f64
}

/// Positional context shared by every assembled sequence.
#[derive(Debug, Clone)]
pub struct StreamGeometry {
    pub banks: AxisBanks,
    pub split: AxisSplit,
    pub encoding: IntervalEncoding,
}

/// Learned tables the assembler reads.
#[derive(Debug, Clone)]
pub struct StreamParams {
    pub index: IndexEmbeddingTable,
    pub tags: TagProjector,
}

#[derive(Debug, Clone)]
pub struct AssembleCache {
    /// Per reference: `(index, first image row, first tag row, K, tag MLP cache)`.
    refs: Vec<(usize, usize, usize, usize, MlpCache)>,
    image_tokens: usize,
}

impl StreamGeometry {
    /// Positions for a video of `frames x height x width` tokens.
    pub fn video_records(&self, frames: usize, height: usize, width: usize) -> Result<Vec<TokenRecord>> {
        let mut out = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    let (xf, yf, tf) = (x as f64, y as f64, t as f64);
                    out.push(TokenRecord {
                        stream: Stream::Video,
                        ref_index: None,
                        x: xf,
                        y: yf,
                        temporal: vec![(1.0, tf)],
                        index_embedding_id: None,
                        rotor: Rotor::from_phases(&phase_3d(&self.banks, self.split, xf, yf, tf)?),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Positions for one reference's image block and tag block.
    pub fn reference_records(
        &self,
        height: usize,
        width: usize,
        k: usize,
        interval: &IntervalSpec,
        index: usize,
    ) -> Result<Vec<TokenRecord>> {
        let temporal = self.encoding.terms(interval);
        let mut out = Vec::with_capacity(height * width + k);
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                out.push(TokenRecord {
                    stream: Stream::RefImage,
                    ref_index: Some(index),
                    x: xf,
                    y: yf,
                    temporal: temporal.clone(),
                    index_embedding_id: Some(index),
                    rotor: self.encoding.rotor(&self.banks, self.split, xf, yf, interval)?,
                });
            }
        }
        let extent = height.max(width);
        for p in 0..k {
            let d = diagonal_coordinate(p, extent);
            out.push(TokenRecord {
                stream: Stream::RefText,
                ref_index: Some(index),
                x: d,
                y: d,
                temporal: temporal.clone(),
                index_embedding_id: Some(index),
                rotor: self.encoding.rotor(&self.banks, self.split, d, d, interval)?,
            });
        }
        Ok(out)
    }

    /// `assemble_sequence`: the `N x C` feature matrix and its layout.
    pub fn assemble(
        &self,
        store: &ParamStore,
        params: &StreamParams,
        video: &TokenGrid,
        refs: &[ReferenceSpec],
    ) -> Result<(Array2<f64>, SequenceLayout, AssembleCache)> {
        let [frames, height, width, channels] = video.dims();
        if refs.len() > params.index.max_refs {
            return Err(Error::invalid(format!("{} references exceed max_refs {}", refs.len(), params.index.max_refs)));
        }
        let mut seen = vec![false; params.index.max_refs];
        for r in refs {
            if r.index >= params.index.max_refs {
                return Err(Error::invalid(format!("reference index {} out of range", r.index)));
            }
            if std::mem::replace(&mut seen[r.index], true) {
                return Err(Error::invalid(format!("duplicate reference index {}", r.index)));
            }
            r.interval.validate()?;
            if r.interval.total_frames != frames {
                return Err(Error::invalid(format!(
                    "reference interval is over {} frames but the video has {frames}",
                    r.interval.total_frames
                )));
            }
            if r.image.dim() != (height, width, channels) {
                return Err(Error::invalid(format!("reference image {:?} does not match video frame", r.image.dim())));
            }
        }

        let mut records = self.video_records(frames, height, width)?;
        let total = records.len() + refs.iter().map(|r| height * width + r.tag_tokens.nrows()).sum::<usize>();
        let mut feats = Array2::zeros((total, channels));
        feats.slice_mut(s![..video.num_tokens(), ..]).assign(&video.to_tokens());

        let table = store.get(params.index.table);
        let mut row = video.num_tokens();
        let mut cache = AssembleCache { refs: Vec::with_capacity(refs.len()), image_tokens: video.num_tokens() };
        for r in refs {
            let k = r.tag_tokens.nrows();
            records.extend(self.reference_records(height, width, k, &r.interval, r.index)?);
            let emb = table.row(r.index);
            let img_start = row;
            let img = r.image.as_standard_layout().into_owned().into_shape_with_order((height * width, channels)).expect("contiguous");
            let mut block = feats.slice_mut(s![row..row + height * width, ..]);
            block.assign(&img);
            block += &emb;
            row += height * width;

            let (proj, mlp_cache) = params.tags.project(store, &r.tag_tokens)?;
            if proj.ncols() != channels {
                return Err(Error::invalid("tag projector output width does not match channels"));
            }
            let tag_start = row;
            let mut block = feats.slice_mut(s![row..row + k, ..]);
            block.assign(&proj);
            block += &emb;
            row += k;
            cache.refs.push((r.index, img_start, tag_start, k, mlp_cache));
        }
        Ok((feats, SequenceLayout { records }, cache))
    }

    /// Routes `d(features)` into the index table and tag projector and
    /// returns the gradient for the video-token rows.
    pub fn assemble_backward(
        &self,
        store: &ParamStore,
        params: &StreamParams,
        cache: &AssembleCache,
        dfeats: &Array2<f64>,
        grads: &mut Grads,
        image_rows: usize,
    ) -> Array2<f64> {
        for (index, img_start, tag_start, k, mlp_cache) in &cache.refs {
            let dimg = dfeats.slice(s![*img_start..*img_start + image_rows, ..]);
            let dtag = dfeats.slice(s![*tag_start..*tag_start + *k, ..]).to_owned();
            let mut g = grads.get_mut(params.index.table).row_mut(*index).to_owned();
            g += &dimg.sum_axis(Axis(0));
            g += &dtag.sum_axis(Axis(0));
            grads.get_mut(params.index.table).row_mut(*index).assign(&g);
            params.tags.mlp.backward(store, mlp_cache, &dtag, grads);
        }
        dfeats.slice(s![..cache.image_tokens, ..]).to_owned()
    }
}

/// Fixed random embeddings for word tags: each byte of the word maps to a
/// hashed Gaussian vector, padded with a pad vector or truncated to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEmbedder {
    pub dim: usize,
    pub k: usize,
}

impl TagEmbedder {
    const PAD: u16 = 256;

    fn vector(&self, symbol: u16) -> Vec<f64> {
        let digest = Sha256::digest([b't', b'a', b'g', (symbol >> 8) as u8, symbol as u8]);
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect()
    }

    pub fn embed(&self, word: &str) -> Array2<f64> {
        let bytes = word.as_bytes();
        let mut out = Array2::zeros((self.k, self.dim));
        for p in 0..self.k {
            let sym = bytes.get(p).map(|b| *b as u16).unwrap_or(Self::PAD);
            out.row_mut(p).assign(&ndarray::Array1::from(self.vector(sym)));
        }
        out
    }
}
