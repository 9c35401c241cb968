//! The toy diffusion transformer.
//!
//! Latent tokens, reference tokens and caption tokens live in the latent
//! channel space `C`, are lifted to the model width by one shared linear
//! patchifier, and pass through pre-norm transformer blocks whose
//! attention uses each token's rotor. Only video rows are projected back
//! to `C` as the predicted velocity.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{IntervalEncoding, IntervalMode, RightAnchor, WeRoPEWeights};
use crate::nn::{
    time_features, Activation, AttentionCache, Grads, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, ParamId,
    ParamStore, SelfAttention,
};
use crate::rope::{AxisBanks, AxisSplit, Rotor};
use crate::tokens::{
    diagonal_coordinate, AssembleCache, IndexEmbeddingTable, ReferenceSpec, SequenceLayout, Stream, StreamGeometry,
    StreamParams, TagProjector, TokenGrid, TokenRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub d_t: usize,
    pub spatial_base: f64,
    pub temporal_base: f64,
    pub mlp_ratio: usize,
    pub tag_dim: usize,
    pub tag_hidden: usize,
    pub tag_tokens: usize,
    pub max_refs: usize,
    pub time_dim: usize,
    pub index_init_std: f64,
    pub mode: IntervalMode,
    pub weights: WeRoPEWeights,
    pub right_anchor: RightAnchor,
    /// Feed word-tag tokens for each reference.
    pub use_tags: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 4,
            width: 4,
            channels: 16,
            hidden: 128,
            blocks: 4,
            heads: 4,
            d_x: 16,
            d_y: 16,
            d_t: 32,
            spatial_base: 10_000.0,
            temporal_base: 10_000.0,
            mlp_ratio: 4,
            tag_dim: 32,
            tag_hidden: 64,
            tag_tokens: 4,
            max_refs: 4,
            time_dim: 64,
            index_init_std: 0.2,
            mode: IntervalMode::We,
            weights: WeRoPEWeights::default(),
            right_anchor: RightAnchor::Literal,
            use_tags: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_x + self.d_y + self.d_t
    }

    pub fn split(&self) -> Result<AxisSplit> {
        AxisSplit::new(self.d_x, self.d_y, self.d_t)
    }

    pub fn encoding(&self) -> IntervalEncoding {
        IntervalEncoding { mode: self.mode, weights: self.weights, right_anchor: self.right_anchor }
    }

    pub fn grid_dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        self.split()?;
        if self.mode == IntervalMode::We {
            self.weights.validate()?;
        }
        let dims = [
            self.frames, self.height, self.width, self.channels, self.hidden, self.blocks, self.heads, self.mlp_ratio,
            self.tag_dim, self.tag_hidden, self.tag_tokens, self.max_refs, self.time_dim,
        ];
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::invalid("time_dim must be even"));
        }
        Ok(())
    }
}

/// What the model is conditioned on for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    pub refs: Vec<ReferenceSpec>,
    /// `tokens x E_text` caption embeddings; may have zero rows.
    pub caption: Array2<f64>,
    pub ref_dropped: bool,
    pub text_dropped: bool,
}

impl Conditions {
    pub fn new(refs: Vec<ReferenceSpec>, caption: Array2<f64>) -> Self {
        Self { refs, caption, ref_dropped: false, text_dropped: false }
    }

    pub fn unconditional(tag_dim: usize) -> Self {
        Self::new(Vec::new(), Array2::zeros((0, tag_dim)))
    }

    pub fn with_drops(&self, ref_dropped: bool, text_dropped: bool) -> Self {
        Self { ref_dropped, text_dropped, ..self.clone() }
    }
}

/// Anything that predicts a velocity for a noisy latent.
pub trait VelocityField {
    fn velocity(&self, z_t: &TokenGrid, t: f64, cond: &Conditions) -> Result<TokenGrid>;
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl Block {
    fn forward(&self, store: &ParamStore, h: &mut Array2<f64>, rotors: &[Rotor]) -> BlockCache {
        let (a_in, ln1) = self.ln1.forward(store, h);
        let (a_out, attn) = self.attn.forward(store, &a_in, rotors);
        *h += &a_out;
        let (m_in, ln2) = self.ln2.forward(store, h);
        let (m_out, mlp) = self.mlp.forward(store, &m_in);
        *h += &m_out;
        BlockCache { ln1, attn, ln2, mlp }
    }

    fn backward(&self, store: &ParamStore, c: &BlockCache, rotors: &[Rotor], dh: &mut Array2<f64>, grads: &mut Grads) {
        let dm = self.mlp.backward(store, &c.mlp, dh, grads);
        *dh += &self.ln2.backward(store, &c.ln2, &dm, grads);
        let da = self.attn.backward(store, &c.attn, rotors, dh, grads);
        *dh += &self.ln1.backward(store, &c.ln1, &da, grads);
    }
}

/// Toy DiT parameters and layout.
#[derive(Debug, Clone)]
pub struct FlowTransformer {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub geometry: StreamGeometry,
    pub stream: StreamParams,
    patch_in: Linear,
    stream_emb: ParamId,
    time_mlp: Mlp,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    patch_out: Linear,
    null_ref: ParamId,
    null_text: ParamId,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    feats: Array2<f64>,
    layout: SequenceLayout,
    assemble: AssembleCache,
    caption: Option<(usize, MlpCache)>,
    time: MlpCache,
    blocks: Vec<BlockCache>,
    final_normed: Array2<f64>,
    final_ln: LayerNormCache,
    video_rows: usize,
    ref_rows: std::ops::Range<usize>,
    ref_dropped: bool,
    text_dropped: bool,
}

impl ForwardCache {
    pub fn layout(&self) -> &SequenceLayout {
        &self.layout
    }
}

fn stream_slot(s: Stream) -> usize {
    match s {
        Stream::Video => 0,
        Stream::RefImage => 1,
        Stream::RefText => 2,
        Stream::Caption => 3,
    }
}

impl FlowTransformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let split = cfg.split()?;
        let banks = AxisBanks::new(split, cfg.spatial_base, cfg.temporal_base)?;
        let geometry = StreamGeometry { banks, split, encoding: cfg.encoding() };
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let d = cfg.hidden;

        let index = IndexEmbeddingTable::new(&mut store, cfg.max_refs, c, cfg.index_init_std, &mut rng)?;
        let tags = TagProjector { mlp: Mlp::new(&mut store, "tag_mlp", [cfg.tag_dim, cfg.tag_hidden, c], Activation::Gelu, &mut rng) };
        let null_ref = store.normal("null_ref", 1, c, 0.1, &mut rng);
        let null_text = store.normal("null_text", 1, c, 0.1, &mut rng);
        let patch_in = Linear::new(&mut store, "patch_in", c, d, true, &mut rng);
        let stream_emb = store.normal("stream_embedding", 4, d, 0.1, &mut rng);
        let time_mlp = Mlp::new(&mut store, "time_mlp", [cfg.time_dim, d, d], Activation::Silu, &mut rng);
        let blocks = (0..cfg.blocks)
            .map(|i| Block {
                ln1: LayerNorm::new(&mut store, &format!("block{i}.ln1"), d),
                attn: SelfAttention::new(&mut store, &format!("block{i}.attn"), d, cfg.heads, cfg.head_dim(), &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("block{i}.ln2"), d),
                mlp: Mlp::new(&mut store, &format!("block{i}.mlp"), [d, cfg.mlp_ratio * d, d], Activation::Gelu, &mut rng),
            })
            .collect();
        let final_ln = LayerNorm::new(&mut store, "final_ln", d);
        let patch_out = Linear::new(&mut store, "patch_out", d, c, true, &mut rng);
        Ok(Self {
            cfg,
            store,
            geometry,
            stream: StreamParams { index, tags },
            patch_in,
            stream_emb,
            time_mlp,
            blocks,
            final_ln,
            patch_out,
            null_ref,
            null_text,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    fn check_inputs(&self, z_t: &TokenGrid, cond: &Conditions) -> Result<()> {
        if z_t.dims() != self.cfg.grid_dims() {
            return Err(Error::invalid(format!("latent dims {:?} != model dims {:?}", z_t.dims(), self.cfg.grid_dims())));
        }
        if cond.caption.nrows() > 0 && cond.caption.ncols() != self.cfg.tag_dim {
            return Err(Error::invalid("caption embedding width does not match tag_dim"));
        }
        Ok(())
    }

    /// Strips tag tokens when the model is configured without them.
    fn effective_refs<'a>(&self, refs: &'a [ReferenceSpec]) -> std::borrow::Cow<'a, [ReferenceSpec]> {
        if self.cfg.use_tags {
            std::borrow::Cow::Borrowed(refs)
        } else {
            std::borrow::Cow::Owned(
                refs.iter()
                    .map(|r| ReferenceSpec { tag_tokens: Array2::zeros((0, r.tag_tokens.ncols())), ..r.clone() })
                    .collect(),
            )
        }
    }

    /// The full positional layout for a conditioning set, caption included.
    pub fn layout(&self, cond: &Conditions) -> Result<SequenceLayout> {
        let z = TokenGrid::zeros(self.cfg.frames, self.cfg.height, self.cfg.width, self.cfg.channels);
        let (_, cache) = self.forward(&z, 0.5, cond)?;
        Ok(cache.layout)
    }

    pub fn forward(&self, z_t: &TokenGrid, t: f64, cond: &Conditions) -> Result<(TokenGrid, ForwardCache)> {
        self.check_inputs(z_t, cond)?;
        let store = &self.store;
        let refs = self.effective_refs(&cond.refs);
        let (mut feats, mut layout, assemble) = self.geometry.assemble(store, &self.stream, z_t, &refs)?;
        let video_rows = z_t.num_tokens();
        let ref_rows = video_rows..feats.nrows();

        let caption = if cond.caption.nrows() > 0 {
            let (proj, cache) = self.stream.tags.project(store, &cond.caption)?;
            let start = feats.nrows();
            feats.append(Axis(0), proj.view()).expect("same width");
            let extent = self.cfg.height.max(self.cfg.width);
            for j in 0..proj.nrows() {
                let dpos = diagonal_coordinate(j, extent);
                layout.records.push(TokenRecord {
                    stream: Stream::Caption,
                    ref_index: None,
                    x: dpos,
                    y: dpos,
                    temporal: vec![(1.0, 0.0)],
                    index_embedding_id: None,
                    rotor: Rotor::from_phases(&crate::rope::phase_3d(
                        &self.geometry.banks,
                        self.geometry.split,
                        dpos,
                        dpos,
                        0.0,
                    )?),
                });
            }
            Some((start, cache))
        } else {
            None
        };

        if cond.ref_dropped {
            let null = store.get(self.null_ref).row(0).to_owned();
            for r in ref_rows.clone() {
                feats.row_mut(r).assign(&null);
            }
        }
        if cond.text_dropped {
            if let Some((start, _)) = &caption {
                let null = store.get(self.null_text).row(0).to_owned();
                for r in *start..feats.nrows() {
                    feats.row_mut(r).assign(&null);
                }
            }
        }

        let mut h = self.patch_in.forward(store, &feats);
        let emb = store.get(self.stream_emb);
        for (mut row, rec) in h.rows_mut().into_iter().zip(&layout.records) {
            row += &emb.row(stream_slot(rec.stream));
        }
        let time_feats = Array2::from_shape_vec((1, self.cfg.time_dim), time_features(t * 1000.0, self.cfg.time_dim, 10_000.0))
            .expect("shape");
        let (temb, time) = self.time_mlp.forward(store, &time_feats);
        h += &temb;

        let rotors = layout.rotors();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            blocks.push(b.forward(store, &mut h, &rotors));
        }
        let final_in = h.slice(s![..video_rows, ..]).to_owned();
        let (normed, final_ln) = self.final_ln.forward(store, &final_in);
        let out = self.patch_out.forward(store, &normed);
        let final_normed = normed;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { step: 0, detail: "non-finite model output".into() });
        }
        let vel = TokenGrid::from_tokens(out, self.cfg.frames, self.cfg.height, self.cfg.width)?;
        Ok((
            vel,
            ForwardCache {
                feats,
                layout,
                assemble,
                caption,
                time,
                blocks,
                final_normed,
                final_ln,
                video_rows,
                ref_rows,
                ref_dropped: cond.ref_dropped,
                text_dropped: cond.text_dropped,
            },
        ))
    }

    /// Accumulates parameter gradients for `d(loss)/d(velocity)`.
    pub fn backward(&self, cache: &ForwardCache, dvel: &TokenGrid, grads: &mut Grads) {
        let store = &self.store;
        let dout = dvel.to_tokens();
        let dnormed = self.patch_out.backward(store, &cache.final_normed, &dout, grads);
        let dfinal = self.final_ln.backward(store, &cache.final_ln, &dnormed, grads);

        let n = cache.feats.nrows();
        let mut dh = Array2::zeros((n, self.cfg.hidden));
        dh.slice_mut(s![..cache.video_rows, ..]).assign(&dfinal);
        let rotors = cache.layout.rotors();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            b.backward(store, c, &rotors, &mut dh, grads);
        }

        let dtemb = dh.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.time_mlp.backward(store, &cache.time, &dtemb, grads);
        {
            let g = grads.get_mut(self.stream_emb);
            for (row, rec) in dh.rows().into_iter().zip(&cache.layout.records) {
                let mut slot = g.row_mut(stream_slot(rec.stream));
                slot += &row;
            }
        }
        let mut dfeats = self.patch_in.backward(store, &cache.feats, &dh, grads);

        if let Some((start, mlp_cache)) = &cache.caption {
            let dcap = dfeats.slice(s![*start.., ..]).to_owned();
            if cache.text_dropped {
                *grads.get_mut(self.null_text) += &dcap.sum_axis(Axis(0)).insert_axis(Axis(0));
            } else {
                self.stream.tags.mlp.backward(store, mlp_cache, &dcap, grads);
            }
        }
        if cache.ref_dropped {
            let dref = dfeats.slice(s![cache.ref_rows.clone(), ..]).sum_axis(Axis(0));
            *grads.get_mut(self.null_ref) += &dref.insert_axis(Axis(0));
            dfeats.slice_mut(s![cache.ref_rows.clone(), ..]).fill(0.0);
        } else {
            let image_rows = self.cfg.height * self.cfg.width;
            self.geometry.assemble_backward(store, &self.stream, &cache.assemble, &dfeats, grads, image_rows);
        }
    }

    /// Predicted velocity of the reference-free, caption-free input.
    pub fn null_conditions(&self) -> Conditions {
        Conditions::unconditional(self.cfg.tag_dim)
    }

    pub fn video_token_count(&self) -> usize {
        self.cfg.frames * self.cfg.height * self.cfg.width
    }

    #[cfg(test)]
    pub(crate) fn mean_abs_param(&self) -> f64 {
        let n = self.store.count() as f64;
        self.store.iter().map(|(_, v)| v.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>() / n
    }
}

impl VelocityField for FlowTransformer {
    fn velocity(&self, z_t: &TokenGrid, t: f64, cond: &Conditions) -> Result<TokenGrid> {
        self.forward(z_t, t, cond).map(|(v, _)| v)
    }
}

/// Flat view of a velocity grid, handy for tests.
pub fn flatten(grid: &TokenGrid) -> Array1<f64> {
    grid.data.iter().copied().collect()
}
