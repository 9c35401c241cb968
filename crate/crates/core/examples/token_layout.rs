//! Joint token stream for a video with two references.

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflab::interval::{IntervalEncoding, IntervalMode, IntervalSpec, WeRoPEWeights};
use reflab::nn::{Activation, Mlp, ParamStore};
use reflab::rope::{AxisBanks, AxisSplit};
use reflab::tokens::{IndexEmbeddingTable, ReferenceSpec, Stream, StreamGeometry, StreamParams, TagEmbedder, TagProjector, TokenGrid};

fn main() -> reflab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let split = AxisSplit::new(16, 16, 32)?;
    let geometry = StreamGeometry {
        banks: AxisBanks::new(split, 10_000.0, 10_000.0)?,
        split,
        encoding: IntervalEncoding::new(IntervalMode::We, WeRoPEWeights::default()),
    };
    let mut store = ParamStore::new();
    let params = StreamParams {
        index: IndexEmbeddingTable::new(&mut store, 4, 16, 0.2, &mut rng)?,
        tags: TagProjector { mlp: Mlp::new(&mut store, "tag_mlp", [32, 64, 16], Activation::Gelu, &mut rng) },
    };
    let embedder = TagEmbedder { dim: 32, k: 3 };
    let video = TokenGrid::from_array(Array4::zeros((8, 4, 4, 16)))?;
    let refs = vec![
        ReferenceSpec { image: Array3::ones((4, 4, 16)), interval: IntervalSpec::new(1.0, 3.0, 8)?, tag_tokens: embedder.embed("zorb"), index: 0 },
        ReferenceSpec { image: Array3::ones((4, 4, 16)), interval: IntervalSpec::new(4.0, 7.0, 8)?, tag_tokens: embedder.embed("kipu"), index: 1 },
    ];
    let (feats, layout, _) = geometry.assemble(&store, &params, &video, &refs)?;
    println!("tokens: {} x {}", feats.nrows(), feats.ncols());
    for s in [Stream::Video, Stream::RefImage, Stream::RefText] {
        println!("  {s:?}: {}", layout.count(s));
    }
    let first_tag = layout.records.iter().find(|r| r.stream == Stream::RefText).expect("tag tokens");
    println!("first tag token sits at x = y = {} with temporal terms {:?}", first_tag.x, first_tag.temporal);
    Ok(())
}
