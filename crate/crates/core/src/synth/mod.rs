//! Procedural sprite videos with exact entity mask tracks.

mod dataset;
mod reference;
mod scene;
mod track;

pub use dataset::{
    config_hash, generate_dataset, generate_seeded, read_scene, scene_dir, scene_rng, verify_scene, write_scene,
    EntityRecord, SceneManifest, SCENE_FORMAT_VERSION,
};
pub use reference::{
    augment, centered_crop, flip_horizontal, sample_reference, smooth, zoom, AugmentConfig, SampledReference,
};
pub use scene::{
    generate_scene, generate_scene_with_intervals, random_pattern, render, Entity, SceneConfig, SynthScene, VOCABULARY,
};
pub use track::{
    decode_rle, dedup_tracks, encode_rle, extract_from_areas, extract_interval, mean_track_iou, MaskTrack,
    PresenceInterval, RleTrack,
};
