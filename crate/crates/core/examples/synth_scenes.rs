//! Synthetic scenes: entity tracks, presence intervals, deduplication,
//! reference crops and the on-disk dataset layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflab::synth::{
    dedup_tracks, extract_interval, generate_dataset, generate_scene, read_scene, sample_reference, SceneConfig,
};

fn main() -> reflab::Result<()> {
    let cfg = SceneConfig { min_entities: 2, max_entities: 2, ..Default::default() };
    let scene = generate_scene(&mut ChaCha8Rng::seed_from_u64(3), &cfg)?;
    for e in &scene.entities {
        let p = extract_interval(&e.track, 1).expect("present");
        println!("entity {} '{}': areas {:?} -> frames [{}, {}]", e.id, e.tag, e.track.areas(), p.t0, p.t1);
    }

    let tracks: Vec<_> = scene.entities.iter().map(|e| e.track.clone()).chain([scene.entities[0].track.clone()]).collect();
    println!("dedup: {} tracks -> {}", tracks.len(), dedup_tracks(&tracks, 0.5)?.len());

    let r = sample_reference(&scene, 0, (2, 5), 1, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!(
        "reference for entity 0 from frame {} (outside window: {}), interval [{}, {}] of {}",
        r.frame, r.outside, r.interval.t0, r.interval.t1, r.interval.total_frames
    );

    let root = std::env::temp_dir().join("reflab-synth-example");
    let dirs = generate_dataset(&root, &cfg, 0..3)?;
    let (manifest, _) = read_scene(&dirs[0])?;
    println!("wrote {} scenes to {}; config hash {}", dirs.len(), root.display(), &manifest.config_hash[..12]);
    Ok(())
}
