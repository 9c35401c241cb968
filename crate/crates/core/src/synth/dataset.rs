//! On-disk scenes: `scenes/<seed>/manifest.json` plus `scenes/<seed>/tensors.bin`
//! (little-endian f64: the video, then each entity pattern).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{generate_scene, Entity, SceneConfig, SynthScene};
use super::track::MaskTrack;
use crate::error::{Error, Result};
use crate::tokens::TokenGrid;

pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: usize,
    pub tag: String,
    pub first_frame: usize,
    pub last_frame: usize,
    pub positions: Vec<Option<(usize, usize)>>,
    pub track: MaskTrack,
    pub pattern_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: SceneConfig,
    pub video_shape: [usize; 4],
    pub entities: Vec<EntityRecord>,
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &SceneConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scene_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn generate_seeded(cfg: &SceneConfig, seed: u64) -> Result<SynthScene> {
    generate_scene(&mut scene_rng(seed), cfg)
}

pub fn scene_dir(root: &Path, seed: u64) -> PathBuf {
    root.join("scenes").join(seed.to_string())
}

fn push_f64(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_scene(root: &Path, seed: u64, cfg: &SceneConfig, scene: &SynthScene) -> Result<PathBuf> {
    let dir = scene_dir(root, seed);
    fs::create_dir_all(&dir)?;
    let mut blob = Vec::new();
    push_f64(&mut blob, scene.video.data.iter().copied());
    let mut entities = Vec::with_capacity(scene.entities.len());
    for e in &scene.entities {
        push_f64(&mut blob, e.pattern.iter().copied());
        let (h, w, c) = e.pattern.dim();
        entities.push(EntityRecord {
            id: e.id,
            tag: e.tag.clone(),
            first_frame: e.first_frame,
            last_frame: e.last_frame,
            positions: e.positions.clone(),
            track: e.track.clone(),
            pattern_shape: [h, w, c],
        });
    }
    let manifest = SceneManifest {
        format_version: SCENE_FORMAT_VERSION,
        seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        video_shape: scene.video.dims(),
        entities,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join("tensors.bin"), blob)?;
    Ok(dir)
}

pub fn read_scene(dir: &Path) -> Result<(SceneManifest, SynthScene)> {
    let manifest: SceneManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != SCENE_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported scene format {}", manifest.format_version)));
    }
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(Error::Format("scene config hash mismatch".into()));
    }
    let blob = fs::read(dir.join("tensors.bin"))?;
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = manifest.video_shape.iter().product::<usize>()
        + manifest.entities.iter().map(|e| e.pattern_shape.iter().product::<usize>()).sum::<usize>();
    if blob.len() != expected * 8 {
        return Err(Error::Format(format!("tensors.bin holds {} bytes, expected {}", blob.len(), expected * 8)));
    }
    let [t, h, w, c] = manifest.video_shape;
    let video = Array4::from_shape_vec((t, h, w, c), values.by_ref().take(t * h * w * c).collect())
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut entities = Vec::with_capacity(manifest.entities.len());
    for r in &manifest.entities {
        let [ph, pw, pc] = r.pattern_shape;
        let pattern = Array3::from_shape_vec((ph, pw, pc), values.by_ref().take(ph * pw * pc).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        entities.push(Entity {
            id: r.id,
            tag: r.tag.clone(),
            pattern,
            track: r.track.clone(),
            first_frame: r.first_frame,
            last_frame: r.last_frame,
            positions: r.positions.clone(),
        });
    }
    let scene = SynthScene { video: TokenGrid::from_array(video)?, entities };
    Ok((manifest, scene))
}

/// Generates and writes one scene per seed; returns the scene directories.
pub fn generate_dataset(root: &Path, cfg: &SceneConfig, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<PathBuf>> {
    seeds
        .into_iter()
        .map(|seed| {
            let scene = generate_seeded(cfg, seed)?;
            write_scene(root, seed, cfg, &scene)
        })
        .collect()
}

/// Regenerates the scene from its manifest and compares it with the stored one.
pub fn verify_scene(dir: &Path) -> Result<bool> {
    let (manifest, stored) = read_scene(dir)?;
    Ok(generate_seeded(&manifest.config, manifest.seed)? == stored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = SceneConfig::default();
        let dirs = generate_dataset(tmp.path(), &cfg, [3, 11]).unwrap();
        assert!(dirs[1].ends_with("scenes/11"));
        for (dir, seed) in dirs.iter().zip([3, 11]) {
            let (m, scene) = read_scene(dir).unwrap();
            assert_eq!(m.seed, seed);
            assert_eq!(scene, generate_seeded(&cfg, seed).unwrap());
            assert!(verify_scene(dir).unwrap());
        }
    }

    #[test]
    fn tampered_files_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = generate_dataset(tmp.path(), &SceneConfig::default(), [1]).unwrap().remove(0);
        let bin = dir.join("tensors.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_scene(&dir), Err(Error::Format(_))));

        let dir = generate_dataset(tmp.path(), &SceneConfig::default(), [2]).unwrap().remove(0);
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"frames\": 8", "\"frames\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_scene(&dir), Err(Error::Format(_))));
    }

    #[test]
    fn hash_tracks_config() {
        let a = SceneConfig::default();
        let b = SceneConfig { background_std: 0.4, ..a.clone() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
