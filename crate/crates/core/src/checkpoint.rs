//! Checkpoint files: an 8-byte little-endian header length, a JSON header,
//! then every parameter array as little-endian f64 in declaration order,
//! followed by the Adam first and second moments when present.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlowTransformer, ModelConfig};
use crate::nn::{Adam, AdamConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Training seed.
    pub seed: u64,
    pub step: usize,
    pub params: Vec<(String, [usize; 2])>,
    pub optimizer: Option<AdamConfig>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: FlowTransformer,
    pub optimizer: Option<Adam>,
}

fn write_arrays<W: Write>(out: &mut W, arrays: &[Array2<f64>]) -> Result<()> {
    let mut buf = Vec::with_capacity(arrays.iter().map(|a| a.len() * 8).sum());
    for a in arrays {
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_arrays(bytes: &mut &[u8], shapes: &[(String, [usize; 2])]) -> Result<Vec<Array2<f64>>> {
    shapes
        .iter()
        .map(|(name, [r, c])| {
            let n = r * c * 8;
            if bytes.len() < n {
                return Err(Error::Format(format!("checkpoint truncated in {name}")));
            }
            let (head, rest) = bytes.split_at(n);
            *bytes = rest;
            let vals = head.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            Array2::from_shape_vec((*r, *c), vals).map_err(|e| Error::Format(e.to_string()))
        })
        .collect()
}

pub fn save(path: &Path, model: &FlowTransformer, optimizer: Option<&Adam>, seed: u64, step: usize) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: model.cfg.clone(),
        seed,
        step,
        params: model.store.shapes(),
        optimizer: optimizer.map(|o| o.cfg),
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        write_arrays(&mut f, model.store.values())?;
        if let Some(o) = optimizer {
            let (m, v) = o.moments();
            write_arrays(&mut f, m)?;
            write_arrays(&mut f, v)?;
        }
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Format("checkpoint header truncated".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + len])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint format {}", header.format_version)));
    }
    let mut model = FlowTransformer::new(header.model.clone())?;
    if model.store.shapes() != header.params {
        return Err(Error::Format("checkpoint parameters do not match the model layout".into()));
    }
    let mut rest = &bytes[8 + len..];
    model.store.set_values(read_arrays(&mut rest, &header.params)?)?;
    let optimizer = match header.optimizer {
        Some(cfg) => {
            let m = read_arrays(&mut rest, &header.params)?;
            let v = read_arrays(&mut rest, &header.params)?;
            let mut adam = Adam::new(cfg, &model.store);
            adam.restore(header.step, m, v);
            Some(adam)
        }
        None => None,
    };
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    Ok(Checkpoint { header, model, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { hidden: 16, blocks: 1, heads: 2, d_x: 2, d_y: 2, d_t: 4, tag_hidden: 8, time_dim: 8, ..Default::default() }
    }

    #[test]
    fn round_trip_with_optimizer() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt/step_3.bin");
        let mut model = FlowTransformer::new(small()).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &model.store);
        let mut g = model.store.zero_grads();
        g.0.iter_mut().for_each(|a| a.fill(0.5));
        adam.update(&mut model.store, &mut g);
        save(&path, &model, Some(&adam), 9, 1).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.header.step, 1);
        assert_eq!(back.header.seed, 9);
        assert_eq!(back.model.store.values(), model.store.values());
        let o = back.optimizer.unwrap();
        assert_eq!(o.step, 1);
        assert_eq!(o.moments().0, adam.moments().0);
        assert_eq!(o.moments().1, adam.moments().1);
    }

    #[test]
    fn header_is_readable_json() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.bin");
        save(&path, &FlowTransformer::new(small()).unwrap(), None, 0, 0).unwrap();
        let bytes = fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(v["format_version"], 1);
        assert!(load(&path).unwrap().optimizer.is_none());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.bin");
        save(&path, &FlowTransformer::new(small()).unwrap(), None, 0, 0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
        fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }
}
