//! Checkpoint files.
//!
//! ```text
//! b"MLCK" | u32 version | u64 header length | JSON header | f32 payload
//! ```
//!
//! Integers and floats are little-endian. The header echoes the training
//! config and lists every parameter with its shape and offset (in values)
//! into the payload. The payload holds the parameters, then the AdamW first
//! moments, then the second moments, each section in manifest order.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{param_shapes, ModelParams, PARAM_NAMES};
use crate::tensor::{AdamWState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    /// Decimal, since the position exceeds 64 bits.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    rng: RngState,
    params: Vec<Entry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    let params = t.params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (p, name) in params.iter().zip(PARAM_NAMES) {
        entries.push(Entry { name: name.into(), shape: p.shape().to_vec(), dtype: "f32".into(), offset, len: p.len() });
        offset += p.len();
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: t.config.clone(),
        epoch: t.epoch,
        adam_step: t.adam.step,
        rng: RngState {
            seed: t.rng.get_seed().to_vec(),
            stream: t.rng.get_stream(),
            word_pos: t.rng.get_word_pos().to_string(),
        },
        params: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;

    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for section in [params, t.adam.m.iter().collect(), t.adam.v.iter().collect()] {
            for tensor in section {
                for x in tensor.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;

    let expected = param_shapes(&header.config.dims);
    if header.params.len() != expected.len() {
        return Err(bad(format!("{} parameters listed, model has {}", header.params.len(), expected.len())));
    }
    let mut offset = 0;
    for ((e, shape), name) in header.params.iter().zip(&expected).zip(PARAM_NAMES) {
        if e.name != name || &e.shape != shape || e.dtype != "f32" {
            return Err(bad(format!("manifest entry {} {:?} does not match {name} {shape:?}", e.name, e.shape)));
        }
        if e.offset != offset || e.len != shape.iter().product::<usize>() {
            return Err(bad(format!("manifest entry {} has offset {} len {}", e.name, e.offset, e.len)));
        }
        offset += e.len;
    }
    let total = offset;
    let payload = &bytes[16 + header_len..];
    if payload.len() != 3 * total * 4 {
        return Err(bad(format!("payload holds {} bytes, manifest needs {}", payload.len(), 3 * total * 4)));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let section = |k: usize| -> Result<Vec<Tensor<f32>>> {
        header
            .params
            .iter()
            .map(|e| {
                let start = k * total + e.offset;
                Tensor::new(e.shape.clone(), values[start..start + e.len].to_vec())
            })
            .collect()
    };
    let params = ModelParams::from_vec(section(0)?)?;
    let adam = AdamWState { step: header.adam_step, m: section(1)?, v: section(2)? };

    let seed: [u8; 32] = header.rng.seed.as_slice().try_into().map_err(|_| bad("rng seed must be 32 bytes"))?;
    let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| bad("rng position is not an integer"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(Trainer { config: header.config, params, adam, epoch: header.epoch, rng })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::AlignmentConfig;
    use crate::data::{generate_corpus, CorpusSpec, TaskKind};
    use crate::model::ModelDims;

    fn setup() -> (crate::data::Dataset, TrainConfig) {
        let spec = CorpusSpec {
            n_concepts: 6,
            n_train: 12,
            n_test: 2,
            frames_per_video: 6,
            segments_per_video: 2,
            vocab_size: 40,
            words_per_concept: 3,
            question_vocab: 4,
            static_dim: 4,
            motion_dim: 2,
            ..Default::default()
        };
        let cfg = TrainConfig {
            task: TaskKind::Qa,
            epochs: 4,
            batch_size: 5,
            lr: 1e-3,
            alignment: AlignmentConfig { lambda1: 0.5, ..Default::default() },
            dims: ModelDims { vocab_size: 40, embed_dim: 5, hidden_dim: 6, static_dim: 4, motion_dim: 2 },
            false_answer_samples: Some(2),
            ..Default::default()
        };
        (generate_corpus(&spec).unwrap().train, cfg)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (data, cfg) = setup();
        let mut t = Trainer::new(cfg).unwrap();
        t.train_until(&data, 1, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &t).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), t);
    }

    #[test]
    fn resume_matches_uninterrupted_training() {
        let (data, cfg) = setup();
        let mut whole = Trainer::new(cfg.clone()).unwrap();
        let full_log = whole.train_until(&data, 4, |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut first = Trainer::new(cfg).unwrap();
        let mut log = first.train_until(&data, 2, |_, _| Ok(())).unwrap();
        save_checkpoint(&p, &first).unwrap();
        let mut resumed = load_checkpoint(&p).unwrap();
        log.extend(resumed.train_until(&data, 4, |_, _| Ok(())).unwrap());
        assert_eq!(resumed, whole);
        let losses: Vec<_> = log.iter().map(|e| e.losses()).collect();
        assert_eq!(losses, full_log.iter().map(|e| e.losses()).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_files_are_checkpoint_errors() {
        let (_, cfg) = setup();
        let t = Trainer::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &t).unwrap();
        let good = fs::read(&p).unwrap();

        let mut magic = good.clone();
        magic[0] = b'X';
        fs::write(&p, &magic).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));

        let mut version = good.clone();
        version[4] = 9;
        fs::write(&p, &version).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));

        fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
