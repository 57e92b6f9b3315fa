//! Dataset files.
//!
//! Text form: one JSON object per line. Line 1 is the header
//! `{version, static_dim, motion_dim, vocab_size, task, vocab}`; every
//! following line is a sample `{id, frames, tokens, annotation}` with
//! `frames` a list of rows.
//!
//! Packed form, for large precomputed features: a manifest in the text
//! form whose sample lines carry `{offset, n_frames}` instead of `frames`,
//! next to a binary file laid out as
//!
//! ```text
//! b"MLVA" | u32 version | u32 static_dim | u32 motion_dim | u64 n_values | f32 * n_values
//! ```
//!
//! all little-endian. `offset` is the byte position of the sample's first
//! value in that file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, TaskAnnotation, TaskKind, Vocab};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"MLVA";
const BINARY_HEADER_LEN: u64 = 24;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    static_dim: usize,
    motion_dim: usize,
    vocab_size: usize,
    task: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_frames: Option<usize>,
    tokens: Vec<u32>,
    annotation: TaskAnnotation,
}

fn header_of(ds: &Dataset) -> Header {
    Header {
        version: FORMAT_VERSION,
        static_dim: ds.static_dim,
        motion_dim: ds.motion_dim,
        vocab_size: ds.vocab.len(),
        task: ds.task,
        vocab: ds.vocab.tokens.clone(),
    }
}

fn check_consistent(ds: &Dataset) -> Result<()> {
    for s in &ds.samples {
        if s.task.kind() != ds.task {
            return Err(Error::Data(format!("sample {} is {} in a {} dataset", s.id, s.task.kind(), ds.task)));
        }
        if s.static_dim != ds.static_dim || s.motion_dim != ds.motion_dim {
            return Err(Error::Data(format!("sample {} has feature dims differing from the dataset", s.id)));
        }
        s.validate(ds.vocab.len())?;
    }
    Ok(())
}

fn write_line<W: Write>(w: &mut W, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    check_consistent(ds)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_line(&mut w, &header_of(ds))?;
    for s in &ds.samples {
        let rows = (0..s.n_frames()).map(|r| s.frames.row(r).to_vec()).collect();
        let rec = Record {
            id: s.id.clone(),
            frames: Some(rows),
            offset: None,
            n_frames: None,
            tokens: s.tokens.clone(),
            annotation: s.task.clone(),
        };
        write_line(&mut w, &rec)?;
    }
    w.flush()?;
    Ok(())
}

struct Parsed {
    header: Header,
    records: Vec<(usize, Record)>,
}

fn parse_lines(path: &Path) -> Result<Parsed> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse { line: lineno, msg: e.to_string() };
        if header.is_none() {
            let h: Header = serde_json::from_str(&line).map_err(parse_err)?;
            if h.version != FORMAT_VERSION {
                return Err(Error::Parse { line: lineno, msg: format!("unsupported version {}", h.version) });
            }
            if !h.vocab.is_empty() && h.vocab.len() != h.vocab_size {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("vocab lists {} tokens but vocab_size is {}", h.vocab.len(), h.vocab_size),
                });
            }
            header = Some(h);
        } else {
            records.push((lineno, serde_json::from_str(&line).map_err(parse_err)?));
        }
    }
    let header = header.ok_or(Error::Parse { line: 1, msg: "missing header line".into() })?;
    Ok(Parsed { header, records })
}

fn vocab_of(h: &Header) -> Vocab {
    if h.vocab.is_empty() {
        Vocab { tokens: (0..h.vocab_size).map(|i| format!("t{i}")).collect() }
    } else {
        Vocab { tokens: h.vocab.clone() }
    }
}

fn finish(h: &Header, lineno: usize, rec: Record, frames: Tensor<f32>) -> Result<Sample> {
    let width = h.static_dim + h.motion_dim;
    if frames.cols() != width {
        return Err(Error::Data(format!(
            "line {lineno}: sample {} has feature width {}, header declares {width}",
            rec.id,
            frames.cols()
        )));
    }
    if rec.annotation.kind() != h.task {
        return Err(Error::Data(format!(
            "line {lineno}: sample {} is {} in a {} dataset",
            rec.id,
            rec.annotation.kind(),
            h.task
        )));
    }
    let s = Sample {
        id: rec.id,
        frames,
        static_dim: h.static_dim,
        motion_dim: h.motion_dim,
        tokens: rec.tokens,
        task: rec.annotation,
    };
    s.validate(h.vocab_size).map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
    Ok(s)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let Parsed { header, records } = parse_lines(path)?;
    let mut samples = Vec::with_capacity(records.len());
    for (lineno, mut rec) in records {
        let rows = rec.frames.take().ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("sample {} has no frames", rec.id),
        })?;
        if rows.is_empty() {
            return Err(Error::Data(format!("line {lineno}: sample {} has zero frames", rec.id)));
        }
        let frames = Tensor::from_rows(&rows)
            .map_err(|_| Error::Data(format!("line {lineno}: sample {} has ragged frame rows", rec.id)))?;
        samples.push(finish(&header, lineno, rec, frames)?);
    }
    Ok(Dataset {
        static_dim: header.static_dim,
        motion_dim: header.motion_dim,
        task: header.task,
        vocab: vocab_of(&header),
        samples,
    })
}

pub fn write_binary_dataset(manifest: &Path, features: &Path, ds: &Dataset) -> Result<()> {
    check_consistent(ds)?;
    let mut bin = BufWriter::new(File::create(features)?);
    let n_values: u64 = ds.samples.iter().map(|s| s.frames.len() as u64).sum();
    bin.write_all(BINARY_MAGIC)?;
    bin.write_all(&FORMAT_VERSION.to_le_bytes())?;
    bin.write_all(&(ds.static_dim as u32).to_le_bytes())?;
    bin.write_all(&(ds.motion_dim as u32).to_le_bytes())?;
    bin.write_all(&n_values.to_le_bytes())?;

    let mut man = BufWriter::new(File::create(manifest)?);
    write_line(&mut man, &header_of(ds))?;
    let mut offset = BINARY_HEADER_LEN;
    for s in &ds.samples {
        for v in s.frames.data() {
            bin.write_all(&v.to_le_bytes())?;
        }
        let rec = Record {
            id: s.id.clone(),
            frames: None,
            offset: Some(offset),
            n_frames: Some(s.n_frames()),
            tokens: s.tokens.clone(),
            annotation: s.task.clone(),
        };
        write_line(&mut man, &rec)?;
        offset += 4 * s.frames.len() as u64;
    }
    bin.flush()?;
    man.flush()?;
    Ok(())
}

pub fn read_binary_dataset(manifest: &Path, features: &Path) -> Result<Dataset> {
    let Parsed { header, records } = parse_lines(manifest)?;
    let mut bytes = Vec::new();
    File::open(features)?.read_to_end(&mut bytes)?;
    if bytes.len() < BINARY_HEADER_LEN as usize || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Data(format!("{} is not an MLVA feature file", features.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported MLVA version {}", u32_at(4))));
    }
    let (sd, md) = (u32_at(8) as usize, u32_at(12) as usize);
    if sd != header.static_dim || md != header.motion_dim {
        return Err(Error::Data(format!(
            "feature file declares dims {sd}+{md}, manifest declares {}+{}",
            header.static_dim, header.motion_dim
        )));
    }
    let n_values = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if bytes.len() as u64 != BINARY_HEADER_LEN + 4 * n_values {
        return Err(Error::Data(format!("feature file holds {} bytes, header implies {}", bytes.len(), BINARY_HEADER_LEN + 4 * n_values)));
    }
    let width = sd + md;
    let mut samples = Vec::with_capacity(records.len());
    for (lineno, rec) in records {
        let (Some(offset), Some(n)) = (rec.offset, rec.n_frames) else {
            return Err(Error::Parse { line: lineno, msg: format!("sample {} lacks offset/n_frames", rec.id) });
        };
        if n == 0 {
            return Err(Error::Data(format!("line {lineno}: sample {} has zero frames", rec.id)));
        }
        let start = offset as usize;
        let end = start + 4 * n * width;
        if start < BINARY_HEADER_LEN as usize || end > bytes.len() {
            return Err(Error::Data(format!("line {lineno}: sample {} reads past the feature file", rec.id)));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frames = Tensor::matrix(n, width, data)?;
        samples.push(finish(&header, lineno, rec, frames)?);
    }
    Ok(Dataset {
        static_dim: header.static_dim,
        motion_dim: header.motion_dim,
        task: header.task,
        vocab: vocab_of(&header),
        samples,
    })
}

/// Paths of a split inside a dataset directory: `<split>.jsonl`, or
/// `<split>.manifest.jsonl` with `<split>.mlva`.
pub fn split_paths(dir: &Path, split: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{split}.jsonl")),
        dir.join(format!("{split}.manifest.jsonl")),
        dir.join(format!("{split}.mlva")),
    )
}

/// Loads `split` ("train" or "test") from a dataset directory in either form.
pub fn load_split(dir: &Path, split: &str) -> Result<Dataset> {
    let (text, manifest, features) = split_paths(dir, split);
    if text.exists() {
        read_dataset(&text)
    } else if manifest.exists() {
        read_binary_dataset(&manifest, &features)
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {split} split in {}", dir.display()),
        )))
    }
}
