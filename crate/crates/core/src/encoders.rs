//! Text and video encoders.
//!
//! Text: token embedding, a single-layer unidirectional gated recurrent
//! pass whose per-step hidden states are the word encodings `E_w`, then
//! attention pooling into the sentence encoding `E_L`.
//!
//! Video: a per-frame MLP over the concatenated static and motion features
//! gives frame encodings `E_f`, attention pooling gives `E_V`.

use crate::error::{Error, Result};
use crate::model::{TextEncoderParams, VideoEncoderParams};
use crate::tensor::{Float, Tensor, Var};

/// Longest frame sequence fed to the video encoder.
pub const MAX_FRAMES: usize = 64;

#[derive(Clone, Copy, Debug)]
pub struct TextEncoding<'g, T: Float> {
    /// `T_tok x H` per-word encodings.
    pub words: Var<'g, T>,
    /// `H` pooled sentence encoding.
    pub pooled: Var<'g, T>,
    /// Attention weights over words.
    pub weights: Var<'g, T>,
}

#[derive(Clone, Copy, Debug)]
pub struct VideoEncoding<'g, T: Float> {
    /// `T_fr x H` per-frame encodings.
    pub frames: Var<'g, T>,
    /// `H` pooled video encoding.
    pub pooled: Var<'g, T>,
    pub weights: Var<'g, T>,
}

/// Single-query scaled dot-product attention pooling:
/// `w = softmax(rows . query / sqrt(H))`, output `w^T . rows`.
///
/// Returns the pooled vector and the weights.
pub fn attention_pool<'g, T: Float>(rows: Var<'g, T>, query: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let shape = rows.shape();
    if shape.len() != 2 {
        return Err(Error::EmptySequence(format!("attention pooling needs T x H rows, got {shape:?}")));
    }
    let h = shape[1] as f64;
    let weights = rows.matmul(query)?.scale(1.0 / h.sqrt())?.softmax()?;
    let pooled = weights.matmul(rows)?;
    Ok((pooled, weights))
}

/// Recurrent state after reading a token prefix. Several continuations
/// of one prefix share its computation.
#[derive(Clone, Debug)]
pub struct TextPrefix<'g, T: Float> {
    states: Vec<Var<'g, T>>,
    cell: Option<Var<'g, T>>,
}

impl<'g, T: Float> TextPrefix<'g, T> {
    pub fn empty() -> Self {
        TextPrefix { states: Vec::new(), cell: None }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Reads `tokens` after the current prefix.
    pub fn extend(&self, tokens: &[u32], p: &TextEncoderParams<Var<'g, T>>) -> Result<Self> {
        let mut next = self.clone();
        if tokens.is_empty() {
            return Ok(next);
        }
        let vocab = p.embedding.shape()[0];
        let ids = tokens
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t < vocab {
                    Ok(t)
                } else {
                    Err(Error::Data(format!("token id {t} outside vocabulary of {vocab}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = p.w_hidden.shape()[0];
        let projected = p.embedding.gather(&ids)?.matmul(p.w_input)?.add_bias(p.bias)?;
        for t in 0..ids.len() {
            let mut pre = projected.row(t)?;
            if let Some(prev) = next.states.last() {
                pre = pre.add(prev.matmul(p.w_hidden)?)?;
            }
            let input = pre.slice(0, hidden)?.sigmoid()?;
            let forget = pre.slice(hidden, hidden)?.sigmoid()?;
            let cand = pre.slice(2 * hidden, hidden)?.tanh()?;
            let output = pre.slice(3 * hidden, hidden)?.sigmoid()?;
            let fresh = input.mul(cand)?;
            let cell = match next.cell {
                Some(prev) => forget.mul(prev)?.add(fresh)?,
                None => fresh,
            };
            next.states.push(output.mul(cell.tanh()?)?);
            next.cell = Some(cell);
        }
        Ok(next)
    }

    /// Pools the word encodings read so far.
    pub fn finish(&self, p: &TextEncoderParams<Var<'g, T>>) -> Result<TextEncoding<'g, T>> {
        if self.states.is_empty() {
            return Err(Error::EmptySequence("cannot encode an empty token sequence".into()));
        }
        let words = p.embedding.graph().stack(&self.states)?;
        let (pooled, weights) = attention_pool(words, p.query)?;
        Ok(TextEncoding { words, pooled, weights })
    }
}

pub fn encode_text<'g, T: Float>(tokens: &[u32], p: &TextEncoderParams<Var<'g, T>>) -> Result<TextEncoding<'g, T>> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("cannot encode an empty token sequence".into()));
    }
    TextPrefix::empty().extend(tokens, p)?.finish(p)
}

/// `frames` is `T_fr x (D_s + D_m)` with `1 <= T_fr <= MAX_FRAMES`.
pub fn encode_video<'g, T: Float>(frames: Var<'g, T>, p: &VideoEncoderParams<Var<'g, T>>) -> Result<VideoEncoding<'g, T>> {
    let shape = frames.shape();
    let width = p.w1.shape()[0];
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Data(format!("frame features {shape:?} do not match encoder width {width}")));
    }
    if shape[0] > MAX_FRAMES {
        return Err(Error::Data(format!("{} frames exceed the cap of {MAX_FRAMES}; subsample first", shape[0])));
    }
    let encoded = frames.matmul(p.w1)?.add_bias(p.b1)?.tanh()?.matmul(p.w2)?.add_bias(p.b2)?;
    let (pooled, weights) = attention_pool(encoded, p.query)?;
    Ok(VideoEncoding { frames: encoded, pooled, weights })
}

/// Evenly spaced frame indices `floor(j * n / max)` when `n > max`,
/// otherwise every index.
pub fn subsample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|j| j * n / max).collect()
    }
}

/// Applies [`subsample_indices`] to a `T x D` frame matrix.
pub fn subsample_frames<T: Float>(frames: &Tensor<T>, max: usize) -> (Tensor<T>, Vec<usize>) {
    let idx = subsample_indices(frames.rows(), max);
    if idx.len() == frames.rows() {
        return (frames.clone(), idx);
    }
    let rows: Vec<Vec<T>> = idx.iter().map(|&i| frames.row(i).to_vec()).collect();
    (Tensor::from_rows(&rows).expect("uniform rows"), idx)
}
