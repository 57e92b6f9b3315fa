//! Learnable parameters of the whole network, generic over what stores
//! each parameter: plain [`Tensor`]s between steps, graph [`Var`]s while a
//! step is being recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub static_dim: usize,
    pub motion_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { vocab_size: 256, embed_dim: 64, hidden_dim: 128, static_dim: 64, motion_dim: 32 }
    }
}

impl ModelDims {
    pub fn frame_dim(&self) -> usize {
        self.static_dim + self.motion_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.vocab_size, self.embed_dim, self.hidden_dim, self.static_dim + self.motion_dim];
        if all.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Token embedding, gated recurrent cell (gate order: input, forget,
/// candidate, output) and attention query.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams<P> {
    pub embedding: P,
    pub w_input: P,
    pub w_hidden: P,
    pub bias: P,
    pub query: P,
}

/// Per-frame MLP `(D_s + D_m) -> H -> H` with tanh, plus attention query.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoEncoderParams<P> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
    pub query: P,
}

/// Multi-choice head over `[E_L; E_V; E_L * E_V]`. There is no output
/// bias: a shift shared by all candidates cancels in the softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct QaHeadParams<P> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
}

/// One per-frame logit MLP over `[E_f; E_L]`. The first layer is stored as
/// its frame and query halves; like the QA head it has no output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanHeadParams<P> {
    pub w_frame: P,
    pub w_query: P,
    pub b1: P,
    pub w2: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentHeadParams<P> {
    pub start: SpanHeadParams<P>,
    pub end: SpanHeadParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub text: TextEncoderParams<P>,
    pub video: VideoEncoderParams<P>,
    pub qa: QaHeadParams<P>,
    pub moment: MomentHeadParams<P>,
}

/// Parameters bound into a graph for one forward/backward pass.
pub type BoundParams<'g, T> = ModelParams<Var<'g, T>>;

pub const PARAM_NAMES: [&str; 21] = [
    "text.embedding",
    "text.w_input",
    "text.w_hidden",
    "text.bias",
    "text.query",
    "video.w1",
    "video.b1",
    "video.w2",
    "video.b2",
    "video.query",
    "qa.w1",
    "qa.b1",
    "qa.w2",
    "moment.start.w_frame",
    "moment.start.w_query",
    "moment.start.b1",
    "moment.start.w2",
    "moment.end.w_frame",
    "moment.end.w_query",
    "moment.end.b1",
    "moment.end.w2",
];

impl<P> ModelParams<P> {
    /// Parameters in the fixed order of [`PARAM_NAMES`].
    pub fn to_vec(&self) -> Vec<&P> {
        let (t, v, q, s, e) = (&self.text, &self.video, &self.qa, &self.moment.start, &self.moment.end);
        vec![
            &t.embedding, &t.w_input, &t.w_hidden, &t.bias, &t.query,
            &v.w1, &v.b1, &v.w2, &v.b2, &v.query,
            &q.w1, &q.b1, &q.w2,
            &s.w_frame, &s.w_query, &s.b1, &s.w2,
            &e.w_frame, &e.w_query, &e.b1, &e.w2,
        ]
    }

    pub fn to_vec_mut(&mut self) -> Vec<&mut P> {
        let ModelParams { text: t, video: v, qa: q, moment } = self;
        let MomentHeadParams { start: s, end: e } = moment;
        vec![
            &mut t.embedding, &mut t.w_input, &mut t.w_hidden, &mut t.bias, &mut t.query,
            &mut v.w1, &mut v.b1, &mut v.w2, &mut v.b2, &mut v.query,
            &mut q.w1, &mut q.b1, &mut q.w2,
            &mut s.w_frame, &mut s.w_query, &mut s.b1, &mut s.w2,
            &mut e.w_frame, &mut e.w_query, &mut e.b1, &mut e.w2,
        ]
    }

    pub fn from_vec(items: Vec<P>) -> Result<Self> {
        if items.len() != PARAM_NAMES.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                PARAM_NAMES.len(),
                items.len()
            )));
        }
        let mut it = items.into_iter();
        let mut next = || it.next().expect("length checked");
        let text = TextEncoderParams { embedding: next(), w_input: next(), w_hidden: next(), bias: next(), query: next() };
        let video = VideoEncoderParams { w1: next(), b1: next(), w2: next(), b2: next(), query: next() };
        let qa = QaHeadParams { w1: next(), b1: next(), w2: next() };
        let mut head = || SpanHeadParams { w_frame: next(), w_query: next(), b1: next(), w2: next() };
        let start = head();
        let end = head();
        Ok(ModelParams { text, video, qa, moment: MomentHeadParams { start, end } })
    }

    pub fn map<Q>(&self, f: impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams::from_vec(self.to_vec().into_iter().map(f).collect()).expect("same arity")
    }

    pub fn try_map<Q>(&self, f: impl FnMut(&P) -> Result<Q>) -> Result<ModelParams<Q>> {
        ModelParams::from_vec(self.to_vec().into_iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}

/// Shape of every parameter, in [`PARAM_NAMES`] order.
pub fn param_shapes(d: &ModelDims) -> Vec<Vec<usize>> {
    let (v, e, h, f) = (d.vocab_size, d.embed_dim, d.hidden_dim, d.frame_dim());
    let head = |out: &mut Vec<Vec<usize>>| {
        out.extend([vec![h, h], vec![h, h], vec![h], vec![h]]);
    };
    let mut s = vec![
        vec![v, e], vec![e, 4 * h], vec![h, 4 * h], vec![4 * h], vec![h],
        vec![f, h], vec![h], vec![h, h], vec![h], vec![h],
        vec![3 * h, h], vec![h], vec![h],
    ];
    head(&mut s);
    head(&mut s);
    s
}

impl<T: Float> ModelParams<Tensor<T>> {
    /// Fan-in uniform initialization from a seeded stream: matrices and
    /// attention queries draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// with `fan_in` the number of input rows. The embedding table is
    /// indexed by one-hot tokens (fan-in 1), so it draws from `U(-1, 1)`.
    /// Biases start at zero.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_shapes(dims)
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(shape, name)| {
                let n: usize = shape.iter().product();
                let bias = name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
                let data = if bias {
                    vec![T::zero(); n]
                } else {
                    let fan_in = if name == "text.embedding" { 1 } else { shape[0] };
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(tensors)
    }

    /// Copies every parameter into `graph` as a trainable leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Result<BoundParams<'g, T>> {
        self.try_map(|t| graph.param(t))
    }

    /// Copies every parameter into `graph` as a constant.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<T>) -> Result<BoundParams<'g, T>> {
        self.try_map(|t| graph.constant(t.clone()))
    }

    pub fn cast<U: Float>(&self) -> ModelParams<Tensor<U>> {
        self.map(|t| t.cast())
    }

    pub fn num_values(&self) -> usize {
        self.to_vec().iter().map(|t| t.len()).sum()
    }
}

impl<'g, T: Float> BoundParams<'g, T> {
    /// Gradients accumulated on every bound leaf; zeros where none arrived.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.to_vec()
            .into_iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

impl<P: Clone> TextEncoderParams<P> {
    pub fn into_vec(self) -> Vec<P> {
        vec![self.embedding, self.w_input, self.w_hidden, self.bias, self.query]
    }

    /// Inverse of [`into_vec`](Self::into_vec); panics on fewer than 5 items.
    pub fn from_slice(v: &[P]) -> Self {
        TextEncoderParams {
            embedding: v[0].clone(),
            w_input: v[1].clone(),
            w_hidden: v[2].clone(),
            bias: v[3].clone(),
            query: v[4].clone(),
        }
    }
}

impl<P: Clone> VideoEncoderParams<P> {
    pub fn into_vec(self) -> Vec<P> {
        vec![self.w1, self.b1, self.w2, self.b2, self.query]
    }

    pub fn from_slice(v: &[P]) -> Self {
        VideoEncoderParams { w1: v[0].clone(), b1: v[1].clone(), w2: v[2].clone(), b2: v[3].clone(), query: v[4].clone() }
    }
}
