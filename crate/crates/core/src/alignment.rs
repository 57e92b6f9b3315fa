//! Global and segment alignment: cosine similarity scores, contrastive
//! hinge losses against the hardest negative, and the combined objective
//! `L_task + lambda1 * L_glob + lambda2 * L_seg`.
//!
//! Taking the max over negatives before the hinge is the same as taking
//! the max of the per-negative hinges, because the hinge is monotone in
//! the negative score. Only the hardest negative receives gradient; ties
//! go to the first in enumeration order.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::encoders::TextEncoding;
use crate::error::{Error, Result};
use crate::tensor::{Float, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Hinge margin.
    pub alpha: f64,
    /// Weight of the global alignment loss.
    pub lambda1: f64,
    /// Weight of the segment alignment loss.
    pub lambda2: f64,
    /// Contrast wrong-answer language against true frames.
    pub use_false_language: bool,
    /// Contrast true language against frames outside the span.
    pub use_false_frames: bool,
    /// Add the video-anchored mirror terms to the global loss.
    pub symmetric_global: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            alpha: 0.2,
            lambda1: 0.0,
            lambda2: 1.0,
            use_false_language: true,
            use_false_frames: true,
            symmetric_global: true,
        }
    }
}

impl AlignmentConfig {
    /// Segment matching only, both negative sources (multi-choice QA with spans).
    pub fn segment_only() -> Self {
        Self::default()
    }

    /// Both levels, false answers only (open-vocabulary QA without spans).
    pub fn open_vocab_qa() -> Self {
        AlignmentConfig { lambda1: 1.0, lambda2: 2.0, use_false_frames: false, ..Self::default() }
    }

    /// Global matching only (retrieval).
    pub fn global_only() -> Self {
        AlignmentConfig { lambda1: 1.0, lambda2: 0.0, ..Self::default() }
    }

    /// Moment retrieval: no false language exists, contrast false frames.
    pub fn moment(lambda1: f64, lambda2: f64) -> Self {
        AlignmentConfig { lambda1, lambda2, use_false_language: false, ..Self::default() }
    }

    /// No alignment terms at all.
    pub fn none() -> Self {
        AlignmentConfig { lambda1: 0.0, lambda2: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// A language variant scored at segment level: the question joined with a
/// candidate answer, and that answer encoded alone.
#[derive(Clone, Copy, Debug)]
pub struct LanguageVariant<'g, T: Float> {
    pub sentence: Var<'g, T>,
    pub answer: Var<'g, T>,
}

impl<'g, T: Float> LanguageVariant<'g, T> {
    pub fn new(sentence: &TextEncoding<'g, T>, answer: &TextEncoding<'g, T>) -> Self {
        LanguageVariant { sentence: sentence.pooled, answer: answer.pooled }
    }

    /// For moment queries there is no separate answer; the sentence stands
    /// in for it so the averaged vector equals the sentence encoding.
    pub fn sentence_only(sentence: &TextEncoding<'g, T>) -> Self {
        LanguageVariant { sentence: sentence.pooled, answer: sentence.pooled }
    }

    fn averaged(&self) -> Result<Var<'g, T>> {
        self.sentence.add(self.answer)?.scale(0.5)
    }
}

#[derive(Clone, Debug)]
pub struct SegmentPairing<'g, T: Float> {
    pub true_language: LanguageVariant<'g, T>,
    pub false_languages: Vec<LanguageVariant<'g, T>>,
    pub true_frames: Vec<usize>,
    pub false_frames: Vec<usize>,
}

impl<'g, T: Float> SegmentPairing<'g, T> {
    /// Splits `0..n_frames` into the inclusive span and its complement.
    /// Without a span every frame is a true frame.
    pub fn from_span(
        true_language: LanguageVariant<'g, T>,
        false_languages: Vec<LanguageVariant<'g, T>>,
        span: Option<(usize, usize)>,
        n_frames: usize,
    ) -> Self {
        let (true_frames, false_frames) = match span {
            Some((s, e)) => (0..n_frames).partition(|&t| t >= s && t <= e),
            None => ((0..n_frames).collect(), Vec::new()),
        };
        SegmentPairing { true_language, false_languages, true_frames, false_frames }
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.true_frames.is_empty() {
            return Err(Error::Data("segment pairing has no true frames".into()));
        }
        let mut seen = vec![false; n_frames];
        for &t in self.true_frames.iter().chain(&self.false_frames) {
            if t >= n_frames {
                return Err(Error::Data(format!("frame index {t} outside 0..{n_frames}")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::Data(format!("frame index {t} listed twice")));
            }
        }
        Ok(())
    }
}

pub fn global_similarity<'g, T: Float>(text: Var<'g, T>, video: Var<'g, T>) -> Result<Var<'g, T>> {
    text.cosine(video)
}

/// Batch-wise hardest-negative hinge loss over pooled encodings; item `i`
/// of each list forms the positive pair.
///
/// Text anchor `i` is contrasted with the most similar mismatched video;
/// with `symmetric_global` video anchor `i` is also contrasted with the
/// most similar mismatched text. The result is the mean over all anchors,
/// text-anchored terms first.
pub fn global_alignment_loss<'g, T: Float>(
    texts: &[Var<'g, T>],
    videos: &[Var<'g, T>],
    cfg: &AlignmentConfig,
) -> Result<Var<'g, T>> {
    let b = texts.len();
    if b != videos.len() {
        return Err(Error::Dimension(format!("{b} texts but {} videos", videos.len())));
    }
    if b < 2 {
        return Err(Error::Config(format!("global alignment needs at least 2 pairs, got {b}")));
    }
    let graph = texts[0].graph();
    let mut sim = Vec::with_capacity(b);
    for t in texts {
        sim.push(videos.iter().map(|v| global_similarity(*t, *v)).collect::<Result<Vec<_>>>()?);
    }
    let mut terms = Vec::with_capacity(2 * b);
    for i in 0..b {
        let negs: Vec<_> = (0..b).filter(|&j| j != i).map(|j| sim[i][j]).collect();
        terms.push(graph.hinge(graph.max(&negs)?, sim[i][i], cfg.alpha)?);
    }
    if cfg.symmetric_global {
        for i in 0..b {
            let negs: Vec<_> = (0..b).filter(|&j| j != i).map(|j| sim[j][i]).collect();
            terms.push(graph.hinge(graph.max(&negs)?, sim[i][i], cfg.alpha)?);
        }
    }
    graph.stack(&terms)?.mean()
}

/// `cos((E_L + E_ans) / 2, E_f)`.
pub fn segment_similarity<'g, T: Float>(
    sentence: Var<'g, T>,
    answer: Var<'g, T>,
    frame: Var<'g, T>,
) -> Result<Var<'g, T>> {
    sentence.add(answer)?.scale(0.5)?.cosine(frame)
}

/// Sample-wise hardest-negative hinge loss between language variants and
/// frame encodings `frames` (`T_fr x H`).
///
/// Negatives are (false language, true frame) pairs when
/// `use_false_language`, then (true language, false frame) pairs when
/// `use_false_frames`. Every (true language, true frame) pair is a
/// positive; the loss is the mean of their hinges against the single
/// hardest negative.
pub fn segment_alignment_loss<'g, T: Float>(
    pairing: &SegmentPairing<'g, T>,
    frames: Var<'g, T>,
    cfg: &AlignmentConfig,
) -> Result<Var<'g, T>> {
    let n_frames = frames.shape()[0];
    pairing.validate(n_frames)?;
    if !cfg.use_false_language && !cfg.use_false_frames {
        return Err(Error::Config("segment alignment with both negative sources disabled".into()));
    }
    let lang_empty = pairing.false_languages.is_empty();
    let frame_empty = pairing.false_frames.is_empty();
    let lang_source = cfg.use_false_language && !lang_empty;
    let frame_source = cfg.use_false_frames && !frame_empty;
    if !lang_source && !frame_source {
        return Err(Error::Config(format!(
            "segment alignment has no negative pairs (false languages: {}, false frames: {})",
            pairing.false_languages.len(),
            pairing.false_frames.len()
        )));
    }
    if cfg.use_false_language && cfg.use_false_frames && (lang_empty || frame_empty) {
        warn!(
            "segment alignment: no {} for this sample; using the other negative source only",
            if lang_empty { "false language" } else { "false frames" }
        );
    }

    let graph = frames.graph();
    let mut rows: Vec<Option<Var<'g, T>>> = vec![None; n_frames];
    let mut row = |t: usize| -> Result<Var<'g, T>> {
        if let Some(r) = rows[t] {
            return Ok(r);
        }
        let r = frames.row(t)?;
        rows[t] = Some(r);
        Ok(r)
    };

    let truth = pairing.true_language.averaged()?;
    let mut negs = Vec::new();
    if lang_source {
        for fl in &pairing.false_languages {
            let avg = fl.averaged()?;
            for &t in &pairing.true_frames {
                negs.push(avg.cosine(row(t)?)?);
            }
        }
    }
    if frame_source {
        for &t in &pairing.false_frames {
            negs.push(truth.cosine(row(t)?)?);
        }
    }
    let hardest = graph.max(&negs)?;
    let mut terms = Vec::with_capacity(pairing.true_frames.len());
    for &t in &pairing.true_frames {
        let pos = truth.cosine(row(t)?)?;
        terms.push(graph.hinge(hardest, pos, cfg.alpha)?);
    }
    graph.stack(&terms)?.mean()
}

/// `task + lambda1 * glob + lambda2 * seg`.
pub fn combined_loss<'g, T: Float>(
    task: Var<'g, T>,
    glob: Var<'g, T>,
    seg: Var<'g, T>,
    cfg: &AlignmentConfig,
) -> Result<Var<'g, T>> {
    task.add(glob.scale(cfg.lambda1)?)?.add(seg.scale(cfg.lambda2)?)
}
