//! Training loop: per-sample forward passes, the combined objective over a
//! mini-batch, AdamW updates, and resumable checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    combined_loss, global_alignment_loss, segment_alignment_loss, AlignmentConfig, LanguageVariant,
    SegmentPairing,
};
use crate::data::{generate_corpus, CorpusSpec, Dataset, Sample, TaskAnnotation, TaskKind};
use crate::encoders::{encode_text, encode_video, subsample_frames, MAX_FRAMES};
use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelDims, ModelParams};
use crate::tasks::{moment_logits, moment_loss, qa_loss, qa_score_candidates, SpanAnnotation};
use crate::tensor::{clip_grad_norm, finite_diff_check, AdamW, AdamWState, Float, GradCheck, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
    pub alignment: AlignmentConfig,
    pub dims: ModelDims,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: Option<f64>,
    /// Number of wrong answers drawn per sample as segment negatives;
    /// all of them when unset.
    pub false_answer_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamW::default();
        TrainConfig {
            task: TaskKind::Qa,
            epochs: 50,
            batch_size: 64,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            weight_decay: adam.weight_decay,
            eps: adam.eps,
            seed: 0,
            alignment: AlignmentConfig::default(),
            dims: ModelDims::default(),
            checkpoint_every: 10,
            grad_clip: None,
            false_answer_samples: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the alignment preset suited to `task`: segment
    /// matching for QA, global matching for retrieval, both levels with
    /// false frames for moments.
    pub fn for_task(task: TaskKind) -> Self {
        let alignment = match task {
            TaskKind::Qa => AlignmentConfig::segment_only(),
            TaskKind::Retrieval => AlignmentConfig::global_only(),
            TaskKind::Moment => AlignmentConfig::moment(1.0, 1.0),
        };
        TrainConfig { task, alignment, ..Default::default() }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW { lr: self.lr, beta1: self.beta1, beta2: self.beta2, weight_decay: self.weight_decay, eps: self.eps }
    }

    pub fn has_task_loss(&self) -> bool {
        self.task != TaskKind::Retrieval
    }

    pub fn validate(&self) -> Result<()> {
        self.alignment.validate()?;
        self.dims.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.alignment.lambda1 > 0.0 && self.batch_size < 2 {
            return Err(Error::Config("global alignment needs batch_size >= 2".into()));
        }
        if !self.has_task_loss() && self.alignment.lambda1 == 0.0 && self.alignment.lambda2 == 0.0 {
            return Err(Error::Config(
                "nothing to optimize: retrieval has no task loss and both alignment weights are 0".into(),
            ));
        }
        let in_unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.lr > 0.0) || !in_unit(self.beta1) || !in_unit(self.beta2) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={} beta1={} beta2={} eps={} weight_decay={}",
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.false_answer_samples == Some(0) {
            return Err(Error::Config("false_answer_samples must be positive".into()));
        }
        Ok(())
    }

    /// Checks that the dataset matches the configured task and dimensions.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.task != self.task {
            return Err(Error::Config(format!("config task is {}, dataset holds {}", self.task, data.task)));
        }
        let d = &self.dims;
        if (d.vocab_size, d.static_dim, d.motion_dim) != (data.vocab_size(), data.static_dim, data.motion_dim) {
            return Err(Error::Config(format!(
                "model expects vocab {} and features {}+{}, dataset has vocab {} and features {}+{}",
                d.vocab_size,
                d.static_dim,
                d.motion_dim,
                data.vocab_size(),
                data.static_dim,
                data.motion_dim
            )));
        }
        Ok(())
    }
}

/// Splits `0..n` into shuffled batches. The shuffle depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Config("no training samples".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Frame features as fed to the video encoder, subsampled to at most
/// [`MAX_FRAMES`], with an index map back to the original frames.
pub fn video_input<T: Float>(sample: &Sample) -> (Tensor<T>, Vec<usize>) {
    let (frames, idx) = subsample_frames(&sample.frames, MAX_FRAMES);
    (frames.cast(), idx)
}

/// Maps an original-frame span onto subsampled indices `idx`.
pub fn map_span(span: SpanAnnotation, idx: &[usize]) -> SpanAnnotation {
    if idx.len() == idx.last().map_or(0, |l| l + 1) {
        return span;
    }
    let last_before = |t: usize| idx.iter().rposition(|&i| i <= t).unwrap_or(0);
    let start = idx.iter().position(|&i| i >= span.start).unwrap_or(idx.len() - 1);
    let end = last_before(span.end);
    if start <= end {
        SpanAnnotation { start, end }
    } else {
        let j = last_before(span.start);
        SpanAnnotation { start: j, end: j }
    }
}

/// Loss terms contributed by one sample.
pub struct SampleTerms<'g, T: Float> {
    pub task: Option<Var<'g, T>>,
    /// Pooled (text, video) pair for the global loss.
    pub global: (Var<'g, T>, Var<'g, T>),
    pub segment: Option<Var<'g, T>>,
}

/// Wrong-candidate indices used as segment negatives for each QA sample.
pub fn pick_false_answers(batch: &[&Sample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    batch
        .iter()
        .map(|s| match &s.task {
            TaskAnnotation::Qa(qa) => {
                let wrong: Vec<usize> = (0..qa.candidates.len()).filter(|&i| i != qa.correct_index).collect();
                match cfg.false_answer_samples {
                    Some(k) if k < wrong.len() => {
                        let mut picked: Vec<usize> = wrong.choose_multiple(rng, k).copied().collect();
                        picked.sort_unstable();
                        picked
                    }
                    _ => wrong,
                }
            }
            _ => Vec::new(),
        })
        .collect()
}

/// Forward pass of one sample. `false_answers` selects the wrong QA
/// candidates contrasted at segment level.
pub fn sample_terms<'g, T: Float>(
    g: &'g Graph<T>,
    p: &BoundParams<'g, T>,
    sample: &Sample,
    cfg: &TrainConfig,
    false_answers: &[usize],
) -> Result<SampleTerms<'g, T>> {
    let (frames, idx) = video_input::<T>(sample);
    let n_frames = frames.rows();
    let video = encode_video(g.constant(frames)?, &p.video)?;
    let want_segment = cfg.alignment.lambda2 > 0.0;
    match &sample.task {
        TaskAnnotation::Qa(qa) => {
            let scores = qa_score_candidates(&video, &sample.tokens, qa, &p.text, &p.qa)?;
            let task = qa_loss(scores.logits, qa.correct_index)?;
            let truth = &scores.joined[qa.correct_index];
            let segment = if want_segment {
                let variant = |i: usize| -> Result<LanguageVariant<'g, T>> {
                    let answer = encode_text(&qa.candidates[i], &p.text)?;
                    Ok(LanguageVariant::new(&scores.joined[i], &answer))
                };
                let false_languages = false_answers.iter().map(|&i| variant(i)).collect::<Result<Vec<_>>>()?;
                let span = qa.span.map(|s| map_span(s, &idx)).map(|s| (s.start, s.end));
                let pairing = SegmentPairing::from_span(variant(qa.correct_index)?, false_languages, span, n_frames);
                Some(segment_alignment_loss(&pairing, video.frames, &cfg.alignment)?)
            } else {
                None
            };
            Ok(SampleTerms { task: Some(task), global: (truth.pooled, video.pooled), segment })
        }
        TaskAnnotation::Moment { span, query } => {
            let q = encode_text(query, &p.text)?;
            let span = map_span(*span, &idx);
            let (start, end) = moment_logits(&video, &q, &p.moment)?;
            let task = moment_loss(start, end, &span)?;
            let segment = if want_segment {
                let pairing =
                    SegmentPairing::from_span(LanguageVariant::sentence_only(&q), Vec::new(), Some((span.start, span.end)), n_frames);
                Some(segment_alignment_loss(&pairing, video.frames, &cfg.alignment)?)
            } else {
                None
            };
            Ok(SampleTerms { task: Some(task), global: (q.pooled, video.pooled), segment })
        }
        TaskAnnotation::Retrieval => {
            let text = encode_text(&sample.tokens, &p.text)?;
            let segment = if want_segment {
                let pairing = SegmentPairing::from_span(LanguageVariant::sentence_only(&text), Vec::new(), None, n_frames);
                Some(segment_alignment_loss(&pairing, video.frames, &cfg.alignment)?)
            } else {
                None
            };
            Ok(SampleTerms { task: None, global: (text.pooled, video.pooled), segment })
        }
    }
}

/// The objective of one batch and its parts.
pub struct BatchLoss<'g, T: Float> {
    pub total: Var<'g, T>,
    pub task: Var<'g, T>,
    /// Absent when the batch is too small or the global weight is 0.
    pub glob: Option<Var<'g, T>>,
    pub seg: Var<'g, T>,
}

/// `L_task + lambda1 * L_glob + lambda2 * L_seg` averaged over the batch.
/// The global term is skipped for batches of fewer than two samples.
pub fn batch_loss<'g, T: Float>(
    g: &'g Graph<T>,
    p: &BoundParams<'g, T>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    false_answers: &[Vec<usize>],
) -> Result<BatchLoss<'g, T>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let terms = batch
        .iter()
        .zip(false_answers)
        .map(|(s, fa)| sample_terms(g, p, s, cfg, fa))
        .collect::<Result<Vec<_>>>()?;
    let mean_of = |vs: Vec<Var<'g, T>>| -> Result<Var<'g, T>> {
        if vs.is_empty() {
            g.scalar(0.0)
        } else {
            g.stack(&vs)?.mean()
        }
    };
    let task = mean_of(terms.iter().filter_map(|t| t.task).collect())?;
    let seg = mean_of(terms.iter().filter_map(|t| t.segment).collect())?;
    let glob = if cfg.alignment.lambda1 > 0.0 && batch.len() >= 2 {
        let (texts, videos): (Vec<_>, Vec<_>) = terms.iter().map(|t| t.global).unzip();
        Some(global_alignment_loss(&texts, &videos, &cfg.alignment)?)
    } else {
        None
    };
    let glob_or_zero = match glob {
        Some(v) => v,
        None => g.scalar(0.0)?,
    };
    let total = combined_loss(task, glob_or_zero, seg, &cfg.alignment)?;
    Ok(BatchLoss { total, task, glob, seg })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub task: f64,
    pub glob: Option<f64>,
    pub seg: f64,
    pub total: f64,
}

/// Per-epoch means of the step losses. `l_glob` averages only the steps
/// where the global term was computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_task: f64,
    pub l_glob: f64,
    pub l_seg: f64,
    pub l_train: f64,
    pub wall_ms: u64,
}

impl EpochLog {
    /// The loss values without the timing field.
    pub fn losses(&self) -> [f64; 4] {
        [self.l_task, self.l_glob, self.l_seg, self.l_train]
    }
}

/// Model, optimizer and sampling state of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<Tensor<f32>>,
    pub adam: AdamWState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.dims, config.seed)?;
        let adam = AdamWState::new(&params.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        Ok(Trainer { config, params, adam, epoch: 0, rng })
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<StepLosses> {
        let false_answers = pick_false_answers(batch, &self.config, &mut self.rng);
        let g = Graph::new();
        let p = self.params.bind(&g)?;
        let loss = batch_loss(&g, &p, batch, &self.config, &false_answers)?;
        let out = StepLosses {
            task: loss.task.item() as f64,
            glob: loss.glob.map(|v| v.item() as f64),
            seg: loss.seg.item() as f64,
            total: loss.total.item() as f64,
        };
        if !out.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {out:?}")));
        }
        loss.total.backward()?;
        let mut grads = p.grads();
        if let Some((i, _)) = grads.iter().enumerate().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for {}", crate::model::PARAM_NAMES[i])));
        }
        if let Some(c) = self.config.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        let opt = self.config.optimizer();
        opt.step(&mut self.params.to_vec_mut(), &grads, &mut self.adam)?;
        Ok(out)
    }

    /// Trains one more epoch over `data`.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let started = Instant::now();
        let batches = make_batches(data.samples.len(), self.config.batch_size, self.config.seed, self.epoch)?;
        let (mut task, mut glob, mut seg, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut glob_steps = 0usize;
        for b in &batches {
            let samples: Vec<&Sample> = b.iter().map(|&i| &data.samples[i]).collect();
            let l = self.step(&samples)?;
            task += l.task;
            seg += l.seg;
            total += l.total;
            if let Some(x) = l.glob {
                glob += x;
                glob_steps += 1;
            }
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        Ok(EpochLog {
            epoch: self.epoch,
            l_task: task / n,
            l_glob: if glob_steps > 0 { glob / glob_steps as f64 } else { 0.0 },
            l_seg: seg / n,
            l_train: total / n,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Runs epochs until `until` are complete, calling `on_epoch` after each.
    pub fn train_until(
        &mut self,
        data: &Dataset,
        until: usize,
        mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        self.config.check_data(data)?;
        let mut log = Vec::new();
        while self.epoch < until {
            let entry = self.run_epoch(data)?;
            info!(
                "epoch {} task {:.4} glob {:.4} seg {:.4} train {:.4} ({} ms)",
                entry.epoch, entry.l_task, entry.l_glob, entry.l_seg, entry.l_train, entry.wall_ms
            );
            on_epoch(self, &entry)?;
            log.push(entry);
        }
        Ok(log)
    }
}

/// Finite-difference check of the full objective (task, global and
/// segment terms) on a two-sample synthetic QA batch in 64-bit precision,
/// over every model parameter.
pub fn check_combined_gradient(alignment: &AlignmentConfig, seed: u64) -> Result<GradCheck> {
    let spec = CorpusSpec {
        n_concepts: 6,
        n_train: 2,
        n_test: 0,
        frames_per_video: 5,
        segments_per_video: 2,
        vocab_size: 30,
        candidates: 3,
        words_per_concept: 3,
        question_vocab: 3,
        question_len: 2,
        static_dim: 4,
        motion_dim: 2,
        seed,
        ..Default::default()
    };
    let data = generate_corpus(&spec)?.train;
    let cfg = TrainConfig {
        alignment: alignment.clone(),
        batch_size: 2,
        dims: ModelDims { vocab_size: 30, embed_dim: 3, hidden_dim: 4, static_dim: 4, motion_dim: 2 },
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    // Three times the training initialization keeps activations of the
    // tiny model order one, so no gradient sinks to the rounding floor of
    // the difference quotient.
    let params = ModelParams::<Tensor<f64>>::init(&cfg.dims, seed)?.map(|t| t.map(|x| 3.0 * x));
    let batch: Vec<&Sample> = data.samples.iter().collect();
    let false_answers = pick_false_answers(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    finite_diff_check(
        |g, vars| {
            let p = ModelParams::from_vec(vars.to_vec())?;
            Ok(batch_loss(g, &p, &batch, &cfg, &false_answers)?.total)
        },
        &params.to_vec().into_iter().cloned().collect::<Vec<_>>(),
        1e-5,
    )
}

/// Trains from scratch for `config.epochs` epochs, in memory.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(Trainer, Vec<EpochLog>)> {
    let mut t = Trainer::new(config.clone())?;
    let log = t.train_until(data, config.epochs, |_, _| Ok(()))?;
    Ok((t, log))
}

/// Continues `trainer` up to its configured epoch count, appending one JSON
/// line per epoch to `log_path` and saving to `checkpoint` every
/// `checkpoint_every` epochs and at the end.
pub fn train_to_disk(trainer: &mut Trainer, data: &Dataset, checkpoint: &Path, log_path: &Path) -> Result<Vec<EpochLog>> {
    let mut log = BufWriter::new(File::options().create(true).append(true).open(log_path)?);
    let every = trainer.config.checkpoint_every;
    let until = trainer.config.epochs;
    if trainer.epoch >= until {
        warn!("checkpoint already at epoch {}, nothing to train", trainer.epoch);
    }
    let entries = trainer.train_until(data, until, |t, e| {
        serde_json::to_writer(&mut log, e).map_err(|e| Error::Data(e.to_string()))?;
        log.write_all(b"\n")?;
        log.flush()?;
        if every > 0 && e.epoch % every == 0 && e.epoch < until {
            save_checkpoint(checkpoint, t)?;
        }
        Ok(())
    })?;
    save_checkpoint(checkpoint, trainer)?;
    Ok(entries)
}
