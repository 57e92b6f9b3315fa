//! Test-set metrics and similarity heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::alignment::segment_similarity;
use crate::data::{Dataset, Sample, TaskAnnotation, TaskKind};
use crate::encoders::{encode_text, encode_video};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tasks::{argmax, moment_logits, moment_predict_span, qa_score_candidates, rank_of, tiou, SpanAnnotation};
use crate::tensor::{cosine, Graph, Tensor};
use crate::trainer::{map_span, video_input};

pub type Params = ModelParams<Tensor<f32>>;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Recall at one cutoff, both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recall {
    pub k: usize,
    pub text_to_video: f64,
    pub video_to_text: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Metrics {
    Qa { accuracy: f64 },
    Retrieval { recalls: Vec<Recall> },
    Moment { tiou_05: f64, tiou_07: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task: TaskKind,
    pub n_samples: usize,
    pub metrics: Metrics,
}

impl MetricReport {
    /// `key=value` lines with stable key names.
    pub fn to_kv(&self) -> String {
        let mut s = format!("task={}\nn_samples={}\n", self.task, self.n_samples);
        match &self.metrics {
            Metrics::Qa { accuracy } => writeln!(s, "accuracy={accuracy}").unwrap(),
            Metrics::Retrieval { recalls } => {
                for r in recalls {
                    writeln!(s, "t2v_r{}={}", r.k, r.text_to_video).unwrap();
                }
                for r in recalls {
                    writeln!(s, "v2t_r{}={}", r.k, r.video_to_text).unwrap();
                }
            }
            Metrics::Moment { tiou_05, tiou_07 } => {
                writeln!(s, "tiou_ge_0.5={tiou_05}\ntiou_ge_0.7={tiou_07}").unwrap();
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv())?;
        Ok(())
    }

    /// Looks a value up by its report key.
    pub fn get(&self, key: &str) -> Option<f64> {
        self.to_kv().lines().filter_map(|l| l.split_once('=')).find(|(k, _)| *k == key)?.1.parse().ok()
    }
}

fn require(data: &Dataset, task: TaskKind) -> Result<()> {
    if data.task != task {
        return Err(Error::Config(format!("expected a {task} dataset, got {}", data.task)));
    }
    if data.samples.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    Ok(())
}

/// Candidate logits of one QA sample.
pub fn qa_logits(params: &Params, sample: &Sample) -> Result<Vec<f32>> {
    let TaskAnnotation::Qa(qa) = &sample.task else {
        return Err(Error::Config(format!("sample {} is not a QA sample", sample.id)));
    };
    let g = Graph::new();
    let p = params.bind_frozen(&g)?;
    let video = encode_video(g.constant(video_input(sample).0)?, &p.video)?;
    let scores = qa_score_candidates(&video, &sample.tokens, qa, &p.text, &p.qa)?;
    Ok(scores.logits.to_tensor().into_data())
}

/// Fraction of samples whose highest logit (lowest index on ties) is the
/// correct one.
pub fn qa_accuracy(logits: &[Vec<f32>], correct: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != correct.len() {
        return Err(Error::Data(format!("{} logit rows for {} answers", logits.len(), correct.len())));
    }
    let hits = logits.iter().zip(correct).filter(|(l, &c)| argmax(l) == c).count();
    Ok(hits as f64 / logits.len() as f64)
}

pub fn eval_qa(params: &Params, data: &Dataset) -> Result<MetricReport> {
    require(data, TaskKind::Qa)?;
    let logits = data.samples.iter().map(|s| qa_logits(params, s)).collect::<Result<Vec<_>>>()?;
    let correct: Vec<usize> = data
        .samples
        .iter()
        .map(|s| match &s.task {
            TaskAnnotation::Qa(qa) => qa.correct_index,
            _ => unreachable!("task checked"),
        })
        .collect();
    Ok(MetricReport {
        task: TaskKind::Qa,
        n_samples: data.samples.len(),
        metrics: Metrics::Qa { accuracy: qa_accuracy(&logits, &correct)? },
    })
}

/// Pooled text and video encodings of one sample.
pub fn encode_pair(params: &Params, sample: &Sample) -> Result<(Vec<f32>, Vec<f32>)> {
    let g = Graph::new();
    let p = params.bind_frozen(&g)?;
    let video = encode_video(g.constant(video_input(sample).0)?, &p.video)?;
    let text = encode_text(&sample.global_text(), &p.text)?;
    Ok((text.pooled.to_tensor().into_data(), video.pooled.to_tensor().into_data()))
}

/// Rank of each query's true item (same index) in the other pool, both
/// directions, 1-based. Returns `(text_to_video, video_to_text)`.
pub fn retrieval_ranks(texts: &[Vec<f32>], videos: &[Vec<f32>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = texts.len();
    if n == 0 || videos.len() != n {
        return Err(Error::Data(format!("{n} texts against {} videos", videos.len())));
    }
    let mut sim = vec![vec![0f32; n]; n];
    for i in 0..n {
        for j in 0..n {
            sim[i][j] = cosine(&texts[i], &videos[j])?;
        }
    }
    let t2v = (0..n).map(|i| rank_of(&sim[i], i)).collect();
    let v2t = (0..n)
        .map(|j| {
            let column: Vec<f32> = (0..n).map(|i| sim[i][j]).collect();
            rank_of(&column, j)
        })
        .collect();
    Ok((t2v, v2t))
}

/// Recall at each cutoff from per-query ranks. Cutoffs above the pool
/// size are clamped to it.
pub fn recalls(t2v: &[usize], v2t: &[usize], ks: &[usize]) -> Vec<Recall> {
    let n = t2v.len();
    let rate = |ranks: &[usize], k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
    ks.iter()
        .map(|&k| {
            if k > n {
                warn!("R@{k} requested on a pool of {n}; clamping to {n}");
            }
            let kk = k.min(n);
            Recall { k, text_to_video: rate(t2v, kk), video_to_text: rate(v2t, kk) }
        })
        .collect()
}

/// The whole test set is the retrieval pool.
pub fn eval_retrieval(params: &Params, data: &Dataset, ks: &[usize]) -> Result<MetricReport> {
    if data.samples.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let (texts, videos): (Vec<_>, Vec<_>) =
        data.samples.iter().map(|s| encode_pair(params, s)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let (t2v, v2t) = retrieval_ranks(&texts, &videos)?;
    Ok(MetricReport {
        task: data.task,
        n_samples: data.samples.len(),
        metrics: Metrics::Retrieval { recalls: recalls(&t2v, &v2t, ks) },
    })
}

/// Predicted span of a moment sample, in the sample's own frame indices.
pub fn predict_moment(params: &Params, sample: &Sample) -> Result<SpanAnnotation> {
    let TaskAnnotation::Moment { query, .. } = &sample.task else {
        return Err(Error::Config(format!("sample {} is not a moment sample", sample.id)));
    };
    let g = Graph::new();
    let p = params.bind_frozen(&g)?;
    let (frames, idx) = video_input(sample);
    let video = encode_video(g.constant(frames)?, &p.video)?;
    let q = encode_text(query, &p.text)?;
    let (start, end) = moment_logits(&video, &q, &p.moment)?;
    let span = moment_predict_span(start.to_tensor().data(), end.to_tensor().data())?;
    let last = idx.get(span.end + 1).map_or(sample.n_frames() - 1, |&i| i - 1);
    Ok(SpanAnnotation { start: idx[span.start], end: last.max(idx[span.end]) })
}

/// Fractions of predictions reaching tIoU 0.5 and 0.7.
pub fn tiou_rates(pred: &[SpanAnnotation], truth: &[SpanAnnotation]) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Data(format!("{} predictions for {} ground-truth spans", pred.len(), truth.len())));
    }
    let scores: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| tiou(p, t)).collect();
    let rate = |th: f64| scores.iter().filter(|&&s| s >= th).count() as f64 / scores.len() as f64;
    Ok((rate(0.5), rate(0.7)))
}

pub fn eval_moment(params: &Params, data: &Dataset) -> Result<MetricReport> {
    require(data, TaskKind::Moment)?;
    let pred = data.samples.iter().map(|s| predict_moment(params, s)).collect::<Result<Vec<_>>>()?;
    let truth: Vec<SpanAnnotation> = data
        .samples
        .iter()
        .map(|s| match &s.task {
            TaskAnnotation::Moment { span, .. } => *span,
            _ => unreachable!("task checked"),
        })
        .collect();
    let (tiou_05, tiou_07) = tiou_rates(&pred, &truth)?;
    Ok(MetricReport { task: TaskKind::Moment, n_samples: data.samples.len(), metrics: Metrics::Moment { tiou_05, tiou_07 } })
}

/// Evaluates with the metric matching the dataset's task.
pub fn evaluate(params: &Params, data: &Dataset) -> Result<MetricReport> {
    match data.task {
        TaskKind::Qa => eval_qa(params, data),
        TaskKind::Retrieval => eval_retrieval(params, data, &DEFAULT_KS),
        TaskKind::Moment => eval_moment(params, data),
    }
}

/// Cosine similarity of each language variant (question joined with a
/// candidate, averaged with the candidate alone) against each frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub correct_row: usize,
    /// Ground-truth span in column indices, when annotated.
    pub span: Option<SpanAnnotation>,
}

pub fn heatmap(params: &Params, sample: &Sample, vocab: &crate::data::Vocab) -> Result<Heatmap> {
    let TaskAnnotation::Qa(qa) = &sample.task else {
        return Err(Error::Config(format!("heatmaps need a QA sample, {} is {}", sample.id, sample.task.kind())));
    };
    let g = Graph::new();
    let p = params.bind_frozen(&g)?;
    let (frames, idx) = video_input(sample);
    let video = encode_video(g.constant(frames)?, &p.video)?;
    let scores = qa_score_candidates(&video, &sample.tokens, qa, &p.text, &p.qa)?;
    let n_frames = idx.len();
    let mut values = Vec::with_capacity(qa.candidates.len());
    for (c, joined) in qa.candidates.iter().zip(&scores.joined) {
        let answer = encode_text(c, &p.text)?;
        let row = (0..n_frames)
            .map(|t| Ok(segment_similarity(joined.pooled, answer.pooled, video.frames.row(t)?)?.item() as f64))
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    let row_labels = qa
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}{} {}", if i == qa.correct_index { "*" } else { "" }, i, vocab.decode(c)))
        .collect();
    Ok(Heatmap {
        row_labels,
        col_labels: idx.iter().map(|i| format!("f{i}")).collect(),
        values,
        correct_row: qa.correct_index,
        span: qa.span.map(|s| map_span(s, &idx)),
    })
}

impl Heatmap {
    /// Header row of frame labels, then one row per candidate. The label
    /// starts with `*` on the correct candidate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("candidate");
        for c in &self.col_labels {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            s.push_str(&label.replace(',', " "));
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean similarity of `row` inside and outside the annotated span.
    /// `None` without a span or when the span covers every frame.
    pub fn span_contrast(&self, row: usize) -> Option<(f64, f64)> {
        let span = self.span?;
        let r = &self.values[row];
        let (inside, outside): (Vec<(usize, &f64)>, Vec<(usize, &f64)>) =
            r.iter().enumerate().partition(|(t, _)| span.contains(*t));
        if outside.is_empty() {
            return None;
        }
        let mean = |v: &[(usize, &f64)]| v.iter().map(|(_, x)| **x).sum::<f64>() / v.len() as f64;
        Some((mean(&inside), mean(&outside)))
    }
}
