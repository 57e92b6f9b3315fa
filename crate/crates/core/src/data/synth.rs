//! Concept-based synthetic corpora with known ground truth.
//!
//! Each concept owns a visual prototype and a disjoint set of words. A video
//! is a run of equal-length segments, each showing a distinct concept; every
//! frame is its segment's prototype plus Gaussian noise. Descriptions list
//! words of the segment concepts in order.
//!
//! QA questions are drawn from a shared question vocabulary, so the text
//! alone carries no hint of the answer; the correct candidate names one
//! segment's concept and the wrong ones name concepts absent from the video.
//! Moment queries name one segment's concept and target its interval.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, TaskAnnotation, TaskKind, Vocab, PAD_TOKEN, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::tasks::{QaAnnotation, SpanAnnotation};
use crate::tensor::Tensor;

const MIN_PROTOTYPE_ANGLE_DEG: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub task: TaskKind,
    pub n_concepts: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub frames_per_video: usize,
    pub segments_per_video: usize,
    pub noise_sigma: f64,
    pub vocab_size: usize,
    /// QA candidate count.
    pub candidates: usize,
    pub words_per_concept: usize,
    pub question_vocab: usize,
    pub question_len: usize,
    pub answer_len: usize,
    pub words_per_segment: usize,
    pub query_len: usize,
    pub static_dim: usize,
    pub motion_dim: usize,
    /// Attach the answer's segment interval to QA samples.
    pub with_spans: bool,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            task: TaskKind::Qa,
            n_concepts: 16,
            n_train: 512,
            n_test: 128,
            frames_per_video: 24,
            segments_per_video: 4,
            noise_sigma: 0.3,
            vocab_size: 256,
            candidates: 4,
            words_per_concept: 8,
            question_vocab: 16,
            question_len: 4,
            answer_len: 2,
            words_per_segment: 2,
            query_len: 3,
            static_dim: 64,
            motion_dim: 32,
            with_spans: true,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn for_task(task: TaskKind) -> Self {
        CorpusSpec { task, ..Default::default() }
    }

    fn first_concept_token(&self) -> usize {
        2 + self.question_vocab
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_concepts", self.n_concepts),
            ("frames_per_video", self.frames_per_video),
            ("segments_per_video", self.segments_per_video),
            ("candidates", self.candidates),
            ("words_per_concept", self.words_per_concept),
            ("question_vocab", self.question_vocab),
            ("question_len", self.question_len),
            ("answer_len", self.answer_len),
            ("words_per_segment", self.words_per_segment),
            ("query_len", self.query_len),
            ("static_dim", self.static_dim),
            ("motion_dim", self.motion_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_train + self.n_test == 0 {
            return Err(Error::Config("corpus must contain at least one sample".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if self.candidates > self.n_concepts {
            return Err(Error::Config(format!(
                "{} candidates exceed {} concepts",
                self.candidates, self.n_concepts
            )));
        }
        if self.segments_per_video > self.n_concepts {
            return Err(Error::Config("more segments per video than concepts".into()));
        }
        if self.segments_per_video > self.frames_per_video {
            return Err(Error::Config("more segments per video than frames".into()));
        }
        if self.task == TaskKind::Qa && self.n_concepts - self.segments_per_video < self.candidates - 1 {
            return Err(Error::Config(format!(
                "{} wrong candidates need concepts absent from the video, only {} remain",
                self.candidates - 1,
                self.n_concepts - self.segments_per_video
            )));
        }
        let needed = self.first_concept_token() + self.n_concepts * self.words_per_concept;
        if needed > self.vocab_size {
            return Err(Error::Config(format!("vocabulary of {} is too small, need {needed}", self.vocab_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Concept {
    pub id: usize,
    /// Width `static_dim + motion_dim`.
    pub visual_prototype: Vec<f32>,
    pub vocab_tokens: Vec<u32>,
}

/// Ground truth for one generated video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoLayout {
    pub concepts: Vec<usize>,
    pub segments: Vec<SpanAnnotation>,
    /// The segment a QA answer or moment query refers to.
    pub target_segment: Option<usize>,
}

impl VideoLayout {
    pub fn concept_at(&self, frame: usize) -> usize {
        let k = self.segments.iter().position(|s| s.contains(frame)).expect("frame inside the video");
        self.concepts[k]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub concepts: Vec<Concept>,
    pub train: Dataset,
    pub test: Dataset,
    pub train_layouts: Vec<VideoLayout>,
    pub test_layouts: Vec<VideoLayout>,
}

fn angle_deg(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn make_concepts(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Vec<Concept> {
    let width = spec.static_dim + spec.motion_dim;
    let mut concepts: Vec<Concept> = Vec::with_capacity(spec.n_concepts);
    while concepts.len() < spec.n_concepts {
        let proto: Vec<f32> = (0..width).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let norm = proto.iter().map(|x| x * x).sum::<f32>().sqrt();
        let collinear = concepts.iter().any(|c| {
            let a = angle_deg(&c.visual_prototype, &proto);
            a <= MIN_PROTOTYPE_ANGLE_DEG || a >= 180.0 - MIN_PROTOTYPE_ANGLE_DEG
        });
        if norm == 0.0 || collinear {
            continue;
        }
        let id = concepts.len();
        let first = spec.first_concept_token() + id * spec.words_per_concept;
        concepts.push(Concept {
            id,
            visual_prototype: proto,
            vocab_tokens: (first..first + spec.words_per_concept).map(|t| t as u32).collect(),
        });
    }
    concepts
}

fn make_vocab(spec: &CorpusSpec) -> Vocab {
    let mut tokens = vec!["<pad>".to_string(), "<sep>".to_string()];
    debug_assert_eq!((PAD_TOKEN, SEP_TOKEN), (0, 1));
    tokens.extend((0..spec.question_vocab).map(|q| format!("q{q}")));
    for c in 0..spec.n_concepts {
        tokens.extend((0..spec.words_per_concept).map(|w| format!("c{c}w{w}")));
    }
    let filler = spec.vocab_size - tokens.len();
    tokens.extend((0..filler).map(|f| format!("x{f}")));
    Vocab { tokens }
}

fn words(concept: &Concept, n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..n).map(|_| *concept.vocab_tokens.choose(rng).expect("non-empty concept vocab")).collect()
}

fn make_sample(
    spec: &CorpusSpec,
    concepts: &[Concept],
    id: String,
    rng: &mut ChaCha8Rng,
) -> (Sample, VideoLayout) {
    let (t, s) = (spec.frames_per_video, spec.segments_per_video);
    let width = spec.static_dim + spec.motion_dim;
    let chosen: Vec<usize> = rand::seq::index::sample(rng, spec.n_concepts, s).into_vec();
    let segments: Vec<SpanAnnotation> =
        (0..s).map(|k| SpanAnnotation { start: k * t / s, end: (k + 1) * t / s - 1 }).collect();

    let sigma = spec.noise_sigma as f32;
    let mut data = Vec::with_capacity(t * width);
    for (k, seg) in segments.iter().enumerate() {
        let proto = &concepts[chosen[k]].visual_prototype;
        for _ in seg.start..=seg.end {
            data.extend(proto.iter().map(|&p| p + sigma * rng.sample::<f32, _>(StandardNormal)));
        }
    }
    let frames = Tensor::matrix(t, width, data).expect("frame buffer sized to the video");

    let description: Vec<u32> =
        chosen.iter().flat_map(|&c| words(&concepts[c], spec.words_per_segment, rng)).collect();

    let mut target_segment = None;
    let (tokens, task) = match spec.task {
        TaskKind::Retrieval => (description, TaskAnnotation::Retrieval),
        TaskKind::Qa => {
            let k = rng.random_range(0..s);
            target_segment = Some(k);
            let question: Vec<u32> =
                (0..spec.question_len).map(|_| 2 + rng.random_range(0..spec.question_vocab) as u32).collect();
            let absent: Vec<usize> = (0..spec.n_concepts).filter(|c| !chosen.contains(c)).collect();
            let wrong: Vec<usize> = absent.choose_multiple(rng, spec.candidates - 1).copied().collect();
            let mut order: Vec<usize> = (0..spec.candidates).collect();
            order.shuffle(rng);
            let correct_index = order.iter().position(|&o| o == 0).expect("0 is in the permutation");
            let candidates = order
                .iter()
                .map(|&o| {
                    let c = if o == 0 { chosen[k] } else { wrong[o - 1] };
                    words(&concepts[c], spec.answer_len, rng)
                })
                .collect();
            let span = spec.with_spans.then_some(segments[k]);
            (question, TaskAnnotation::Qa(QaAnnotation { candidates, correct_index, span }))
        }
        TaskKind::Moment => {
            let k = rng.random_range(0..s);
            target_segment = Some(k);
            let query = words(&concepts[chosen[k]], spec.query_len, rng);
            (description, TaskAnnotation::Moment { span: segments[k], query })
        }
    };

    let sample = Sample {
        id,
        frames,
        static_dim: spec.static_dim,
        motion_dim: spec.motion_dim,
        tokens,
        task,
    };
    (sample, VideoLayout { concepts: chosen, segments, target_segment })
}

/// Generates train and test splits from one seeded stream.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let concepts = make_concepts(spec, &mut rng);
    let vocab = make_vocab(spec);

    let mut split = |name: &str, n: usize| {
        let (samples, layouts): (Vec<_>, Vec<_>) =
            (0..n).map(|i| make_sample(spec, &concepts, format!("{name}-{i:05}"), &mut rng)).unzip();
        let ds = Dataset {
            static_dim: spec.static_dim,
            motion_dim: spec.motion_dim,
            task: spec.task,
            vocab: vocab.clone(),
            samples,
        };
        (ds, layouts)
    };
    let (train, train_layouts) = split("train", spec.n_train);
    let (test, test_layouts) = split("test", spec.n_test);
    Ok(Corpus { spec: spec.clone(), concepts, train, test, train_layouts, test_layouts })
}
