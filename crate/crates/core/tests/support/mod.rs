//! Plain double-loop references for the alignment losses, shared by the
//! oracle tests and the acceptance run.
#![allow(dead_code)]

use mlalign::alignment::{
    global_alignment_loss, segment_alignment_loss, AlignmentConfig, LanguageVariant, SegmentPairing,
};
use mlalign::tensor::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for i in 0..u.len() {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    dot / (uu.sqrt().max(1e-8) * vv.sqrt().max(1e-8))
}

pub fn hinge(alpha: f64, neg: f64, pos: f64) -> f64 {
    (alpha + neg - pos).max(0.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    s / xs.len() as f64
}

pub fn avg(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect()
}

pub fn rand_vec(rng: &mut ChaCha8Rng, h: usize) -> Vec<f64> {
    (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn global_oracle(texts: &[Vec<f64>], videos: &[Vec<f64>], alpha: f64, symmetric: bool) -> f64 {
    let b = texts.len();
    let s: Vec<Vec<f64>> = texts.iter().map(|t| videos.iter().map(|v| cos(t, v)).collect()).collect();
    let mut terms = Vec::new();
    for i in 0..b {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..b {
            if j != i {
                worst = worst.max(s[i][j]);
            }
        }
        terms.push(hinge(alpha, worst, s[i][i]));
    }
    if symmetric {
        for i in 0..b {
            let mut worst = f64::NEG_INFINITY;
            for j in 0..b {
                if j != i {
                    worst = worst.max(s[j][i]);
                }
            }
            terms.push(hinge(alpha, worst, s[i][i]));
        }
    }
    mean(&terms)
}

pub fn global_lib(texts: &[Vec<f64>], videos: &[Vec<f64>], cfg: &AlignmentConfig) -> f64 {
    let g = Graph::<f64>::new();
    let t: Vec<Var<f64>> = texts.iter().map(|x| g.constant(Tensor::vector(x.clone())).unwrap()).collect();
    let v: Vec<Var<f64>> = videos.iter().map(|x| g.constant(Tensor::vector(x.clone())).unwrap()).collect();
    global_alignment_loss(&t, &v, cfg).unwrap().item()
}

pub struct SegCase {
    pub true_lang: (Vec<f64>, Vec<f64>),
    pub false_langs: Vec<(Vec<f64>, Vec<f64>)>,
    pub frames: Vec<Vec<f64>>,
    pub span: (usize, usize),
}

impl SegCase {
    pub fn random(rng: &mut ChaCha8Rng, h: usize) -> Self {
        let n_frames = rng.random_range(3..12);
        let s = rng.random_range(0..n_frames - 1);
        let e = rng.random_range(s..n_frames - 1);
        let n_false = rng.random_range(1..5);
        SegCase {
            true_lang: (rand_vec(rng, h), rand_vec(rng, h)),
            false_langs: (0..n_false).map(|_| (rand_vec(rng, h), rand_vec(rng, h))).collect(),
            frames: (0..n_frames).map(|_| rand_vec(rng, h)).collect(),
            span: (s, e),
        }
    }

    pub fn oracle(&self, cfg: &AlignmentConfig) -> f64 {
        let truth = avg(&self.true_lang.0, &self.true_lang.1);
        let inside = |t: usize| t >= self.span.0 && t <= self.span.1;
        let mut worst = f64::NEG_INFINITY;
        if cfg.use_false_language {
            for (s, a) in &self.false_langs {
                let fl = avg(s, a);
                for (t, f) in self.frames.iter().enumerate() {
                    if inside(t) {
                        worst = worst.max(cos(&fl, f));
                    }
                }
            }
        }
        if cfg.use_false_frames {
            for (t, f) in self.frames.iter().enumerate() {
                if !inside(t) {
                    worst = worst.max(cos(&truth, f));
                }
            }
        }
        let terms: Vec<f64> = (self.span.0..=self.span.1)
            .map(|t| hinge(cfg.alpha, worst, cos(&truth, &self.frames[t])))
            .collect();
        mean(&terms)
    }

    pub fn lib(&self, cfg: &AlignmentConfig) -> f64 {
        let g = Graph::<f64>::new();
        let c = |x: &Vec<f64>| g.constant(Tensor::vector(x.clone())).unwrap();
        let lv = |(s, a): &(Vec<f64>, Vec<f64>)| LanguageVariant { sentence: c(s), answer: c(a) };
        let frames = g.constant(Tensor::from_rows(&self.frames).unwrap()).unwrap();
        let pairing = SegmentPairing::from_span(
            lv(&self.true_lang),
            self.false_langs.iter().map(lv).collect(),
            Some(self.span),
            self.frames.len(),
        );
        segment_alignment_loss(&pairing, frames, cfg).unwrap().item()
    }
}
