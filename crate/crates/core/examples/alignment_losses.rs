//! The two alignment losses on hand-made encodings, with their gradients.

use mlalign::alignment::{global_alignment_loss, segment_alignment_loss, AlignmentConfig, LanguageVariant, SegmentPairing};
use mlalign::tensor::{Graph, Tensor};

fn main() -> mlalign::Result<()> {
    let g = Graph::<f64>::new();
    let vec = |xs: &[f64]| g.param(&Tensor::vector(xs.to_vec()));

    // Three text/video pairs; the third video sits closer to the first text
    // than the first video does, so it becomes the hardest negative.
    let texts = [vec(&[1.0, 0.0, 0.0])?, vec(&[0.0, 1.0, 0.0])?, vec(&[0.0, 0.0, 1.0])?];
    let videos = [vec(&[0.8, 0.6, 0.0])?, vec(&[0.1, 1.0, 0.0])?, vec(&[0.9, 0.0, 0.4])?];
    let cfg = AlignmentConfig::global_only();
    let glob = global_alignment_loss(&texts, &videos, &cfg)?;
    println!("global loss: {:.4}", glob.item());
    g.backward(glob)?;
    println!("d loss / d text0: {:?}", texts[0].grad().map(|t| t.data().to_vec()));

    // One sample at segment level: frames 1..=2 ground the true answer.
    let g = Graph::<f64>::new();
    let c = |xs: &[f64]| g.constant(Tensor::vector(xs.to_vec()));
    let truth = LanguageVariant { sentence: c(&[1.0, 0.2])?, answer: c(&[0.8, 0.0])? };
    let wrong = LanguageVariant { sentence: c(&[0.7, 0.6])?, answer: c(&[0.6, 0.5])? };
    let frames = g.param(&Tensor::matrix(4, 2, vec![0.0, 1.0, 1.0, 0.1, 0.9, 0.3, 0.6, 0.8])?)?;
    let pairing = SegmentPairing::from_span(truth, vec![wrong], Some((1, 2)), 4);
    for (name, cfg) in [
        ("both sources", AlignmentConfig::segment_only()),
        ("false frames only", AlignmentConfig::moment(0.0, 1.0)),
        ("false language only", AlignmentConfig { use_false_frames: false, ..AlignmentConfig::segment_only() }),
    ] {
        let loss = segment_alignment_loss(&pairing, frames, &cfg)?;
        println!("segment loss ({name}): {:.4}", loss.item());
    }
    Ok(())
}
