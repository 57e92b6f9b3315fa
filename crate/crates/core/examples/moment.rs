//! Moment retrieval: start/end heads over per-frame encodings, decoded by
//! the best span with start <= end.
//!
//!     cargo run --release --example moment -- [epochs]

use mlalign::data::{generate_corpus, CorpusSpec, TaskAnnotation, TaskKind};
use mlalign::eval::{eval_moment, predict_moment};
use mlalign::tasks::tiou;
use mlalign::trainer::{train, TrainConfig};

fn main() -> mlalign::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(25);
    let spec = CorpusSpec { frames_per_video: 8, ..CorpusSpec::for_task(TaskKind::Moment) };
    let corpus = generate_corpus(&spec)?;
    let mut cfg = TrainConfig::for_task(TaskKind::Moment);
    cfg.epochs = epochs;
    cfg.lr = 1e-3;
    let (trainer, _) = train(&corpus.train, &cfg)?;

    print!("{}", eval_moment(&trainer.params, &corpus.test)?.to_kv());
    for s in corpus.test.samples.iter().take(5) {
        let TaskAnnotation::Moment { span, query } = &s.task else { continue };
        let pred = predict_moment(&trainer.params, s)?;
        println!(
            "{} \"{}\": truth {}..={}, predicted {}..={}, tIoU {:.2}",
            s.id,
            corpus.test.vocab.decode(query),
            span.start,
            span.end,
            pred.start,
            pred.end,
            tiou(&pred, span)
        );
    }
    Ok(())
}
