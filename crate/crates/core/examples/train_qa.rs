//! Multi-choice QA with segment alignment against the same model without
//! it, on one synthetic corpus.
//!
//!     cargo run --release --example train_qa -- [epochs]

use mlalign::alignment::AlignmentConfig;
use mlalign::data::{generate_corpus, CorpusSpec, TaskKind};
use mlalign::eval::eval_qa;
use mlalign::trainer::{train, TrainConfig};

fn main() -> mlalign::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let corpus = generate_corpus(&CorpusSpec { n_train: 256, ..CorpusSpec::default() })?;

    for (name, alignment) in [("segment", AlignmentConfig::segment_only()), ("none", AlignmentConfig::none())] {
        let mut cfg = TrainConfig::for_task(TaskKind::Qa);
        cfg.alignment = alignment;
        cfg.epochs = epochs;
        cfg.lr = 1e-3;
        let (trainer, log) = train(&corpus.train, &cfg)?;
        let last = log.last().expect("at least one epoch");
        let report = eval_qa(&trainer.params, &corpus.test)?;
        println!(
            "{name:>8}: task loss {:.4}, segment loss {:.4}, test accuracy {:.3}",
            last.l_task,
            last.l_seg,
            report.get("accuracy").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
