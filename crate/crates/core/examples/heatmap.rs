//! Trains a QA model briefly and writes the candidate-by-frame similarity
//! heatmap of one test sample as CSV.
//!
//!     cargo run --release --example heatmap -- heatmap.csv

use mlalign::data::{generate_corpus, CorpusSpec, TaskKind};
use mlalign::eval::heatmap;
use mlalign::trainer::{train, TrainConfig};

fn main() -> mlalign::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "heatmap.csv".into());
    let corpus = generate_corpus(&CorpusSpec { n_train: 256, ..CorpusSpec::default() })?;
    let mut cfg = TrainConfig::for_task(TaskKind::Qa);
    cfg.epochs = 15;
    cfg.lr = 1e-3;
    let (trainer, _) = train(&corpus.train, &cfg)?;

    let sample = &corpus.test.samples[0];
    let h = heatmap(&trainer.params, sample, &corpus.test.vocab)?;
    h.write_csv(std::path::Path::new(&out))?;
    for (label, row) in h.row_labels.iter().zip(&h.values) {
        let cells: String = row.iter().map(|v| if *v > 0.5 { '#' } else if *v > 0.0 { '+' } else { '.' }).collect();
        println!("{label:>16} {cells}");
    }
    if let Some((inside, outside)) = h.span_contrast(h.correct_row) {
        println!("correct answer: mean similarity {inside:.3} inside the span, {outside:.3} outside");
    }
    println!("wrote {out}");
    Ok(())
}
