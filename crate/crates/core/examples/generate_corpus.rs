//! Generates a small synthetic QA corpus, writes it in both on-disk formats
//! and prints one decoded sample.
//!
//!     cargo run --example generate_corpus -- /tmp/qa-corpus

use std::path::PathBuf;

use mlalign::data::{generate_corpus, split_paths, write_binary_dataset, write_dataset, CorpusSpec, TaskAnnotation};

fn main() -> mlalign::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "qa-corpus".into()));
    let spec = CorpusSpec { n_train: 64, n_test: 16, ..CorpusSpec::default() };
    let corpus = generate_corpus(&spec)?;
    std::fs::create_dir_all(&out)?;

    for (name, ds) in [("train", &corpus.train), ("test", &corpus.test)] {
        let (text, manifest, features) = split_paths(&out, name);
        write_dataset(&text, ds)?;
        write_binary_dataset(&manifest, &features, ds)?;
        println!("{name}: {} samples -> {} and {}", ds.samples.len(), text.display(), features.display());
    }

    let s = &corpus.train.samples[0];
    let layout = &corpus.train_layouts[0];
    let vocab = &corpus.train.vocab;
    println!("\nsample {} ({} frames x {} features)", s.id, s.n_frames(), s.frames.cols());
    println!("segment concepts: {:?}", layout.concepts);
    println!("question: {}", vocab.decode(&s.tokens));
    if let TaskAnnotation::Qa(qa) = &s.task {
        for (i, c) in qa.candidates.iter().enumerate() {
            let mark = if i == qa.correct_index { "*" } else { " " };
            println!("  {mark} {}", vocab.decode(c));
        }
        if let Some(span) = qa.span {
            println!("answer grounded in frames {}..={}", span.start, span.end);
        }
    }
    Ok(())
}
