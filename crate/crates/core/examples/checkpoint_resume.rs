//! Interrupts training halfway, saves a checkpoint, resumes from it and
//! compares against an uninterrupted run.

use mlalign::data::{generate_corpus, CorpusSpec};
use mlalign::trainer::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

fn main() -> mlalign::Result<()> {
    let data = generate_corpus(&CorpusSpec { n_train: 64, n_test: 1, ..CorpusSpec::default() })?.train;
    let mut cfg = TrainConfig::default();
    cfg.dims.embed_dim = 16;
    cfg.dims.hidden_dim = 32;
    cfg.batch_size = 16;
    cfg.epochs = 6;

    let mut straight = Trainer::new(cfg.clone())?;
    let full = straight.train_until(&data, 6, |_, _| Ok(()))?;

    let dir = tempfile_dir();
    let path = dir.join("half.ckpt");
    let mut first = Trainer::new(cfg)?;
    first.train_until(&data, 3, |_, _| Ok(()))?;
    save_checkpoint(&path, &first)?;
    let mut resumed = load_checkpoint(&path)?;
    let tail = resumed.train_until(&data, 6, |_, _| Ok(()))?;
    std::fs::remove_dir_all(&dir)?;

    for (a, b) in full[3..].iter().zip(&tail) {
        println!("epoch {}: straight {:.6}  resumed {:.6}", a.epoch, a.l_train, b.l_train);
    }
    println!("parameters identical: {}", straight.params == resumed.params);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("mlalign-resume-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
