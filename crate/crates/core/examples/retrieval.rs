//! Text-video retrieval trained with the global alignment loss alone.
//!
//!     cargo run --release --example retrieval -- [epochs]

use mlalign::data::{generate_corpus, CorpusSpec, TaskKind};
use mlalign::eval::{eval_retrieval, DEFAULT_KS};
use mlalign::trainer::{TrainConfig, Trainer};

fn main() -> mlalign::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let corpus = generate_corpus(&CorpusSpec::for_task(TaskKind::Retrieval))?;
    let mut cfg = TrainConfig::for_task(TaskKind::Retrieval);
    cfg.lr = 1e-3;
    let mut trainer = Trainer::new(cfg)?;

    let before = eval_retrieval(&trainer.params, &corpus.test, &DEFAULT_KS)?;
    print!("untrained\n{}", before.to_kv());
    trainer.train_until(&corpus.train, epochs, |t, e| {
        if e.epoch % 5 == 0 {
            let r = eval_retrieval(&t.params, &corpus.test, &[1])?;
            println!("epoch {:>3}  global loss {:.4}  R@1 t2v {:.3} v2t {:.3}", e.epoch, e.l_glob,
                r.get("t2v_r1").unwrap_or(0.0), r.get("v2t_r1").unwrap_or(0.0));
        }
        Ok(())
    })?;
    print!("trained\n{}", eval_retrieval(&trainer.params, &corpus.test, &DEFAULT_KS)?.to_kv());
    Ok(())
}
