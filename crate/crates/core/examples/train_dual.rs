//! Trains the dual-encoder classifier on a synthetic corpus, saves the best
//! checkpoint, reloads it and scores the held-out samples.
//!
//! ```text
//! cargo run --release --example train_dual
//! ```

use mixcontext::classify::{Architecture, Predictor};
use mixcontext::corpus::{build_samples, gen_synthetic, Label, SyntheticConfig};
use mixcontext::encoder::{param_count, EncoderConfig};
use mixcontext::eval::evaluate;
use mixcontext::rng::SplitMix64;
use mixcontext::tokenizer::build_vocab;
use mixcontext::train::{train_with, Checkpoint, TrainConfig};

fn main() {
    let mut samples = build_samples(&gen_synthetic(&SyntheticConfig { n_threads: 250, ..Default::default() }).unwrap()).unwrap();
    SplitMix64::new(0).shuffle(&mut samples);
    let (train, rest) = samples.split_at(400);
    let (val, test) = rest.split_at(100);

    let texts: Vec<&str> = train
        .iter()
        .flat_map(|s| std::iter::once(s.target_text.as_str()).chain(s.context_text.as_deref()))
        .collect();
    let vocab = build_vocab(&texts, 2000).unwrap();
    let encoder = EncoderConfig {
        vocab_size: vocab.len(),
        max_len: 64,
        ..EncoderConfig::default()
    };
    println!("{} train / {} val / {} test, {} parameters", train.len(), val.len(), test.len(), param_count(&encoder).unwrap());

    let config = TrainConfig {
        architecture: Architecture::Dual,
        ..TrainConfig::default()
    };
    let outcome = train_with(&encoder, &vocab, train, val, &config, |r, _| {
        println!("epoch {}  train {:.4}  val {:.4}  ({:.1}s)", r.epoch, r.train_loss, r.val_loss, r.seconds);
        Ok(())
    })
    .unwrap();
    println!("best epoch {}", outcome.best.epoch);

    let dir = std::env::temp_dir().join("mixcontext-train-dual");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("best.ckpt");
    outcome.best.save(&path).unwrap();
    let model = Checkpoint::load(&path).unwrap();
    println!("checkpoint written to {} and reloaded", path.display());

    let preds: Vec<Label> = test.iter().map(|s| model.predict(s).unwrap().label).collect();
    let golds: Vec<Label> = test.iter().map(|s| s.label).collect();
    let flags: Vec<bool> = test.iter().map(|s| s.is_contextual).collect();
    let metrics = evaluate(&golds, &preds, &flags).unwrap();
    println!("\n{}", mixcontext::cli::render_metrics(&metrics));
}
