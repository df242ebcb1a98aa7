//! Compares the single-encoder, dual-encoder and no-context models on a
//! corpus where agreement replies can only be judged from their parent.
//!
//! ```text
//! cargo run --release --example context_ablation
//! ```

use mixcontext::classify::{Architecture, Predictor};
use mixcontext::corpus::{build_samples, gen_synthetic, Label, Sample, SyntheticConfig};
use mixcontext::encoder::EncoderConfig;
use mixcontext::eval::report;
use mixcontext::rng::SplitMix64;
use mixcontext::tokenizer::build_vocab;
use mixcontext::train::{train, TrainConfig};

fn fit(train_set: &[Sample], val: &[Sample], test: &[Sample], architecture: Architecture) -> Vec<Label> {
    let texts: Vec<&str> = train_set
        .iter()
        .flat_map(|s| std::iter::once(s.target_text.as_str()).chain(s.context_text.as_deref()))
        .collect();
    let vocab = build_vocab(&texts, 2000).unwrap();
    let encoder = EncoderConfig {
        vocab_size: vocab.len(),
        max_len: 64,
        ..EncoderConfig::default()
    };
    let config = TrainConfig {
        architecture,
        ..TrainConfig::default()
    };
    let best = train(&encoder, &vocab, train_set, val, &config).unwrap().best;
    test.iter().map(|s| best.predict(s).unwrap().label).collect()
}

fn main() {
    let synth = SyntheticConfig {
        n_threads: 250,
        agreement_rate: 0.8,
        seed: 1,
        ..SyntheticConfig::default()
    };
    let mut samples = build_samples(&gen_synthetic(&synth).unwrap()).unwrap();
    SplitMix64::new(1).shuffle(&mut samples);
    let (train_set, rest) = samples.split_at(400);
    let (val, test) = rest.split_at(100);
    let strip = |v: &[Sample]| v.iter().map(Sample::without_context).collect::<Vec<_>>();

    let single = fit(train_set, val, test, Architecture::Single);
    let dual = fit(train_set, val, test, Architecture::Dual);
    let bare = fit(&strip(train_set), &strip(val), &strip(test), Architecture::Dual);

    let golds: Vec<Label> = test.iter().map(|s| s.label).collect();
    let flags: Vec<bool> = test.iter().map(|s| s.is_contextual).collect();
    let table = report(
        &[("no context", &bare), ("single encoder", &single), ("dual encoder", &dual)],
        &golds,
        &flags,
    )
    .unwrap();
    print!("{}", table.render());
}
