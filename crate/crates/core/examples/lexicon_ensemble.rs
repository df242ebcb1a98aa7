//! Trains two dual encoders with different seeds, fuses them, and puts the
//! profanity lexicon in front of the ensemble.
//!
//! ```text
//! cargo run --release --example lexicon_ensemble
//! ```

use mixcontext::classify::{combined_predict, Architecture, Ensemble, Fusion, Lexicon, Predictor};
use mixcontext::corpus::{build_samples, gen_synthetic, Label, Sample, SyntheticConfig};
use mixcontext::encoder::EncoderConfig;
use mixcontext::eval::report;
use mixcontext::rng::SplitMix64;
use mixcontext::tokenizer::build_vocab;
use mixcontext::train::{train, Checkpoint, TrainConfig};

fn main() {
    let mut samples = build_samples(&gen_synthetic(&SyntheticConfig { n_threads: 250, seed: 3, ..Default::default() }).unwrap()).unwrap();
    SplitMix64::new(3).shuffle(&mut samples);
    let (train_set, rest) = samples.split_at(400);
    let (val, test) = rest.split_at(100);

    let texts: Vec<&str> = train_set
        .iter()
        .flat_map(|s| std::iter::once(s.target_text.as_str()).chain(s.context_text.as_deref()))
        .collect();
    let vocab = build_vocab(&texts, 2000).unwrap();
    let members: Vec<Checkpoint> = [11, 12]
        .into_iter()
        .map(|seed| {
            let encoder = EncoderConfig {
                vocab_size: vocab.len(),
                max_len: 64,
                seed,
                ..EncoderConfig::default()
            };
            let config = TrainConfig {
                architecture: Architecture::Dual,
                seed,
                max_epochs: 3,
                ..TrainConfig::default()
            };
            train(&encoder, &vocab, train_set, val, &config).unwrap().best
        })
        .collect();

    let labels = |p: &dyn Fn(&Sample) -> Label| test.iter().map(p).collect::<Vec<_>>();
    let first = labels(&|s| members[0].predict(s).unwrap().label);
    let second = labels(&|s| members[1].predict(s).unwrap().label);
    let pair = || Ensemble::ensemble2(Box::new(members[0].clone()), Box::new(members[1].clone()));
    let ensemble = pair();
    let fused = labels(&|s| ensemble.predict(s).unwrap().label);
    let logit_fused = Ensemble { fusion: Fusion::Logits, ..pair() };
    let by_logits = labels(&|s| logit_fused.predict(s).unwrap().label);
    let lexicon = Lexicon::demo();
    let with_lexicon = labels(&|s| combined_predict(&ensemble, Some(&lexicon), s).unwrap().label);
    let lexicon_hits = test.iter().filter(|s| lexicon.matches(&s.target_text)).count();

    let golds: Vec<Label> = test.iter().map(|s| s.label).collect();
    let flags: Vec<bool> = test.iter().map(|s| s.is_contextual).collect();
    let table = report(
        &[
            ("dual, seed 11", &first),
            ("dual, seed 12", &second),
            ("ensemble (probabilities)", &fused),
            ("ensemble (logits)", &by_logits),
            ("ensemble + lexicon", &with_lexicon),
        ],
        &golds,
        &flags,
    )
    .unwrap();
    print!("{}", table.render());
    println!("lexicon fired on {lexicon_hits} of {} test samples", test.len());
}
