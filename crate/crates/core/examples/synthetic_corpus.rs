//! Generates a planted corpus, flattens it into samples and splits it.
//!
//! ```text
//! cargo run --example synthetic_corpus [out.jsonl]
//! ```

use mixcontext::corpus::{
    build_samples, corpus_stats, gen_synthetic, split_train_val, write_threads, SplitSpec, SyntheticConfig,
};

fn main() {
    let config = SyntheticConfig {
        n_threads: 50,
        seed: 7,
        ..SyntheticConfig::default()
    };
    let nodes = gen_synthetic(&config).expect("default config is valid");
    for node in nodes.iter().take(6) {
        println!(
            "{:<10} {:<8} parent={:<10} {}  {}",
            node.id,
            node.level.as_str(),
            node.parent_id.as_deref().unwrap_or("-"),
            node.label,
            node.text
        );
    }

    let samples = build_samples(&nodes).unwrap();
    println!("\n{}", corpus_stats(&samples));
    if let Some(s) = samples.iter().find(|s| s.is_contextual) {
        println!("contextual sample {}:\n  context {:?}\n  target  {:?}", s.id, s.context_text, s.target_text);
    }

    let (train, val) = split_train_val(&samples, &SplitSpec::default()).unwrap();
    println!("\nsplit: {} train / {} validation", train.len(), val.len());

    if let Some(path) = std::env::args().nth(1) {
        write_threads(path.as_ref(), &nodes).unwrap();
        println!("wrote {path}");
    }
}
