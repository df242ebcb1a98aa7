//! Parameter budgets for cross-layer sharing and factorized embeddings.
//!
//! ```text
//! cargo run --example albert
//! ```

use mixcontext::encoder::{init_encoder, param_count, EncoderConfig, EncoderState};

fn main() {
    let base = EncoderConfig {
        share_layers: false,
        embed_dim: 64,
        ..EncoderConfig::default()
    };
    let rows = [
        ("unshared, E = H", base.clone()),
        ("unshared, E = 32", EncoderConfig { embed_dim: 32, ..base.clone() }),
        ("shared, E = H", EncoderConfig { share_layers: true, ..base.clone() }),
        ("shared, E = 32", EncoderConfig::albert()),
    ];
    println!("{:<18} {:>7} {:>12}", "configuration", "layers", "parameters");
    for (name, config) in rows {
        for layers in [2, 12] {
            let config = EncoderConfig { num_layers: layers, ..config.clone() };
            println!("{name:<18} {layers:>7} {:>12}", param_count(&config).unwrap());
        }
    }

    let shared: EncoderState<f32> = init_encoder(&EncoderConfig::albert()).unwrap();
    let names: Vec<String> = shared.params().named().into_iter().map(|(n, _)| n).collect();
    println!("\nstored tensors of the shared encoder:\n  {}", names.join("\n  "));
}
