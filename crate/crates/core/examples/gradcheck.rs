//! Finite-difference check of the hand-written backward pass, on the tiny
//! configuration and with a deliberately broken gradient.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use mixcontext::encoder::{check_gradients, check_gradients_with, EncoderConfig, GradCheckOptions, GradientFault};

fn main() {
    let config = EncoderConfig::tiny();
    let report = check_gradients(&config, 1e-4).unwrap();
    println!("{report}");

    let broken = GradCheckOptions {
        fault: Some(GradientFault {
            param: "layer.0.ffn.up".into(),
            scale: 1.1,
        }),
        ..GradCheckOptions::default()
    };
    let report = check_gradients_with(&config, &broken).unwrap();
    println!("with a 10% error injected into layer.0.ffn.up:");
    println!("  passed {}, failing {:?}", report.passed, report.failing_params());
}
