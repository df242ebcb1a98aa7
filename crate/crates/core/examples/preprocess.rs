//! Cleans a few raw posts and shows how the tokenizer splits them.
//!
//! ```text
//! cargo run --example preprocess
//! ```

use mixcontext::textprep::preprocess;
use mixcontext::tokenizer::{build_vocab, decode, encode_pair, encode_single, tokenize};

const RAW: &[&str] = &[
    "@rahul_g ye kya bakwas hai 😡 https://t.co/xyz123",
    "RT @news_wala: नमस्ते दोस्तों!! www.example.in/khabar #breaking",
    "bilkul sahi\u{200B}  baat\u{A0}bhai 🙏🙏",
    "@user1 @user2",
];

fn main() {
    let cleaned: Vec<String> = RAW.iter().map(|t| preprocess(t)).collect();
    for (raw, clean) in RAW.iter().zip(&cleaned) {
        println!("{raw:?}\n  -> {clean:?}");
    }

    let vocab = build_vocab(&cleaned, 120).expect("enough room for the alphabet");
    println!("\nvocabulary: {} entries", vocab.len());
    for text in &cleaned {
        println!("{:?}", tokenize(text, &vocab));
    }

    let single = encode_single(&cleaned[0], &vocab, 24).unwrap();
    println!("\nsingle: ids {:?}\n        real length {}", single.ids, single.real_len());
    let pair = encode_pair(&cleaned[1], &cleaned[0], &vocab, 24).unwrap();
    println!("pair:   {:?}", decode(&pair.ids[..pair.real_len()], &vocab).unwrap());
    println!("        segments {:?}", &pair.segments[..pair.real_len()]);
}
