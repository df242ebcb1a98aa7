use std::fs;
use std::path::Path;

use mixcontext::cli::{main_with_args, read_predictions};
use mixcontext::classify::Source;
use mixcontext::corpus::Label;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mixcontext"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn s(path: &Path) -> String {
    path.display().to_string()
}

const GOLD: &str = r#"{"id":"t1","level":"tweet","text":"ek","label":"HOF"}
{"id":"t2","level":"tweet","text":"do","label":"HOF"}
{"id":"t3","level":"tweet","text":"teen","label":"HOF"}
{"id":"t4","level":"tweet","text":"char","label":"NOT"}
{"id":"t5","level":"tweet","text":"paanch","label":"NOT"}
{"id":"t6","level":"tweet","text":"chhe","label":"NOT"}
"#;

#[test]
fn eval_reports_macro_scores() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let preds = dir.path().join("preds.jsonl");
    let metrics = dir.path().join("metrics.json");
    fs::write(&gold, GOLD).unwrap();
    let labels = ["HOF", "HOF", "NOT", "NOT", "NOT", "HOF"];
    let lines: String = labels
        .iter()
        .enumerate()
        .rev()
        .map(|(i, l)| {
            let p = if *l == "HOF" { 0.9 } else { 0.1 };
            format!(
                "{{\"id\":\"t{}\",\"label\":\"{l}\",\"p_not\":{},\"p_hof\":{p},\"source\":\"model\"}}\n",
                i + 1,
                1.0 - p
            )
        })
        .collect();
    fs::write(&preds, lines).unwrap();

    assert_eq!(run(&["eval", "--predictions", &s(&preds), "--gold", &s(&gold), "--output", &s(&metrics)]), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!((json["macro_f1"].as_f64().unwrap() - 0.6667).abs() < 1e-4);
    assert!(dir.path().join("metrics.json.config.toml").is_file());

    // A missing id is a validation error.
    let short: String = fs::read_to_string(&preds).unwrap().lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&preds, short).unwrap();
    assert_eq!(run(&["eval", "--predictions", &s(&preds), "--gold", &s(&gold), "--output", &s(&metrics)]), 1);
}

fn write_config(dir: &Path) -> String {
    let config = format!(
        "[paths]\ndata = \"{}\"\nvocab = \"{}\"\noutput_dir = \"{}\"\n\n[synth]\nn_threads = 30\n\n\
         [encoder]\nnum_layers = 1\nhidden = 16\nffn = 32\nembed_dim = 16\nnum_heads = 2\nmax_len = 40\n\n\
         [train]\nmax_epochs = 2\nbatch_size = 8\n",
        s(&dir.join("threads.jsonl")),
        s(&dir.join("vocab.txt")),
        s(&dir.join("runs")),
    );
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    s(&path)
}

fn train_once(dir: &Path) -> Vec<u8> {
    let cfg = write_config(dir);
    assert_eq!(run(&["--config", &cfg, "synth"]), 0);
    assert_eq!(run(&["--config", &cfg, "vocab", "--size", "400"]), 0);
    assert_eq!(run(&["--config", &cfg, "train", "--name", "r"]), 0);
    let run_dir = dir.join("runs/r");
    for file in ["config.toml", "epoch1.ckpt", "epoch2.ckpt", "train_log.jsonl", "best.ckpt"] {
        assert!(run_dir.join(file).is_file(), "{file} missing");
    }
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    fs::read(run_dir.join("best.ckpt")).unwrap()
}

#[test]
fn training_is_reproducible_and_predict_uses_lexicon() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(train_once(a.path()), train_once(b.path()));

    let dir = a.path();
    let cfg = s(&dir.join("run.toml"));
    let data = dir.join("probe.jsonl");
    fs::write(
        &data,
        "{\"id\":\"p1\",\"level\":\"tweet\",\"text\":\"tu bilkul kutta hai\",\"label\":\"HOF\"}\n\
         {\"id\":\"p2\",\"level\":\"comment\",\"parent_id\":\"p1\",\"text\":\"accha din\",\"label\":\"NOT\"}\n",
    )
    .unwrap();
    let lexicon = dir.join("lexicon.txt");
    fs::write(&lexicon, "# planted\nkutta\n").unwrap();
    let best = s(&dir.join("runs/r/best.ckpt"));
    let out = dir.join("preds.jsonl");
    let args = ["--config", &cfg, "predict", "--checkpoint", &best, "--data", &s(&data), "--output", &s(&out)];

    let lexicon = s(&lexicon);
    let mut with_lexicon = args.to_vec();
    with_lexicon.extend(["--lexicon", &lexicon]);
    assert_eq!(run(&with_lexicon), 0);
    let records = read_predictions(&out).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!((records[0].label, records[0].source), (Label::Hof, Source::Lexicon));
    assert_eq!(records[1].source, Source::Model);
    let raw = fs::read_to_string(&out).unwrap();
    assert!(raw.lines().next().unwrap().contains("\"source\":\"lexicon\""));

    assert_eq!(run(&args), 0);
    assert!(read_predictions(&out).unwrap().iter().all(|r| r.source == Source::Model));

    let ens_out = dir.join("ens.jsonl");
    let ens = [
        "--config", &cfg, "ensemble", "--checkpoint", &best, "--checkpoint", &best, "--data", &s(&data), "--output",
        &s(&ens_out),
    ];
    assert_eq!(run(&ens), 0);
    let single = read_predictions(&out).unwrap();
    let fused = read_predictions(&ens_out).unwrap();
    for (x, y) in single.iter().zip(&fused) {
        assert_eq!(x.label, y.label);
        assert!((x.p_hof - y.p_hof).abs() < 1e-12);
        assert_eq!(y.source, Source::Ensemble);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nope.ckpt"));
    let out = s(&dir.path().join("o.jsonl"));
    assert_eq!(run(&["predict", "--checkpoint", &missing, "--data", &missing, "--output", &out]), 1);
    assert_eq!(run(&["--set", "train.max_epochs=0", "train"]), 1);
    assert_eq!(run(&["stats"]), 1);

    // A corrupt checkpoint is a validation error, not a crash.
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, GOLD).unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"MXCKPT01garbage").unwrap();
    assert_eq!(run(&["predict", "--checkpoint", &s(&bad), "--data", &s(&gold), "--output", &out]), 1);

    // Divergent training is a runtime failure.
    let cfg = write_config(dir.path());
    assert_eq!(run(&["--config", &cfg, "synth"]), 0);
    assert_eq!(run(&["--config", &cfg, "vocab", "--size", "300"]), 0);
    assert_eq!(run(&["--config", &cfg, "--set", "train.learning_rate=1e300", "train"]), 2);
}
