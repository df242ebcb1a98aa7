//! Fine-tuning loop: seeded shuffling, mini-batch cross-entropy, Adam without
//! weight decay, and best-epoch selection by validation loss.

mod checkpoint;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classify::{
    Architecture, ClassifierModel, Head, ModelGrads, ModelInput, TextClassifier,
};
use crate::corpus::{Label, Sample};
use crate::encoder::{init_encoder, EncoderConfig, EncoderError, Scalar, Tensor};
use crate::rng::SplitMix64;
use crate::tokenizer::{TokenizerError, Vocab};

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("loss became non-finite ({loss}) in epoch {epoch}")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            architecture: Architecture::Dual,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Adam state for every tensor of a [`ClassifierModel`], in `named()` order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
    step: i32,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &ClassifierModel<T>, config: &TrainConfig) -> Self {
        Adam {
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
            step: 0,
            moments: model
                .named()
                .into_iter()
                .map(|(_, t)| (t.zeros_like(), t.zeros_like()))
                .collect(),
        }
    }

    /// One update; parameters the model marks as frozen are left untouched.
    pub fn step(&mut self, model: &mut ClassifierModel<T>, grads: &ModelGrads<T>) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        let trainable: Vec<bool> = model.named().iter().map(|(n, _)| model.is_trainable(n)).collect();
        let grads = grads.named();
        for (i, (_, param)) in model.named_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let g = &grads[i].1.data;
            let (m, v) = &mut self.moments[i];
            let moments = m.data.iter_mut().zip(v.data.iter_mut());
            for ((p, &g), (m, v)) in param.data.iter_mut().zip(g).zip(moments) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Mean `−ln p(gold)` with log-softmax in f64.
pub fn mean_loss<T: Scalar>(
    model: &ClassifierModel<T>,
    inputs: &[(ModelInput, Label)],
) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    for (input, label) in inputs {
        let z = model.logits(input)?;
        let z = [z[0].as_f64(), z[1].as_f64()];
        let max = z[0].max(z[1]);
        let lse = ((z[0] - max).exp() + (z[1] - max).exp()).ln() + max;
        total += lse - z[label.index()];
    }
    Ok(total / inputs.len() as f64)
}

/// Mean cross-entropy of a checkpoint on `samples`, model only.
pub fn evaluate_loss(checkpoint: &Checkpoint, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let inputs = prepare(&checkpoint.classifier, samples)?;
    Ok(mean_loss(&checkpoint.classifier.model, &inputs)?)
}

fn prepare(clf: &TextClassifier<f32>, samples: &[Sample]) -> Result<Vec<(ModelInput, Label)>, TokenizerError> {
    samples
        .iter()
        .map(|s| Ok((clf.prepare(s)?, s.label)))
        .collect()
}

/// A freshly initialized model: encoder from `encoder_config.seed`, head from
/// the training seed.
pub fn init_classifier(
    encoder_config: &EncoderConfig,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TextClassifier<f32>, TrainError> {
    if encoder_config.vocab_size != vocab.len() {
        return Err(TrainError::Config(format!(
            "encoder vocab_size {} differs from vocabulary size {}",
            encoder_config.vocab_size,
            vocab.len()
        )));
    }
    Ok(TextClassifier {
        model: ClassifierModel {
            encoder: init_encoder(encoder_config)?,
            head: Head::init(encoder_config.hidden, config.seed),
            architecture: config.architecture,
        },
        vocab: vocab.clone(),
    })
}

pub fn train(
    encoder_config: &EncoderConfig,
    vocab: &Vocab,
    train_samples: &[Sample],
    val_samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(encoder_config, vocab, train_samples, val_samples, config, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch, receiving the log record and
/// that epoch's parameters.
pub fn train_with<F>(
    encoder_config: &EncoderConfig,
    vocab: &Vocab,
    train_samples: &[Sample],
    val_samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochRecord, &Checkpoint) -> Result<(), TrainError>,
{
    config.validate()?;
    if train_samples.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    if val_samples.is_empty() {
        return Err(TrainError::Empty("validation"));
    }
    let mut clf = init_classifier(encoder_config, vocab, config)?;
    let train_inputs = prepare(&clf, train_samples)?;
    let val_inputs = prepare(&clf, val_samples)?;

    let mut adam = Adam::new(&clf.model, config);
    let mut grads = ModelGrads::zeros_for(&clf.model);
    let mut rng = SplitMix64::derived(config.seed, 0x7EA1);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&ModelInput, Label)> =
                chunk.iter().map(|&i| (&train_inputs[i].0, train_inputs[i].1)).collect();
            grads.fill_zero();
            let loss = clf.model.loss_and_grad(&batch, &mut grads)?.as_f64();
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut clf.model, &grads);
        }
        let val_loss = mean_loss(&clf.model, &val_inputs)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, loss: val_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_inputs.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} ({:.1}s)",
            record.train_loss,
            record.val_loss,
            record.seconds
        );
        let snapshot = Checkpoint {
            classifier: clf.clone(),
            epoch,
            val_loss,
            train_config: config.clone(),
        };
        on_epoch(&record, &snapshot)?;
        log.push(record);
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(snapshot);
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Predictor;
    use crate::corpus::{build_samples, gen_synthetic, SyntheticConfig};
    use crate::tokenizer::build_vocab;

    fn data(n_threads: usize, seed: u64) -> Vec<Sample> {
        let nodes = gen_synthetic(&SyntheticConfig {
            n_threads,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        build_samples(&nodes).unwrap()
    }

    fn small_encoder(vocab: &Vocab) -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden: 16,
            ffn: 32,
            embed_dim: 16,
            vocab_size: vocab.len(),
            max_len: 48,
            ..EncoderConfig::default()
        }
    }

    fn fixture() -> (Vec<Sample>, Vec<Sample>, Vocab) {
        let samples = data(30, 1);
        let (train, val) = samples.split_at(samples.len() * 4 / 5);
        let texts: Vec<&str> = train.iter().map(|s| s.target_text.as_str()).collect();
        let vocab = build_vocab(&texts, 400).unwrap();
        (train.to_vec(), val.to_vec(), vocab)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { max_epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn best_epoch_is_min_val_loss_and_runs_are_reproducible() {
        let (train_s, val_s, vocab) = fixture();
        let config = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let enc = small_encoder(&vocab);
        let a = train(&enc, &vocab, &train_s, &val_s, &config).unwrap();
        let b = train(&enc, &vocab, &train_s, &val_s, &config).unwrap();
        assert_eq!(a.log.len(), 3);
        let min = a.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.val_loss, min);
        let first_min = a.log.iter().find(|r| r.val_loss == min).unwrap().epoch;
        assert_eq!(a.best.epoch, first_min);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        let losses = |o: &TrainOutcome| o.log.iter().map(|r| (r.train_loss, r.val_loss)).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        let reloaded = evaluate_loss(&a.best, &val_s).unwrap();
        assert_eq!(reloaded, a.best.val_loss);
    }

    #[test]
    fn frozen_embeddings_stay_bit_identical() {
        let (train_s, val_s, vocab) = fixture();
        let mut enc = small_encoder(&vocab);
        enc.freeze_embeddings = true;
        let config = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let init = init_classifier(&enc, &vocab, &config).unwrap();
        let out = train(&enc, &vocab, &train_s, &val_s, &config).unwrap();
        let before = init.model.encoder.params();
        let after = out.best.classifier.model.encoder.params();
        assert_eq!(before.embeddings, after.embeddings);
        assert_ne!(before.blocks, after.blocks);
    }

    #[test]
    fn uniform_model_loss_is_ln2() {
        let (_, val_s, vocab) = fixture();
        let enc = small_encoder(&vocab);
        let config = TrainConfig::default();
        let mut clf = init_classifier(&enc, &vocab, &config).unwrap();
        clf.model.head.weight.fill_zero();
        let ckpt = Checkpoint {
            classifier: clf,
            epoch: 0,
            val_loss: 0.0,
            train_config: config,
        };
        let loss = evaluate_loss(&ckpt, &val_s).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(ckpt.predict(&val_s[0]).unwrap().probs, [0.5, 0.5]);
        assert!(matches!(evaluate_loss(&ckpt, &[]), Err(TrainError::Empty(_))));
    }

    #[test]
    fn hand_fixture_loss() {
        let (_, val_s, vocab) = fixture();
        let enc = small_encoder(&vocab);
        let config = TrainConfig::default();
        let mut clf = init_classifier(&enc, &vocab, &config).unwrap();
        clf.model.head.weight.fill_zero();
        // Bias logits [0, ln 3] give p = [0.25, 0.75].
        clf.model.head.bias.data = vec![0.0, 3f32.ln()];
        let mut pair = vec![val_s[0].clone(), val_s[1].clone()];
        pair[0].label = Label::Hof;
        pair[1].label = Label::Not;
        let ckpt = Checkpoint {
            classifier: clf,
            epoch: 0,
            val_loss: 0.0,
            train_config: config,
        };
        let expected = (-(0.75f64).ln() - (0.25f64).ln()) / 2.0;
        assert!((evaluate_loss(&ckpt, &pair).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let (train_s, val_s, vocab) = fixture();
        let mut enc = small_encoder(&vocab);
        enc.vocab_size += 1;
        assert!(matches!(
            train(&enc, &vocab, &train_s, &val_s, &TrainConfig::default()),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn divergence_guard() {
        let (train_s, val_s, vocab) = fixture();
        let enc = small_encoder(&vocab);
        let config = TrainConfig {
            learning_rate: f64::MAX,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        assert!(config.validate().is_ok());
        assert!(matches!(
            train(&enc, &vocab, &train_s, &val_s, &config),
            Err(TrainError::Divergence { .. })
        ));
    }
}
