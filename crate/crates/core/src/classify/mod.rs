//! Decision layer: a dense softmax head on top of the encoder in either the
//! single-encoder (context and target joined by `[SEP]`) or dual-encoder
//! (separate passes, `[CLS]` vectors averaged) arrangement, plus the
//! lexicon override and probability-averaging ensembles.

mod ensemble;
mod lexicon;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Sample};
use crate::encoder::{
    backward_sequence, run_sequence, EncoderError, EncoderParams, EncoderState, Scalar,
    SequenceTape, Tensor,
};
use crate::rng::SplitMix64;
use crate::tokenizer::{encode_pair, encode_single, Encoding, TokenizerError, Vocab};

pub use ensemble::{ensemble_predict, ensemble_predict_with, fuse, Ensemble, Fusion};
pub use lexicon::{combined_predict, lexicon_classify, Combined, Lexicon, LexiconError};

/// Probabilities closer than this count as a tie, which resolves to HOF.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("an ensemble needs at least one member")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// `[CLS] context [SEP] target [SEP]` through one encoder pass.
    Single,
    /// Context and target encoded separately; `[CLS]` vectors averaged.
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Model,
    Lexicon,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `[p(NOT), p(HOF)]`
    pub probs: [f64; 2],
    pub label: Label,
    pub source: Source,
}

impl Prediction {
    /// Labels by argmax, with near-ties going to HOF.
    pub fn from_probs(probs: [f64; 2], source: Source) -> Self {
        Prediction {
            probs,
            label: argmax_label(probs),
            source,
        }
    }
}

pub fn argmax_label(probs: [f64; 2]) -> Label {
    if (probs[0] - probs[1]).abs() < TIE_EPSILON || probs[1] > probs[0] {
        Label::Hof
    } else {
        Label::Not
    }
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let sum = e0 + e1;
    [e0 / sum, e1 / sum]
}

/// Anything that turns a sample into class probabilities.
pub trait Predictor {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        (**self).predict(sample)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        (**self).predict(sample)
    }
}

/// Dense layer `hidden → 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn zeros(hidden: usize) -> Self {
        Head {
            weight: Tensor::zeros(hidden, 2),
            bias: Tensor::zeros(1, 2),
        }
    }

    /// Truncated Normal(0, 0.02) weights, zero bias.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::derived(seed, 0x4EAD);
        let mut head = Head::zeros(hidden);
        for w in head.weight.data.iter_mut() {
            *w = T::of(rng.truncated_normal(crate::encoder::INIT_STD));
        }
        head
    }

    pub fn logits(&self, representation: &[T]) -> [T; 2] {
        let mut z = [self.bias.data[0], self.bias.data[1]];
        for (row, &r) in representation.iter().enumerate() {
            z[0] += r * self.weight.data[2 * row];
            z[1] += r * self.weight.data[2 * row + 1];
        }
        z
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("head.weight".to_string(), &self.weight),
            ("head.bias".to_string(), &self.bias),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("head.weight".to_string(), &mut self.weight),
            ("head.bias".to_string(), &mut self.bias),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Head<U> {
        Head {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Encoded model input: one encoding, or context and target encodings whose
/// `[CLS]` vectors are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub encodings: Vec<Encoding>,
}

impl ModelInput {
    pub fn prepare(
        sample: &Sample,
        architecture: Architecture,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Self, TokenizerError> {
        let encodings = match (architecture, sample.context_text.as_deref()) {
            (_, None) => vec![encode_single(&sample.target_text, vocab, max_len)?],
            (Architecture::Single, Some(context)) => {
                vec![encode_pair(context, &sample.target_text, vocab, max_len)?]
            }
            (Architecture::Dual, Some(context)) => vec![
                encode_single(context, vocab, max_len)?,
                encode_single(&sample.target_text, vocab, max_len)?,
            ],
        };
        Ok(ModelInput { encodings })
    }
}

/// Encoder plus head under a fixed architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub encoder: EncoderState<T>,
    pub head: Head<T>,
    pub architecture: Architecture,
}

/// Gradient accumulator with the model's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub encoder: EncoderParams<T>,
    pub head: Head<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_for(model: &ClassifierModel<T>) -> Self {
        ModelGrads {
            encoder: EncoderParams::zeros(model.encoder.config()),
            head: Head::zeros(model.encoder.config().hidden),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.named();
        out.extend(self.head.named());
        out
    }

    pub fn fill_zero(&mut self) {
        self.encoder.fill_zero();
        self.head.weight.fill_zero();
        self.head.bias.fill_zero();
    }
}

fn trimmed_pass<T: Scalar>(
    encoder: &EncoderState<T>,
    enc: &Encoding,
) -> Result<(Vec<T>, SequenceTape<T>), EncoderError> {
    let len = enc.real_len();
    let (hidden, tape) = run_sequence(encoder, &enc.ids[..len], &enc.segments[..len], None)?;
    Ok((hidden.row(0).to_vec(), tape))
}

/// Mean of the `[CLS]` vectors of `encodings` (a single vector passes through
/// unchanged).
fn representation<T: Scalar>(
    encoder: &EncoderState<T>,
    encodings: &[Encoding],
) -> Result<(Vec<T>, Vec<SequenceTape<T>>), EncoderError> {
    let mut tapes = Vec::with_capacity(encodings.len());
    let mut acc: Option<Vec<T>> = None;
    for enc in encodings {
        let (cls, tape) = trimmed_pass(encoder, enc)?;
        tapes.push(tape);
        acc = Some(match acc {
            None => cls,
            Some(mut a) => {
                for (x, y) in a.iter_mut().zip(cls) {
                    *x += y;
                }
                a
            }
        });
    }
    let mut r = acc.ok_or_else(|| EncoderError::Shape("no encodings".into()))?;
    if encodings.len() > 1 {
        let k = T::of(encodings.len() as f64);
        r.iter_mut().for_each(|x| *x /= k);
    }
    Ok((r, tapes))
}

fn logits_to_f64<T: Scalar>(z: [T; 2]) -> [f64; 2] {
    [z[0].as_f64(), z[1].as_f64()]
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.params().named();
        out.extend(self.head.named());
        out
    }

    /// Mutable view of every parameter; invalidates encoder tapes.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.encoder.params_mut().named_mut();
        out.extend(self.head.named_mut());
        out
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        name.starts_with("head.") || self.encoder.is_trainable(name)
    }

    /// The vector fed to the head.
    pub fn representation(&self, input: &ModelInput) -> Result<Vec<T>, EncoderError> {
        Ok(representation(&self.encoder, &input.encodings)?.0)
    }

    pub fn logits(&self, input: &ModelInput) -> Result<[T; 2], EncoderError> {
        Ok(self.head.logits(&self.representation(input)?))
    }

    pub fn predict_input(&self, input: &ModelInput) -> Result<Prediction, EncoderError> {
        let z = logits_to_f64(self.logits(input)?);
        Ok(Prediction::from_probs(softmax2(z), Source::Model))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[(&ModelInput, Label)]) -> Result<T, EncoderError> {
        let mut total = T::zero();
        for &(input, label) in batch {
            let z = self.logits(input)?;
            let max = z[0].max(z[1]);
            let lse = ((z[0] - max).exp() + (z[1] - max).exp()).ln() + max;
            total += lse - z[label.index()];
        }
        Ok(total / T::of(batch.len() as f64))
    }

    /// Mean cross-entropy over `batch`, accumulating its gradient into `grads`.
    pub fn loss_and_grad(
        &self,
        batch: &[(&ModelInput, Label)],
        grads: &mut ModelGrads<T>,
    ) -> Result<T, EncoderError> {
        let hidden = self.encoder.config().hidden;
        let inv_batch = T::one() / T::of(batch.len() as f64);
        let mut total = T::zero();
        for &(input, label) in batch {
            let (r, tapes) = representation(&self.encoder, &input.encodings)?;
            let z = self.head.logits(&r);
            let max = z[0].max(z[1]);
            let e = [(z[0] - max).exp(), (z[1] - max).exp()];
            let sum = e[0] + e[1];
            let gold = label.index();
            total += sum.ln() + max - z[gold];

            let mut d_z = [e[0] / sum, e[1] / sum];
            d_z[gold] -= T::one();
            d_z.iter_mut().for_each(|d| *d *= inv_batch);
            let mut d_r = vec![T::zero(); hidden];
            for (row, &ri) in r.iter().enumerate() {
                grads.head.weight.data[2 * row] += ri * d_z[0];
                grads.head.weight.data[2 * row + 1] += ri * d_z[1];
                d_r[row] = self.head.weight.data[2 * row] * d_z[0]
                    + self.head.weight.data[2 * row + 1] * d_z[1];
            }
            grads.head.bias.data[0] += d_z[0];
            grads.head.bias.data[1] += d_z[1];

            let share = T::one() / T::of(tapes.len() as f64);
            for tape in &tapes {
                let mut d_hidden = vec![T::zero(); tape.len() * hidden];
                for (d, &g) in d_hidden[..hidden].iter_mut().zip(&d_r) {
                    *d = g * share;
                }
                backward_sequence(&self.encoder, tape, &d_hidden, &mut grads.encoder);
            }
        }
        Ok(total * inv_batch)
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            encoder: self.encoder.cast(),
            head: self.head.cast(),
            architecture: self.architecture,
        }
    }
}

/// Concatenated-input classification: pair encoding when context is present,
/// single encoding otherwise.
pub fn single_encoder_predict<T: Scalar>(
    encoder: &EncoderState<T>,
    head: &Head<T>,
    sample: &Sample,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Prediction, ClassifyError> {
    let input = ModelInput::prepare(sample, Architecture::Single, vocab, max_len)?;
    let (r, _) = representation(encoder, &input.encodings)?;
    Ok(Prediction::from_probs(
        softmax2(logits_to_f64(head.logits(&r))),
        Source::Model,
    ))
}

/// Averaged-representation classification: `(cls(context) + cls(target)) / 2`,
/// or `cls(target)` alone when there is no context.
pub fn dual_encoder_predict<T: Scalar>(
    encoder: &EncoderState<T>,
    head: &Head<T>,
    sample: &Sample,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Prediction, ClassifyError> {
    let input = ModelInput::prepare(sample, Architecture::Dual, vocab, max_len)?;
    let (r, _) = representation(encoder, &input.encodings)?;
    Ok(Prediction::from_probs(
        softmax2(logits_to_f64(head.logits(&r))),
        Source::Model,
    ))
}

/// A model bound to its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier<T = f32> {
    pub model: ClassifierModel<T>,
    pub vocab: Vocab,
}

impl<T: Scalar> TextClassifier<T> {
    pub fn max_len(&self) -> usize {
        self.model.encoder.config().max_len
    }

    pub fn prepare(&self, sample: &Sample) -> Result<ModelInput, TokenizerError> {
        ModelInput::prepare(sample, self.model.architecture, &self.vocab, self.max_len())
    }
}

impl<T: Scalar> Predictor for TextClassifier<T> {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        let model = &self.model;
        match model.architecture {
            Architecture::Single => {
                single_encoder_predict(&model.encoder, &model.head, sample, &self.vocab, self.max_len())
            }
            Architecture::Dual => {
                dual_encoder_predict(&model.encoder, &model.head, sample, &self.vocab, self.max_len())
            }
        }
    }
}
