//! Central finite-difference verification of the hand-written backward pass,
//! run in f64 through the full classification loss (encoder + head) for both
//! the single- and dual-encoder pipelines.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{init_encoder, EncoderConfig, EncoderError};
use crate::classify::{Architecture, ClassifierModel, Head, ModelGrads, ModelInput};
use crate::corpus::Label;
use crate::rng::SplitMix64;
use crate::tokenizer::{Encoding, CLS, SEP};

/// Denominator floor so that coordinates with vanishing gradients compare on
/// an absolute scale. Central differences at step 1e-5 on an O(1) loss carry
/// roundoff near 1e-11 in f64; attention key biases, whose true gradient is
/// exactly zero, sit at that noise level.
const REL_FLOOR: f64 = 1e-6;

/// Scale of the random offsets added to freshly initialized parameters, so
/// the check runs away from the near-linear regime of a 0.02-std init.
const PERTURB_STD: f64 = 0.3;

/// Multiplies the analytic gradient of one parameter, to prove the checker
/// notices a broken backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFault {
    pub param: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Minimum number of coordinates per pipeline.
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    pub fault: Option<GradientFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-4,
            samples: 240,
            step: 1e-5,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateReport {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub architecture: Architecture,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst: CoordinateReport,
    /// Every coordinate above tolerance.
    pub failures: Vec<CoordinateReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub pipelines: Vec<PipelineReport>,
    pub passed: bool,
}

impl GradCheckReport {
    /// Parameter names with at least one failing coordinate.
    pub fn failing_params(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .pipelines
            .iter()
            .flat_map(|p| p.failures.iter().map(|c| c.param.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.pipelines {
            writeln!(
                f,
                "{:?}: {} coords, max rel error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}) {}",
                p.architecture,
                p.coords_checked,
                p.max_rel_error,
                p.worst.param,
                p.worst.index,
                p.worst.analytic,
                p.worst.numeric,
                if p.passed { "ok" } else { "FAILED" }
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, floor)`, and 0 when both are exactly 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == 0.0 && numeric == 0.0 {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn check_gradients(config: &EncoderConfig, tolerance: f64) -> Result<GradCheckReport, EncoderError> {
    check_gradients_with(
        config,
        &GradCheckOptions {
            tolerance,
            ..GradCheckOptions::default()
        },
    )
}

pub fn check_gradients_with(
    config: &EncoderConfig,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, EncoderError> {
    let pipelines = [Architecture::Single, Architecture::Dual]
        .into_iter()
        .map(|arch| check_pipeline(config, arch, options))
        .collect::<Result<Vec<_>, _>>()?;
    let passed = pipelines.iter().all(|p| p.passed);
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        pipelines,
        passed,
    })
}

fn perturbed_model(
    config: &EncoderConfig,
    architecture: Architecture,
    rng: &mut SplitMix64,
) -> Result<ClassifierModel<f64>, EncoderError> {
    let mut model = ClassifierModel {
        encoder: init_encoder::<f64>(config)?,
        head: Head::init(config.hidden, config.seed),
        architecture,
    };
    for (_, tensor) in model.named_mut() {
        for v in tensor.data.iter_mut() {
            *v += rng.truncated_normal(PERTURB_STD);
        }
    }
    Ok(model)
}

/// A padded encoding `[CLS] s0 [SEP] s1 [SEP] ...` built from random
/// non-special ids, with segment 1 after the first separator.
fn random_encoding(rng: &mut SplitMix64, config: &EncoderConfig, spans: &[usize]) -> Encoding {
    let mut ids = vec![CLS];
    let mut segments = vec![0u8];
    for (s, &n) in spans.iter().enumerate() {
        let seg = if s == 0 { 0 } else { 1 };
        for _ in 0..n {
            ids.push(1 + rng.below(config.vocab_size - 1) as u32);
            segments.push(seg);
        }
        ids.push(SEP);
        segments.push(seg);
    }
    ids.truncate(config.max_len);
    segments.truncate(config.max_len);
    let real = ids.len();
    let mut mask = vec![1u8; real];
    ids.resize(config.max_len, 0);
    segments.resize(config.max_len, 0);
    mask.resize(config.max_len, 0);
    Encoding { ids, segments, mask }
}

fn random_batch(
    config: &EncoderConfig,
    architecture: Architecture,
    rng: &mut SplitMix64,
) -> Vec<(ModelInput, Label)> {
    let room = config.max_len.saturating_sub(3).max(1);
    let short = (room / 2).max(1);
    let long = config.max_len.saturating_sub(2).max(1);
    let contextual = match architecture {
        Architecture::Single => vec![random_encoding(rng, config, &[short, room - short])],
        Architecture::Dual => vec![
            random_encoding(rng, config, &[long]),
            random_encoding(rng, config, &[short]),
        ],
    };
    vec![
        (ModelInput { encodings: contextual }, Label::Hof),
        (
            ModelInput {
                encodings: vec![random_encoding(rng, config, &[short])],
            },
            Label::Not,
        ),
        (
            ModelInput {
                encodings: vec![random_encoding(rng, config, &[long])],
            },
            Label::Hof,
        ),
    ]
}

fn check_pipeline(
    config: &EncoderConfig,
    architecture: Architecture,
    options: &GradCheckOptions,
) -> Result<PipelineReport, EncoderError> {
    let mut rng = SplitMix64::derived(options.seed, 0x6C4E ^ architecture as u64);
    let mut model = perturbed_model(config, architecture, &mut rng)?;
    let batch = random_batch(config, architecture, &mut rng);
    let refs: Vec<(&ModelInput, Label)> = batch.iter().map(|(i, l)| (i, *l)).collect();

    let mut grads = ModelGrads::zeros_for(&model);
    model.loss_and_grad(&refs, &mut grads)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named()
        .into_iter()
        .map(|(name, t)| {
            let scale = match &options.fault {
                Some(fault) if fault.param == name => fault.scale,
                _ => 1.0,
            };
            (name, t.data.iter().map(|g| g * scale).collect())
        })
        .collect();

    let tensors: Vec<(usize, usize)> = model
        .named()
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| model.is_trainable(name))
        .map(|(i, (_, t))| (i, t.len()))
        .collect();
    let coords = sample_coords(&tensors, options.samples, &mut rng);

    let mut reports = Vec::with_capacity(coords.len());
    for (slot, index) in coords {
        let original = model.named()[slot].1.data[index];
        let set = |model: &mut ClassifierModel<f64>, value: f64| {
            model.named_mut()[slot].1.data[index] = value;
        };
        set(&mut model, original + options.step);
        let plus = model.loss(&refs)?;
        set(&mut model, original - options.step);
        let minus = model.loss(&refs)?;
        set(&mut model, original);

        let numeric = (plus - minus) / (2.0 * options.step);
        let (name, values) = &analytic[slot];
        let a = values[index];
        reports.push(CoordinateReport {
            param: name.clone(),
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }

    let worst = reports
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned()
        .ok_or_else(|| EncoderError::Shape("no trainable coordinates".into()))?;
    let failures: Vec<CoordinateReport> = reports
        .iter()
        .filter(|c| c.rel_error.is_nan() || c.rel_error >= options.tolerance)
        .cloned()
        .collect();
    Ok(PipelineReport {
        architecture,
        coords_checked: reports.len(),
        max_rel_error: worst.rel_error,
        passed: failures.is_empty(),
        worst,
        failures,
    })
}

/// At least `samples` distinct `(tensor slot, index)` pairs, covering every
/// tensor at least once.
fn sample_coords(tensors: &[(usize, usize)], samples: usize, rng: &mut SplitMix64) -> Vec<(usize, usize)> {
    let available: usize = tensors.iter().map(|t| t.1).sum();
    let target = samples.min(available);
    let mut seen = HashSet::new();
    let mut coords = Vec::with_capacity(target);
    for &(slot, len) in tensors {
        let coord = (slot, rng.below(len));
        seen.insert(coord);
        coords.push(coord);
    }
    while coords.len() < target {
        let &(slot, len) = &tensors[rng.below(tensors.len())];
        let coord = (slot, rng.below(len));
        if seen.insert(coord) {
            coords.push(coord);
        }
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_zero_is_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-9) < 1e-8);
        assert!(relative_error(0.0, 1e-11) < 1e-4);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tiny_config_passes() {
        let report = check_gradients(&EncoderConfig::tiny(), 1e-4).unwrap();
        assert!(report.passed, "{report}");
        for p in &report.pipelines {
            assert!(p.coords_checked >= 200);
        }
    }

    #[test]
    fn corrupted_attention_gradient_is_named() {
        let options = GradCheckOptions {
            fault: Some(GradientFault {
                param: "layer.0.attn.q".into(),
                scale: 1.5,
            }),
            ..GradCheckOptions::default()
        };
        let report = check_gradients_with(&EncoderConfig::tiny(), &options).unwrap();
        assert!(!report.passed);
        assert_eq!(report.failing_params(), vec!["layer.0.attn.q".to_string()]);
    }

    #[test]
    fn albert_tiny_passes() {
        let config = EncoderConfig {
            num_layers: 2,
            embed_dim: 4,
            share_layers: true,
            ..EncoderConfig::tiny()
        };
        let report = check_gradients(&config, 1e-4).unwrap();
        assert!(report.passed, "{report}");
    }
}
