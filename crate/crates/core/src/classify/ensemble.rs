use serde::{Deserialize, Serialize};

use super::{softmax2, ClassifyError, Prediction, Predictor, Source};
use crate::corpus::Sample;

/// How member outputs are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Arithmetic mean of probabilities.
    #[default]
    Probabilities,
    /// Softmax of the mean log-probability, i.e. mean logits up to a
    /// per-member constant.
    Logits,
}

/// Fuses member probability pairs.
pub fn fuse(members: &[[f64; 2]], fusion: Fusion) -> [f64; 2] {
    let n = members.len() as f64;
    match fusion {
        Fusion::Probabilities => {
            let sum = members
                .iter()
                .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
            [sum[0] / n, sum[1] / n]
        }
        Fusion::Logits => {
            let sum = members.iter().fold([0.0, 0.0], |acc, p| {
                [acc[0] + p[0].max(f64::MIN_POSITIVE).ln(), acc[1] + p[1].max(f64::MIN_POSITIVE).ln()]
            });
            softmax2([sum[0] / n, sum[1] / n])
        }
    }
}

pub fn ensemble_predict<P: Predictor>(predictors: &[P], sample: &Sample) -> Result<Prediction, ClassifyError> {
    ensemble_predict_with(predictors, sample, Fusion::Probabilities)
}

pub fn ensemble_predict_with<P: Predictor>(
    predictors: &[P],
    sample: &Sample,
    fusion: Fusion,
) -> Result<Prediction, ClassifyError> {
    if predictors.is_empty() {
        return Err(ClassifyError::EmptyEnsemble);
    }
    let probs = predictors
        .iter()
        .map(|p| p.predict(sample).map(|pred| pred.probs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prediction::from_probs(fuse(&probs, fusion), Source::Ensemble))
}

/// Owned list of member predictors.
pub struct Ensemble {
    pub members: Vec<Box<dyn Predictor>>,
    pub fusion: Fusion,
}

impl Ensemble {
    pub fn new(members: Vec<Box<dyn Predictor>>, fusion: Fusion) -> Result<Self, ClassifyError> {
        if members.is_empty() {
            return Err(ClassifyError::EmptyEnsemble);
        }
        Ok(Ensemble { members, fusion })
    }

    /// Two dual-encoder models built on different encoders.
    pub fn ensemble2(dual_a: Box<dyn Predictor>, dual_b: Box<dyn Predictor>) -> Self {
        Ensemble {
            members: vec![dual_a, dual_b],
            fusion: Fusion::Probabilities,
        }
    }

    /// Single- and dual-encoder models for each of two encoders.
    pub fn ensemble4(
        single_a: Box<dyn Predictor>,
        dual_a: Box<dyn Predictor>,
        single_b: Box<dyn Predictor>,
        dual_b: Box<dyn Predictor>,
    ) -> Self {
        Ensemble {
            members: vec![single_a, dual_a, single_b, dual_b],
            fusion: Fusion::Probabilities,
        }
    }
}

impl Predictor for Ensemble {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        ensemble_predict_with(&self.members, sample, self.fusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use proptest::prelude::*;

    struct Fixed([f64; 2]);

    impl Predictor for Fixed {
        fn predict(&self, _: &Sample) -> Result<Prediction, ClassifyError> {
            Ok(Prediction::from_probs(self.0, Source::Model))
        }
    }

    fn sample() -> Sample {
        Sample::new("s", "kuch bhi", None, Label::Not)
    }

    #[test]
    fn mean_of_two_members() {
        let p = ensemble_predict(&[Fixed([0.6, 0.4]), Fixed([0.2, 0.8])], &sample()).unwrap();
        assert!((p.probs[0] - 0.4).abs() < 1e-12 && (p.probs[1] - 0.6).abs() < 1e-12);
        assert_eq!(p.label, Label::Hof);
        assert_eq!(p.source, Source::Ensemble);
    }

    #[test]
    fn empty_is_an_error() {
        let none: [Fixed; 0] = [];
        assert!(matches!(ensemble_predict(&none, &sample()), Err(ClassifyError::EmptyEnsemble)));
        assert!(Ensemble::new(vec![], Fusion::Probabilities).is_err());
    }

    #[test]
    fn logit_fusion_matches_mean_logits() {
        let a = softmax2([0.3, -1.2]);
        let b = softmax2([2.0, 0.5]);
        let fused = fuse(&[a, b], Fusion::Logits);
        let expected = softmax2([(0.3 + 2.0) / 2.0, (-1.2 + 0.5) / 2.0]);
        assert!((fused[0] - expected[0]).abs() < 1e-12);
    }

    #[test]
    fn preset_order() {
        let e = Ensemble::ensemble4(
            Box::new(Fixed([1.0, 0.0])),
            Box::new(Fixed([0.0, 1.0])),
            Box::new(Fixed([1.0, 0.0])),
            Box::new(Fixed([0.0, 1.0])),
        );
        assert_eq!(e.members.len(), 4);
        assert_eq!(e.predict(&sample()).unwrap().label, Label::Hof);
    }

    proptest! {
        #[test]
        fn identical_members_are_idempotent(p in 0.0f64..=1.0, k in 1usize..6) {
            let members: Vec<Fixed> = (0..k).map(|_| Fixed([1.0 - p, p])).collect();
            let single = Fixed([1.0 - p, p]).predict(&sample()).unwrap();
            let ens = ensemble_predict(&members, &sample()).unwrap();
            prop_assert!((ens.probs[0] - single.probs[0]).abs() < 1e-12);
            prop_assert!((ens.probs[1] - single.probs[1]).abs() < 1e-12);
            prop_assert_eq!(ens.label, single.label);
        }

        #[test]
        fn label_invariant_under_uniform_rescaling(
            ps in proptest::collection::vec(0.0f64..=1.0, 1..6),
            c in 0.01f64..100.0,
        ) {
            let members: Vec<[f64; 2]> = ps.iter().map(|&p| [1.0 - p, p]).collect();
            let scaled: Vec<[f64; 2]> = members.iter().map(|m| [m[0] * c, m[1] * c]).collect();
            let a = fuse(&members, Fusion::Probabilities);
            let b = fuse(&scaled, Fusion::Probabilities);
            let strict = |x: [f64; 2]| (x[0] - x[1]).abs() > 1e-6;
            if strict(a) {
                prop_assert_eq!(a[1] > a[0], b[1] > b[0]);
            }
        }
    }
}
