use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NioError;
use crate::catalog::{ModelImage, ScoreDimension, ScoreVector};

/// Relative tolerance under which two weighted scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Weights over score dimensions used to arbitrate between candidate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationPolicy {
    pub weights: BTreeMap<ScoreDimension, f64>,
    #[serde(default)]
    pub preference_note: String,
}

impl Default for ArbitrationPolicy {
    fn default() -> Self {
        ArbitrationPolicy {
            weights: BTreeMap::from([(ScoreDimension::LearningScore, 1.0)]),
            preference_note: "learning score only".into(),
        }
    }
}

impl ArbitrationPolicy {
    pub fn new(weights: BTreeMap<ScoreDimension, f64>, note: &str) -> Result<Self, NioError> {
        let p = ArbitrationPolicy { weights, preference_note: note.into() };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), NioError> {
        if self.weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(NioError::InvalidPolicy("weights must be finite and nonnegative".into()));
        }
        if !self.weights.values().any(|w| *w > 0.0) {
            return Err(NioError::InvalidPolicy("at least one weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        ArbitrationPolicy {
            weights: self.weights.iter().map(|(d, w)| (*d, w * c)).collect(),
            preference_note: self.preference_note.clone(),
        }
    }

    /// Weighted sum with cost dimensions negated; missing dimensions count as 0.
    pub fn weighted(&self, scores: &ScoreVector) -> f64 {
        ScoreDimension::ALL
            .iter()
            .map(|d| {
                let w = self.weights.get(d).copied().unwrap_or(0.0);
                let s = scores.get(d).copied().unwrap_or(0.0);
                w * if d.is_cost() { -s } else { s }
            })
            .sum()
    }
}

/// Best candidate under the policy. Scores within [`TIE_TOLERANCE`] of the
/// maximum are tied; ties go to the newest version, then the smallest id.
pub fn select_model(
    candidates: &[ModelImage],
    scores: &BTreeMap<String, ScoreVector>,
    policy: &ArbitrationPolicy,
) -> Result<String, NioError> {
    if candidates.is_empty() {
        return Err(NioError::EmptyCandidates);
    }
    let mut weighted = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = scores.get(&c.model_id).ok_or_else(|| NioError::MissingScore(c.model_id.clone()))?;
        weighted.push((c, policy.weighted(v)));
    }
    let best = weighted.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    weighted
        .into_iter()
        .filter(|(_, s)| (best - s) <= TIE_TOLERANCE * best.abs())
        .map(|(c, _)| c)
        .min_by(|a, b| b.version.cmp(&a.version).then_with(|| a.model_id.cmp(&b.model_id)))
        .map(|c| c.model_id.clone())
        .ok_or(NioError::EmptyCandidates)
}

/// Score vectors taken from the images themselves.
pub fn image_scores(candidates: &[ModelImage]) -> BTreeMap<String, ScoreVector> {
    candidates.iter().map(|c| (c.model_id.clone(), c.score_vector())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{LearningMetric, Platform};
    use semver::Version;

    fn image(id: &str, version: &str) -> ModelImage {
        ModelImage {
            model_id: id.into(),
            nif_name: "NIF".into(),
            version: Version::parse(version).unwrap(),
            metric: LearningMetric::Accuracy,
            test_score: 0.0,
            platform: Platform::Cpu,
            input_format: "f".into(),
            dependencies: vec![],
            aux_scores: BTreeMap::new(),
            created_at: 0,
            blob_ref: String::new(),
        }
    }

    fn vector(learning: f64, energy: f64) -> ScoreVector {
        BTreeMap::from([(ScoreDimension::LearningScore, learning), (ScoreDimension::Energy, energy)])
    }

    #[test]
    fn single_dimension_argmax() {
        let c = [image("A", "1.0.0"), image("B", "1.0.0")];
        let s = BTreeMap::from([("A".to_string(), vector(0.9, 0.0)), ("B".to_string(), vector(0.8, 0.0))]);
        assert_eq!(select_model(&c, &s, &ArbitrationPolicy::default()).unwrap(), "A");
    }

    #[test]
    fn energy_weight_flips_choice() {
        let c = [image("A", "1.0.0"), image("B", "1.0.0")];
        let s = BTreeMap::from([("A".to_string(), vector(0.9, 0.5)), ("B".to_string(), vector(0.8, 0.1))]);
        let p = ArbitrationPolicy::new(
            BTreeMap::from([(ScoreDimension::LearningScore, 1.0), (ScoreDimension::Energy, 2.0)]),
            "",
        )
        .unwrap();
        assert_eq!(select_model(&c, &s, &p).unwrap(), "B");
    }

    #[test]
    fn ties_prefer_newer_version() {
        let c = [image("B", "1.1.0"), image("A", "1.2.0")];
        let s = BTreeMap::from([("A".to_string(), vector(0.9, 0.0)), ("B".to_string(), vector(0.9, 0.0))]);
        assert_eq!(select_model(&c, &s, &ArbitrationPolicy::default()).unwrap(), "A");
        assert!(matches!(select_model(&[], &s, &ArbitrationPolicy::default()), Err(NioError::EmptyCandidates)));
    }

    #[test]
    fn all_zero_weights_rejected() {
        assert!(ArbitrationPolicy::new(BTreeMap::from([(ScoreDimension::Qos, 0.0)]), "").is_err());
    }
}
