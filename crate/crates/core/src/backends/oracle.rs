//! Deterministic logistic stand-in for a language model.
//!
//! The vote stage treats `s = σ(w·x + b)` as P(Republican | major-party vote),
//! abstains with probability `nopref_rate`, and draws from a stream keyed by
//! the persona id. The ideology stage maps `s` onto the seven substantive
//! placements with equal-width bands; "No answer" is emitted only with
//! `no_answer_rate > 0`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendRequest, DecisionBackend, Stage};
use crate::persona::Ideology;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
    pub nopref_rate: f64,
    pub no_answer_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            weights: BTreeMap::new(),
            bias: 0.0,
            nopref_rate: 0.0,
            no_answer_rate: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, rate) in [("nopref_rate", self.nopref_rate), ("no_answer_rate", self.no_answer_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(format!("{name} = {rate} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// `σ(w·x + b)`; keys without a weight contribute nothing.
    pub fn score(&self, features: &[(String, f64)]) -> f64 {
        let z = self.bias
            + features
                .iter()
                .map(|(k, x)| self.weights.get(k).copied().unwrap_or(0.0) * x)
                .sum::<f64>();
        sigmoid(z)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Band index of `s` among the seven substantive placements.
pub fn ideology_for_score(s: f64) -> Ideology {
    let k = ((s * 7.0).floor() as usize).min(6);
    Ideology::SPECTRUM[k]
}

/// Emit the option text the oracle "answers" for one persona.
pub fn oracle_decide(
    features: &[(String, f64)],
    stage: Stage,
    persona_id: &str,
    config: &OracleConfig,
) -> String {
    let s = config.score(features);
    let stage_label = match stage {
        Stage::Vote => "vote",
        Stage::Ideology => "ideology",
        Stage::Summary => "summary",
    };
    let mut rng = seed::stream(config.seed, &["oracle", stage_label, persona_id]);
    match stage {
        Stage::Ideology => {
            if config.no_answer_rate > 0.0 && rng.random::<f64>() < config.no_answer_rate {
                Ideology::NoAnswer.label().to_string()
            } else {
                ideology_for_score(s).label().to_string()
            }
        }
        _ => {
            let abstain = rng.random::<f64>() < config.nopref_rate;
            let republican = rng.random::<f64>() < s;
            if abstain {
                "No Preference".to_string()
            } else if republican {
                "Republican".to_string()
            } else {
                "Democratic".to_string()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    pub config: OracleConfig,
}

impl OracleBackend {
    pub fn new(config: OracleConfig) -> Result<OracleBackend, BackendError> {
        config.validate().map_err(BackendError::Config)?;
        Ok(OracleBackend { config })
    }
}

impl DecisionBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn max_parallel(&self) -> usize {
        usize::MAX
    }

    fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
        if request.stage == Stage::Summary {
            return Err(BackendError::Unavailable(
                "the oracle backend does not summarize text".into(),
            ));
        }
        let persona = request.draw_key.as_deref().unwrap_or("");
        Ok(oracle_decide(&request.features, request.stage, persona, &self.config))
    }
}
