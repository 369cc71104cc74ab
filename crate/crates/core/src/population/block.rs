use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PopulationError;
use crate::persona::StateCode;

const SUM_TOLERANCE: f64 = 1e-9;

/// Target proportions for one categorical feature of a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTarget {
    pub name: String,
    pub categories: Vec<String>,
    pub proportions: Vec<f64>,
}

impl FeatureTarget {
    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.categories.is_empty() || self.proportions.is_empty() {
            return Err(PopulationError::EmptyTargets {
                feature: self.name.clone(),
            });
        }
        if self.categories.len() != self.proportions.len() {
            return Err(PopulationError::DimensionMismatch {
                what: format!("categories/proportions of `{}`", self.name),
                expected: self.categories.len(),
                actual: self.proportions.len(),
            });
        }
        if let Some(&p) = self
            .proportions
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p) || p.is_nan())
        {
            return Err(PopulationError::InvalidProportion {
                feature: self.name.clone(),
                value: p,
            });
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(PopulationError::DegenerateProportions {
                feature: self.name.clone(),
                sum,
            });
        }
        Ok(())
    }
}

/// Aggregate statistics for one census block: population count, per-feature
/// category proportions and (optionally) the latent correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAggregate {
    pub block_id: String,
    /// Explicit state; when absent, taken from a two-letter `block_id` prefix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateCode>,
    pub population: u64,
    pub features: Vec<FeatureTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl BlockAggregate {
    pub fn validate(&self) -> Result<(), PopulationError> {
        for f in &self.features {
            f.validate()?;
        }
        Ok(())
    }

    pub fn state(&self) -> Result<StateCode, PopulationError> {
        if let Some(s) = self.state {
            return Ok(s);
        }
        self.block_id
            .get(..2)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| PopulationError::UnknownState {
                block_id: self.block_id.clone(),
            })
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureTarget> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Drop age categories that lie entirely below `floor` and renormalize.
    /// Categories that straddle the floor are kept; their ages are clamped when
    /// personas are materialized.
    pub fn voting_age(&self, floor: u32) -> Result<BlockAggregate, PopulationError> {
        let mut out = self.clone();
        let Some(age) = out.features.iter_mut().find(|f| f.name == "age") else {
            return Ok(out);
        };
        let keep: Vec<bool> = age
            .categories
            .iter()
            .map(|c| AgeBracket::parse(c).is_none_or(|b| b.max >= floor))
            .collect();
        if keep.iter().all(|k| *k) {
            return Ok(out);
        }
        let mass: f64 = age
            .proportions
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| *p)
            .sum();
        if mass <= 0.0 {
            return Err(PopulationError::EmptyTargets {
                feature: format!("age (no mass at or above {floor})"),
            });
        }
        let (cats, props): (Vec<_>, Vec<_>) = age
            .categories
            .iter()
            .zip(&age.proportions)
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|((c, p), _)| (c.clone(), p / mass))
            .unzip();
        age.categories = cats;
        age.proportions = props;
        Ok(out)
    }
}

/// Inclusive age range parsed from labels like `35-44`, `85+` or `52`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeBracket {
    pub min: u32,
    pub max: u32,
}

impl AgeBracket {
    /// Width assumed for open-ended brackets such as `85+`.
    pub const OPEN_WIDTH: u32 = 9;

    pub fn parse(label: &str) -> Option<AgeBracket> {
        let label = label.trim();
        if let Some(lo) = label.strip_suffix('+') {
            let min = lo.trim().parse().ok()?;
            return Some(AgeBracket {
                min,
                max: min + Self::OPEN_WIDTH,
            });
        }
        if let Some((lo, hi)) = label.split_once(['-', '–']) {
            let (min, max) = (lo.trim().parse().ok()?, hi.trim().parse().ok()?);
            return (min <= max).then_some(AgeBracket { min, max });
        }
        let v = label.parse().ok()?;
        Some(AgeBracket { min: v, max: v })
    }
}

/// Load block aggregates from a JSON file holding one block or an array of
/// blocks, or from a directory of such files (read in file-name order).
pub fn load_blocks(path: &Path) -> Result<Vec<BlockAggregate>, PopulationError> {
    let io_err = |e: std::io::Error| PopulationError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_blocks(&f)?);
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(io_err)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PopulationError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let parse = |v: serde_json::Value| {
        serde_json::from_value::<BlockAggregate>(v).map_err(|e| PopulationError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    };
    let blocks = match value {
        serde_json::Value::Array(items) => items.into_iter().map(parse).collect(),
        other => parse(other).map(|b| vec![b]),
    }?;
    for b in &blocks {
        b.validate().map_err(|e| e.in_block(&b.block_id))?;
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(p: &[f64]) -> FeatureTarget {
        FeatureTarget {
            name: "x".into(),
            categories: (0..p.len()).map(|i| format!("c{i}")).collect(),
            proportions: p.to_vec(),
        }
    }

    #[test]
    fn proportions_must_sum_to_one() {
        assert!(target(&[0.6, 0.4]).validate().is_ok());
        assert!(matches!(
            target(&[0.6, 0.3]).validate(),
            Err(PopulationError::DegenerateProportions { .. })
        ));
        assert!(matches!(
            target(&[]).validate(),
            Err(PopulationError::EmptyTargets { .. })
        ));
        assert!(matches!(
            target(&[1.2, -0.2]).validate(),
            Err(PopulationError::InvalidProportion { .. })
        ));
    }

    #[test]
    fn age_brackets() {
        assert_eq!(AgeBracket::parse("35-44"), Some(AgeBracket { min: 35, max: 44 }));
        assert_eq!(AgeBracket::parse("85+"), Some(AgeBracket { min: 85, max: 94 }));
        assert_eq!(AgeBracket::parse("52"), Some(AgeBracket { min: 52, max: 52 }));
        assert_eq!(AgeBracket::parse("old"), None);
    }

    #[test]
    fn voting_age_drops_minor_brackets() {
        let block = BlockAggregate {
            block_id: "WI-1".into(),
            state: None,
            population: 10,
            features: vec![FeatureTarget {
                name: "age".into(),
                categories: vec!["0-17".into(), "18-44".into(), "45+".into()],
                proportions: vec![0.2, 0.4, 0.4],
            }],
            covariance: None,
        };
        let adult = block.voting_age(18).unwrap();
        let age = adult.feature("age").unwrap();
        assert_eq!(age.categories, vec!["18-44", "45+"]);
        assert_eq!(age.proportions, vec![0.5, 0.5]);
        assert_eq!(block.state().unwrap().as_str(), "WI");
    }
}
