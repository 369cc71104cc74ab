//! Per-state sample planning and drawing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::normal;
use crate::persona::{Persona, StateCode};
use crate::seed;

/// Smallest per-state sample: a worst-case 1.5% margin of error at 95% confidence.
pub const MIN_SAMPLE_SIZE: u64 = 4269;
/// The default ratio is `clamp(DEFAULT_RATIO_NUMERATOR / population, 1/2000, 1/100)`.
/// The numerator is floor(California 2020 population / 2000), so California
/// lands on 1/2000 and every state below ~1.98M (New Hampshire included)
/// lands on 1/100.
pub const DEFAULT_RATIO_NUMERATOR: u64 = 19_769;

pub fn min_ratio() -> Ratio<u64> {
    Ratio::new(1, 2000)
}

pub fn max_ratio() -> Ratio<u64> {
    Ratio::new(1, 100)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("sampling ratio {ratio} is outside [1/2000, 1/100]")]
    RatioOutOfBounds { ratio: Ratio<u64> },
    #[error("state {0} has zero population")]
    EmptyPopulation(StateCode),
    #[error("persona `{persona}` resides in {found:?}, expected {expected}")]
    StateMismatch {
        persona: String,
        expected: StateCode,
        found: Option<StateCode>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state profile for {state}: {reason}")]
    InvalidProfile { state: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCategory {
    Red,
    Blue,
    Swing,
    TippingPoint,
}

impl StateCategory {
    /// Swing and tipping-point states together form the battleground set.
    pub fn is_battleground(&self) -> bool {
        matches!(self, StateCategory::Swing | StateCategory::TippingPoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProfile {
    pub code: StateCode,
    pub population: u64,
    pub category: StateCategory,
    pub electoral_votes: u32,
}

impl StateProfile {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.electoral_votes < 3 {
            return Err(SamplingError::InvalidProfile {
                state: self.code.to_string(),
                reason: format!("{} electoral votes (< 3)", self.electoral_votes),
            });
        }
        Ok(())
    }
}

/// Profiles keyed by state code.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileMap(pub BTreeMap<StateCode, StateProfile>);

impl ProfileMap {
    pub fn load(path: &Path) -> Result<ProfileMap, SamplingError> {
        let io = |message: String| SamplingError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let list: Vec<StateProfile> = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        ProfileMap::from_list(list)
    }

    pub fn from_list(list: Vec<StateProfile>) -> Result<ProfileMap, SamplingError> {
        let mut map = BTreeMap::new();
        for p in list {
            p.validate()?;
            if map.insert(p.code, p.clone()).is_some() {
                return Err(SamplingError::InvalidProfile {
                    state: p.code.to_string(),
                    reason: "duplicate entry".into(),
                });
            }
        }
        Ok(ProfileMap(map))
    }

    pub fn get(&self, code: &StateCode) -> Option<&StateProfile> {
        self.0.get(code)
    }

    pub fn total_electoral_votes(&self) -> u32 {
        self.0.values().map(|p| p.electoral_votes).sum()
    }

    /// A complete apportionment covers all 51 units and sums to 538.
    pub fn check_complete(&self) -> Result<(), SamplingError> {
        if self.0.len() != 51 || self.total_electoral_votes() != 538 {
            return Err(SamplingError::InvalidProfile {
                state: "*".into(),
                reason: format!(
                    "{} units with {} electoral votes (expected 51 and 538)",
                    self.0.len(),
                    self.total_electoral_votes()
                ),
            });
        }
        Ok(())
    }

    pub fn battleground(&self) -> Vec<StateCode> {
        self.0
            .values()
            .filter(|p| p.category.is_battleground())
            .map(|p| p.code)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub state: StateCode,
    #[serde(with = "ratio_string")]
    pub ratio: Ratio<u64>,
    pub size: u64,
    pub seed: u64,
}

mod ratio_string {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_ratio(&text).map_err(serde::de::Error::custom)
    }
}

/// Parse `"1/2000"` or a decimal such as `"0.0005"`.
pub fn parse_ratio(text: &str) -> Result<Ratio<u64>, SamplingError> {
    let bad = || SamplingError::InvalidArgument(format!("cannot parse ratio `{text}`"));
    if let Some((n, d)) = text.split_once('/') {
        let (n, d): (u64, u64) = (
            n.trim().parse().map_err(|_| bad())?,
            d.trim().parse().map_err(|_| bad())?,
        );
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    let x: f64 = text.trim().parse().map_err(|_| bad())?;
    if !(x > 0.0 && x <= 1.0) {
        return Err(bad());
    }
    let denom = 1_000_000_000u64;
    Ok(Ratio::new((x * denom as f64).round() as u64, denom))
}

/// Plan the sample for one state.
///
/// `size = max(ceil(population × ratio), min(4269, population))`. Without a
/// requested ratio, `ratio = clamp(19769 / population, 1/2000, 1/100)`.
pub fn plan_sample(
    profile: &StateProfile,
    requested_ratio: Option<Ratio<u64>>,
    seed: u64,
) -> Result<SamplePlan, SamplingError> {
    if profile.population == 0 {
        return Err(SamplingError::EmptyPopulation(profile.code));
    }
    let ratio = match requested_ratio {
        Some(r) if r < min_ratio() || r > max_ratio() => {
            return Err(SamplingError::RatioOutOfBounds { ratio: r })
        }
        Some(r) => r,
        None => Ratio::new(DEFAULT_RATIO_NUMERATOR, profile.population)
            .clamp(min_ratio(), max_ratio()),
    };
    let proportional = (Ratio::from_integer(profile.population) * ratio).ceil().to_integer();
    let size = proportional.max(MIN_SAMPLE_SIZE.min(profile.population));
    Ok(SamplePlan {
        state: profile.code,
        ratio,
        size,
        seed: seed::derive_u64(seed, &["sample", profile.code.as_str()]),
    })
}

/// Worst-case (p = 0.5) margin of error: `z · sqrt(0.25 / n)`, with `z` the
/// two-sided normal quantile for `confidence`.
pub fn margin_of_error(n: u64, confidence: f64) -> Result<f64, SamplingError> {
    if n == 0 {
        return Err(SamplingError::InvalidArgument("n must be at least 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SamplingError::InvalidArgument(format!(
            "confidence {confidence} is not in (0, 1)"
        )));
    }
    let z = normal::quantile(1.0 - (1.0 - confidence) / 2.0);
    Ok(z * (0.25 / n as f64).sqrt())
}

/// Uniform sample without replacement of `min(plan.size, personas.len())`
/// personas, returned sorted by id.
pub fn draw_sample(personas: &[Persona], plan: &SamplePlan) -> Result<Vec<Persona>, SamplingError> {
    if let Some(p) = personas.iter().find(|p| p.residence != Some(plan.state)) {
        return Err(SamplingError::StateMismatch {
            persona: p.id.clone(),
            expected: plan.state,
            found: p.residence,
        });
    }
    let k = usize::try_from(plan.size).unwrap_or(usize::MAX).min(personas.len());
    let mut rng = seed::stream(plan.seed, &["draw"]);
    let mut out: Vec<Persona> = index::sample(&mut rng, personas.len(), k)
        .into_iter()
        .map(|i| personas[i].clone())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(code: &str, population: u64) -> StateProfile {
        StateProfile {
            code: code.parse().unwrap(),
            population,
            category: StateCategory::Swing,
            electoral_votes: 10,
        }
    }

    #[test]
    fn california_at_one_in_two_thousand() {
        let plan = plan_sample(&profile("CA", 39_538_223), Some(Ratio::new(1, 2000)), 1).unwrap();
        assert_eq!(plan.size, 19_770);
    }

    #[test]
    fn minimum_size_floor() {
        let plan = plan_sample(&profile("NH", 400_000), Some(Ratio::new(1, 100)), 1).unwrap();
        assert_eq!(plan.size, 4_269);
    }

    #[test]
    fn floor_is_capped_by_population() {
        for r in [Ratio::new(1, 2000), Ratio::new(1, 100)] {
            assert_eq!(plan_sample(&profile("VT", 1_000), Some(r), 1).unwrap().size, 1_000);
        }
    }

    #[test]
    fn ratio_bounds_enforced() {
        for r in [Ratio::new(1, 50), Ratio::new(1, 3000)] {
            assert!(matches!(
                plan_sample(&profile("WI", 5_000_000), Some(r), 1),
                Err(SamplingError::RatioOutOfBounds { .. })
            ));
        }
    }

    #[test]
    fn default_ratio_hits_both_ends() {
        let big = plan_sample(&profile("CA", 39_538_223), None, 1).unwrap();
        assert_eq!(big.ratio, Ratio::new(1, 2000));
        let small = plan_sample(&profile("NH", 1_377_529), None, 1).unwrap();
        assert_eq!(small.ratio, max_ratio());
        assert_eq!(small.size, 13_776);
        let mid = plan_sample(&profile("PA", 13_002_700), None, 1).unwrap();
        assert!(mid.ratio < max_ratio() && mid.ratio > min_ratio());
        assert_eq!(mid.size, DEFAULT_RATIO_NUMERATOR);
        let tiny = plan_sample(&profile("WY", 30_000), None, 1).unwrap();
        assert_eq!(tiny.ratio, max_ratio());
    }

    #[test]
    fn moe_values() {
        let m = margin_of_error(4269, 0.95).unwrap();
        assert!((m - 0.0150).abs() < 1e-4, "{m}");
        let half = margin_of_error(4 * 4269, 0.95).unwrap();
        assert!((half * 2.0 - m).abs() < 1e-15);
        assert!((margin_of_error(1, 0.95).unwrap() - 0.980).abs() < 1e-3);
        assert!(margin_of_error(0, 0.95).is_err());
        assert!(margin_of_error(10, 1.0).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("1/2000").unwrap(), Ratio::new(1, 2000));
        assert_eq!(parse_ratio("0.01").unwrap(), Ratio::new(1, 100));
        assert!(parse_ratio("x").is_err());
        let plan = plan_sample(&profile("WI", 5_893_718), None, 3).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: SamplePlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    fn personas(state: &str, n: usize) -> Vec<Persona> {
        (0..n)
            .map(|i| {
                let mut p = Persona::new(format!("p{i:05}"));
                p.residence = Some(state.parse().unwrap());
                p
            })
            .collect()
    }

    #[test]
    fn full_draw_returns_everyone_sorted() {
        let mut ps = personas("WI", 20);
        ps.reverse();
        let plan = SamplePlan {
            state: "WI".parse().unwrap(),
            ratio: max_ratio(),
            size: 20,
            seed: 4,
        };
        let out = draw_sample(&ps, &plan).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn draw_is_deterministic_and_unique() {
        let ps = personas("WI", 10_000);
        let plan = SamplePlan {
            state: "WI".parse().unwrap(),
            ratio: max_ratio(),
            size: 100,
            seed: 99,
        };
        let a = draw_sample(&ps, &plan).unwrap();
        let b = draw_sample(&ps, &plan).unwrap();
        assert_eq!(a, b);
        let ids: std::collections::BTreeSet<_> = a.iter().map(|p| &p.id).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn state_mismatch_is_rejected() {
        let mut ps = personas("WI", 3);
        ps[1].residence = Some("MI".parse().unwrap());
        let plan = SamplePlan {
            state: "WI".parse().unwrap(),
            ratio: max_ratio(),
            size: 2,
            seed: 1,
        };
        assert!(matches!(
            draw_sample(&ps, &plan),
            Err(SamplingError::StateMismatch { .. })
        ));
    }
}
