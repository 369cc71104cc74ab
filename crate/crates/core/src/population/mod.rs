//! Synthetic persona populations from block-level aggregates.
//!
//! Each block is modelled with a Gaussian copula: latent `Z ~ N(0, Σ)` is
//! mapped through the standard normal CDF to uniforms and then through each
//! feature's categorical inverse CDF. The raw draw is then rebalanced so its
//! category proportions match the block's targets, and finally materialized
//! into [`Persona`] records.

mod block;
mod copula;
mod scaling;

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use block::{load_blocks, AgeBracket, BlockAggregate, FeatureTarget};
pub use copula::{
    estimate_correlation, fit_marginals, sample_latent, sample_uniforms, CopulaModel, Correlation,
    MarginalTable,
};
pub use scaling::{integer_targets, scale_marginals, CategoricalSample, ScalingOptions, ScalingReport};

use crate::persona::{Persona, PersonaOrigin, StateCode, PERSONA_CSV_HEADER};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PopulationError {
    #[error("feature `{feature}` has no categories")]
    EmptyTargets { feature: String },
    #[error("proportions of `{feature}` sum to {sum}, not 1")]
    DegenerateProportions { feature: String, sum: f64 },
    #[error("proportion {value} of `{feature}` is outside [0, 1]")]
    InvalidProportion { feature: String, value: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("covariance is not positive semidefinite (pivot {pivot} at index {index})")]
    NotPsd { pivot: f64, index: usize },
    #[error("a seed is required; sampling is always deterministic")]
    SeedRequired,
    #[error("marginal scaling stopped after {iterations} iterations with gap {gap}")]
    IterationLimit { gap: f64, iterations: usize },
    #[error("incompatible targets: {0}")]
    IncompatibleTargets(String),
    #[error("block `{block_id}` has no state and its id has no state prefix")]
    UnknownState { block_id: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: invalid block JSON: {message}")]
    Json { path: String, message: String },
    #[error("block `{block_id}`: {source}")]
    InBlock {
        block_id: String,
        #[source]
        source: Box<PopulationError>,
    },
}

impl PopulationError {
    pub fn in_block(self, block_id: &str) -> PopulationError {
        PopulationError::InBlock {
            block_id: block_id.to_string(),
            source: Box::new(self),
        }
    }
}

/// Synthesis knobs shared by every block of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub age_floor: u32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            tol: 0.005,
            max_iter: 20,
            age_floor: 18,
        }
    }
}

impl SynthesisConfig {
    pub fn scaling(&self) -> ScalingOptions {
        ScalingOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Draw `n` raw individuals from the copula. A seed is mandatory.
pub fn sample_copula(
    model: &CopulaModel,
    n: usize,
    seed: Option<u64>,
) -> Result<CategoricalSample, PopulationError> {
    let seed = seed.ok_or(PopulationError::SeedRequired)?;
    let mut rng = seed::stream(seed, &["copula"]);
    sample_copula_with(model, n, &mut rng)
}

pub fn sample_copula_with<R: Rng + ?Sized>(
    model: &CopulaModel,
    n: usize,
    rng: &mut R,
) -> Result<CategoricalSample, PopulationError> {
    let uniforms = sample_uniforms(&model.correlation, n, rng)?;
    let rows = uniforms
        .into_iter()
        .map(|u| {
            u.iter()
                .zip(&model.marginals)
                .map(|(&ui, table)| table.category(ui))
                .collect()
        })
        .collect();
    Ok(CategoricalSample {
        features: model.marginals.iter().map(|m| m.feature.clone()).collect(),
        cardinality: model.marginals.iter().map(|m| m.categories.len()).collect(),
        rows,
    })
}

/// Outcome of synthesizing one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block_id: String,
    pub state: StateCode,
    pub count: usize,
    pub iterations: usize,
    pub gap: f64,
}

/// Synthesize one block: copula draw, marginal scaling, materialization.
/// The random stream is derived from `(seed, block_id)` only.
pub fn synthesize_block(
    block: &BlockAggregate,
    config: &SynthesisConfig,
    seed: u64,
) -> Result<(Vec<Persona>, BlockSummary), PopulationError> {
    let wrap = |e: PopulationError| e.in_block(&block.block_id);
    let state = block.state().map_err(wrap)?;
    block.validate().map_err(wrap)?;
    let adult = block.voting_age(config.age_floor).map_err(wrap)?;
    let n = usize::try_from(adult.population).expect("population fits in memory");
    let mut rng = seed::stream(seed, &["block", &block.block_id]);
    if n == 0 {
        let summary = BlockSummary {
            block_id: block.block_id.clone(),
            state,
            count: 0,
            iterations: 0,
            gap: 0.0,
        };
        return Ok((Vec::new(), summary));
    }
    let model = CopulaModel::for_block(&adult).map_err(wrap)?;
    let raw = sample_copula_with(&model, n, &mut rng).map_err(wrap)?;
    let targets: Vec<Vec<f64>> = adult.features.iter().map(|f| f.proportions.clone()).collect();
    let (scaled, report) =
        scale_marginals(raw, &targets, config.scaling(), &mut rng).map_err(wrap)?;
    let personas = materialize(&scaled, &model, &adult, state, config, &mut rng);
    let summary = BlockSummary {
        block_id: block.block_id.clone(),
        state,
        count: personas.len(),
        iterations: report.iterations,
        gap: report.gap,
    };
    Ok((personas, summary))
}

/// Synthesize every block and concatenate in input order. Blocks run in
/// parallel; each owns its random stream, so the output does not depend on
/// the thread count.
pub fn synthesize_state(
    blocks: &[BlockAggregate],
    config: &SynthesisConfig,
    seed: u64,
) -> Result<(Vec<Persona>, Vec<BlockSummary>), PopulationError> {
    let per_block: Vec<_> = blocks
        .par_iter()
        .map(|b| synthesize_block(b, config, seed))
        .collect::<Result<_, _>>()?;
    let mut personas = Vec::new();
    let mut summaries = Vec::new();
    for (p, s) in per_block {
        personas.extend(p);
        summaries.push(s);
    }
    Ok((personas, summaries))
}

fn materialize(
    sample: &CategoricalSample,
    model: &CopulaModel,
    block: &BlockAggregate,
    state: StateCode,
    config: &SynthesisConfig,
    rng: &mut ChaCha20Rng,
) -> Vec<Persona> {
    let width = sample.len().to_string().len().max(5);
    sample
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut p = Persona::new(format!("{}-{:0width$}", block.block_id, i + 1));
            p.origin = PersonaOrigin::Synthetic;
            p.block_id = Some(block.block_id.clone());
            p.residence = Some(state);
            for (d, &k) in row.iter().enumerate() {
                let label = model.marginals[d].categories[k].clone();
                assign_feature(&mut p, &sample.features[d], label, config.age_floor, rng);
            }
            p
        })
        .collect()
}

fn assign_feature(p: &mut Persona, feature: &str, label: String, floor: u32, rng: &mut ChaCha20Rng) {
    match feature {
        "age" => {
            p.age = AgeBracket::parse(&label).map(|b| {
                let lo = b.min.max(floor);
                let hi = b.max.max(lo);
                rng.random_range(lo..=hi)
            })
        }
        "gender" => p.gender = Some(label),
        "ethnicity" => p.ethnicity = Some(label),
        "marital_status" => p.marital_status = Some(label),
        "household_size" => {
            let digits: String = label.chars().take_while(char::is_ascii_digit).collect();
            p.household_size = digits.parse().ok().map(|h: u32| h.max(1));
        }
        "has_children" => {
            p.has_children = match label.to_ascii_lowercase().as_str() {
                "yes" | "true" | "with children" | "1" => Some(true),
                "no" | "false" | "no children" | "0" => Some(false),
                _ => None,
            }
        }
        "education" => p.education = Some(label),
        "occupation" => p.occupation = Some(label),
        "income_individual" => p.income_individual = Some(label),
        "income_family" => p.income_family = Some(label),
        other => {
            p.attributes.insert(other.replace('_', " "), label);
        }
    }
}

/// Write personas as CSV with the fixed header. `preamble` lines are emitted
/// first as `# ` comments.
pub fn write_personas_csv<W: Write>(
    out: W,
    personas: &[Persona],
    preamble: &[String],
) -> std::io::Result<()> {
    let mut out = out;
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PERSONA_CSV_HEADER)?;
    for p in personas {
        w.write_record(p.csv_row())?;
    }
    w.flush()
}

/// Write personas as JSON Lines, one object per persona.
pub fn write_personas_jsonl<W: Write>(mut out: W, personas: &[Persona]) -> std::io::Result<()> {
    for p in personas {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
