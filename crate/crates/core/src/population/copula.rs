use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::block::BlockAggregate;
use super::PopulationError;
use crate::normal;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const PIVOT_TOLERANCE: f64 = 1e-10;

/// Inverse CDF of one categorical marginal. Category `k` owns the interval
/// `[boundaries[k-1], boundaries[k])`, where boundaries are running sums of
/// the proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub feature: String,
    pub categories: Vec<String>,
    pub boundaries: Vec<f64>,
}

impl MarginalTable {
    pub fn from_proportions(
        feature: &str,
        categories: &[String],
        proportions: &[f64],
    ) -> MarginalTable {
        let boundaries = proportions
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        MarginalTable {
            feature: feature.to_string(),
            categories: categories.to_vec(),
            boundaries,
        }
    }

    /// `F⁻¹(u)`: index of the category whose cumulative interval contains `u`.
    pub fn category(&self, u: f64) -> usize {
        match self.boundaries.iter().position(|&b| u < b) {
            Some(k) => k,
            // u at (or rounding past) the top: last category with positive mass.
            None => self
                .boundaries
                .iter()
                .enumerate()
                .rev()
                .find(|(k, &b)| *k == 0 || b > self.boundaries[k - 1])
                .map_or(0, |(k, _)| k),
        }
    }

    pub fn label(&self, u: f64) -> &str {
        &self.categories[self.category(u)]
    }

    pub fn proportions(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.boundaries
            .iter()
            .map(|&b| {
                let p = b - prev;
                prev = b;
                p
            })
            .collect()
    }
}

/// Build one inverse-CDF table per feature of a validated block.
pub fn fit_marginals(aggregate: &BlockAggregate) -> Result<Vec<MarginalTable>, PopulationError> {
    aggregate
        .features
        .iter()
        .map(|f| {
            f.validate()?;
            Ok(MarginalTable::from_proportions(
                &f.name,
                &f.categories,
                &f.proportions,
            ))
        })
        .collect()
}

/// Symmetric unit-diagonal correlation matrix of the latent normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Correlation {
    rows: Vec<Vec<f64>>,
}

impl Correlation {
    pub fn identity(d: usize) -> Correlation {
        let rows = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Correlation { rows }
    }

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Correlation, PopulationError> {
        let d = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(PopulationError::DimensionMismatch {
                    what: format!("covariance row {i}"),
                    expected: d,
                    actual: row.len(),
                });
            }
            if (row[i] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(PopulationError::InvalidCovariance(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    row[i]
                )));
            }
            for j in 0..i {
                if (row[j] - rows[j][i]).abs() > SYMMETRY_TOLERANCE {
                    return Err(PopulationError::InvalidCovariance(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(Correlation { rows })
    }

    /// Two-feature matrix with off-diagonal `rho`.
    pub fn pair(rho: f64) -> Result<Correlation, PopulationError> {
        Correlation::new(vec![vec![1.0, rho], vec![rho, 1.0]])
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Lower-triangular `L` with `L Lᵀ = Σ`. Zero pivots (semidefinite
    /// directions) produce zero columns instead of failing.
    pub fn cholesky(&self) -> Result<Vec<Vec<f64>>, PopulationError> {
        let d = self.dim();
        let mut l = vec![vec![0.0; d]; d];
        for j in 0..d {
            let pivot = self.rows[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
            if pivot < -PIVOT_TOLERANCE {
                return Err(PopulationError::NotPsd { pivot, index: j });
            }
            if pivot <= PIVOT_TOLERANCE {
                for i in j + 1..d {
                    let residual =
                        self.rows[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                    if residual.abs() > 1e-8 {
                        return Err(PopulationError::NotPsd { pivot, index: j });
                    }
                }
                continue;
            }
            let diag = pivot.sqrt();
            l[j][j] = diag;
            for i in j + 1..d {
                let s = self.rows[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                l[i][j] = s / diag;
            }
        }
        Ok(l)
    }
}

impl TryFrom<Vec<Vec<f64>>> for Correlation {
    type Error = PopulationError;
    fn try_from(value: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Correlation::new(value)
    }
}

impl From<Correlation> for Vec<Vec<f64>> {
    fn from(value: Correlation) -> Self {
        value.rows
    }
}

/// Correlation plus per-feature marginals for one block.
#[derive(Debug, Clone)]
pub struct CopulaModel {
    pub correlation: Correlation,
    pub marginals: Vec<MarginalTable>,
}

impl CopulaModel {
    pub fn new(
        correlation: Correlation,
        marginals: Vec<MarginalTable>,
    ) -> Result<CopulaModel, PopulationError> {
        if correlation.dim() != marginals.len() {
            return Err(PopulationError::DimensionMismatch {
                what: "covariance vs. feature count".into(),
                expected: marginals.len(),
                actual: correlation.dim(),
            });
        }
        Ok(CopulaModel {
            correlation,
            marginals,
        })
    }

    /// Model for a block: fitted marginals and the block's covariance, or the
    /// identity when the block carries none.
    pub fn for_block(block: &BlockAggregate) -> Result<CopulaModel, PopulationError> {
        let marginals = fit_marginals(block)?;
        let correlation = match &block.covariance {
            Some(rows) => Correlation::new(rows.clone())?,
            None => Correlation::identity(marginals.len()),
        };
        CopulaModel::new(correlation, marginals)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }
}

/// Draw `n` latent vectors `Z ~ N(0, Σ)`.
pub fn sample_latent<R: Rng + ?Sized>(
    correlation: &Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PopulationError> {
    let l = correlation.cholesky()?;
    let d = correlation.dim();
    let mut out = Vec::with_capacity(n);
    let mut eps = vec![0.0; d];
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let z = (0..d)
            .map(|i| (0..=i).map(|k| l[i][k] * eps[k]).sum())
            .collect();
        out.push(z);
    }
    Ok(out)
}

/// Draw `n` copula uniforms `u = Φ(Z)`.
pub fn sample_uniforms<R: Rng + ?Sized>(
    correlation: &Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PopulationError> {
    Ok(sample_latent(correlation, n, rng)?
        .into_iter()
        .map(|z| z.into_iter().map(normal::cdf).collect())
        .collect())
}

/// Estimate a latent correlation matrix from seed microdata (rows of numeric
/// codes) via Spearman rank correlation mapped through `2 sin(π ρ_s / 6)`.
/// If the result is not positive semidefinite it is shrunk toward the
/// identity until it factors.
pub fn estimate_correlation(rows: &[Vec<f64>]) -> Result<Correlation, PopulationError> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.len() < 2 {
        return Err(PopulationError::InvalidCovariance(
            "at least two microdata rows are needed".into(),
        ));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(PopulationError::DimensionMismatch {
            what: format!("microdata row {bad}"),
            expected: d,
            actual: rows[bad].len(),
        });
    }
    let ranks: Vec<Vec<f64>> = (0..d)
        .map(|j| average_ranks(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let mut m = Correlation::identity(d).rows;
    for i in 0..d {
        for j in 0..i {
            let rho_s = pearson(&ranks[i], &ranks[j]);
            let rho = 2.0 * (std::f64::consts::PI * rho_s / 6.0).sin();
            m[i][j] = rho;
            m[j][i] = rho;
        }
    }
    let mut shrink = 1.0;
    loop {
        let rows = m
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| if i == j { 1.0 } else { v * shrink })
                    .collect()
            })
            .collect();
        let c = Correlation::new(rows)?;
        if c.cholesky().is_ok() {
            return Ok(c);
        }
        shrink *= 0.95;
    }
}

pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &k in &idx[start..=end] {
            ranks[k] = avg;
        }
        start = end + 1;
    }
    ranks
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
