use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PopulationError;

/// Raw copula output before materialization: one row of category indices
/// per individual, one column per feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalSample {
    pub features: Vec<String>,
    /// Number of categories for each feature.
    pub cardinality: Vec<usize>,
    pub rows: Vec<Vec<usize>>,
}

impl CategoricalSample {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn counts(&self, feature: usize) -> Vec<usize> {
        let mut c = vec![0; self.cardinality[feature]];
        for row in &self.rows {
            c[row[feature]] += 1;
        }
        c
    }

    pub fn proportions(&self, feature: usize) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.counts(feature).into_iter().map(|c| c as f64 / n).collect()
    }

    /// L∞ distance between empirical and target proportions over all features.
    pub fn gap(&self, targets: &[Vec<f64>]) -> f64 {
        (0..self.features.len())
            .flat_map(|d| {
                self.proportions(d)
                    .into_iter()
                    .zip(&targets[d])
                    .map(|(e, t)| (e - t).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            tol: 0.005,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub iterations: usize,
    pub gap: f64,
}

/// Integer category counts closest to `n * p` that sum to `n`
/// (largest-remainder apportionment; ties go to the lower index).
pub fn integer_targets(n: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|q| q * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Force the sample's category proportions toward `targets`.
///
/// Each iteration computes, per feature and from the pre-iteration counts,
/// how many individuals each category holds beyond its integer target. That
/// surplus is drawn uniformly from the over-represented categories and each
/// drawn individual receives a new category from `Multi(1, c, w)`, where `w`
/// is proportional to the remaining deficits. Features are adjusted
/// independently, so the result does not depend on feature order.
pub fn scale_marginals<R: Rng + ?Sized>(
    mut sample: CategoricalSample,
    targets: &[Vec<f64>],
    options: ScalingOptions,
    rng: &mut R,
) -> Result<(CategoricalSample, ScalingReport), PopulationError> {
    if targets.len() != sample.features.len() {
        return Err(PopulationError::IncompatibleTargets(format!(
            "{} target vectors for {} features",
            targets.len(),
            sample.features.len()
        )));
    }
    for (d, t) in targets.iter().enumerate() {
        if t.len() != sample.cardinality[d] {
            return Err(PopulationError::IncompatibleTargets(format!(
                "feature `{}` has {} categories but {} target proportions",
                sample.features[d],
                sample.cardinality[d],
                t.len()
            )));
        }
    }
    let n = sample.len();
    if n == 0 {
        return Ok((sample, ScalingReport { iterations: 0, gap: 0.0 }));
    }
    let wanted: Vec<Vec<usize>> = targets.iter().map(|t| integer_targets(n, t)).collect();

    let mut iterations = 0;
    loop {
        let gap = sample.gap(targets);
        if gap <= options.tol {
            return Ok((sample, ScalingReport { iterations, gap }));
        }
        let counts: Vec<Vec<usize>> = (0..sample.features.len())
            .map(|d| sample.counts(d))
            .collect();
        let settled = counts == wanted;
        if iterations >= options.max_iter || settled {
            return Err(PopulationError::IterationLimit { gap, iterations });
        }
        for d in 0..sample.features.len() {
            rebalance_feature(&mut sample, d, &counts[d], &wanted[d], rng);
        }
        iterations += 1;
    }
}

fn rebalance_feature<R: Rng + ?Sized>(
    sample: &mut CategoricalSample,
    d: usize,
    counts: &[usize],
    wanted: &[usize],
    rng: &mut R,
) {
    let deficits: Vec<usize> = counts
        .iter()
        .zip(wanted)
        .map(|(c, w)| w.saturating_sub(*c))
        .collect();
    if deficits.iter().all(|&x| x == 0) {
        return;
    }
    let weights = WeightedIndex::new(&deficits).expect("some deficit is positive");
    for k in 0..counts.len() {
        let surplus = counts[k].saturating_sub(wanted[k]);
        if surplus == 0 {
            continue;
        }
        let members: Vec<usize> = sample
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r[d] == k)
            .map(|(i, _)| i)
            .collect();
        for pick in index::sample(rng, members.len(), surplus) {
            sample.rows[members[pick]][d] = weights.sample(rng);
        }
    }
}
