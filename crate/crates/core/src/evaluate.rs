//! Prediction-versus-truth comparisons: winner confusion, balanced accuracy,
//! share errors and nationwide two-party ratios.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::persona::{Party, StateCode};
use crate::pipeline::{VoteChoice, VoteRecord};
use crate::respondents::{ActualVote, RespondentRecord};
use crate::tally::{two_party_share, StateResult, VoteCounts, Winner};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no ground truth for {0}")]
    MissingTruth(StateCode),
    #[error("no states whose actual winner is {0}; balanced accuracy is undefined")]
    DegenerateClass(Party),
    #[error("no Democratic or Republican votes to compare")]
    NoMajorPartyVotes,
    #[error("invalid ground truth for {state}: {reason}")]
    InvalidTruth { state: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub winner: Party,
    pub republican_share: f64,
}

/// Actual results per state, with a label naming where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub source: String,
    pub states: BTreeMap<StateCode, TruthEntry>,
}

/// One state in a truth file: either raw two-party counts or a share, with an
/// optional explicit winner.
#[derive(Deserialize)]
struct RawTruth {
    republican: Option<u64>,
    democratic: Option<u64>,
    republican_share: Option<f64>,
    winner: Option<Party>,
}

#[derive(Deserialize)]
struct RawGroundTruth {
    source: String,
    states: BTreeMap<String, RawTruth>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<GroundTruth, EvalError> {
        let io = |message: String| EvalError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        GroundTruth::parse(&text).map_err(|e| match e {
            EvalError::Io { message, .. } => io(message),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<GroundTruth, EvalError> {
        let raw: RawGroundTruth = serde_json::from_str(text).map_err(|e| EvalError::Io {
            path: String::new(),
            message: e.to_string(),
        })?;
        let mut states = BTreeMap::new();
        for (code, entry) in raw.states {
            let invalid = |reason: &str| EvalError::InvalidTruth {
                state: code.clone(),
                reason: reason.to_string(),
            };
            let state: StateCode = code.parse().map_err(|_| invalid("unknown state code"))?;
            let share = match (entry.republican_share, entry.republican, entry.democratic) {
                (Some(s), _, _) => s,
                (None, Some(r), Some(d)) => {
                    two_party_share(r, d).map_err(|_| invalid("zero two-party votes"))?
                }
                _ => return Err(invalid("needs `republican_share` or both vote counts")),
            };
            if !(0.0..=1.0).contains(&share) {
                return Err(invalid("share outside [0, 1]"));
            }
            let winner = match entry.winner {
                Some(w) => w,
                None if share > 0.5 => Party::Republican,
                None if share < 0.5 => Party::Democratic,
                None => return Err(invalid("exact tie needs an explicit `winner`")),
            };
            states.insert(
                state,
                TruthEntry {
                    winner,
                    republican_share: share,
                },
            );
        }
        Ok(GroundTruth {
            source: raw.source,
            states,
        })
    }
}

/// Rows are the actual winner, columns the predicted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub actual_r_pred_r: u32,
    pub actual_r_pred_d: u32,
    pub actual_d_pred_r: u32,
    pub actual_d_pred_d: u32,
}

impl ConfusionMatrix {
    /// Cells in reading order: (R,R), (R,D), (D,R), (D,D).
    pub fn from_cells(rr: u32, rd: u32, dr: u32, dd: u32) -> Self {
        ConfusionMatrix {
            actual_r_pred_r: rr,
            actual_r_pred_d: rd,
            actual_d_pred_r: dr,
            actual_d_pred_d: dd,
        }
    }

    pub fn total(&self) -> u32 {
        self.actual_r_pred_r + self.actual_r_pred_d + self.actual_d_pred_r + self.actual_d_pred_d
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| f64::from(self.actual_r_pred_r + self.actual_d_pred_d) / f64::from(total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub matrix: ConfusionMatrix,
    /// Predicted ties and undecided states, kept out of the matrix.
    pub ties: Vec<StateCode>,
}

pub fn confusion(
    predictions: &BTreeMap<StateCode, Option<Winner>>,
    truth: &GroundTruth,
) -> Result<ConfusionReport, EvalError> {
    let mut m = ConfusionMatrix::default();
    let mut ties = Vec::new();
    for (state, predicted) in predictions {
        let actual = truth.states.get(state).ok_or(EvalError::MissingTruth(*state))?.winner;
        match (actual, predicted) {
            (_, None | Some(Winner::Tie)) => ties.push(*state),
            (Party::Republican, Some(Winner::Republican)) => m.actual_r_pred_r += 1,
            (Party::Republican, Some(Winner::Democratic)) => m.actual_r_pred_d += 1,
            (Party::Democratic, Some(Winner::Republican)) => m.actual_d_pred_r += 1,
            (Party::Democratic, Some(Winner::Democratic)) => m.actual_d_pred_d += 1,
        }
    }
    Ok(ConfusionReport { matrix: m, ties })
}

/// Mean of the two per-class recalls: the area under the ROC curve of a
/// single hard classifier.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let actual_r = cm.actual_r_pred_r + cm.actual_r_pred_d;
    let actual_d = cm.actual_d_pred_r + cm.actual_d_pred_d;
    if actual_r == 0 {
        return Err(EvalError::DegenerateClass(Party::Republican));
    }
    if actual_d == 0 {
        return Err(EvalError::DegenerateClass(Party::Democratic));
    }
    let recall_r = f64::from(cm.actual_r_pred_r) / f64::from(actual_r);
    let recall_d = f64::from(cm.actual_d_pred_d) / f64::from(actual_d);
    Ok((recall_r + recall_d) / 2.0)
}

/// Nationwide `R / (R + D)` over all records.
pub fn aggregate_ratio(records: &[VoteRecord]) -> Result<f64, EvalError> {
    VoteCounts::from_records(records)
        .republican_share()
        .ok_or(EvalError::NoMajorPartyVotes)
}

/// `R / (R + D)` of the respondents' own reported votes.
pub fn survey_truth_ratio(records: &[RespondentRecord]) -> Result<f64, EvalError> {
    let mut counts = VoteCounts::default();
    for r in records {
        match r.actual_vote {
            Some(ActualVote::Democratic) => counts.add(VoteChoice::Democratic),
            Some(ActualVote::Republican) => counts.add(VoteChoice::Republican),
            _ => {}
        }
    }
    counts.republican_share().ok_or(EvalError::NoMajorPartyVotes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareErrorRow {
    pub state: StateCode,
    pub predicted: f64,
    pub actual: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareErrorReport {
    pub rows: Vec<ShareErrorRow>,
    pub mean_absolute_error: Option<f64>,
}

/// Per-state share errors sorted by state code. States whose predicted share
/// is undefined are skipped.
pub fn share_error_report(
    predictions: &BTreeMap<StateCode, Option<f64>>,
    truth: &GroundTruth,
) -> Result<ShareErrorReport, EvalError> {
    let mut rows = Vec::new();
    for (state, predicted) in predictions {
        let actual = truth
            .states
            .get(state)
            .ok_or(EvalError::MissingTruth(*state))?
            .republican_share;
        if let Some(p) = predicted {
            rows.push(ShareErrorRow {
                state: *state,
                predicted: *p,
                actual,
                abs_error: (p - actual).abs(),
            });
        }
    }
    let mae = (!rows.is_empty()).then(|| rows.iter().map(|r| r.abs_error).sum::<f64>() / rows.len() as f64);
    Ok(ShareErrorReport {
        rows,
        mean_absolute_error: mae,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateComparison {
    pub predicted: f64,
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvaluation {
    pub confusion: ConfusionReport,
    pub accuracy: Option<f64>,
    /// Absent when one actual class is empty.
    pub balanced_accuracy: Option<f64>,
    pub shares: ShareErrorReport,
}

pub fn evaluate_states(results: &[StateResult], truth: &GroundTruth) -> Result<StateEvaluation, EvalError> {
    let winners = results.iter().map(|r| (r.state, r.winner)).collect();
    let shares = results.iter().map(|r| (r.state, r.republican_share)).collect();
    let confusion = confusion(&winners, truth)?;
    Ok(StateEvaluation {
        accuracy: confusion.matrix.accuracy(),
        balanced_accuracy: balanced_accuracy(&confusion.matrix).ok(),
        confusion,
        shares: share_error_report(&shares, truth)?,
    })
}

/// Everything one evaluation produces. `meta` carries run identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: BTreeMap<String, String>,
    pub truth_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<StateEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateComparison>,
    pub unparseable_rate: f64,
}

pub fn write_confusion_csv<W: Write>(mut out: W, cm: &ConfusionMatrix, preamble: &[String]) -> std::io::Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "actual,predicted_republican,predicted_democratic")?;
    writeln!(out, "republican,{},{}", cm.actual_r_pred_r, cm.actual_r_pred_d)?;
    writeln!(out, "democratic,{},{}", cm.actual_d_pred_r, cm.actual_d_pred_d)
}

pub fn render_text(report: &EvaluationReport) -> String {
    let mut s = String::new();
    for (k, v) in &report.meta {
        let _ = writeln!(s, "{k}: {v}");
    }
    if let Some(source) = &report.truth_source {
        let _ = writeln!(s, "truth: {source}");
    }
    if let Some(agg) = &report.aggregate {
        let _ = writeln!(s, "\nnationwide Republican ratio R/(R+D)");
        let _ = writeln!(s, "  predicted  {:.4}", agg.predicted);
        if let Some(a) = agg.actual {
            let _ = writeln!(s, "  actual     {a:.4}");
        }
    }
    if let Some(st) = &report.states {
        let m = &st.confusion.matrix;
        let _ = writeln!(s, "\nwinner confusion (rows actual, columns predicted)");
        let _ = writeln!(s, "              R     D");
        let _ = writeln!(s, "  actual R  {:>3}   {:>3}", m.actual_r_pred_r, m.actual_r_pred_d);
        let _ = writeln!(s, "  actual D  {:>3}   {:>3}", m.actual_d_pred_r, m.actual_d_pred_d);
        if !st.confusion.ties.is_empty() {
            let ties: Vec<_> = st.confusion.ties.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "  toss-ups: {}", ties.join(", "));
        }
        if let Some(a) = st.accuracy {
            let _ = writeln!(s, "accuracy           {a:.3}");
        }
        match st.balanced_accuracy {
            Some(b) => {
                let _ = writeln!(s, "balanced accuracy  {b:.3}");
            }
            None => {
                let _ = writeln!(s, "balanced accuracy  undefined (one actual class is empty)");
            }
        }
        let _ = writeln!(s, "\nstate  predicted  actual   abs error");
        for r in &st.shares.rows {
            let _ = writeln!(s, "{:<5}  {:.4}     {:.4}   {:.4}", r.state, r.predicted, r.actual, r.abs_error);
        }
        if let Some(mae) = st.shares.mean_absolute_error {
            let _ = writeln!(s, "mean absolute error {mae:.4}");
        }
    }
    let _ = writeln!(s, "\nunparseable rate {:.4}", report.unparseable_rate);
    s
}
