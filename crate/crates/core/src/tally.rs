//! Two-party state shares and winner-takes-all electoral-vote totals.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::persona::StateCode;
use crate::pipeline::{VoteChoice, VoteRecord};
use crate::sampling::ProfileMap;

/// Electoral votes needed for a majority of 538.
pub const MAJORITY: u32 = 270;
pub const TOTAL_ELECTORAL_VOTES: u32 = 538;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TallyError {
    #[error("no Democratic or Republican votes{}", .state.map(|s| format!(" in {s}")).unwrap_or_default())]
    NoMajorPartyVotes { state: Option<StateCode> },
    #[error("records for {found} mixed into the tally for {expected}")]
    MixedStates { expected: StateCode, found: String },
    #[error("no state profile for {0}")]
    MissingProfile(StateCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    Democratic,
    Republican,
    Tie,
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Winner::Democratic => "Democratic",
            Winner::Republican => "Republican",
            Winner::Tie => "Tie",
        })
    }
}

/// What to do with a state whose share is exactly one half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Report a tie and hold the state's electoral votes out of both columns.
    #[default]
    Withhold,
    Democratic,
    Republican,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteCounts {
    pub democratic: u64,
    pub republican: u64,
    pub no_preference: u64,
    pub unparseable: u64,
}

impl VoteCounts {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a VoteRecord>) -> VoteCounts {
        let mut c = VoteCounts::default();
        for r in records {
            c.add(r.choice);
        }
        c
    }

    pub fn add(&mut self, choice: VoteChoice) {
        match choice {
            VoteChoice::Democratic => self.democratic += 1,
            VoteChoice::Republican => self.republican += 1,
            VoteChoice::NoPreference => self.no_preference += 1,
            VoteChoice::Unparseable => self.unparseable += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.democratic + self.republican + self.no_preference + self.unparseable
    }

    /// `R / (R + D)`; abstentions and unparseable answers are excluded.
    pub fn republican_share(&self) -> Option<f64> {
        two_party_share(self.republican, self.democratic).ok()
    }

    pub fn unparseable_rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.unparseable as f64 / self.total() as f64
        }
    }
}

pub fn two_party_share(republican: u64, democratic: u64) -> Result<f64, TallyError> {
    let major = republican + democratic;
    if major == 0 {
        return Err(TallyError::NoMajorPartyVotes { state: None });
    }
    Ok(republican as f64 / major as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResult {
    pub state: StateCode,
    pub counts: VoteCounts,
    /// Undefined when the state has no major-party votes.
    pub republican_share: Option<f64>,
    pub winner: Option<Winner>,
    pub electoral_votes: u32,
}

impl StateResult {
    /// Infallible constructor; an undefined share leaves the winner undefined.
    pub fn from_counts(state: StateCode, counts: VoteCounts, electoral_votes: u32, rule: TieRule) -> StateResult {
        let share = counts.republican_share();
        StateResult {
            state,
            counts,
            republican_share: share,
            winner: share.map(|s| decide_state(s, rule)),
            electoral_votes,
        }
    }
}

/// Tally one state's records. Every record must belong to `state`.
pub fn state_share(state: StateCode, records: &[VoteRecord]) -> Result<StateResult, TallyError> {
    if let Some(r) = records.iter().find(|r| r.state.is_some_and(|s| s != state)) {
        return Err(TallyError::MixedStates {
            expected: state,
            found: r.state.map(|s| s.to_string()).unwrap_or_default(),
        });
    }
    let result = StateResult::from_counts(state, VoteCounts::from_records(records), 0, TieRule::Withhold);
    if result.republican_share.is_none() {
        return Err(TallyError::NoMajorPartyVotes { state: Some(state) });
    }
    Ok(result)
}

pub fn decide_state(share: f64, rule: TieRule) -> Winner {
    if share > 0.5 {
        Winner::Republican
    } else if share < 0.5 {
        Winner::Democratic
    } else {
        match rule {
            TieRule::Withhold => Winner::Tie,
            TieRule::Democratic => Winner::Democratic,
            TieRule::Republican => Winner::Republican,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectoralOutcome {
    pub democratic_ev: u32,
    pub republican_ev: u32,
    /// Votes of tied or undecided states, counted for neither party.
    pub tossup_ev: u32,
    pub tossup_states: Vec<StateCode>,
    /// Declared only when all 51 units are present.
    pub winner: Option<Winner>,
    pub complete: bool,
}

impl ElectoralOutcome {
    pub fn participating_ev(&self) -> u32 {
        self.democratic_ev + self.republican_ev + self.tossup_ev
    }
}

/// Winner-takes-all sums. `None` winners (undefined share) are held out with
/// ties. A national winner needs 270; 269 each is a tie.
pub fn electoral_tally(
    winners: &BTreeMap<StateCode, Option<Winner>>,
    profiles: &ProfileMap,
) -> Result<ElectoralOutcome, TallyError> {
    let mut out = ElectoralOutcome {
        democratic_ev: 0,
        republican_ev: 0,
        tossup_ev: 0,
        tossup_states: Vec::new(),
        winner: None,
        complete: false,
    };
    for (state, winner) in winners {
        let ev = profiles
            .get(state)
            .ok_or(TallyError::MissingProfile(*state))?
            .electoral_votes;
        match winner {
            Some(Winner::Democratic) => out.democratic_ev += ev,
            Some(Winner::Republican) => out.republican_ev += ev,
            Some(Winner::Tie) | None => {
                out.tossup_ev += ev;
                out.tossup_states.push(*state);
            }
        }
    }
    out.complete = StateCode::all().all(|s| winners.contains_key(&s));
    if out.complete {
        out.winner = if out.democratic_ev >= MAJORITY {
            Some(Winner::Democratic)
        } else if out.republican_ev >= MAJORITY {
            Some(Winner::Republican)
        } else if out.democratic_ev == out.republican_ev && out.tossup_ev == 0 {
            Some(Winner::Tie)
        } else {
            None
        };
    }
    Ok(out)
}

/// Group records by state and tally each. States without major-party votes
/// keep an undefined share instead of failing the run.
pub fn tally_states(
    records: &[VoteRecord],
    profiles: &ProfileMap,
    rule: TieRule,
) -> Result<Vec<StateResult>, TallyError> {
    let mut by_state: BTreeMap<StateCode, VoteCounts> = BTreeMap::new();
    for r in records {
        if let Some(s) = r.state {
            by_state.entry(s).or_default().add(r.choice);
        }
    }
    by_state
        .into_iter()
        .map(|(state, counts)| {
            let ev = profiles
                .get(&state)
                .ok_or(TallyError::MissingProfile(state))?
                .electoral_votes;
            Ok(StateResult::from_counts(state, counts, ev, rule))
        })
        .collect()
}

pub fn winners_of(results: &[StateResult]) -> BTreeMap<StateCode, Option<Winner>> {
    results.iter().map(|r| (r.state, r.winner)).collect()
}

fn fmt_share(share: Option<f64>) -> String {
    share.map(|s| format!("{s:.6}")).unwrap_or_default()
}

pub const RESULTS_CSV_HEADER: [&str; 8] = [
    "state",
    "democratic",
    "republican",
    "no_preference",
    "unparseable",
    "republican_share",
    "winner",
    "electoral_votes",
];

/// Per-state table. `preamble` lines are written first as `# ` comments.
pub fn write_results_csv<W: Write>(mut out: W, results: &[StateResult], preamble: &[String]) -> std::io::Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.state.to_string(),
            r.counts.democratic.to_string(),
            r.counts.republican.to_string(),
            r.counts.no_preference.to_string(),
            r.counts.unparseable.to_string(),
            fmt_share(r.republican_share),
            r.winner.map(|w| w.to_string()).unwrap_or_default(),
            r.electoral_votes.to_string(),
        ])?;
    }
    w.flush()
}

/// Read a table written by [`write_results_csv`]; comment lines are skipped.
pub fn read_results_csv(text: &str) -> Result<Vec<StateResult>, String> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let bad = |what: &str| format!("row {}: bad {what} `{}`", i + 1, row.iter().collect::<Vec<_>>().join(","));
        let num = |k: usize, what: &str| field(k).parse::<u64>().map_err(|_| bad(what));
        let state: StateCode = field(0).parse().map_err(|_| bad("state"))?;
        let share = match field(5) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad("republican_share"))?),
        };
        let winner = match field(6) {
            "" => None,
            "Democratic" => Some(Winner::Democratic),
            "Republican" => Some(Winner::Republican),
            "Tie" => Some(Winner::Tie),
            _ => return Err(bad("winner")),
        };
        out.push(StateResult {
            state,
            counts: VoteCounts {
                democratic: num(1, "democratic")?,
                republican: num(2, "republican")?,
                no_preference: num(3, "no_preference")?,
                unparseable: num(4, "unparseable")?,
            },
            republican_share: share,
            winner,
            electoral_votes: num(7, "electoral_votes")? as u32,
        });
    }
    Ok(out)
}

/// State code to Republican share, for map-style figures.
pub fn write_plot_data<W: Write>(mut out: W, results: &[StateResult], preamble: &[String]) -> std::io::Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "state,republican_share")?;
    for r in results {
        writeln!(out, "{},{}", r.state, fmt_share(r.republican_share))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PipelineVersion;
    use crate::sampling::{StateCategory, StateProfile};

    fn record(id: usize, choice: VoteChoice, state: &str) -> VoteRecord {
        VoteRecord {
            persona_id: format!("p{id}"),
            state: Some(state.parse().unwrap()),
            version: PipelineVersion::V3,
            choice,
            ideology_assigned: None,
            ideology_restored: false,
            response_ref: None,
            attempts: 1,
            error: None,
        }
    }

    fn profiles(evs: &[(&str, u32)]) -> ProfileMap {
        ProfileMap::from_list(
            evs.iter()
                .map(|&(c, ev)| StateProfile {
                    code: c.parse().unwrap(),
                    population: 1_000_000,
                    category: StateCategory::Swing,
                    electoral_votes: ev,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn abstentions_do_not_move_share() {
        let c = VoteCounts {
            democratic: 50,
            republican: 50,
            no_preference: 37,
            unparseable: 4,
        };
        assert_eq!(c.republican_share(), Some(0.5));
    }

    #[test]
    fn no_major_votes() {
        let records = vec![record(0, VoteChoice::NoPreference, "AK")];
        assert_eq!(
            state_share("AK".parse().unwrap(), &records),
            Err(TallyError::NoMajorPartyVotes { state: Some("AK".parse().unwrap()) })
        );
        assert!(two_party_share(0, 0).is_err());
    }

    #[test]
    fn mixed_states_rejected() {
        let records = vec![record(0, VoteChoice::Republican, "AK"), record(1, VoteChoice::Democratic, "AZ")];
        assert!(matches!(
            state_share("AK".parse().unwrap(), &records),
            Err(TallyError::MixedStates { .. })
        ));
    }

    #[test]
    fn winner_rule() {
        assert_eq!(decide_state(0.5490, TieRule::Withhold), Winner::Republican);
        assert_eq!(decide_state(0.4639, TieRule::Withhold), Winner::Democratic);
        assert_eq!(decide_state(0.5, TieRule::Withhold), Winner::Tie);
        assert_eq!(decide_state(0.5, TieRule::Republican), Winner::Republican);
    }

    #[test]
    fn partial_map_declares_no_winner() {
        let p = profiles(&[("TX", 38), ("CA", 55), ("NH", 4)]);
        let winners = BTreeMap::from([
            ("TX".parse().unwrap(), Some(Winner::Republican)),
            ("CA".parse().unwrap(), Some(Winner::Democratic)),
            ("NH".parse().unwrap(), Some(Winner::Tie)),
        ]);
        let out = electoral_tally(&winners, &p).unwrap();
        assert_eq!((out.democratic_ev, out.republican_ev, out.tossup_ev), (55, 38, 4));
        assert_eq!(out.participating_ev(), 97);
        assert!(!out.complete);
        assert_eq!(out.winner, None);
    }

    #[test]
    fn missing_profile() {
        let p = profiles(&[("TX", 38)]);
        let winners = BTreeMap::from([("CA".parse().unwrap(), Some(Winner::Democratic))]);
        assert_eq!(
            electoral_tally(&winners, &p),
            Err(TallyError::MissingProfile("CA".parse().unwrap()))
        );
    }

    #[test]
    fn csv_round_trip() {
        let p = profiles(&[("AK", 3), ("AZ", 11)]);
        let mut records: Vec<_> = (0..65).map(|i| record(i, VoteChoice::Republican, "AK")).collect();
        records.extend((65..124).map(|i| record(i, VoteChoice::Democratic, "AK")));
        records.push(record(200, VoteChoice::NoPreference, "AZ"));
        let results = tally_states(&records, &p, TieRule::Withhold).unwrap();
        assert_eq!(results[1].republican_share, None);
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &results, &["config_hash: x".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config_hash: x\nstate,"));
        let back = read_results_csv(&text).unwrap();
        assert_eq!(back[0].counts, results[0].counts);
        assert_eq!(back[0].winner, Some(Winner::Republican));
        assert!((back[0].republican_share.unwrap() - 65.0 / 124.0).abs() < 1e-6);
    }
}
