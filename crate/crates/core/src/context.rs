//! Election-year context: candidates, biographies and party agendas, with an
//! optional neutral-summary pass through a text backend.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendRequest, Decider, GenerationParams, Stage};
use crate::persona::Party;

pub const SUMMARY_INSTRUCTION: &str = "Summarize the following political material in neutral, balanced language without evaluative adjectives.";
pub const SUMMARY_TEMPLATE_VERSION: &str = "neutral-summary-v1";

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("{path}: context has no `year`")]
    MissingYear { path: String },
    #[error("{path}: {party} entry is missing or lacks `{field}`")]
    MissingParty {
        path: String,
        party: Party,
        field: &'static str,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyContext {
    pub candidate: String,
    pub biography: String,
    pub agenda: String,
    /// Pre-summary texts, kept for audit once a summary replaces them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_biography: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_agenda: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parties {
    pub democratic: PartyContext,
    pub republican: PartyContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeContext {
    pub year: u16,
    pub parties: Parties,
    #[serde(default)]
    pub summarized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_version: Option<String>,
}

impl TimeContext {
    pub fn party(&self, party: Party) -> &PartyContext {
        match party {
            Party::Democratic => &self.parties.democratic,
            Party::Republican => &self.parties.republican,
        }
    }

    fn party_mut(&mut self, party: Party) -> &mut PartyContext {
        match party {
            Party::Democratic => &mut self.parties.democratic,
            Party::Republican => &mut self.parties.republican,
        }
    }
}

#[derive(Deserialize)]
struct RawParty {
    candidate: Option<String>,
    biography: Option<String>,
    agenda: Option<String>,
    original_biography: Option<String>,
    original_agenda: Option<String>,
}

#[derive(Deserialize)]
struct RawParties {
    democratic: Option<RawParty>,
    republican: Option<RawParty>,
}

#[derive(Deserialize)]
struct RawContext {
    year: Option<u16>,
    parties: Option<RawParties>,
    #[serde(default)]
    summarized: bool,
    summary_version: Option<String>,
}

pub fn load_context(path: &Path) -> Result<TimeContext, ContextError> {
    let text = fs::read_to_string(path).map_err(|e| ContextError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_context(&text, &path.display().to_string())
}

/// Parse context JSON; `origin` names the source in errors.
pub fn parse_context(text: &str, origin: &str) -> Result<TimeContext, ContextError> {
    let raw: RawContext = serde_json::from_str(text).map_err(|e| ContextError::Io {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let year = raw.year.ok_or_else(|| ContextError::MissingYear {
        path: origin.to_string(),
    })?;
    let parties = raw.parties.unwrap_or(RawParties {
        democratic: None,
        republican: None,
    });
    let party = |which: Party, entry: Option<RawParty>| -> Result<PartyContext, ContextError> {
        let missing = |field| ContextError::MissingParty {
            path: origin.to_string(),
            party: which,
            field,
        };
        let entry = entry.ok_or_else(|| missing("candidate"))?;
        let take = |v: Option<String>, field| v.filter(|s| !s.trim().is_empty()).ok_or_else(|| missing(field));
        Ok(PartyContext {
            candidate: take(entry.candidate, "candidate")?,
            biography: take(entry.biography, "biography")?,
            agenda: take(entry.agenda, "agenda")?,
            original_biography: entry.original_biography,
            original_agenda: entry.original_agenda,
        })
    };
    Ok(TimeContext {
        year,
        parties: Parties {
            democratic: party(Party::Democratic, parties.democratic)?,
            republican: party(Party::Republican, parties.republican)?,
        },
        summarized: raw.summarized,
        summary_version: raw.summary_version,
    })
}

/// Settings for summary requests.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    pub model_id: String,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutcome {
    pub context: TimeContext,
    pub warning: Option<String>,
}

pub fn summary_prompt(material: &str) -> String {
    format!("{SUMMARY_INSTRUCTION}\n\n{material}")
}

/// Replace every agenda and biography with a backend summary. Any backend
/// failure leaves the context untouched and reports a warning. Already
/// summarized contexts are returned as they are.
pub fn summarize_neutral(context: &TimeContext, decider: &Decider, options: &SummaryOptions) -> SummaryOutcome {
    if context.summarized {
        return SummaryOutcome {
            context: context.clone(),
            warning: None,
        };
    }
    let mut out = context.clone();
    for party in [Party::Democratic, Party::Republican] {
        for field in ["agenda", "biography"] {
            let original = match field {
                "agenda" => context.party(party).agenda.clone(),
                _ => context.party(party).biography.clone(),
            };
            let request = BackendRequest {
                params: options.params,
                draw_key: Some(format!("summary/{}/{}/{field}", context.year, party.label())),
                subject: Some(original.clone()),
                ..BackendRequest::new(summary_prompt(&original), options.model_id.clone(), Stage::Summary)
            };
            let summary = match decider.decide(&request) {
                Ok(d) => d.response.trim().to_string(),
                Err(e) => {
                    return SummaryOutcome {
                        context: context.clone(),
                        warning: Some(format!(
                            "neutral summarization skipped, using original texts: {e}"
                        )),
                    }
                }
            };
            let entry = out.party_mut(party);
            match field {
                "agenda" => {
                    entry.original_agenda = Some(original);
                    entry.agenda = summary;
                }
                _ => {
                    entry.original_biography = Some(original);
                    entry.biography = summary;
                }
            }
        }
    }
    out.summarized = true;
    out.summary_version = Some(SUMMARY_TEMPLATE_VERSION.to_string());
    SummaryOutcome {
        context: out,
        warning: None,
    }
}
