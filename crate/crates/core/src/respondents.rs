//! Survey respondent ingestion (ANES time-series style CSV plus a JSON
//! codebook) and conversion to personas.
//!
//! Column sets:
//!
//! * 2016: `respondent_id,race_ethnicity,gender,age,ideology,party_id,political_interest,church_attendance,discuss_politics,flag_patriotism,state,vote`
//! * 2020: the same without `flag_patriotism` and `state`.
//!
//! Coded columns are translated through the codebook, a JSON object mapping
//! column name to `{code: label}`. The `state` column takes postal codes
//! directly. Rows whose age, race/ethnicity or gender cannot be mapped are
//! skipped with a warning; other unmappable codes leave that field absent
//! and also produce a warning.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::persona::{Ideology, Persona, PersonaOrigin, StateCode};

const DEFAULT_CODEBOOK: &str = include_str!("../data/anes_codebook.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaYear {
    #[serde(rename = "2016")]
    Y2016,
    #[serde(rename = "2020")]
    Y2020,
}

impl SchemaYear {
    pub fn from_year(year: u16) -> Option<SchemaYear> {
        match year {
            2016 => Some(SchemaYear::Y2016),
            2020 => Some(SchemaYear::Y2020),
            _ => None,
        }
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            SchemaYear::Y2016 => &[
                "respondent_id",
                "race_ethnicity",
                "gender",
                "age",
                "ideology",
                "party_id",
                "political_interest",
                "church_attendance",
                "discuss_politics",
                "flag_patriotism",
                "state",
                "vote",
            ],
            SchemaYear::Y2020 => &[
                "respondent_id",
                "race_ethnicity",
                "gender",
                "age",
                "ideology",
                "party_id",
                "political_interest",
                "church_attendance",
                "discuss_politics",
                "vote",
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RespondentError {
    #[error("{path}: missing required column `{column}` for the {year:?} schema")]
    SchemaMismatch {
        path: String,
        column: String,
        year: SchemaYear,
    },
    #[error("{0}: file has no data rows")]
    EmptyFile(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid codebook: {0}")]
    Codebook(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActualVote {
    Democratic,
    Republican,
    #[serde(rename = "Other/None")]
    OtherOrNone,
}

/// One survey respondent after code translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub respondent_id: String,
    pub race_ethnicity: String,
    pub gender: String,
    pub age: u32,
    pub ideology_self_placement: Option<Ideology>,
    pub party_identification: Option<String>,
    pub political_interest: Option<String>,
    pub church_attendance: Option<String>,
    pub discuss_politics_freq: Option<String>,
    pub flag_patriotism: Option<String>,
    pub state_of_residence: Option<StateCode>,
    pub actual_vote: Option<ActualVote>,
}

/// Column name to `{code: label}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook(pub BTreeMap<String, BTreeMap<String, String>>);

impl Codebook {
    pub fn load(path: &Path) -> Result<Codebook, RespondentError> {
        let text = fs::read_to_string(path).map_err(|e| RespondentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Codebook::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Codebook, RespondentError> {
        serde_json::from_str(text).map_err(|e| RespondentError::Codebook(e.to_string()))
    }

    fn lookup(&self, column: &str, code: &str) -> Option<&str> {
        self.0.get(column)?.get(code.trim()).map(String::as_str)
    }
}

impl Default for Codebook {
    fn default() -> Self {
        Codebook::parse(DEFAULT_CODEBOOK).expect("bundled codebook parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowWarning {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub respondent_id: String,
    pub skipped: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub records: Vec<RespondentRecord>,
    pub warnings: Vec<RowWarning>,
}

impl LoadReport {
    pub fn skipped(&self) -> usize {
        self.warnings.iter().filter(|w| w.skipped).count()
    }
}

pub fn load_respondents(
    path: &Path,
    year: SchemaYear,
    codebook: &Codebook,
) -> Result<LoadReport, RespondentError> {
    let io = |message: String| RespondentError::Io {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| io(e.to_string()))?.clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for col in year.columns() {
        if !index.contains_key(col) {
            return Err(RespondentError::SchemaMismatch {
                path: path.display().to_string(),
                column: col.to_string(),
                year,
            });
        }
    }

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut rows = 0;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| io(e.to_string()))?;
        rows += 1;
        let cell = |col: &str| index.get(col).and_then(|&k| row.get(k)).unwrap_or("");
        let id = cell("respondent_id").to_string();
        let mut row_warnings = Vec::new();
        let skip = |message: String| RowWarning {
            row: i + 1,
            respondent_id: id.clone(),
            skipped: true,
            message,
        };

        let age = match cell("age").parse::<u32>() {
            Ok(a) if a >= 18 => a,
            _ => {
                warnings.push(skip(format!("unmappable age code `{}`", cell("age"))));
                continue;
            }
        };
        let Some(race) = codebook.lookup("race_ethnicity", cell("race_ethnicity")) else {
            warnings.push(skip(format!(
                "unmappable race_ethnicity code `{}`",
                cell("race_ethnicity")
            )));
            continue;
        };
        let Some(gender) = codebook.lookup("gender", cell("gender")) else {
            warnings.push(skip(format!("unmappable gender code `{}`", cell("gender"))));
            continue;
        };

        let mut optional = |column: &str| -> Option<String> {
            let code = cell(column);
            if code.is_empty() || !index.contains_key(column) {
                return None;
            }
            let label = codebook.lookup(column, code).map(str::to_string);
            if label.is_none() {
                row_warnings.push(format!("unmappable {column} code `{code}`"));
            }
            label
        };
        let ideology = optional("ideology").and_then(|l| Ideology::from_label(&l));
        let party = optional("party_id");
        let interest = optional("political_interest");
        let church = optional("church_attendance");
        let discuss = optional("discuss_politics");
        let flag = match year {
            SchemaYear::Y2016 => optional("flag_patriotism"),
            SchemaYear::Y2020 => None,
        };
        let vote = optional("vote").map(|l| match l.as_str() {
            "Democratic" => ActualVote::Democratic,
            "Republican" => ActualVote::Republican,
            _ => ActualVote::OtherOrNone,
        });
        let state = match year {
            SchemaYear::Y2016 => {
                let code = cell("state");
                let parsed = code
                    .parse::<StateCode>()
                    .ok()
                    .or_else(|| codebook.lookup("state", code).and_then(|s| s.parse().ok()));
                if parsed.is_none() && !code.is_empty() {
                    row_warnings.push(format!("unmappable state code `{code}`"));
                }
                parsed
            }
            SchemaYear::Y2020 => None,
        };

        for message in row_warnings {
            warnings.push(RowWarning {
                row: i + 1,
                respondent_id: id.clone(),
                skipped: false,
                message,
            });
        }
        records.push(RespondentRecord {
            respondent_id: id,
            race_ethnicity: race.to_string(),
            gender: gender.to_string(),
            age,
            ideology_self_placement: ideology,
            party_identification: party,
            political_interest: interest,
            church_attendance: church,
            discuss_politics_freq: discuss,
            flag_patriotism: flag,
            state_of_residence: state,
            actual_vote: vote,
        });
    }
    if rows == 0 {
        return Err(RespondentError::EmptyFile(path.display().to_string()));
    }
    Ok(LoadReport { records, warnings })
}

/// Prompt labels for survey-only items.
pub const PARTY_ID_LABEL: &str = "party identification";
pub const INTEREST_LABEL: &str = "interest in politics";
pub const CHURCH_LABEL: &str = "church attendance";
pub const DISCUSS_LABEL: &str = "discusses politics with family and friends";
pub const FLAG_LABEL: &str = "feeling when seeing the American flag";

/// Map a respondent to a persona. The ideology self-placement is copied only
/// when `include_ideology` is set; otherwise it is withheld so the persona
/// carries demographics alone.
pub fn to_persona(record: &RespondentRecord, include_ideology: bool) -> Persona {
    let mut attributes = BTreeMap::new();
    let mut put = |k: &str, v: &Option<String>| {
        if let Some(v) = v {
            attributes.insert(k.to_string(), v.clone());
        }
    };
    put(PARTY_ID_LABEL, &record.party_identification);
    put(INTEREST_LABEL, &record.political_interest);
    put(CHURCH_LABEL, &record.church_attendance);
    put(DISCUSS_LABEL, &record.discuss_politics_freq);
    put(FLAG_LABEL, &record.flag_patriotism);
    Persona {
        id: record.respondent_id.clone(),
        origin: PersonaOrigin::Survey,
        age: Some(record.age),
        gender: Some(record.gender.clone()),
        ethnicity: Some(record.race_ethnicity.clone()),
        residence: record.state_of_residence,
        ideology: if include_ideology {
            record.ideology_self_placement
        } else {
            None
        },
        attributes,
        ..Persona::default()
    }
}
