//! Shared domain types: personas, state codes, parties and ideology placements.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Two-letter postal code for one of the 50 states or DC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StateCode([u8; 2]);

/// All 51 electoral units, alphabetical by code.
pub const ALL_STATE_CODES: [&str; 51] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN",
    "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ",
    "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
];

const STATE_NAMES: [(&str, &str); 51] = [
    ("AK", "Alaska"),
    ("AL", "Alabama"),
    ("AR", "Arkansas"),
    ("AZ", "Arizona"),
    ("CA", "California"),
    ("CO", "Colorado"),
    ("CT", "Connecticut"),
    ("DC", "Washington, D.C."),
    ("DE", "Delaware"),
    ("FL", "Florida"),
    ("GA", "Georgia"),
    ("HI", "Hawaii"),
    ("IA", "Iowa"),
    ("ID", "Idaho"),
    ("IL", "Illinois"),
    ("IN", "Indiana"),
    ("KS", "Kansas"),
    ("KY", "Kentucky"),
    ("LA", "Louisiana"),
    ("MA", "Massachusetts"),
    ("MD", "Maryland"),
    ("ME", "Maine"),
    ("MI", "Michigan"),
    ("MN", "Minnesota"),
    ("MO", "Missouri"),
    ("MS", "Mississippi"),
    ("MT", "Montana"),
    ("NC", "North Carolina"),
    ("ND", "North Dakota"),
    ("NE", "Nebraska"),
    ("NH", "New Hampshire"),
    ("NJ", "New Jersey"),
    ("NM", "New Mexico"),
    ("NV", "Nevada"),
    ("NY", "New York"),
    ("OH", "Ohio"),
    ("OK", "Oklahoma"),
    ("OR", "Oregon"),
    ("PA", "Pennsylvania"),
    ("RI", "Rhode Island"),
    ("SC", "South Carolina"),
    ("SD", "South Dakota"),
    ("TN", "Tennessee"),
    ("TX", "Texas"),
    ("UT", "Utah"),
    ("VA", "Virginia"),
    ("VT", "Vermont"),
    ("WA", "Washington"),
    ("WI", "Wisconsin"),
    ("WV", "West Virginia"),
    ("WY", "Wyoming"),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not a state or DC postal code")]
pub struct InvalidStateCode(pub String);

impl StateCode {
    pub fn as_str(&self) -> &str {
        // Constructed only from ASCII entries of ALL_STATE_CODES.
        std::str::from_utf8(&self.0).expect("state code is ascii")
    }

    pub fn name(&self) -> &'static str {
        STATE_NAMES
            .iter()
            .find(|(code, _)| *code == self.as_str())
            .map(|(_, name)| *name)
            .expect("every valid code has a name")
    }

    pub fn all() -> impl Iterator<Item = StateCode> {
        ALL_STATE_CODES.iter().map(|c| c.parse().expect("static list is valid"))
    }
}

impl FromStr for StateCode {
    type Err = InvalidStateCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        if ALL_STATE_CODES.contains(&upper.as_str()) {
            let b = upper.as_bytes();
            Ok(StateCode([b[0], b[1]]))
        } else {
            Err(InvalidStateCode(s.to_string()))
        }
    }
}

impl TryFrom<String> for StateCode {
    type Error = InvalidStateCode;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<StateCode> for String {
    fn from(value: StateCode) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two major parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    Democratic,
    Republican,
}

impl Party {
    pub fn label(&self) -> &'static str {
        match self {
            Party::Democratic => "Democratic",
            Party::Republican => "Republican",
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Self-placement on the eight-option conservative-liberal scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ideology {
    #[serde(rename = "No answer")]
    NoAnswer,
    #[serde(rename = "Very liberal")]
    VeryLiberal,
    #[serde(rename = "Somewhat liberal")]
    SomewhatLiberal,
    #[serde(rename = "Closer to liberal")]
    CloserToLiberal,
    #[serde(rename = "Moderate")]
    Moderate,
    #[serde(rename = "Closer to conservative")]
    CloserToConservative,
    #[serde(rename = "Somewhat conservative")]
    SomewhatConservative,
    #[serde(rename = "Very conservative")]
    VeryConservative,
}

impl Ideology {
    /// Options in the order they are listed to the respondent.
    pub const ALL: [Ideology; 8] = [
        Ideology::NoAnswer,
        Ideology::VeryLiberal,
        Ideology::SomewhatLiberal,
        Ideology::CloserToLiberal,
        Ideology::Moderate,
        Ideology::CloserToConservative,
        Ideology::SomewhatConservative,
        Ideology::VeryConservative,
    ];

    /// The seven substantive placements, liberal to conservative.
    pub const SPECTRUM: [Ideology; 7] = [
        Ideology::VeryLiberal,
        Ideology::SomewhatLiberal,
        Ideology::CloserToLiberal,
        Ideology::Moderate,
        Ideology::CloserToConservative,
        Ideology::SomewhatConservative,
        Ideology::VeryConservative,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Ideology::NoAnswer => "No answer",
            Ideology::VeryLiberal => "Very liberal",
            Ideology::SomewhatLiberal => "Somewhat liberal",
            Ideology::CloserToLiberal => "Closer to liberal",
            Ideology::Moderate => "Moderate",
            Ideology::CloserToConservative => "Closer to conservative",
            Ideology::SomewhatConservative => "Somewhat conservative",
            Ideology::VeryConservative => "Very conservative",
        }
    }

    pub fn from_label(label: &str) -> Option<Ideology> {
        let needle = label.trim();
        Ideology::ALL
            .into_iter()
            .find(|i| i.label().eq_ignore_ascii_case(needle))
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a persona came from. Synthetic personas must carry all demographic
/// fields before a prompt can be rendered; survey personas only the core three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaOrigin {
    #[default]
    Synthetic,
    Survey,
}

/// One synthetic or survey-derived individual.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    #[serde(default)]
    pub origin: PersonaOrigin,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub ethnicity: Option<String>,
    pub marital_status: Option<String>,
    pub household_size: Option<u32>,
    pub has_children: Option<bool>,
    pub education: Option<String>,
    pub occupation: Option<String>,
    pub income_individual: Option<String>,
    pub income_family: Option<String>,
    pub residence: Option<StateCode>,
    pub ideology: Option<Ideology>,
    /// Block the persona was synthesized in, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_id: Option<String>,
    /// Survey-only items rendered verbatim into prompts, keyed by display label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl Persona {
    pub fn new(id: impl Into<String>) -> Self {
        Persona {
            id: id.into(),
            ..Default::default()
        }
    }

    /// Copy of this persona with an ideology placement attached.
    pub fn extended(&self, ideology: Ideology) -> Persona {
        Persona {
            ideology: Some(ideology),
            ..self.clone()
        }
    }

    /// Categorical indicator features (`field=value`) plus a centred age term,
    /// used by the logistic oracle backend.
    pub fn features(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((format!("{key}={v}"), 1.0));
            }
        };
        push("gender", self.gender.clone());
        push("ethnicity", self.ethnicity.clone());
        push("marital_status", self.marital_status.clone());
        push("household_size", self.household_size.map(|h| h.to_string()));
        push(
            "has_children",
            self.has_children.map(|c| if c { "yes" } else { "no" }.to_string()),
        );
        push("education", self.education.clone());
        push("occupation", self.occupation.clone());
        push("income_individual", self.income_individual.clone());
        push("income_family", self.income_family.clone());
        push("residence", self.residence.map(|r| r.to_string()));
        push("ideology", self.ideology.map(|i| i.label().to_string()));
        for (k, v) in &self.attributes {
            out.push((format!("{k}={v}"), 1.0));
        }
        if let Some(age) = self.age {
            out.push(("age".to_string(), (f64::from(age) - 45.0) / 15.0));
        }
        out
    }
}

/// Fixed CSV column order for persona files.
pub const PERSONA_CSV_HEADER: [&str; 15] = [
    "id",
    "origin",
    "block_id",
    "residence",
    "age",
    "gender",
    "ethnicity",
    "marital_status",
    "household_size",
    "has_children",
    "education",
    "occupation",
    "income_individual",
    "income_family",
    "ideology",
];

impl Persona {
    pub fn csv_row(&self) -> [String; 15] {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.id.clone(),
            match self.origin {
                PersonaOrigin::Synthetic => "synthetic".into(),
                PersonaOrigin::Survey => "survey".into(),
            },
            opt(&self.block_id),
            opt(&self.residence),
            opt(&self.age),
            opt(&self.gender),
            opt(&self.ethnicity),
            opt(&self.marital_status),
            opt(&self.household_size),
            opt(&self.has_children),
            opt(&self.education),
            opt(&self.occupation),
            opt(&self.income_individual),
            opt(&self.income_family),
            opt(&self.ideology),
        ]
    }
}
