//! Prompt rendering, response parsing and the per-persona V1/V2/V3 runs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, BackendRequest, Decider, GenerationParams, Stage};
use crate::context::TimeContext;
use crate::persona::{Ideology, Persona, PersonaOrigin, StateCode};

pub const TEMPLATE_VERSION: &str = "prompts-v1";

const V1_TEMPLATE: &str = include_str!("../templates/v1.txt");
const V2_TEMPLATE: &str = include_str!("../templates/v2.txt");
const V3_STEP1_TEMPLATE: &str = include_str!("../templates/v3_step1.txt");
const V3_STEP2_TEMPLATE: &str = include_str!("../templates/v3_step2.txt");

/// Appended to the vote prompt when an answer could not be parsed.
pub const REASK_SUFFIX: &str = "Answer with exactly one of: Democratic, Republican, No Preference.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineVersion {
    V1,
    V2,
    V3,
}

impl fmt::Display for PipelineVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineVersion::V1 => "v1",
            PipelineVersion::V2 => "v2",
            PipelineVersion::V3 => "v3",
        })
    }
}

impl FromStr for PipelineVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(PipelineVersion::V1),
            "v2" | "2" => Ok(PipelineVersion::V2),
            "v3" | "3" => Ok(PipelineVersion::V3),
            _ => Err(format!("unknown pipeline version `{s}` (expected v1, v2 or v3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteChoice {
    Democratic,
    Republican,
    #[serde(rename = "No Preference")]
    NoPreference,
    Unparseable,
}

impl VoteChoice {
    pub fn label(&self) -> &'static str {
        match self {
            VoteChoice::Democratic => "Democratic",
            VoteChoice::Republican => "Republican",
            VoteChoice::NoPreference => "No Preference",
            VoteChoice::Unparseable => "Unparseable",
        }
    }
}

impl fmt::Display for VoteChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("persona lacks `{0}`")]
    MissingField(&'static str),
    #[error("context lacks {0}")]
    MissingContext(&'static str),
    #[error("persona has no ideology placement")]
    MissingIdeology,
}

/// Replace `{name}` placeholders in one pass, so substituted text is never
/// rescanned. Brackets in values become parentheses to keep prompts free of
/// placeholder-looking residue.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').expect("template placeholder is closed");
        let name = &after[..end];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .unwrap_or_else(|| panic!("template placeholder `{name}` has no value"))
            .1;
        out.push_str(&value.replace('[', "(").replace(']', ")"));
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    out
}

/// The persona's demographic phrase, in a fixed field order. Synthetic
/// personas must carry every field; survey personas only age, gender and
/// ethnicity, followed by their survey items.
pub fn demographic_sentence(p: &Persona) -> Result<String, RenderError> {
    let strict = p.origin == PersonaOrigin::Synthetic;
    let mut parts = Vec::new();
    let mut push = |name: &'static str, value: Option<String>, required: bool| {
        match value {
            Some(v) => {
                parts.push(v);
                Ok(())
            }
            None if required => Err(RenderError::MissingField(name)),
            None => Ok(()),
        }
    };
    push("age", p.age.map(|a| format!("age {a}")), true)?;
    push("gender", p.gender.as_ref().map(|g| format!("gender {g}")), true)?;
    push("ethnicity", p.ethnicity.as_ref().map(|e| format!("ethnicity {e}")), true)?;
    push(
        "marital_status",
        p.marital_status.as_ref().map(|m| format!("marital status {m}")),
        strict,
    )?;
    push(
        "household_size",
        p.household_size.map(|h| format!("household size {h}")),
        strict,
    )?;
    push(
        "has_children",
        p.has_children
            .map(|c| if c { "with children" } else { "without children" }.to_string()),
        strict,
    )?;
    push("education", p.education.as_ref().map(|e| format!("education level {e}")), strict)?;
    push("occupation", p.occupation.as_ref().map(|o| format!("occupation {o}")), strict)?;
    push(
        "income_individual",
        p.income_individual.as_ref().map(|i| format!("individual income {i}")),
        strict,
    )?;
    push(
        "income_family",
        p.income_family.as_ref().map(|i| format!("family income {i}")),
        strict,
    )?;
    push(
        "residence",
        p.residence.map(|r| format!("place of residence {}", r.name())),
        strict,
    )?;
    for (label, value) in &p.attributes {
        parts.push(format!("{label} {value}"));
    }
    Ok(parts.join(", "))
}

fn agendas(c: &TimeContext) -> String {
    format!(
        "Democratic Party policy agenda: {} Republican Party policy agenda: {}",
        c.parties.democratic.agenda.trim(),
        c.parties.republican.agenda.trim()
    )
}

fn biographies(c: &TimeContext) -> String {
    format!(
        "Democratic candidate {}: {} Republican candidate {}: {}",
        c.parties.democratic.candidate,
        c.parties.democratic.biography.trim(),
        c.parties.republican.candidate,
        c.parties.republican.biography.trim()
    )
}

fn require_agendas(c: &TimeContext) -> Result<(), RenderError> {
    if c.parties.democratic.agenda.trim().is_empty() || c.parties.republican.agenda.trim().is_empty() {
        return Err(RenderError::MissingContext("party agendas"));
    }
    Ok(())
}

fn require_biographies(c: &TimeContext) -> Result<(), RenderError> {
    if c.parties.democratic.biography.trim().is_empty()
        || c.parties.republican.biography.trim().is_empty()
    {
        return Err(RenderError::MissingContext("candidate biographies"));
    }
    Ok(())
}

pub fn render_v1(persona: &Persona, context: &TimeContext) -> Result<String, RenderError> {
    let demographics = demographic_sentence(persona)?;
    Ok(fill(
        V1_TEMPLATE,
        &[
            ("demographics", &demographics),
            ("year", &context.year.to_string()),
            ("democratic_candidate", &context.parties.democratic.candidate),
            ("republican_candidate", &context.parties.republican.candidate),
        ],
    ))
}

pub fn render_v2(persona: &Persona, context: &TimeContext) -> Result<String, RenderError> {
    let demographics = demographic_sentence(persona)?;
    require_agendas(context)?;
    require_biographies(context)?;
    Ok(fill(
        V2_TEMPLATE,
        &[
            ("demographics", &demographics),
            ("year", &context.year.to_string()),
            ("agendas", &agendas(context)),
            ("biographies", &biographies(context)),
            ("democratic_candidate", &context.parties.democratic.candidate),
            ("republican_candidate", &context.parties.republican.candidate),
        ],
    ))
}

pub fn render_v3_step1(persona: &Persona, context: &TimeContext) -> Result<String, RenderError> {
    let demographics = demographic_sentence(persona)?;
    require_agendas(context)?;
    Ok(fill(
        V3_STEP1_TEMPLATE,
        &[
            ("demographics", &demographics),
            ("year", &context.year.to_string()),
            ("agendas", &agendas(context)),
        ],
    ))
}

pub fn render_v3_step2(persona: &Persona, context: &TimeContext) -> Result<String, RenderError> {
    let ideology = persona.ideology.ok_or(RenderError::MissingIdeology)?;
    let demographics = demographic_sentence(persona)?;
    require_agendas(context)?;
    require_biographies(context)?;
    Ok(fill(
        V3_STEP2_TEMPLATE,
        &[
            ("demographics", &demographics),
            ("ideology", ideology.label()),
            ("year", &context.year.to_string()),
            ("agendas", &agendas(context)),
            ("biographies", &biographies(context)),
            ("democratic_candidate", &context.parties.democratic.candidate),
            ("republican_candidate", &context.parties.republican.candidate),
        ],
    ))
}

/// Option mentions in an already lowercased text, by byte offset. A mention
/// must start at a word boundary so "undemocratic" does not count.
fn option_mentions(lower: &str) -> Vec<(usize, VoteChoice)> {
    const TOKENS: [(&str, VoteChoice); 3] = [
        ("no preference", VoteChoice::NoPreference),
        ("republican", VoteChoice::Republican),
        ("democrat", VoteChoice::Democratic),
    ];
    let mut found = Vec::new();
    for (token, choice) in TOKENS {
        for (pos, _) in lower.match_indices(token) {
            let boundary = lower[..pos]
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric());
            if boundary {
                found.push((pos, choice));
            }
        }
    }
    found.sort();
    found
}

/// Map a free-text answer to a vote. If only one option is mentioned anywhere
/// it wins; otherwise the last option on the final non-empty line does.
pub fn parse_vote(raw: &str) -> VoteChoice {
    let lower = raw.to_lowercase();
    let all = option_mentions(&lower);
    let Some(&(_, first)) = all.first() else {
        return VoteChoice::Unparseable;
    };
    if all.iter().all(|&(_, c)| c == first) {
        return first;
    }
    lower
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|line| option_mentions(line).last().map(|&(_, c)| c))
        .unwrap_or(VoteChoice::Unparseable)
}

/// Longest placement label found in the answer (case-insensitive); later
/// mentions break ties. Nothing recognizable maps to "No answer".
pub fn parse_ideology(raw: &str) -> Ideology {
    let lower = raw.to_lowercase();
    Ideology::ALL
        .into_iter()
        .filter_map(|i| {
            lower
                .rfind(&i.label().to_lowercase())
                .map(|pos| (i.label().len(), pos, i))
        })
        .max()
        .map_or(Ideology::NoAnswer, |(_, _, i)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub persona_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateCode>,
    pub version: PipelineVersion,
    pub choice: VoteChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideology_assigned: Option<Ideology>,
    /// The placement came from the persona's own record, not from step 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ideology_restored: bool,
    /// Cache key of the final vote response.
    pub response_ref: Option<String>,
    /// Vote questions asked, re-asks included.
    pub attempts: u32,
    /// Backend failure that left this persona without an answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub model_id: String,
    pub params: GenerationParams,
    /// Re-asks after an unparseable vote answer.
    pub retry_limit: u32,
    pub workers: usize,
    /// Largest tolerated fraction of personas lost to backend failures.
    pub max_failure_fraction: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            model_id: "gpt-4o".into(),
            params: GenerationParams::default(),
            retry_limit: 2,
            workers: 8,
            max_failure_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub records: Vec<VoteRecord>,
    pub failed: usize,
    pub unparseable: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("cannot render prompt for persona {persona_id}")]
    Render {
        persona_id: String,
        source: RenderError,
    },
    #[error("backend failure on persona {persona_id}")]
    Fatal {
        persona_id: String,
        source: BackendError,
    },
    #[error("{failed} of {total} personas failed at the backend, above the tolerated fraction")]
    BackendExhausted {
        failed: usize,
        total: usize,
        partial: Box<PipelineRun>,
    },
}

fn request(prompt: String, draw_key: String, stage: Stage, persona: &Persona, o: &PipelineOptions) -> BackendRequest {
    BackendRequest {
        params: o.params,
        draw_key: Some(draw_key),
        features: persona.features(),
        ..BackendRequest::new(prompt, o.model_id.clone(), stage)
    }
}

fn run_one(
    version: PipelineVersion,
    persona: &Persona,
    context: &TimeContext,
    decider: &Decider,
    options: &PipelineOptions,
) -> Result<VoteRecord, PipelineError> {
    let render_err = |source| PipelineError::Render {
        persona_id: persona.id.clone(),
        source,
    };
    let mut record = VoteRecord {
        persona_id: persona.id.clone(),
        state: persona.residence,
        version,
        choice: VoteChoice::Unparseable,
        ideology_assigned: None,
        ideology_restored: false,
        response_ref: None,
        attempts: 0,
        error: None,
    };
    let fail = |mut record: VoteRecord, e: BackendError| {
        if decider.is_fatal(&e) {
            return Err(PipelineError::Fatal {
                persona_id: persona.id.clone(),
                source: e,
            });
        }
        record.error = Some(e.to_string());
        record.attempts = record.attempts.max(1);
        Ok(record)
    };

    let (voter, prompt) = match version {
        PipelineVersion::V1 => (persona.clone(), render_v1(persona, context).map_err(render_err)?),
        PipelineVersion::V2 => (persona.clone(), render_v2(persona, context).map_err(render_err)?),
        PipelineVersion::V3 => {
            let extended = match persona.ideology {
                Some(own) => {
                    record.ideology_restored = true;
                    persona.extended(own)
                }
                None => {
                    let step1 = render_v3_step1(persona, context).map_err(render_err)?;
                    let req = request(step1, format!("{}/ideology", persona.id), Stage::Ideology, persona, options);
                    match decider.decide(&req) {
                        Ok(d) => persona.extended(parse_ideology(&d.response)),
                        Err(e) => return fail(record, e),
                    }
                }
            };
            record.ideology_assigned = extended.ideology;
            let prompt = render_v3_step2(&extended, context).map_err(render_err)?;
            (extended, prompt)
        }
    };

    for ask in 0..=options.retry_limit {
        let (text, key) = if ask == 0 {
            (prompt.clone(), format!("{}/vote", persona.id))
        } else {
            (
                format!("{prompt}\n\n{REASK_SUFFIX}"),
                format!("{}/vote/reask{ask}", persona.id),
            )
        };
        record.attempts = ask + 1;
        match decider.decide(&request(text, key, Stage::Vote, &voter, options)) {
            Ok(d) => {
                record.response_ref = Some(d.cache_key);
                record.choice = parse_vote(&d.response);
                if record.choice != VoteChoice::Unparseable {
                    break;
                }
            }
            Err(e) => return fail(record, e),
        }
    }
    Ok(record)
}

/// Run one pipeline version over `personas`. Results are sorted by persona
/// id and do not depend on worker count or completion order.
pub fn run_pipeline(
    version: PipelineVersion,
    personas: &[Persona],
    context: &TimeContext,
    decider: &Decider,
    options: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let width = options.workers.min(decider.max_parallel()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .expect("worker pool");
    let mut records: Vec<VoteRecord> = pool.install(|| {
        personas
            .par_iter()
            .map(|p| run_one(version, p, context, decider, options))
            .collect::<Result<_, _>>()
    })?;
    records.sort_by(|a, b| a.persona_id.cmp(&b.persona_id));
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let unparseable = records
        .iter()
        .filter(|r| r.error.is_none() && r.choice == VoteChoice::Unparseable)
        .count();
    let run = PipelineRun {
        records,
        failed,
        unparseable,
    };
    let total = personas.len();
    if total > 0 && failed as f64 / total as f64 > options.max_failure_fraction {
        return Err(PipelineError::BackendExhausted {
            failed,
            total,
            partial: Box::new(run),
        });
    }
    Ok(run)
}

pub fn write_vote_records<W: Write>(mut out: W, records: &[VoteRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse JSON-lines vote records. Blank lines, `#` comments and a
/// `{"meta": ...}` header line are skipped.
pub fn read_vote_records(text: &str) -> Result<Vec<VoteRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#') && !l.trim_start().starts_with("{\"meta\""))
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FixedBackend, FnBackend, ResponseCache, RetryPolicy};
    use crate::context::parse_context;
    use std::sync::Arc;

    fn context() -> TimeContext {
        parse_context(
            r#"{"year": 2020, "parties": {
                "democratic": {"candidate": "Joe Biden", "biography": "DEM-BIO [draft]", "agenda": "DEM-AGENDA"},
                "republican": {"candidate": "Donald Trump", "biography": "REP-BIO", "agenda": "REP-AGENDA"}}}"#,
            "t",
        )
        .unwrap()
    }

    fn persona(id: &str) -> Persona {
        Persona {
            age: Some(42),
            gender: Some("Female".into()),
            ethnicity: Some("White".into()),
            marital_status: Some("Married".into()),
            household_size: Some(3),
            has_children: Some(true),
            education: Some("Bachelor's degree".into()),
            occupation: Some("Teacher".into()),
            income_individual: Some("$50,000 to $74,999".into()),
            income_family: Some("$100,000 to $149,999".into()),
            residence: Some("PA".parse().unwrap()),
            ..Persona::new(id)
        }
    }

    fn decider(backend: Arc<dyn crate::backends::DecisionBackend>) -> Decider {
        Decider::new(backend, Arc::new(ResponseCache::in_memory()), RetryPolicy {
            retry_max: 0,
            base_delay_ms: 0,
            max_delay_ms: 0,
        })
    }

    #[test]
    fn v1_prompt_shape() {
        let text = render_v1(&persona("a"), &context()).unwrap();
        assert!(text.contains("The current year is 2020"));
        assert!(text.contains("place of residence Pennsylvania"));
        let d = text.find("   - Democratic").unwrap();
        let r = text.find("   - Republican").unwrap();
        let n = text.find("   - No Preference").unwrap();
        assert!(d < r && r < n);
        assert_eq!(text, render_v1(&persona("a"), &context()).unwrap());
        assert!(!text.contains('[') && !text.contains('{'));
    }

    #[test]
    fn missing_occupation() {
        let mut p = persona("a");
        p.occupation = None;
        assert_eq!(render_v1(&p, &context()), Err(RenderError::MissingField("occupation")));
    }

    #[test]
    fn survey_personas_need_core_fields_only() {
        let mut p = Persona::new("r1");
        p.origin = PersonaOrigin::Survey;
        p.age = Some(30);
        p.gender = Some("Male".into());
        p.ethnicity = Some("Hispanic".into());
        p.attributes.insert("party identification".into(), "Independent".into());
        let text = render_v1(&p, &context()).unwrap();
        assert!(text.contains("party identification Independent"));
    }

    #[test]
    fn v2_orders_sections_and_sanitizes() {
        let text = render_v2(&persona("a"), &context()).unwrap();
        let demo = text.find("age 42").unwrap();
        let agenda = text.find("DEM-AGENDA").unwrap();
        let bio = text.find("REP-BIO").unwrap();
        let question = text.find("As of today").unwrap();
        assert!(demo < agenda && agenda < bio && bio < question);
        assert!(text.contains("DEM-BIO (draft)"));
        assert!(!text.contains('['));
    }

    #[test]
    fn v3_step1_lists_each_option_once_without_biographies() {
        let text = render_v3_step1(&persona("a"), &context()).unwrap();
        for i in Ideology::ALL {
            assert_eq!(text.matches(&format!("- {}\n", i.label())).count(), 1, "{i}");
        }
        assert!(!text.contains("REP-BIO"));
        assert!(text.contains("REP-AGENDA"));
    }

    #[test]
    fn v3_step2_embeds_ideology() {
        assert_eq!(render_v3_step2(&persona("a"), &context()), Err(RenderError::MissingIdeology));
        let text = render_v3_step2(&persona("a").extended(Ideology::Moderate), &context()).unwrap();
        assert!(text.contains("placement is Moderate."));
        assert!(text.find("Moderate").unwrap() < text.find("DEM-AGENDA").unwrap());
    }

    #[test]
    fn vote_parsing_examples() {
        assert_eq!(parse_vote("Republican"), VoteChoice::Republican);
        assert_eq!(
            parse_vote("I would vote for the Democratic Party (Joe Biden)."),
            VoteChoice::Democratic
        );
        assert_eq!(parse_vote("As an AI I cannot..."), VoteChoice::Unparseable);
        assert_eq!(parse_vote("That is undemocratic."), VoteChoice::Unparseable);
        assert_eq!(
            parse_vote("Democratic, Republican or No Preference?\nFinal answer: no preference"),
            VoteChoice::NoPreference
        );
        assert_eq!(
            parse_vote("Republican or Democratic\n\nI am unsure."),
            VoteChoice::Unparseable
        );
    }

    #[test]
    fn ideology_parsing_examples() {
        assert_eq!(parse_ideology("somewhat conservative"), Ideology::SomewhatConservative);
        assert_eq!(parse_ideology("closer to liberal, I think"), Ideology::CloserToLiberal);
        assert_eq!(parse_ideology("purple"), Ideology::NoAnswer);
        assert_eq!(parse_ideology("MODERATE"), Ideology::Moderate);
    }

    #[test]
    fn fixed_backend_v1() {
        let personas: Vec<_> = (0..10).map(|i| persona(&format!("p{i:02}"))).collect();
        let d = decider(Arc::new(FixedBackend("Republican".into())));
        let run = run_pipeline(PipelineVersion::V1, &personas, &context(), &d, &PipelineOptions::default()).unwrap();
        assert_eq!(run.records.len(), 10);
        assert!(run.records.iter().all(|r| r.choice == VoteChoice::Republican && r.attempts == 1));
    }

    #[test]
    fn v3_chains_step1_into_step2() {
        let backend = FnBackend::new("script", |r: &BackendRequest| {
            Ok(match r.stage {
                Stage::Ideology => "Very conservative".to_string(),
                _ => "Republican".to_string(),
            })
        });
        let cache = Arc::new(ResponseCache::in_memory());
        let d = Decider::new(Arc::new(backend), cache.clone(), RetryPolicy::default());
        let run = run_pipeline(PipelineVersion::V3, &[persona("a")], &context(), &d, &PipelineOptions::default()).unwrap();
        let rec = &run.records[0];
        assert_eq!(rec.ideology_assigned, Some(Ideology::VeryConservative));
        let step2 = cache.get(rec.response_ref.as_ref().unwrap()).unwrap();
        assert!(step2.prompt.contains("placement is Very conservative"));
    }

    #[test]
    fn unparseable_is_reasked_then_kept() {
        let d = decider(Arc::new(FixedBackend("I prefer not to say.".into())));
        let run = run_pipeline(PipelineVersion::V1, &[persona("a")], &context(), &d, &PipelineOptions::default()).unwrap();
        assert_eq!(run.records[0].choice, VoteChoice::Unparseable);
        assert_eq!(run.records[0].attempts, 3);
        assert_eq!(run.unparseable, 1);
        assert_eq!(d.inner_calls(), 3);
    }

    #[test]
    fn reask_recovers() {
        let backend = FnBackend::new("script", |r: &BackendRequest| {
            Ok(if r.prompt.ends_with(REASK_SUFFIX) { "Democratic" } else { "Hmm." }.to_string())
        });
        let d = decider(Arc::new(backend));
        let run = run_pipeline(PipelineVersion::V1, &[persona("a")], &context(), &d, &PipelineOptions::default()).unwrap();
        assert_eq!(run.records[0].choice, VoteChoice::Democratic);
        assert_eq!(run.records[0].attempts, 2);
    }

    #[test]
    fn exhausted_backend_reports_partial() {
        let personas: Vec<_> = (0..20).map(|i| persona(&format!("p{i:02}"))).collect();
        let backend = FnBackend::new("half", |r: &BackendRequest| {
            if r.draw_key.as_deref().unwrap_or("").starts_with("p0") {
                Err(BackendError::Transport("down".into()))
            } else {
                Ok("Democratic".into())
            }
        });
        let d = decider(Arc::new(backend));
        match run_pipeline(PipelineVersion::V1, &personas, &context(), &d, &PipelineOptions::default()) {
            Err(PipelineError::BackendExhausted { failed, total, partial }) => {
                assert_eq!((failed, total), (10, 20));
                assert_eq!(partial.records.len(), 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn order_independent_of_workers() {
        let personas: Vec<_> = (0..30).rev().map(|i| persona(&format!("p{i:02}"))).collect();
        let backend = || {
            Arc::new(FnBackend::new("script", |r: &BackendRequest| {
                let k = r.draw_key.clone().unwrap_or_default();
                Ok(if k.len().is_multiple_of(2) { "Republican" } else { "Democratic" }.to_string())
            }))
        };
        let one = PipelineOptions {
            workers: 1,
            ..Default::default()
        };
        let many = PipelineOptions {
            workers: 6,
            ..Default::default()
        };
        let a = run_pipeline(PipelineVersion::V2, &personas, &context(), &decider(backend()), &one).unwrap();
        let b = run_pipeline(PipelineVersion::V2, &personas, &context(), &decider(backend()), &many).unwrap();
        assert_eq!(a, b);
        assert!(a.records.windows(2).all(|w| w[0].persona_id < w[1].persona_id));
    }
}
