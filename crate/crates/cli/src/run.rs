//! The `synth`, `simulate`, `evaluate` and `cache compact` commands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use votesim_core::backends::{self, CompactReport, Decider, DecisionBackend, HttpBackend, OracleBackend, ResponseCache};
use votesim_core::context::{load_context, summarize_neutral, SummaryOptions, TimeContext};
use votesim_core::evaluate::{self, AggregateComparison, EvaluationReport, GroundTruth};
use votesim_core::persona::{Persona, StateCode};
use votesim_core::pipeline::{self, PipelineError, PipelineOptions, PipelineRun, VoteRecord};
use votesim_core::population::{self, load_blocks, BlockAggregate, BlockSummary};
use votesim_core::respondents::{self, load_respondents, Codebook, SchemaYear};
use votesim_core::sampling::{self, ProfileMap, SamplePlan};
use votesim_core::seed;
use votesim_core::tally::{self, ElectoralOutcome, StateResult, VoteCounts};

use crate::config::{config_error, BackendKind, Settings};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identification stamped into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub template_version: String,
    pub backend: String,
    pub tool_version: String,
}

impl Meta {
    pub fn new(settings: &Settings, backend: &str) -> Meta {
        Meta {
            config_hash: settings.config_hash(),
            seed: settings.seed(),
            template_version: pipeline::TEMPLATE_VERSION.to_string(),
            backend: backend.to_string(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn lines(&self) -> Vec<String> {
        self.map().into_iter().map(|(k, v)| format!("{k}: {v}")).collect()
    }

    pub fn map(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("backend".to_string(), self.backend.clone()),
            ("config_hash".to_string(), self.config_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("template_version".to_string(), self.template_version.clone()),
            ("tool_version".to_string(), self.tool_version.clone()),
        ])
    }
}

pub const OUTPUT_DIRS: [&str; 5] = ["personas", "votes", "results", "reports", "cache"];

fn create_layout(out: &Path) -> anyhow::Result<()> {
    for d in OUTPUT_DIRS {
        let p = out.join(d);
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn write_personas(path: &Path, personas: &[Persona], meta: &Meta) -> anyhow::Result<()> {
    write_file(path, |w| population::write_personas_csv(w, personas, &meta.lines()))
}

fn load_profiles(settings: &Settings) -> anyhow::Result<ProfileMap> {
    let path = settings.path("profiles")?;
    ProfileMap::load(&path).map_err(|e| config_error(format!("--profiles: {e}")))
}

fn blocks_by_state(settings: &Settings) -> anyhow::Result<BTreeMap<StateCode, Vec<BlockAggregate>>> {
    let path = settings.path("blocks")?;
    if !path.exists() {
        return Err(config_error(format!("--blocks {}: no such file or directory", path.display())));
    }
    let blocks = load_blocks(&path).with_context(|| format!("--blocks {}", path.display()))?;
    let mut by_state: BTreeMap<StateCode, Vec<BlockAggregate>> = BTreeMap::new();
    for b in blocks {
        let state = b.state().with_context(|| format!("--blocks {}", path.display()))?;
        by_state.entry(state).or_default().push(b);
    }
    Ok(by_state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSynthesis {
    pub state: StateCode,
    pub count: usize,
    pub blocks: Vec<BlockSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub meta: Meta,
    pub command: String,
    pub total: usize,
    pub states: Vec<StateSynthesis>,
}

fn synthesize(
    settings: &Settings,
    state: StateCode,
    blocks: &[BlockAggregate],
) -> anyhow::Result<(Vec<Persona>, StateSynthesis)> {
    let (personas, summaries) = population::synthesize_state(blocks, &settings.config.synthesis, settings.seed())
        .with_context(|| format!("synthesizing {state}"))?;
    let summary = StateSynthesis {
        state,
        count: personas.len(),
        blocks: summaries,
    };
    Ok((personas, summary))
}

/// Synthesize personas for the selected states and write them with a
/// manifest under `personas/`.
pub fn synth(settings: &Settings) -> anyhow::Result<SynthManifest> {
    let out = settings.out_dir();
    create_layout(&out)?;
    let meta = Meta::new(settings, "none");
    let by_state = blocks_by_state(settings)?;
    let selected: Vec<StateCode> = match &settings.config.states {
        crate::config::StateSelection::Named(n) if n == "all" => by_state.keys().copied().collect(),
        selection => selection.resolve(&load_profiles(settings)?)?,
    };
    let mut states = Vec::new();
    for state in selected {
        let Some(blocks) = by_state.get(&state) else {
            return Err(config_error(format!("--blocks: no blocks for {state}")));
        };
        let (personas, summary) = synthesize(settings, state, blocks)?;
        write_personas(&out.join("personas").join(format!("{state}.csv")), &personas, &meta)?;
        info!("{state}: {} personas", personas.len());
        states.push(summary);
    }
    let manifest = SynthManifest {
        meta,
        command: "synth".into(),
        total: states.iter().map(|s| s.count).sum(),
        states,
    };
    write_json(&out.join("personas").join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub state: StateCode,
    pub synthesized: usize,
    pub plan: SamplePlan,
    /// Size after the configured cap, if any.
    pub drawn: usize,
    pub margin_of_error: Option<f64>,
}

/// Personas a simulation will put to the backend, and how they were chosen.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub personas: Vec<Persona>,
    pub populations: Vec<(StateCode, Vec<Persona>)>,
    pub samples: Vec<StateSample>,
    pub states: Vec<StateCode>,
    pub survey_truth: Option<f64>,
    pub survey_warnings: Vec<String>,
}

/// Build the persona set for a run: survey respondents when configured,
/// otherwise synthesis plus per-state sampling.
pub fn prepare(settings: &Settings) -> anyhow::Result<Prepared> {
    if let Some(path) = settings.optional_path("respondents") {
        return prepare_survey(settings, &path);
    }
    let profiles = load_profiles(settings)?;
    let states = settings.config.states.resolve(&profiles)?;
    let by_state = blocks_by_state(settings)?;
    let ratio = match &settings.config.sampling.ratio {
        Some(r) => Some(sampling::parse_ratio(r).map_err(|e| config_error(format!("sampling.ratio: {e}")))?),
        None => None,
    };
    let mut prepared = Prepared {
        personas: Vec::new(),
        populations: Vec::new(),
        samples: Vec::new(),
        states: states.clone(),
        survey_truth: None,
        survey_warnings: Vec::new(),
    };
    for state in states {
        let blocks = by_state
            .get(&state)
            .ok_or_else(|| config_error(format!("--blocks: no blocks for {state}")))?;
        let (population, _) = synthesize(settings, state, blocks)?;
        let profile = profiles.get(&state).expect("resolved against profiles");
        let mut plan = sampling::plan_sample(profile, ratio, settings.seed())
            .map_err(|e| config_error(format!("{state}: {e}")))?;
        if let Some(cap) = settings.config.sampling.size_cap {
            plan.size = plan.size.min(cap);
        }
        let sample = sampling::draw_sample(&population, &plan)?;
        prepared.samples.push(StateSample {
            state,
            synthesized: population.len(),
            drawn: sample.len(),
            margin_of_error: sampling::margin_of_error(sample.len() as u64, 0.95).ok(),
            plan,
        });
        prepared.personas.extend(sample);
        prepared.populations.push((state, population));
    }
    prepared.personas.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(prepared)
}

fn prepare_survey(settings: &Settings, path: &Path) -> anyhow::Result<Prepared> {
    let survey = &settings.config.survey;
    let year = SchemaYear::from_year(survey.schema_year)
        .ok_or_else(|| config_error(format!("survey.schema_year {} is not 2016 or 2020", survey.schema_year)))?;
    let codebook = match settings.optional_path("codebook") {
        Some(p) => Codebook::load(&p).map_err(|e| config_error(format!("paths.codebook: {e}")))?,
        None => Codebook::default(),
    };
    let report = load_respondents(path, year, &codebook).with_context(|| format!("--respondents {}", path.display()))?;
    let survey_warnings: Vec<String> = report
        .warnings
        .iter()
        .map(|w| format!("row {} ({}): {}", w.row, w.respondent_id, w.message))
        .collect();
    for w in &survey_warnings {
        warn!("{w}");
    }
    let mut personas: Vec<Persona> = report
        .records
        .iter()
        .map(|r| respondents::to_persona(r, survey.include_ideology))
        .collect();
    personas.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Prepared {
        personas,
        populations: Vec::new(),
        samples: Vec::new(),
        states: Vec::new(),
        survey_truth: evaluate::survey_truth_ratio(&report.records).ok(),
        survey_warnings,
    })
}

/// Backend and cache as configured. Replay reads the configured cache; the
/// other backends record into it (default `cache/responses.jsonl`).
pub fn build_decider(settings: &Settings) -> anyhow::Result<Decider> {
    let backend = &settings.config.backend;
    let cache_path = settings
        .optional_path("cache")
        .unwrap_or_else(|| settings.out_dir().join("cache").join("responses.jsonl"));
    if backend.kind == BackendKind::Replay && !cache_path.exists() {
        return Err(config_error(format!(
            "--cache {}: replay needs an existing response cache",
            cache_path.display()
        )));
    }
    let cache = Arc::new(ResponseCache::open(&cache_path).map_err(|e| config_error(e.to_string()))?);
    crate::register_cache(cache.clone());
    let inner: Arc<dyn DecisionBackend> = match backend.kind {
        BackendKind::Replay => return Ok(Decider::replay(cache, backend.strict_replay)),
        BackendKind::Oracle => {
            let mut oracle = backend.oracle.clone();
            oracle.seed = seed::derive_u64(settings.seed(), &["oracle"]);
            Arc::new(OracleBackend::new(oracle).map_err(|e| config_error(e.to_string()))?)
        }
        BackendKind::Http => Arc::new(HttpBackend::from_env(backend.http())?),
    };
    Ok(Decider::new(inner, cache, backend.retry()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub meta: Meta,
    pub states: Vec<StateResult>,
    pub outcome: ElectoralOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFile {
    pub meta: Meta,
    pub counts: VoteCounts,
    pub predicted: Option<f64>,
    /// Respondents' own reported votes, for survey runs.
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub meta: Meta,
    pub command: String,
    pub election_year: u16,
    pub pipeline: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub personas: usize,
    pub samples: Vec<StateSample>,
    pub failed: usize,
    pub unparseable: usize,
    pub context_summarized: bool,
    pub summary_version: Option<String>,
    pub complete: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub manifest: RunManifest,
    pub results: Option<ResultsFile>,
    pub aggregate: AggregateFile,
}

pub fn simulate(settings: &Settings) -> anyhow::Result<SimulateSummary> {
    let decider = build_decider(settings)?;
    simulate_with(settings, &decider)
}

fn load_run_context(settings: &Settings) -> anyhow::Result<TimeContext> {
    let path = settings.path("context")?;
    let context = load_context(&path).map_err(|e| config_error(format!("--context: {e}")))?;
    if context.year != settings.config.election_year {
        return Err(config_error(format!(
            "--context {}: year {} does not match election_year {}",
            path.display(),
            context.year,
            settings.config.election_year
        )));
    }
    Ok(context)
}

/// End-to-end run against an already built decider.
pub fn simulate_with(settings: &Settings, decider: &Decider) -> anyhow::Result<SimulateSummary> {
    let config = &settings.config;
    let out = settings.out_dir();
    create_layout(&out)?;
    let meta = Meta::new(settings, &decider.backend_id());
    let mut warnings = Vec::new();

    let mut context = load_run_context(settings)?;
    if config.summarize_context {
        let outcome = summarize_neutral(
            &context,
            decider,
            &SummaryOptions {
                model_id: config.backend.model_id.clone(),
                params: config.backend.params(),
            },
        );
        if let Some(w) = outcome.warning {
            warn!("{w}");
            warnings.push(w);
        }
        context = outcome.context;
    }

    let prepared = prepare(settings)?;
    warnings.extend(prepared.survey_warnings.iter().cloned());
    for (state, population) in &prepared.populations {
        write_personas(&out.join("personas").join(format!("{state}.csv")), population, &meta)?;
    }
    let sampled_name = if prepared.samples.is_empty() { "survey.csv" } else { "sample.csv" };
    write_personas(&out.join("personas").join(sampled_name), &prepared.personas, &meta)?;

    let options = PipelineOptions {
        model_id: config.backend.model_id.clone(),
        params: config.backend.params(),
        retry_limit: config.retry_limit,
        workers: config.workers,
        max_failure_fraction: config.max_failure_fraction,
    };
    info!(
        "running {} over {} personas with the {} backend",
        config.pipeline,
        prepared.personas.len(),
        decider.backend_id()
    );
    let (run, failure) = match pipeline::run_pipeline(config.pipeline, &prepared.personas, &context, decider, &options) {
        Ok(run) => (run, None),
        Err(PipelineError::BackendExhausted { failed, total, partial }) => {
            let run: PipelineRun = *partial;
            let err = PipelineError::BackendExhausted {
                failed,
                total,
                partial: Box::new(run.clone()),
            };
            (run, Some(err))
        }
        Err(e) => {
            decider.cache().flush()?;
            return Err(e.into());
        }
    };
    decider.cache().flush()?;

    write_file(&out.join("votes").join("votes.jsonl"), |w| {
        serde_json::to_writer(&mut *w, &serde_json::json!({ "meta": &meta }))?;
        w.write_all(b"\n")?;
        pipeline::write_vote_records(w, &run.records)
    })?;

    let counts = VoteCounts::from_records(&run.records);
    let aggregate = AggregateFile {
        meta: meta.clone(),
        counts,
        predicted: counts.republican_share(),
        actual: prepared.survey_truth,
    };
    write_json(&out.join("results").join("aggregate.json"), &aggregate)?;

    let results = if prepared.samples.is_empty() {
        None
    } else {
        Some(write_state_results(settings, &out, &meta, &prepared.states, &run.records)?)
    };

    let manifest = RunManifest {
        meta,
        command: "simulate".into(),
        election_year: config.election_year,
        pipeline: config.pipeline.to_string(),
        model_id: config.backend.model_id.clone(),
        temperature: config.backend.temperature,
        max_tokens: config.backend.max_tokens,
        personas: prepared.personas.len(),
        samples: prepared.samples,
        failed: run.failed,
        unparseable: run.unparseable,
        context_summarized: context.summarized,
        summary_version: context.summary_version.clone(),
        complete: failure.is_none(),
        warnings,
    };
    write_json(&out.join("reports").join("run_manifest.json"), &manifest)?;
    if let Some(err) = failure {
        return Err(anyhow::Error::new(err).context(format!("partial results written to {}", out.display())));
    }
    Ok(SimulateSummary {
        out,
        manifest,
        results,
        aggregate,
    })
}

fn write_state_results(
    settings: &Settings,
    out: &Path,
    meta: &Meta,
    states: &[StateCode],
    records: &[VoteRecord],
) -> anyhow::Result<ResultsFile> {
    let profiles = load_profiles(settings)?;
    let rule = settings.config.tie_rule;
    let tallied = tally::tally_states(records, &profiles, rule)?;
    let results: Vec<StateResult> = states
        .iter()
        .map(|s| {
            tallied.iter().find(|r| r.state == *s).cloned().unwrap_or_else(|| {
                let ev = profiles.get(s).map_or(0, |p| p.electoral_votes);
                StateResult::from_counts(*s, VoteCounts::default(), ev, rule)
            })
        })
        .collect();
    for r in results.iter().filter(|r| r.republican_share.is_none()) {
        warn!("{}: no major-party votes; share undefined", r.state);
    }
    let outcome = tally::electoral_tally(&tally::winners_of(&results), &profiles)?;
    let lines = meta.lines();
    write_file(&out.join("results").join("states.csv"), |w| {
        tally::write_results_csv(w, &results, &lines)
    })?;
    write_file(&out.join("results").join("plot_data.csv"), |w| {
        tally::write_plot_data(w, &results, &lines)
    })?;
    let file = ResultsFile {
        meta: meta.clone(),
        states: results,
        outcome,
    };
    write_json(&out.join("results").join("states.json"), &file)?;
    Ok(file)
}

/// Compare a simulation's outputs with ground truth and write the reports.
pub fn evaluate(settings: &Settings, results_path: Option<&Path>) -> anyhow::Result<EvaluationReport> {
    let out = settings.out_dir();
    create_layout(&out)?;
    let states_path = results_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("results").join("states.json"));
    let aggregate_path = out.join("results").join("aggregate.json");
    let read = |p: &Path| -> anyhow::Result<String> {
        fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
    };

    let results: Option<ResultsFile> = if states_path.exists() {
        Some(serde_json::from_str(&read(&states_path)?).with_context(|| format!("parsing {}", states_path.display()))?)
    } else if results_path.is_some() {
        return Err(config_error(format!("--results {}: no such file", states_path.display())));
    } else {
        None
    };
    // An explicit results file stands alone; the run's aggregate only goes with
    // the run's own state table.
    let aggregate: Option<AggregateFile> = if results_path.is_none() && aggregate_path.exists() {
        Some(serde_json::from_str(&read(&aggregate_path)?).with_context(|| format!("parsing {}", aggregate_path.display()))?)
    } else {
        None
    };
    let meta = match (&results, &aggregate) {
        (Some(r), _) => r.meta.clone(),
        (None, Some(a)) => a.meta.clone(),
        (None, None) => {
            return Err(config_error(format!(
                "nothing to evaluate: neither {} nor {} exists",
                states_path.display(),
                aggregate_path.display()
            )))
        }
    };

    let mut truth_source = None;
    let states = match &results {
        Some(r) => {
            let truth_path = settings.path("truth")?;
            let truth = GroundTruth::load(&truth_path).map_err(|e| config_error(format!("--truth: {e}")))?;
            truth_source = Some(truth.source.clone());
            Some(evaluate::evaluate_states(&r.states, &truth)?)
        }
        None => None,
    };
    let counts = match (&results, &aggregate) {
        (_, Some(a)) => a.counts,
        (Some(r), None) => {
            let mut c = VoteCounts::default();
            for s in &r.states {
                c.democratic += s.counts.democratic;
                c.republican += s.counts.republican;
                c.no_preference += s.counts.no_preference;
                c.unparseable += s.counts.unparseable;
            }
            c
        }
        (None, None) => unreachable!(),
    };
    let aggregate_cmp = aggregate.as_ref().and_then(|a| {
        a.predicted.map(|p| AggregateComparison {
            predicted: p,
            actual: a.actual,
        })
    });
    if aggregate_cmp.as_ref().is_some_and(|a| a.actual.is_some()) && truth_source.is_none() {
        truth_source = Some("respondents' reported votes".into());
    }
    let report = EvaluationReport {
        meta: meta.map(),
        truth_source,
        states,
        aggregate: aggregate_cmp,
        unparseable_rate: counts.unparseable_rate(),
    };

    let reports = out.join("reports");
    write_json(&reports.join("evaluation.json"), &report)?;
    let text = evaluate::render_text(&report);
    write_file(&reports.join("evaluation.txt"), |w| w.write_all(text.as_bytes()))?;
    if let Some(st) = &report.states {
        let lines = meta.lines();
        write_file(&reports.join("confusion.csv"), |w| {
            evaluate::write_confusion_csv(w, &st.confusion.matrix, &lines)
        })?;
        write_file(&reports.join("plot_data.csv"), |w| {
            for l in &lines {
                writeln!(w, "# {l}")?;
            }
            writeln!(w, "state,predicted_share,actual_share,abs_error")?;
            for r in &st.shares.rows {
                writeln!(w, "{},{:.6},{:.6},{:.6}", r.state, r.predicted, r.actual, r.abs_error)?;
            }
            Ok(())
        })?;
    }
    Ok(report)
}

pub fn compact_cache(path: &Path) -> anyhow::Result<CompactReport> {
    if !path.exists() {
        return Err(config_error(format!("{}: no such cache file", path.display())));
    }
    backends::compact(path).map_err(|e| anyhow!(e))
}
