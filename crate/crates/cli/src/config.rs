//! Run configuration: one JSON file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use votesim_core::backends::{GenerationParams, HttpConfig, OracleConfig, RetryPolicy};
use votesim_core::persona::StateCode;
use votesim_core::pipeline::PipelineVersion;
use votesim_core::population::SynthesisConfig;
use votesim_core::sampling::ProfileMap;
use votesim_core::tally::TieRule;

/// Invalid or incomplete configuration; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Oracle,
    Replay,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_parallel: usize,
    pub timeout_ms: u64,
    pub retry_max: u32,
    pub retry_base_delay_ms: u64,
    pub strict_replay: bool,
    /// Logistic oracle settings; its seed is always derived from the run seed.
    pub oracle: OracleConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        let params = GenerationParams::default();
        let retry = RetryPolicy::default();
        BackendConfig {
            kind: BackendKind::Oracle,
            model_id: "gpt-4o".into(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            base_url: http.base_url,
            api_key_env: http.api_key_env,
            max_parallel: http.max_parallel,
            timeout_ms: http.timeout_ms,
            retry_max: retry.retry_max,
            retry_base_delay_ms: retry.base_delay_ms,
            strict_replay: false,
            oracle: OracleConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn http(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.base_url.clone(),
            api_key_env: self.api_key_env.clone(),
            max_parallel: self.max_parallel,
            timeout_ms: self.timeout_ms,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            retry_max: self.retry_max,
            base_delay_ms: self.retry_base_delay_ms,
            ..RetryPolicy::default()
        }
    }
}

/// File locations. Relative paths in a config file are relative to that
/// file; relative paths given as flags are relative to the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub blocks: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub context: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub respondents: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingOverrides {
    /// Fixed ratio such as "1/500"; omitted means the population-banded default.
    pub ratio: Option<String>,
    /// Upper bound on personas per state, for small offline runs.
    pub size_cap: Option<u64>,
}

/// Survey-respondent runs replace synthesis and sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub schema_year: u16,
    /// Keep the respondent's own ideology self-placement.
    pub include_ideology: bool,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            schema_year: 2016,
            include_ideology: false,
        }
    }
}

/// `"all"`, `"swing"` or an explicit list of state codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSelection {
    Named(String),
    List(Vec<String>),
}

impl Default for StateSelection {
    fn default() -> Self {
        StateSelection::Named("all".into())
    }
}

impl StateSelection {
    pub fn parse_flag(text: &str) -> StateSelection {
        match text.trim().to_ascii_lowercase().as_str() {
            "all" | "swing" => StateSelection::Named(text.trim().to_ascii_lowercase()),
            _ => StateSelection::List(text.split(',').map(|s| s.trim().to_string()).collect()),
        }
    }

    pub fn resolve(&self, profiles: &ProfileMap) -> anyhow::Result<Vec<StateCode>> {
        let mut states = match self {
            StateSelection::Named(n) if n.eq_ignore_ascii_case("all") => profiles.0.keys().copied().collect(),
            StateSelection::Named(n) if n.eq_ignore_ascii_case("swing") => profiles.battleground(),
            StateSelection::Named(n) => return Err(config_error(format!("unknown state selection `{n}`"))),
            StateSelection::List(list) => list
                .iter()
                .map(|s| {
                    let code: StateCode = s.parse().map_err(|e| config_error(format!("--states: {e}")))?;
                    if profiles.get(&code).is_none() {
                        return Err(config_error(format!("--states: no profile for {code}")));
                    }
                    Ok(code)
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
        };
        states.sort();
        states.dedup();
        Ok(states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub election_year: u16,
    pub pipeline: PipelineVersion,
    pub backend: BackendConfig,
    pub states: StateSelection,
    /// Master seed; every random stream is derived from it.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub sampling: SamplingOverrides,
    pub synthesis: SynthesisConfig,
    pub survey: SurveyConfig,
    /// Pass agendas and biographies through the backend's neutral summary first.
    pub summarize_context: bool,
    pub workers: usize,
    pub retry_limit: u32,
    pub max_failure_fraction: f64,
    pub tie_rule: TieRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            election_year: 2020,
            pipeline: PipelineVersion::V3,
            backend: BackendConfig::default(),
            states: StateSelection::default(),
            seed: None,
            paths: Paths::default(),
            sampling: SamplingOverrides::default(),
            synthesis: SynthesisConfig::default(),
            survey: SurveyConfig::default(),
            summarize_context: false,
            workers: 8,
            retry_limit: 2,
            max_failure_fraction: 0.05,
            tie_rule: TieRule::Withhold,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub states: Option<String>,
    pub backend: Option<BackendKind>,
    pub strict_replay: bool,
    pub pipeline: Option<PipelineVersion>,
    pub out: Option<PathBuf>,
    pub blocks: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub context: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub respondents: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// A loaded configuration plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: RunConfig,
    base_dir: PathBuf,
    flag_paths: Paths,
}

impl Settings {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Settings> {
        let (mut config, base_dir) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| config_error(format!("--config {}: {e}", p.display())))?;
                let config: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("--config {}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, dir)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(states) = &overrides.states {
            config.states = StateSelection::parse_flag(states);
        }
        if let Some(kind) = overrides.backend {
            config.backend.kind = kind;
        }
        if overrides.strict_replay {
            config.backend.strict_replay = true;
        }
        if let Some(v) = overrides.pipeline {
            config.pipeline = v;
        }
        if let Some(w) = overrides.workers {
            config.workers = w;
        }
        let flag_paths = Paths {
            blocks: overrides.blocks.clone(),
            profiles: overrides.profiles.clone(),
            context: overrides.context.clone(),
            truth: overrides.truth.clone(),
            cache: overrides.cache.clone(),
            respondents: overrides.respondents.clone(),
            codebook: None,
            out: overrides.out.clone(),
        };
        // Flag paths are recorded as given so the hash stays stable.
        let p = &mut config.paths;
        for (slot, flag) in [
            (&mut p.blocks, &flag_paths.blocks),
            (&mut p.profiles, &flag_paths.profiles),
            (&mut p.context, &flag_paths.context),
            (&mut p.truth, &flag_paths.truth),
            (&mut p.cache, &flag_paths.cache),
            (&mut p.respondents, &flag_paths.respondents),
            (&mut p.out, &flag_paths.out),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if config.seed.is_none() {
            return Err(config_error("a seed is required (set `seed` in the config or pass --seed)"));
        }
        if !(0.0..=1.0).contains(&config.max_failure_fraction) {
            return Err(config_error("max_failure_fraction must be within [0, 1]"));
        }
        config
            .backend
            .oracle
            .validate()
            .map_err(|e| config_error(format!("backend.oracle: {e}")))?;
        Ok(Settings {
            config,
            base_dir,
            flag_paths,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.expect("checked at load")
    }

    fn resolve(&self, from_flag: &Option<PathBuf>, value: &Option<PathBuf>) -> Option<PathBuf> {
        match (from_flag, value) {
            (Some(f), _) => Some(f.clone()),
            (None, Some(v)) if v.is_relative() => Some(self.base_dir.join(v)),
            (None, v) => v.clone(),
        }
    }

    /// A required path, or a config error naming its flag.
    pub fn path(&self, name: &str) -> anyhow::Result<PathBuf> {
        self.optional_path(name)
            .ok_or_else(|| config_error(format!("no {name} path: pass --{name} or set paths.{name}")))
    }

    pub fn optional_path(&self, name: &str) -> Option<PathBuf> {
        let (flag, value) = match name {
            "blocks" => (&self.flag_paths.blocks, &self.config.paths.blocks),
            "profiles" => (&self.flag_paths.profiles, &self.config.paths.profiles),
            "context" => (&self.flag_paths.context, &self.config.paths.context),
            "truth" => (&self.flag_paths.truth, &self.config.paths.truth),
            "cache" => (&self.flag_paths.cache, &self.config.paths.cache),
            "respondents" => (&self.flag_paths.respondents, &self.config.paths.respondents),
            "codebook" => (&self.flag_paths.codebook, &self.config.paths.codebook),
            "out" => (&self.flag_paths.out, &self.config.paths.out),
            other => panic!("unknown path `{other}`"),
        };
        self.resolve(flag, value)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.optional_path("out").unwrap_or_else(|| PathBuf::from("out"))
    }

    /// SHA-256 of the canonical configuration, excluding the output directory
    /// and worker count, neither of which changes results.
    pub fn config_hash(&self) -> String {
        let mut c = self.config.clone();
        c.paths.out = None;
        c.workers = 0;
        let value = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
