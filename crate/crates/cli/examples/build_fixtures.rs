//! Regenerate the replay caches under `fixtures/replay/` from scripted answers.
//!
//! Each run config names the cache it replays from. This example prepares the
//! same personas that config would, assigns every persona a scripted vote after
//! a seeded shuffle, and records the answers through the normal pipeline so the
//! cache keys match exactly.
//!
//!     cargo run -p votesim --example build_fixtures

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;

use votesim_cli::config::{Overrides, Settings};
use votesim_cli::run;
use votesim_core::backends::{BackendError, BackendRequest, Decider, FnBackend, ResponseCache, Stage};
use votesim_core::persona::Party;
use votesim_core::seed;

/// Scripted answer counts: (Republican, Democratic, no preference).
type Script = (usize, usize, usize);

fn assign(ids: &[String], script: Script, master: u64, label: &str) -> anyhow::Result<BTreeMap<String, Option<Party>>> {
    let (r, d, n) = script;
    anyhow::ensure!(r + d + n == ids.len(), "{label}: script covers {} of {} personas", r + d + n, ids.len());
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort_by_key(|id| seed::derive_u64(master, &["fixture", label, id]));
    let mut out = BTreeMap::new();
    for (i, id) in order.into_iter().enumerate() {
        let vote = if i < r {
            Some(Party::Republican)
        } else if i < r + d {
            Some(Party::Democratic)
        } else {
            None
        };
        out.insert(id.clone(), vote);
    }
    Ok(out)
}

fn ideology_text(vote: Option<Party>, id: &str) -> &'static str {
    let k = seed::derive_u64(0, &["ideology", id]) % 3;
    match vote {
        Some(Party::Republican) => ["Closer to conservative", "Somewhat conservative", "Very conservative"][k as usize],
        Some(Party::Democratic) => ["Closer to liberal", "Somewhat liberal", "Very liberal"][k as usize],
        None => "Moderate",
    }
}

fn vote_text(vote: Option<Party>, id: &str) -> String {
    let option = match vote {
        Some(p) => p.label(),
        None => "No Preference",
    };
    match seed::derive_u64(0, &["phrasing", id]) % 3 {
        0 => option.to_string(),
        1 => format!("Thinking about the candidates and my own situation, my answer is:\n\n{option}"),
        _ => format!("{option}."),
    }
}

fn record(config: &Path, scripts: &BTreeMap<&str, Script>) -> anyhow::Result<()> {
    let scratch = tempfile::tempdir()?;
    let settings = Settings::load(
        Some(config),
        &Overrides {
            out: Some(scratch.path().to_path_buf()),
            ..Overrides::default()
        },
    )?;
    let cache_path = settings.path("cache")?;
    let prepared = run::prepare(&settings)?;

    let mut answers = BTreeMap::new();
    if prepared.samples.is_empty() {
        let ids: Vec<String> = prepared.personas.iter().map(|p| p.id.clone()).collect();
        answers.extend(assign(&ids, scripts["survey"], settings.seed(), "survey")?);
    } else {
        for s in &prepared.samples {
            let code = s.state.to_string();
            let ids: Vec<String> = prepared
                .personas
                .iter()
                .filter(|p| p.residence == Some(s.state))
                .map(|p| p.id.clone())
                .collect();
            let script = scripts.get(code.as_str()).with_context(|| format!("no script for {code}"))?;
            answers.extend(assign(&ids, *script, settings.seed(), &code)?);
        }
    }

    if cache_path.exists() {
        fs::remove_file(&cache_path)?;
    }
    let backend = FnBackend::new("scripted", move |req: &BackendRequest| {
        let key = req.draw_key.as_deref().unwrap_or_default();
        let id = key.split('/').next().unwrap_or_default();
        let Some(vote) = answers.get(id).copied() else {
            return Err(BackendError::Unavailable(format!("no scripted answer for {key}")));
        };
        Ok(match req.stage {
            Stage::Ideology => ideology_text(vote, id).to_string(),
            Stage::Vote => vote_text(vote, id),
            Stage::Summary => req.subject.clone().unwrap_or_default(),
        })
    });
    let cache = Arc::new(ResponseCache::open(&cache_path)?);
    let decider = Decider::new(Arc::new(backend), cache.clone(), settings.config.backend.retry());
    let summary = run::simulate_with(&settings, &decider)?;
    cache.flush()?;
    run::compact_cache(&cache_path)?;
    println!(
        "{}: {} personas, counts {:?}, share {:?}",
        cache_path.display(),
        summary.manifest.personas,
        summary.aggregate.counts,
        summary.aggregate.predicted
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/runs");
    record(
        &root.join("states_2020_v3_replay.json"),
        &BTreeMap::from([("AK", (65, 59, 6)), ("AZ", (64, 63, 3)), ("NC", (62, 65, 3)), ("WI", (61, 66, 3))]),
    )?;
    record(&root.join("survey_2016_v3_replay.json"), &BTreeMap::from([("survey", (134, 143, 23))]))?;
    record(&root.join("survey_2020_v3_replay.json"), &BTreeMap::from([("survey", (160, 182, 18))]))?;
    Ok(())
}
