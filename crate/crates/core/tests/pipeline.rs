use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use votesim_core::backends::{
    sigmoid, BackendError, BackendRequest, Decider, DecisionBackend, FnBackend, OracleBackend, OracleConfig,
    ResponseCache, RetryPolicy, Stage,
};
use votesim_core::context::{load_context, TimeContext};
use votesim_core::persona::{Ideology, Persona};
use votesim_core::pipeline::{
    read_vote_records, run_pipeline, write_vote_records, PipelineError, PipelineOptions, PipelineVersion, VoteChoice,
};

fn context() -> TimeContext {
    load_context(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/context_2020.json")).unwrap()
}

fn persona(id: &str, gender: &str) -> Persona {
    Persona {
        age: Some(45),
        gender: Some(gender.into()),
        ethnicity: Some("White".into()),
        marital_status: Some("Married".into()),
        household_size: Some(2),
        has_children: Some(false),
        education: Some("Some college".into()),
        occupation: Some("Service".into()),
        income_individual: Some("$25,000 to $49,999".into()),
        income_family: Some("$50,000 to $74,999".into()),
        residence: Some("MI".parse().unwrap()),
        ..Persona::new(id)
    }
}

fn no_retry() -> RetryPolicy {
    RetryPolicy {
        retry_max: 0,
        base_delay_ms: 0,
        max_delay_ms: 0,
    }
}

fn decider(backend: impl DecisionBackend + 'static) -> Decider {
    Decider::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()), no_retry())
}

type Log = Arc<Mutex<Vec<(Stage, String, String)>>>;

/// Backend that answers by stage and logs (stage, draw key, prompt).
fn scripted(ideology: &'static str, vote: &'static str) -> (impl DecisionBackend, Log) {
    let log: Log = Arc::default();
    let seen = log.clone();
    let backend = FnBackend::new("scripted", move |r: &BackendRequest| {
        seen.lock().unwrap().push((r.stage, r.draw_key.clone().unwrap_or_default(), r.prompt.clone()));
        Ok(match r.stage {
            Stage::Ideology => ideology.to_string(),
            _ => vote.to_string(),
        })
    });
    (backend, log)
}

#[test]
fn v1_and_v2_ask_once_per_persona() {
    for version in [PipelineVersion::V1, PipelineVersion::V2] {
        let (backend, log) = scripted("Moderate", "Republican");
        let people: Vec<_> = (0..5).map(|i| persona(&format!("p{i}"), "Male")).collect();
        let run = run_pipeline(version, &people, &context(), &decider(backend), &PipelineOptions::default()).unwrap();
        assert_eq!(run.records.len(), 5);
        assert!(run.records.iter().all(|r| r.choice == VoteChoice::Republican && r.ideology_assigned.is_none()));
        assert_eq!(log.lock().unwrap().len(), 5);
    }
}

#[test]
fn v2_prompt_carries_agendas_and_biographies() {
    let (backend, log) = scripted("Moderate", "Democratic");
    run_pipeline(PipelineVersion::V2, &[persona("p", "Female")], &context(), &decider(backend), &PipelineOptions::default())
        .unwrap();
    let prompt = &log.lock().unwrap()[0].2;
    assert!(prompt.contains("Joe Biden served as a U.S. Senator"));
    assert!(prompt.contains("Extend the 2017 individual tax cuts"));
}

#[test]
fn v3_feeds_step_one_placement_into_step_two() {
    let (backend, log) = scripted("I would say Somewhat conservative.", "Republican");
    let run = run_pipeline(PipelineVersion::V3, &[persona("p", "Male")], &context(), &decider(backend), &PipelineOptions::default())
        .unwrap();
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!((log[0].0, log[0].1.as_str()), (Stage::Ideology, "p/ideology"));
    assert_eq!((log[1].0, log[1].1.as_str()), (Stage::Vote, "p/vote"));
    assert!(log[1].2.contains("Somewhat conservative"));
    assert_eq!(run.records[0].ideology_assigned, Some(Ideology::SomewhatConservative));
}

#[test]
fn v3_restores_a_known_placement() {
    let (backend, log) = scripted("Very liberal", "Democratic");
    let mut p = persona("p", "Female");
    p.ideology = Some(Ideology::CloserToLiberal);
    let run = run_pipeline(PipelineVersion::V3, &[p], &context(), &decider(backend), &PipelineOptions::default()).unwrap();
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].2.contains("Closer to liberal"));
    assert!(run.records[0].ideology_restored);
    assert_eq!(run.records[0].ideology_assigned, Some(Ideology::CloserToLiberal));
}

#[test]
fn unparseable_answers_are_reasked_up_to_the_limit() {
    let calls = Arc::new(Mutex::new(0));
    let c = calls.clone();
    let backend = FnBackend::new("flaky", move |r: &BackendRequest| {
        let mut n = c.lock().unwrap();
        *n += 1;
        Ok(if r.draw_key.as_deref() == Some("p/vote/reask2") { "No Preference" } else { "hmm" }.to_string())
    });
    let run = run_pipeline(PipelineVersion::V1, &[persona("p", "Male")], &context(), &decider(backend), &PipelineOptions::default())
        .unwrap();
    assert_eq!(run.records[0].choice, VoteChoice::NoPreference);
    assert_eq!(run.records[0].attempts, 3);
    assert_eq!(*calls.lock().unwrap(), 3);

    let (stubborn, _) = scripted("Moderate", "I cannot say");
    let options = PipelineOptions {
        retry_limit: 1,
        ..PipelineOptions::default()
    };
    let run = run_pipeline(PipelineVersion::V1, &[persona("q", "Male")], &context(), &decider(stubborn), &options).unwrap();
    assert_eq!(run.records[0].choice, VoteChoice::Unparseable);
    assert_eq!(run.unparseable, 1);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let people: Vec<_> = (0..200).map(|i| persona(&format!("p{i:03}"), if i % 2 == 0 { "Male" } else { "Female" })).collect();
    let config = OracleConfig {
        bias: 0.2,
        nopref_rate: 0.05,
        ..OracleConfig::default()
    };
    let run = |workers| {
        let options = PipelineOptions {
            workers,
            ..PipelineOptions::default()
        };
        run_pipeline(PipelineVersion::V3, &people, &context(), &decider(OracleBackend::new(config.clone()).unwrap()), &options)
            .unwrap()
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn oracle_shares_follow_the_logistic_model() {
    let n = 20_000;
    let people: Vec<_> = (0..n).map(|i| persona(&format!("p{i:05}"), if i % 2 == 0 { "Male" } else { "Female" })).collect();
    let config = OracleConfig {
        weights: [("gender=Male".to_string(), 1.0)].into(),
        bias: -0.5,
        nopref_rate: 0.1,
        seed: 42,
        ..OracleConfig::default()
    };
    let run = run_pipeline(
        PipelineVersion::V1,
        &people,
        &context(),
        &decider(OracleBackend::new(config).unwrap()),
        &PipelineOptions::default(),
    )
    .unwrap();
    for (gender, z) in [("Male", 0.5), ("Female", -0.5)] {
        let mine: Vec<_> = run
            .records
            .iter()
            .zip(&people)
            .filter(|(_, p)| p.gender.as_deref() == Some(gender))
            .map(|(r, _)| r.choice)
            .collect();
        let r = mine.iter().filter(|c| **c == VoteChoice::Republican).count() as f64;
        let d = mine.iter().filter(|c| **c == VoteChoice::Democratic).count() as f64;
        let np = mine.iter().filter(|c| **c == VoteChoice::NoPreference).count() as f64;
        assert!((r / (r + d) - sigmoid(z)).abs() < 0.02, "{gender}: {}", r / (r + d));
        assert!((np / mine.len() as f64 - 0.1).abs() < 0.015, "{gender}: {np}");
    }
}

#[test]
fn too_many_backend_failures_abort_with_partial_results() {
    let backend = FnBackend::new("down", |r: &BackendRequest| {
        if r.draw_key.as_deref().is_some_and(|k| k.starts_with("p0")) {
            Err(BackendError::Unavailable("maintenance".into()))
        } else {
            Ok("Democratic".into())
        }
    });
    let people: Vec<_> = (0..20).map(|i| persona(&format!("p{i:02}"), "Male")).collect();
    let err = run_pipeline(PipelineVersion::V1, &people, &context(), &decider(backend), &PipelineOptions::default())
        .unwrap_err();
    let PipelineError::BackendExhausted { failed, total, partial } = err else {
        panic!("expected BackendExhausted");
    };
    assert_eq!((failed, total), (10, 20));
    assert_eq!(partial.records.len(), 20);
    assert!(partial.records[0].error.as_deref().unwrap().contains("maintenance"));
}

#[test]
fn strict_replay_miss_is_fatal() {
    let cache = Arc::new(ResponseCache::in_memory());
    let strict = Decider::replay(cache.clone(), true);
    let err = run_pipeline(PipelineVersion::V1, &[persona("p", "Male")], &context(), &strict, &PipelineOptions::default())
        .unwrap_err();
    assert!(matches!(err, PipelineError::Fatal { source: BackendError::ReplayMiss { .. }, .. }));

    let lenient = Decider::replay(cache, false);
    let options = PipelineOptions {
        max_failure_fraction: 1.0,
        ..PipelineOptions::default()
    };
    let run = run_pipeline(PipelineVersion::V1, &[persona("p", "Male")], &context(), &lenient, &options).unwrap();
    assert_eq!(run.failed, 1);
}

#[test]
fn vote_records_round_trip_with_meta_header() {
    let (backend, _) = scripted("Moderate", "Republican");
    let run = run_pipeline(PipelineVersion::V3, &[persona("p", "Male")], &context(), &decider(backend), &PipelineOptions::default())
        .unwrap();
    let mut buf = b"{\"meta\":{\"seed\":\"1\"}}\n".to_vec();
    write_vote_records(&mut buf, &run.records).unwrap();
    let back = read_vote_records(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back, run.records);
}
