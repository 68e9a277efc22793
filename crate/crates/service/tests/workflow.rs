mod common;

use std::sync::Arc;

use chrono::Duration;

use common::*;
use wrapped_core::aggregate::{AggregateReport, Demographics, ParticipantRecord};
use wrapped_core::providers::MockGenerator;
use wrapped_service::service::ProcessRequest;
use wrapped_service::session::SessionState;
use wrapped_service::{Service, ServiceError};

#[tokio::test]
async fn upload_review_process_report() {
    let h = harness();
    let archive = participant(1, 3);
    let resp = h.svc.upload(&archive_bytes(&archive), None, None, "10.0.0.1").unwrap();
    assert_eq!(resp.state, SessionState::Reviewing);
    assert_eq!(resp.session_id.len(), 64);
    assert_eq!(resp.preview.conversations.len(), 3);
    assert_eq!(resp.preview.usage.conversation_count, 3);
    let token = resp.session_id;

    let before = h.svc.preview(&token).unwrap();
    let removed = before.conversations[1].clone();
    let after = h.svc.delete_conversation(&token, &removed.id).unwrap();
    assert_eq!(after.conversations.len(), 2);
    assert!(after.conversations.iter().all(|c| c.id != removed.id));
    assert_eq!(after.usage.conversation_count, 2);
    assert_eq!(after.usage.message_count, before.usage.message_count - removed.message_count);
    assert_eq!(after.deleted_conversations, vec![removed.id.clone()]);

    let again = h.svc.delete_conversation(&token, &removed.id).unwrap();
    assert_eq!(again, after);
    assert!(matches!(
        h.svc.delete_conversation(&token, "no-such-conversation"),
        Err(ServiceError::UnknownConversation(_))
    ));

    let (accepted, job) = h.svc.process(&token, ProcessRequest::default()).unwrap();
    assert_eq!(accepted.state, SessionState::Processing);
    assert!(matches!(
        h.svc.delete_conversation(&token, &after.conversations[0].id),
        Err(ServiceError::WrongState { state: SessionState::Processing, .. })
    ) || h.svc.status(&token).unwrap().state.is_terminal());
    job.await.unwrap();

    let status = wait_terminal(&h.svc, &token).await;
    assert_eq!(status.state, SessionState::Complete, "{:?}", status.failure);
    assert_eq!(status.expires_at - status.created_at, Duration::days(7));
    assert_eq!(h.svc.raw_sessions(), 0);

    let report = h.svc.report(&token).unwrap();
    report.profile.validate().unwrap();
    assert_eq!(report.usage.conversation_count, 2);
    assert_eq!(report.profile.facets.top_topics.len(), 5);
    assert_eq!(h.svc.report(&token).unwrap(), report);
    assert!(matches!(
        h.svc.delete_conversation(&token, &after.conversations[0].id),
        Err(ServiceError::WrongState { state: SessionState::Complete, .. })
    ));
    assert!(matches!(h.svc.preview(&token), Err(ServiceError::WrongState { .. })));
}

#[tokio::test]
async fn deleted_conversation_never_reaches_the_provider() {
    let gen = Arc::new(MockGenerator::new().with_capture());
    let h = harness_with(Some(gen.clone()), |_| {});
    let archive = participant(2, 3);
    let token = h.upload(&archive, "10.0.0.2");
    let victim = &archive.conversations[0];
    h.svc.delete_conversation(&token, &victim.id).unwrap();
    let (_, job) = h.svc.process(&token, ProcessRequest::default()).unwrap();
    job.await.unwrap();
    assert_eq!(wait_terminal(&h.svc, &token).await.state, SessionState::Complete);
    let sent: String = gen.captured().iter().map(|r| r.payload().to_string()).collect();
    assert!(!sent.is_empty());
    for m in victim.user_messages() {
        let needle = m.text.split(" (follow-up").next().unwrap();
        let other_uses = archive.conversations[1..]
            .iter()
            .flat_map(|c| c.user_messages())
            .any(|o| o.text.contains(needle));
        if !other_uses {
            assert!(!sent.contains(needle), "deleted text sent: {needle}");
        }
        assert!(!sent.contains(&m.text));
    }
}

#[tokio::test]
async fn provider_outage_fails_and_purges() {
    let h = harness_with(Some(unreachable_generator()), |_| {});
    let archive = participant(3, 2);
    let token = h.upload(&archive, "10.0.0.3");
    let (_, job) = h.svc.process(&token, ProcessRequest::default()).unwrap();
    job.await.unwrap();
    let status = wait_terminal(&h.svc, &token).await;
    assert_eq!(status.state, SessionState::Failed);
    let failure = status.failure.unwrap();
    assert_eq!(failure.code, "provider_unreachable");
    assert_eq!(h.svc.raw_sessions(), 0);
    match h.svc.report(&token) {
        Err(ServiceError::WrongState { state, failure: Some(f) }) => {
            assert_eq!(state, SessionState::Failed);
            assert_eq!(f.code, "provider_unreachable");
        }
        other => panic!("expected WrongState with reason, got {other:?}"),
    }
    assert!(h.svc.store().records().unwrap().is_empty());
}

#[tokio::test]
async fn store_holds_no_message_text_after_success_or_failure() {
    for generator in [None, Some(unreachable_generator())] {
        let h = harness_with(generator, |_| {});
        let mut needles = Vec::new();
        let mut tokens = Vec::new();
        for i in 0..3 {
            let archive = participant(10 + i, 4);
            needles.extend(user_texts(&archive));
            needles.extend(seeded_pii(10 + i));
            tokens.push(h.upload(&archive, &format!("10.1.0.{i}")));
        }
        for token in &tokens {
            let (_, job) = h.svc.process(token, ProcessRequest::default()).unwrap();
            job.await.unwrap();
            assert!(wait_terminal(&h.svc, token).await.state.is_terminal());
        }
        let hits = scan(&h.store_root(), &needles);
        assert!(hits.is_empty(), "message text persisted: {hits:?}");
        let tokens_hit = scan(&h.store_root(), &tokens);
        assert!(tokens_hit.is_empty(), "session token persisted");
        assert_eq!(h.svc.raw_sessions(), 0);
    }
}

#[tokio::test]
async fn identical_archive_is_a_duplicate() {
    let h = harness();
    let archive = participant(4, 3);
    let first = h.upload(&archive, "10.0.0.4");
    let (_, job) = h.svc.process(&first, ProcessRequest::default()).unwrap();
    job.await.unwrap();
    assert_eq!(wait_terminal(&h.svc, &first).await.state, SessionState::Complete);

    let second = h.upload(&archive, "10.0.0.5");
    assert!(matches!(
        h.svc.process(&second, ProcessRequest::default()),
        Err(ServiceError::DuplicateSubmission)
    ));
    assert_eq!(h.svc.status(&second).unwrap().state, SessionState::Reviewing);

    let other = h.upload(&participant(5, 3), "10.0.0.5");
    let (_, job) = h.svc.process(&other, ProcessRequest::default()).unwrap();
    job.await.unwrap();
    assert_eq!(wait_terminal(&h.svc, &other).await.state, SessionState::Complete);
}

#[tokio::test]
async fn failed_run_releases_its_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let archive = participant(6, 2);
    {
        let mut cfg = test_config(dir.path());
        cfg.providers.hash_dim = 16;
        let mut providers = cfg.build_providers().unwrap();
        providers.generator = unreachable_generator();
        let svc = Service::new(cfg, providers, Arc::new(wrapped_service::clock::ManualClock::new(start()))).unwrap();
        let token = svc.upload(&archive_bytes(&archive), None, None, "a").unwrap().session_id;
        let (_, job) = svc.process(&token, ProcessRequest::default()).unwrap();
        job.await.unwrap();
        assert_eq!(svc.status(&token).unwrap().state, SessionState::Failed);
        let retry = svc.upload(&archive_bytes(&archive), None, None, "a").unwrap().session_id;
        let (_, job) = svc.process(&retry, ProcessRequest::default()).unwrap();
        job.await.unwrap();
        assert_eq!(svc.status(&retry).unwrap().state, SessionState::Failed);
    }
}

#[tokio::test]
async fn sessions_expire_after_ttl() {
    let h = harness();
    let reviewing = h.upload(&participant(7, 2), "10.0.0.7");
    let done = h.upload(&participant(8, 2), "10.0.0.7");
    let (_, job) = h.svc.process(&done, ProcessRequest::default()).unwrap();
    job.await.unwrap();
    assert_eq!(h.svc.raw_sessions(), 1);

    h.clock.advance(Duration::days(7) - Duration::seconds(1));
    assert!(h.svc.preview(&reviewing).is_ok());
    assert!(h.svc.report(&done).is_ok());

    h.clock.advance(Duration::seconds(1));
    assert!(matches!(h.svc.preview(&reviewing), Err(ServiceError::UnknownSession)));
    assert!(matches!(h.svc.report(&done), Err(ServiceError::UnknownSession)));
    assert!(matches!(h.svc.status(&done), Err(ServiceError::UnknownSession)));
    assert_eq!(h.svc.raw_sessions(), 0);
    assert_eq!(h.svc.store().records().unwrap().len(), 1);
}

#[tokio::test]
async fn sweep_purges_abandoned_sessions() {
    let h = harness();
    h.upload(&participant(9, 2), "10.0.0.9");
    h.upload(&participant(10, 2), "10.0.0.9");
    assert_eq!(h.svc.sweep(), 0);
    h.clock.advance(Duration::days(8));
    assert_eq!(h.svc.sweep(), 2);
    assert_eq!(h.svc.raw_sessions(), 0);
    let states: Vec<SessionState> = h.svc.store().sessions().unwrap().iter().map(|s| s.state).collect();
    assert_eq!(states, vec![SessionState::Purged; 2]);
}

#[tokio::test]
async fn unknown_tokens_are_rejected() {
    let h = harness();
    for token in ["", "abc", &"0".repeat(64)] {
        assert!(matches!(h.svc.status(token), Err(ServiceError::UnknownSession)));
        assert!(matches!(h.svc.report(token), Err(ServiceError::UnknownSession)));
        assert!(matches!(
            h.svc.process(token, ProcessRequest::default()),
            Err(ServiceError::UnknownSession)
        ));
    }
}

#[test]
fn malformed_and_empty_uploads_persist_nothing() {
    let h = harness();
    assert!(matches!(
        h.svc.upload(b"", None, None, "x"),
        Err(ServiceError::MalformedArchive(_))
    ));
    assert!(matches!(
        h.svc.upload(b"PK\x03\x04garbage", Some("neutral"), None, "y"),
        Err(ServiceError::MalformedArchive(_))
    ));
    let empty = wrapped_core::ingest::NeutralArchive {
        participant_id: "e".into(),
        conversations: vec![],
    };
    assert!(matches!(
        h.svc.upload(&archive_bytes(&empty), None, None, "z"),
        Err(ServiceError::EmptyArchive)
    ));
    let mut old = participant(11, 2);
    for c in &mut old.conversations {
        for m in &mut c.messages {
            m.timestamp = wrapped_core::ingest::Timestamp::parse_rfc3339("2023-05-01T10:00:00Z");
        }
    }
    assert!(matches!(
        h.svc.upload(&archive_bytes(&old), None, None, "z"),
        Err(ServiceError::EmptyArchive)
    ));
    assert!(h.svc.store().sessions().unwrap().is_empty());
    assert_eq!(h.svc.raw_sessions(), 0);
}

#[tokio::test]
async fn deleting_everything_leaves_nothing_to_process() {
    let h = harness();
    let archive = participant(12, 2);
    let token = h.upload(&archive, "10.0.0.12");
    for c in &archive.conversations {
        h.svc.delete_conversation(&token, &c.id).unwrap();
    }
    assert!(h.svc.preview(&token).unwrap().conversations.is_empty());
    assert!(matches!(
        h.svc.process(&token, ProcessRequest::default()),
        Err(ServiceError::EmptyArchive)
    ));
}

#[tokio::test]
async fn aggregate_needs_data_then_counts_completed_sessions() {
    let h = harness();
    assert!(matches!(h.svc.aggregate(), Err(ServiceError::NoData)));
    for i in 0..2 {
        let token = h.upload(&participant(20 + i, 3), "10.0.0.20");
        let request = ProcessRequest {
            demographics: Some(Demographics {
                age_bracket: Some("25-34".parse().unwrap()),
                ..Demographics::default()
            }),
        };
        let (_, job) = h.svc.process(&token, request).unwrap();
        job.await.unwrap();
    }
    let failed = harness_with(Some(unreachable_generator()), |_| {});
    assert!(matches!(failed.svc.aggregate(), Err(ServiceError::NoData)));

    let report = tokio::task::spawn_blocking({
        let svc = h.svc.clone();
        move || svc.aggregate()
    })
    .await
    .unwrap()
    .unwrap();
    assert_eq!(report.participant_count, 2);
    assert_eq!(report.demographics["age_bracket"].respondents, 2);
    assert_eq!(h.svc.aggregate().unwrap(), report);
}

#[test]
fn offline_report_is_served_without_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden/aggregate_report.json")).unwrap();
    let path = dir.path().join("offline.json");
    std::fs::write(&path, &golden).unwrap();
    let h = harness_with(None, |cfg| cfg.server.offline_report = Some(path.clone()));
    let report = h.svc.aggregate().unwrap();
    assert_eq!(report, AggregateReport::from_json(&golden).unwrap());
}

#[tokio::test]
async fn service_aggregate_matches_cli_batch() {
    let h = harness();
    for i in 0..4 {
        let token = h.upload(&participant(30 + i, 3 + i), &format!("10.0.0.{}", 30 + i));
        let (_, job) = h.svc.process(&token, ProcessRequest::default()).unwrap();
        job.await.unwrap();
    }
    let from_service = tokio::task::spawn_blocking({
        let svc = h.svc.clone();
        move || svc.aggregate()
    })
    .await
    .unwrap()
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = h.svc.config().clone();
    let report_path = tokio::task::spawn_blocking({
        let records = h.store_root().join("records");
        let out = out.path().to_path_buf();
        move || wrapped_service::cli::aggregate(&cfg, &records, &out)
    })
    .await
    .unwrap()
    .unwrap();
    let from_cli = std::fs::read_to_string(report_path).unwrap();
    assert_eq!(from_service.to_json(), from_cli);
}

#[tokio::test]
async fn restart_closes_in_flight_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = test_config(dir.path());
    let clock = wrapped_service::clock::ManualClock::new(start());
    let (reviewing, complete) = {
        let svc = Service::new(cfg.clone(), cfg.build_providers().unwrap(), Arc::new(clock.clone())).unwrap();
        let reviewing = svc.upload(&archive_bytes(&participant(40, 2)), None, None, "r").unwrap().session_id;
        let complete = svc.upload(&archive_bytes(&participant(41, 2)), None, None, "r").unwrap().session_id;
        let (_, job) = svc.process(&complete, ProcessRequest::default()).unwrap();
        job.await.unwrap();
        (reviewing, complete)
    };
    let svc = Service::new(cfg.clone(), cfg.build_providers().unwrap(), Arc::new(clock)).unwrap();
    assert_eq!(svc.status(&reviewing).unwrap().state, SessionState::Purged);
    assert_eq!(svc.status(&complete).unwrap().state, SessionState::Complete);
    assert!(svc.report(&complete).is_ok());
    let again = svc.upload(&archive_bytes(&participant(41, 2)), None, None, "s").unwrap().session_id;
    assert!(matches!(
        svc.process(&again, ProcessRequest::default()),
        Err(ServiceError::DuplicateSubmission)
    ));
}

#[tokio::test]
async fn concurrent_sessions_all_complete() {
    let h = harness_with(None, |cfg| cfg.server.workers = 2);
    let tokens: Vec<String> = (0..8).map(|i| h.upload(&participant(50 + i, 2), &format!("10.2.0.{i}"))).collect();
    let jobs: Vec<_> = tokens
        .iter()
        .map(|t| h.svc.process(t, ProcessRequest::default()).unwrap().1)
        .collect();
    for j in jobs {
        j.await.unwrap();
    }
    for t in &tokens {
        assert_eq!(h.svc.status(t).unwrap().state, SessionState::Complete);
    }
    let ids: std::collections::BTreeSet<String> = h
        .svc
        .store()
        .records()
        .unwrap()
        .iter()
        .map(|r: &ParticipantRecord| r.participant_id().to_string())
        .collect();
    assert_eq!(ids.len(), 8);
    assert!(ids.iter().all(|id| id.starts_with("p-") && id.len() == 18));
}
