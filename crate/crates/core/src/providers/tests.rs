use super::*;
use crate::exec::Execution;
use proptest::prelude::*;

fn req(user: &str, schema: SchemaId) -> GenerationRequest {
    GenerationRequest::new("sys", user, GenerationParams::HIERARCHY, schema)
}

fn parse_name(raw: &str) -> Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    v["name"].as_str().map(str::to_string).ok_or_else(|| "missing name".to_string())
}

#[test]
fn mock_replays_exact_fixture() {
    let r = req("hello", SchemaId::ClusterLabel);
    let gen = MockGenerator::new().with_fixture(r.fingerprint(), r#"{"name":"Fixture Label"}"#);
    assert_eq!(generate(&gen, &r, 3, parse_name).unwrap(), "Fixture Label");
    assert_eq!(gen.calls(), 1);
}

#[test]
fn fingerprint_separates_system_and_user() {
    let a = GenerationRequest::new("ab", "c", GenerationParams::PROFILE, SchemaId::FacetProfile);
    let b = GenerationRequest::new("a", "bc", GenerationParams::PROFILE, SchemaId::FacetProfile);
    assert_ne!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.fingerprint().len(), 64);
}

#[test]
fn two_invalid_replies_then_valid() {
    let gen = ScriptedGenerator::new(|_, i| {
        Ok(if i < 2 { "not json".to_string() } else { r#"{"name":"ok"}"#.to_string() })
    });
    let out = generate(&gen, &req("x", SchemaId::ClusterLabel), 3, parse_name).unwrap();
    assert_eq!(out, "ok");
    assert_eq!(gen.calls(), 3);
    let reqs = gen.requests();
    assert!(!reqs[0].user_prompt.contains("previous reply"));
    assert!(reqs[1].user_prompt.contains("previous reply"));
}

#[test]
fn repair_note_keeps_payload_last() {
    let gen = ScriptedGenerator::new(|_, i| Ok(if i == 0 { "nope".into() } else { r#"{"name":"ok"}"#.into() }));
    let r = req(&format!("instructions\n{INPUT_MARKER}\n{{\"items\":[]}}"), SchemaId::ClusterLabel);
    generate(&gen, &r, 1, parse_name).unwrap();
    let retry = &gen.requests()[1];
    assert_eq!(retry.payload(), "{\"items\":[]}");
    assert!(retry.user_prompt.contains("previous reply could not be used"));
}

#[test]
fn always_invalid_exhausts_retries() {
    let gen = ScriptedGenerator::constant("{}");
    let err = generate(&gen, &req("x", SchemaId::ClusterLabel), 3, parse_name).unwrap_err();
    assert_eq!(gen.calls(), 4);
    match err {
        ProviderError::SchemaViolation { schema, attempts, last_error } => {
            assert_eq!(schema, SchemaId::ClusterLabel);
            assert_eq!(attempts, 4);
            assert_eq!(last_error, "missing name");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unreachable_is_not_retried() {
    let gen = ScriptedGenerator::new(|_, _| Err(ProviderError::ProviderUnreachable("down".into())));
    let err = generate(&gen, &req("x", SchemaId::ClusterLabel), 3, parse_name).unwrap_err();
    assert!(matches!(err, ProviderError::ProviderUnreachable(_)));
    assert_eq!(gen.calls(), 1);
}

#[test]
fn fenced_json_is_accepted() {
    let gen = ScriptedGenerator::constant("```json\n{\"name\":\"fenced\"}\n```");
    assert_eq!(generate(&gen, &req("x", SchemaId::ClusterLabel), 0, parse_name).unwrap(), "fenced");
}

#[test]
fn invalid_parameters_rejected_before_calling() {
    let gen = ScriptedGenerator::constant("{}");
    let mut r = req("x", SchemaId::ClusterLabel);
    r.temperature = 2.5;
    assert!(matches!(generate(&gen, &r, 0, parse_name), Err(ProviderError::InvalidRequest(_))));
    r.temperature = 1.0;
    r.max_tokens = 0;
    assert!(matches!(generate(&gen, &r, 0, parse_name), Err(ProviderError::InvalidRequest(_))));
    assert_eq!(gen.calls(), 0);
}

#[test]
fn budget_cap_enforced() {
    // 8 prompt chars -> 2 tokens, plus 1024 reply tokens per call.
    let gen = Budgeted::new(ScriptedGenerator::constant(r#"{"name":"n"}"#), 2 * 1026);
    let r = GenerationRequest::new("sys", "abcde", GenerationParams::HIERARCHY, SchemaId::ClusterLabel);
    generate(&gen, &r, 0, parse_name).unwrap();
    generate(&gen, &r, 0, parse_name).unwrap();
    assert_eq!(gen.used(), 2052);
    let err = generate(&gen, &r, 0, parse_name).unwrap_err();
    assert_eq!(
        err,
        ProviderError::BudgetExceeded {
            used: 2052,
            requested: 1026,
            cap: 2052
        }
    );
}

#[test]
fn payload_follows_marker() {
    let r = req(&format!("instructions\n{INPUT_MARKER}\n{{\"items\":[]}}"), SchemaId::ClusterLabel);
    assert_eq!(r.payload(), "{\"items\":[]}");
    assert_eq!(req("plain", SchemaId::ClusterLabel).payload(), "plain");
}

#[test]
fn mock_templates_satisfy_shapes() {
    let gen = MockGenerator::new();
    let payload = |v: serde_json::Value| format!("do it\n{INPUT_MARKER}\n{v}");
    let reply = |schema, v| -> serde_json::Value {
        serde_json::from_str(&gen.generate_text(&req(&payload(v), schema)).unwrap()).unwrap()
    };
    let label = reply(SchemaId::ClusterLabel, serde_json::json!({"items": ["garden tomatoes", "tomatoes watering"]}));
    assert_eq!(label["name"], "Tomatoes & Garden");

    let labels: Vec<String> = (0..12).map(|i| format!("Label {i}")).collect();
    let props = reply(SchemaId::ParentProposals, serde_json::json!({ "labels": labels }));
    assert_eq!(props["parents"].as_array().unwrap().len(), 5);

    let merges = reply(SchemaId::ParentMerges, serde_json::json!({"candidates": ["A", "b", "a", "B", "c"]}));
    assert_eq!(merges["merge_groups"], serde_json::json!([[0, 2], [1, 3]]));

    let assign = reply(
        SchemaId::ParentAssignments,
        serde_json::json!({"children": ["a", "b", "c", "d"], "parents": ["x", "y"]}),
    );
    assert_eq!(assign["assignments"], serde_json::json!([0, 0, 1, 1]));

    let profile = reply(SchemaId::FacetProfile, serde_json::json!("sourdough baking sourdough"));
    assert_eq!(profile["top_topics"].as_array().unwrap().len(), 5);
    assert_eq!(profile["red_flags"].as_array().unwrap().len(), 3);
    assert_eq!(profile["archetype"], "The Sourdough Explorer");
}

#[test]
fn keywords_rank_by_count_then_alpha() {
    assert_eq!(
        extract_keywords("zebra apple zebra mango the apple zebra cat", 3),
        vec!["zebra", "apple", "mango"]
    );
}

// Independent FNV-1a 64 reference from the published parameters.
fn fnv_oracle(s: &str) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

#[test]
fn fnv_known_vectors() {
    assert_eq!(fnv_oracle(""), 0xcbf29ce484222325);
    assert_eq!(fnv_oracle("a"), 0xaf63dc4c8601ec8c);
}

#[test]
fn hash_embedder_matches_oracle() {
    let dim = 64;
    let e = HashEmbedder::new(dim);
    let v = e.embed_one("Hello, hello world!");
    let mut expected = vec![0.0; dim];
    for t in ["hello", "hello", "world"] {
        let h = fnv_oracle(t);
        expected[(h % dim as u64) as usize] += if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
    }
    let n: f64 = expected.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
    for (a, b) in v.values.iter().zip(expected.iter()) {
        assert!((a - b / n).abs() < 1e-12);
    }
}

fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum()
}

#[test]
fn hash_embedder_deterministic_and_discriminating() {
    let e = HashEmbedder::default();
    let texts = vec!["sourdough starter".to_string(), "tax filing deadline".to_string()];
    let a = embed(&e, &texts).unwrap();
    let b = embed(&e, &texts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].dim(), 256);
    assert!(cosine(&a[0], &a[1]) < 1.0);
    assert!((cosine(&a[0], &a[0]) - 1.0).abs() < 1e-12);
}

#[test]
fn embed_preconditions() {
    let e = HashEmbedder::default();
    assert!(matches!(embed(&e, &[]), Err(ProviderError::InvalidRequest(_))));
    assert!(matches!(
        embed(&e, &["ok".to_string(), String::new()]),
        Err(ProviderError::InvalidRequest(_))
    ));
}

struct Ragged;
impl Embedder for Ragged {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts
            .iter()
            .enumerate()
            .map(|(i, _)| EmbeddingVector { values: vec![0.5; 3 + i] })
            .collect())
    }
    fn fingerprint(&self) -> String {
        "ragged".into()
    }
    fn retention(&self) -> RetentionMode {
        RetentionMode::Local
    }
}

#[test]
fn dimension_mismatch_detected() {
    let err = embed(&Ragged, &["a".to_string(), "b".to_string()]).unwrap_err();
    assert_eq!(err, ProviderError::DimensionMismatch { expected: 3, got: 4 });
}

proptest! {
    #[test]
    fn hash_embedding_unit_or_zero(text in "[a-zA-Z ,.!]{0,60}") {
        let v = HashEmbedder::new(32).embed_one(&text);
        let n: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hash_embedding_modes_agree(texts in prop::collection::vec("[a-z ]{1,20}", 1..20)) {
        let seq = HashEmbedder::new(16).with_execution(Execution::Sequential).embed_batch(&texts).unwrap();
        let par = HashEmbedder::new(16).with_execution(Execution::Parallel).embed_batch(&texts).unwrap();
        prop_assert_eq!(seq, par);
    }
}

#[cfg(feature = "remote")]
mod remote_http {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one request, returning the raw request body.
    fn one_shot(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            format!("{auth}\n{}", String::from_utf8(body).unwrap())
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn settings(base: String, var: &str) -> RemoteSettings {
        RemoteSettings {
            base_url: base,
            model: "test-model".into(),
            api_key_env: var.into(),
            zero_retention: true,
            max_in_flight: 2,
            timeout_secs: 10,
        }
    }

    #[test]
    fn generator_round_trip() {
        std::env::set_var("WRAPPED_TEST_KEY_GEN", "sk-test");
        let (base, handle) = one_shot(r#"{"choices":[{"message":{"content":"{\"name\":\"Remote\"}"}}]}"#);
        let gen = RemoteGenerator::from_env(settings(base, "WRAPPED_TEST_KEY_GEN")).unwrap();
        assert_eq!(gen.retention(), RetentionMode::ZeroRetention);
        let out = generate(&gen, &req("hi", SchemaId::ClusterLabel), 0, parse_name).unwrap();
        assert_eq!(out, "Remote");
        let seen = handle.join().unwrap();
        let (auth, body) = seen.split_once('\n').unwrap();
        assert_eq!(auth.to_ascii_lowercase(), "authorization: bearer sk-test");
        let body: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(body["store"], false);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][1]["content"], "hi");
    }

    #[test]
    fn embedder_round_trip() {
        std::env::set_var("WRAPPED_TEST_KEY_EMB", "sk-test");
        let (base, handle) = one_shot(
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#,
        );
        let e = RemoteEmbedder::from_env(settings(base, "WRAPPED_TEST_KEY_EMB")).unwrap();
        let v = embed(&e, &["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(v[0].values, vec![1.0, 0.0]);
        handle.join().unwrap();
    }

    #[test]
    fn missing_key_is_reported() {
        let err = RemoteGenerator::from_env(settings("http://127.0.0.1:9".into(), "WRAPPED_TEST_KEY_ABSENT"))
            .err()
            .unwrap();
        assert!(matches!(err, ProviderError::ProviderUnreachable(_)));
    }
}
