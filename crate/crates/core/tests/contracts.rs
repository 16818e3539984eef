use esaa_core::contracts::{
    enforce_boundary, path_problem, validate_envelope, BoundaryContract, ViolationCode,
    AGENT_OUTPUT_SCHEMA,
};
use esaa_core::projection::{TaskEntry, TaskKind, TaskState};
use jsonschema::JSONSchema;
use proptest::prelude::*;
use serde_json::{json, Value};
use std::sync::OnceLock;

fn base() -> Value {
    json!({
        "schema_version": "0.3.0",
        "correlation_id": "corr-0001",
        "task_id": "T-1100",
        "attempt_id": "att-00001",
        "actor": "agent-codex",
        "action": "agent.result",
        "idempotency_key": "key-1",
        "payload": {"summary": "ok", "proposals": [{"type": "file_patch", "path": "src/a.txt", "patch": "@@ -0,0 +1 @@\n+a\n"}]}
    })
}

#[derive(Debug, Clone)]
enum Mutation {
    Drop(&'static str),
    Set(&'static str, Value),
    Extra,
    PayloadExtra,
    ProposalPath(String),
    ProposalType(Value),
    EmptyPatch,
    LongSummary,
    Issue(Value),
    ClearPayload,
}

fn mutation() -> impl Strategy<Value = Mutation> {
    let field = prop::sample::select(vec![
        "schema_version",
        "correlation_id",
        "task_id",
        "attempt_id",
        "actor",
        "action",
        "idempotency_key",
        "payload",
    ]);
    let scalar = prop_oneof![
        Just(json!(null)),
        Just(json!(7)),
        Just(json!("")),
        Just(json!("0.2.0")),
        Just(json!("agent-x")),
        Just(json!("orchestrator")),
        Just(json!("issue.report")),
        Just(json!("file.write")),
        Just(json!("abcdefgh")),
        Just(json!("ab")),
        Just(json!({})),
    ];
    prop_oneof![
        field.clone().prop_map(Mutation::Drop),
        (field, scalar).prop_map(|(f, v)| Mutation::Set(f, v)),
        Just(Mutation::Extra),
        Just(Mutation::PayloadExtra),
        prop::sample::select(vec![
            "src/x",
            ".roadmap/qa/x",
            "docs/x",
            "/etc/passwd",
            "src/../x",
            ".roadmapx"
        ])
        .prop_map(|p| Mutation::ProposalPath(p.to_owned())),
        prop_oneof![
            Just(json!("file_patch")),
            Just(json!("file_write")),
            Just(json!(1))
        ]
        .prop_map(Mutation::ProposalType),
        Just(Mutation::EmptyPatch),
        Just(Mutation::LongSummary),
        prop_oneof![
            Just(json!({"title": "t", "details": "d", "severity": "low"})),
            Just(json!({"title": "t", "details": "d", "severity": "urgent"})),
            Just(json!({"title": "t", "severity": "high"})),
            Just(json!("not an object")),
        ]
        .prop_map(Mutation::Issue),
        Just(Mutation::ClearPayload),
    ]
}

fn apply(doc: &mut Value, m: &Mutation) {
    let root = doc.as_object_mut().unwrap();
    match m {
        Mutation::Drop(f) => {
            root.remove(*f);
        }
        Mutation::Set(f, v) => {
            root.insert((*f).to_owned(), v.clone());
        }
        Mutation::Extra => {
            root.insert("extra".into(), json!(1));
        }
        _ => {
            let Some(payload) = root.get_mut("payload").and_then(Value::as_object_mut) else {
                return;
            };
            match m {
                Mutation::PayloadExtra => {
                    payload.insert("notes".into(), json!("x"));
                }
                Mutation::LongSummary => {
                    payload.insert("summary".into(), json!("s".repeat(2001)));
                }
                Mutation::Issue(v) => {
                    payload.insert("issue".into(), v.clone());
                }
                Mutation::ClearPayload => payload.clear(),
                _ => {
                    let Some(p) = payload
                        .get_mut("proposals")
                        .and_then(|p| p.get_mut(0))
                        .and_then(Value::as_object_mut)
                    else {
                        return;
                    };
                    match m {
                        Mutation::ProposalPath(path) => {
                            p.insert("path".into(), json!(path));
                        }
                        Mutation::ProposalType(t) => {
                            p.insert("type".into(), t.clone());
                        }
                        Mutation::EmptyPatch => {
                            p.insert("patch".into(), json!(""));
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
}

/// The rules the validator adds on top of the shipped schema document.
fn extra_rules_hold(doc: &Value) -> bool {
    let key_ok = doc["idempotency_key"]
        .as_str()
        .is_none_or(|k| !k.is_empty());
    let payload = &doc["payload"];
    let shape_ok = match doc["action"].as_str() {
        Some("issue.report") => payload.get("issue").is_some(),
        Some("agent.result") => {
            payload.get("proposals").is_some() || payload.get("summary").is_some()
        }
        _ => true,
    };
    key_ok && shape_ok
}

fn oracle() -> &'static JSONSchema {
    static ORACLE: OnceLock<JSONSchema> = OnceLock::new();
    ORACLE.get_or_init(|| {
        let schema: Value = serde_json::from_str(AGENT_OUTPUT_SCHEMA).unwrap();
        JSONSchema::compile(&schema).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// Accepted iff the reference schema validator accepts and the two extra
    /// rules hold. Every rejection carries at least one violation.
    #[test]
    fn validator_agrees_with_reference_schema(muts in prop::collection::vec(mutation(), 0..4)) {
        let schema = oracle();
        let mut doc = base();
        for m in &muts {
            apply(&mut doc, m);
        }
        let expected = schema.is_valid(&doc) && extra_rules_hold(&doc);
        let got = validate_envelope(&serde_json::to_vec(&doc).unwrap());
        prop_assert_eq!(got.is_ok(), expected, "doc {} -> {:?}", doc, got);
        if let Err(v) = got {
            prop_assert!(!v.is_empty());
        }
    }

    /// Boundary soundness: an accepted proposal path is normalized and lies under
    /// one of the kind's prefixes. Completeness: every such path is accepted.
    #[test]
    fn boundary_is_prefix_membership(
        kind in prop::sample::select(TaskKind::ALL.to_vec()),
        root in prop::sample::select(vec!["src/", ".roadmap/specs/", ".roadmap/qa/", ".roadmap/", "src/specs/"]),
        tail in "[a-z]{1,4}(/[a-z.]{1,4}){0,2}",
    ) {
        let contract = BoundaryContract::default();
        let path = format!("{root}{tail}");
        let mut doc = base();
        doc["payload"]["proposals"][0]["path"] = json!(path);
        let env = validate_envelope(&serde_json::to_vec(&doc).unwrap()).unwrap();
        let task = TaskEntry {
            task_id: "T-1100".into(),
            kind,
            title: "t".into(),
            state: TaskState::InProgress,
            depends_on: vec![],
            files: vec![],
            phase_id: None,
            acceptance_results: None,
            claimed_by: None,
        };
        let admitted = path_problem(&path).is_none()
            && contract.rule(kind).prefixes.iter().any(|p| path.starts_with(p.as_str()));
        match enforce_boundary(&env, &task, &contract) {
            Ok(()) => prop_assert!(admitted, "{} admitted for {}", path, kind),
            Err(v) => {
                prop_assert!(!admitted, "{} refused for {}: {:?}", path, kind, v);
                prop_assert!(v.iter().all(|x| x.code == ViolationCode::BoundaryPath));
            }
        }
    }
}

#[test]
fn violations_serialize_with_kebab_codes() {
    let mut doc = base();
    doc["actor"] = json!("bot");
    let v = validate_envelope(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
    assert_eq!(serde_json::to_value(&v[0]).unwrap()["code"], "authority");
    assert_eq!(
        serde_json::to_value(ViolationCode::BoundaryPath).unwrap(),
        "boundary-path"
    );
    assert_eq!(
        serde_json::to_value(ViolationCode::IdempotencyReplay).unwrap(),
        "idempotency-replay"
    );
}
