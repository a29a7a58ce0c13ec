mod common;

use common::*;
use serde_json::{json, Value};

fn sign_up() -> Value {
    json!({"protocol":"ANX","version":"1.0.0","kind":"form","title":"Sign up","items":[
        {"nick":"user","kind":"input","required":true},
        {"nick":"password","kind":"input","sensitive":true,"required":true},
        {"nick":"send","kind":"button","tap":"submit"}
    ]})
}

fn transfer() -> Value {
    json!({"protocol":"ANX","version":"1.0.0","kind":"form","title":"Transfer","items":[
        {"nick":"amount","kind":"input","required":true},
        {"nick":"bank","kind":"options","optionsSet":{"dataset":[{"value":"it","title":"IT"},{"value":"ops","title":"Ops"}]}},
        {"nick":"send","kind":"button","tap":"submit","confirm":true}
    ]})
}

fn screening() -> Value {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/resume_screening_case_study.anx.json"
    ))
    .unwrap();
    serde_json::from_str(&text).unwrap()
}

fn register(agent: &Client, cfg: Value) -> String {
    let (status, body) = agent.post("/agent/cards", json!({ "config": cfg }));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["lifecycle"], "READY");
    body["card_key"].as_str().unwrap().to_owned()
}

fn exec(c: &Client, prefix: &str, key: &str, action: &str, params: Value) -> (u16, Value) {
    c.post(&format!("{prefix}/execute"), json!({ "card_key": key, "action": action, "params": params }))
}

#[test]
fn health_and_unknown_routes() {
    let base = embedded();
    assert_eq!(Client::new(&base).get("/health"), (200, json!({"status": "ok"})));
    let (status, body) = Client::new(&base).get("/agent/cards/c_999/state");
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "unknown_card");
}

#[test]
fn ui_routes_require_a_valid_token() {
    let base = embedded();
    let agent = Client::new(&base);
    let key = register(&agent, sign_up());
    let (status, body) = agent.get(&format!("/ui/cards/{key}/state"));
    assert_eq!((status, &body["error"]["code"]), (401, &json!("missing_user_token")));
    let forged = Client::with_token(&base, "ut_00000000000000000000000000000000");
    let (status, body) = forged.get(&format!("/ui/cards/{key}/state"));
    assert_eq!((status, &body["error"]["code"]), (403, &json!("invalid_user_token")));

    let token = issue_token(&base);
    let human = Client::with_token(&base, &token);
    assert_eq!(human.get(&format!("/ui/cards/{key}/state")).0, 200);
    let (status, body) = Client::new(&base).post("/ui/token/revoke", json!({ "token": token }));
    assert_eq!((status, body), (200, json!({"revoked": true})));
    assert_eq!(human.get(&format!("/ui/cards/{key}/state")).0, 403);
}

#[test]
fn sensitive_values_enter_only_through_the_ui() {
    let base = embedded();
    let agent = Client::new(&base);
    let human = Client::with_token(&base, &issue_token(&base));
    let key = register(&agent, sign_up());

    let (status, body) = exec(&agent, "/agent", &key, "set_form", json!({"user": "mz", "password": "hunter2"}));
    assert_eq!((status, &body["error"]["code"]), (403, &json!("sensitive_via_agent_channel")));
    assert_eq!(agent.get(&format!("/agent/cards/{key}/state")).1["lifecycle"], "WAITING_UI");

    let (status, body) = human.post(
        &format!("/ui/cards/{key}/submit_sensitive"),
        json!({"fields": {"password": "hunter2"}}),
    );
    assert_eq!(status, 200, "{body}");
    assert!(body["refs"]["password"].as_str().unwrap().starts_with("ref_"));
    assert_eq!(body["lifecycle"], "READY");

    let (_, markup) = agent.get(&format!("/agent/cards/{key}/markup"));
    assert!(markup["markup"].as_str().unwrap().contains(anx_core::markup::MASK));
    exec(&agent, "/agent", &key, "set_form", json!({"user": "mz"}));
    let (status, done) = exec(&agent, "/agent", &key, "submit", json!(null));
    assert_eq!((status, &done["new_state"]), (200, &json!("COMPLETED")));

    let agent_views = [
        agent.get(&format!("/agent/cards/{key}/state")).1.to_string(),
        agent.get(&format!("/agent/cards/{key}/markup")).1.to_string(),
        done.to_string(),
    ];
    for text in agent_views {
        assert!(!text.contains("hunter2"), "{text}");
    }
    let audit = ureq::get(&format!("{base}/agent/cards/{key}/audit")).call().unwrap();
    assert_eq!(audit.header("content-type"), Some("application/x-ndjson"));
    let audit = audit.into_string().unwrap();
    assert!(!audit.contains("hunter2"));
    for line in audit.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4, "{line}");
    }
}

#[test]
fn confirmation_belongs_to_the_human() {
    let base = embedded();
    let agent = Client::new(&base);
    let human = Client::with_token(&base, &issue_token(&base));
    let key = register(&agent, transfer());

    let (status, body) = agent.post("/agent/execute", json!({ "line": format!("anx {key} set_form '{{\"amount\":\"10\",\"bank\":\"it\"}}'") }));
    assert_eq!(status, 200, "{body}");
    let (_, res) = exec(&agent, "/agent", &key, "submit", json!(null));
    assert_eq!(res["new_state"], "CONFIRMING");
    let gate = res["body"]["gate_id"].as_str().unwrap().to_owned();

    let (status, body) = exec(&agent, "/agent", &key, "confirm", json!({ "gate_id": gate }));
    assert_eq!((status, &body["error"]["code"]), (403, &json!("channel_violation")));
    // The agent has no route to the confirm endpoint without a token.
    assert_eq!(agent.post(&format!("/ui/cards/{key}/confirm"), json!({ "gate_id": gate })).0, 401);

    let (_, gates) = human.get(&format!("/ui/cards/{key}/gates"));
    assert_eq!(gates["gates"][0]["gate_id"], json!(gate));
    let (status, body) = human.post(&format!("/ui/cards/{key}/confirm"), json!({ "gate_id": "gate_nope" }));
    assert_eq!((status, &body["error"]["code"]), (404, &json!("unknown_gate")));
    let (status, body) = human.post(&format!("/ui/cards/{key}/confirm"), json!({ "gate_id": gate }));
    assert_eq!((status, &body["new_state"]), (200, &json!("COMPLETED")));
    let (status, body) = human.post(&format!("/ui/cards/{key}/confirm"), json!({ "gate_id": gate }));
    assert_eq!((status, &body["error"]["code"]), (409, &json!("wrong_state")));
}

#[test]
fn cancel_from_the_ui() {
    let base = embedded();
    let agent = Client::new(&base);
    let human = Client::with_token(&base, &issue_token(&base));
    let key = register(&agent, transfer());
    exec(&agent, "/agent", &key, "set_form", json!({"amount": "3"}));
    let (_, res) = exec(&agent, "/agent", &key, "submit", json!(null));
    let gate = res["body"]["gate_id"].clone();
    let (status, body) = human.post(&format!("/ui/cards/{key}/cancel"), json!({ "gate_id": gate }));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["new_state"], "EXECUTING");
}

#[test]
fn malformed_requests_map_to_codes() {
    let base = embedded();
    let agent = Client::new(&base);
    let (status, body) = agent.post("/agent/execute", json!({ "line": "anx" }));
    assert_eq!((status, &body["error"]["code"]), (400, &json!("cli_syntax")));
    let (status, body) = agent.post("/agent/cards", json!({ "config": {"protocol": "ANX"} }));
    assert_eq!((status, &body["error"]["code"]), (400, &json!("schema_error")));
    let key = register(&agent, transfer());
    let (status, body) = exec(&agent, "/agent", &key, "fly", json!(null));
    assert_eq!((status, &body["error"]["code"]), (400, &json!("unknown_action")));
    let (status, body) = exec(&agent, "/agent", &key, "set_form", json!({"bank": "nowhere"}));
    assert_eq!((status, &body["error"]["code"]), (400, &json!("validation_error")));
}

#[test]
fn nodes_over_http() {
    let base = embedded();
    let agent = Client::new(&base);
    let human = Client::with_token(&base, &issue_token(&base));
    let key = register(&agent, transfer());
    let (status, body) = human.put(&format!("/ui/cards/{key}/nodes/notes"), json!({ "payload": {"text": "ok"} }));
    assert_eq!((status, body), (200, json!({"node_id": "notes", "version": 1})));
    let (_, n) = agent.get(&format!("/agent/cards/{key}/nodes/notes"));
    assert_eq!((n["version"].clone(), n["payload"].clone()), (json!(1), json!({"text": "ok"})));
    assert_eq!(human.get(&format!("/ui/cards/{key}/nodes/notes")).1, n);
    let (status, body) = agent.get(&format!("/agent/cards/{key}/nodes/missing"));
    assert_eq!((status, &body["error"]["code"]), (404, &json!("unknown_node")));
}

fn screening_run(score: f64, decision: Option<&str>) -> Value {
    let base = embedded();
    let agent = Client::new(&base);
    let (status, run) = agent.post("/agent/sop/runs", json!({ "config": screening() }));
    assert_eq!(status, 200, "{run}");
    let id = run["run_id"].as_str().unwrap().to_owned();
    let (status, s) = agent.post(&format!("/agent/sop/runs/{id}/steps/s1/complete"), json!({ "outputs": {"score": score} }));
    assert_eq!(status, 200, "{s}");
    let (_, mut s) = agent.post(&format!("/agent/sop/runs/{id}/advance"), json!({}));
    if let Some(d) = decision {
        assert_eq!(s["status"], "waiting_human", "{s}");
        let (status, body) = agent.post(&format!("/ui/sop/runs/{id}/gates/s2"), json!({ "decision": d }));
        assert_eq!(status, 401, "{body}");

        let human = Client::with_token(&base, &issue_token(&base));
        let (_, gates) = human.get(&format!("/ui/sop/runs/{id}/gates"));
        assert_eq!(gates["gates"][0]["step"], "s2");
        assert!(gates["gates"][0]["nodes"].as_array().unwrap().iter().any(|n| n["payload"]["score"] == json!(score)));
        let (status, body) = human.post(&format!("/ui/sop/runs/{id}/gates/s2"), json!({ "decision": "maybe" }));
        assert_eq!((status, &body["error"]["code"]), (400, &json!("unknown_decision")));
        let (status, body) = human.post(&format!("/ui/sop/runs/{id}/gates/s2"), json!({ "decision": d }));
        assert_eq!(status, 200, "{body}");
        s = body;
    }
    let (_, listed) = agent.get("/agent/sop/runs");
    assert_eq!(listed["runs"], json!([id]));
    let trace = ureq::get(&format!("{base}/agent/sop/runs/{id}/trace")).call().unwrap().into_string().unwrap();
    assert!(trace.lines().count() > 3);
    s
}

#[test]
fn screening_routes_over_http() {
    let cases = [
        (85.0, None, "s4", "s3"),
        (50.0, None, "s3", "s4"),
        (72.0, Some("pass"), "s4", "s3"),
        (72.0, Some("reject"), "s3", "s4"),
    ];
    for (score, decision, done, skipped) in cases {
        let s = screening_run(score, decision);
        assert_eq!(s["status"], "completed", "{score}: {s}");
        assert_eq!(s["steps"][done], "completed", "{score}: {s}");
        assert_eq!(s["steps"][skipped], "skipped", "{score}: {s}");
        assert_eq!(s["lifecycle"], "COMPLETED");
    }
}

#[test]
fn unknown_runs_and_steps() {
    let base = embedded();
    let agent = Client::new(&base);
    let (status, body) = agent.get("/agent/sop/runs/run_nope");
    assert_eq!((status, &body["error"]["code"]), (404, &json!("unknown_run")));
    let (_, run) = agent.post("/agent/sop/runs", json!({ "config": screening() }));
    let id = run["run_id"].as_str().unwrap();
    let (status, body) = agent.post(&format!("/agent/sop/runs/{id}/steps/s9/complete"), json!({}));
    assert_eq!((status, &body["error"]["code"]), (404, &json!("unknown_step")));
    let human = Client::with_token(&base, &issue_token(&base));
    let (status, body) = human.post(&format!("/ui/sop/runs/{id}/gates/s2"), json!({ "decision": "pass" }));
    assert_eq!((status, &body["error"]["code"]), (409, &json!("no_open_gate")));
}
