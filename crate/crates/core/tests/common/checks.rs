//! Criterion checks shared by the integration tests (small sizes) and the
//! acceptance run (full sizes). Each returns a one-line summary or the
//! first counterexample.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anx_core::cli::CliCommand;
use anx_core::clock::ManualClock;
use anx_core::engine::{
    audit_ndjson, is_allowed, Channel, ChannelIdentity, DatasetFetcher, Engine, EngineConfig, LifecycleEvent,
    LifecycleState, BUILTIN_ACTIONS,
};
use anx_core::hub::Hub;
use anx_core::keys::CardKey;
use anx_core::markup::{AnxConfig, Dataset, ItemDef, ItemKind};
use anx_core::store::MemoryStore;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use super::gen;

/// Serves the same two-option dataset for every url and counts requests.
#[derive(Default)]
pub struct StaticFetcher {
    pub calls: AtomicUsize,
}

impl DatasetFetcher for StaticFetcher {
    fn fetch(&self, _url: &str) -> Result<Value, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(json!([
            {"id": "it", "name": "Information Technology"},
            {"id": "finance", "name": "Finance"}
        ]))
    }
}

pub struct World {
    pub clock: Arc<ManualClock>,
    pub hub: Arc<Hub>,
    pub engine: Engine,
    pub fetcher: Arc<StaticFetcher>,
}

impl World {
    pub fn new() -> Self {
        let clock = Arc::new(ManualClock::default());
        let hub = Arc::new(Hub::new(clock.clone(), Arc::new(MemoryStore::new())).unwrap());
        let fetcher = Arc::new(StaticFetcher::default());
        let engine = Engine::new(
            EngineConfig::default()
                .with_clock(clock.clone())
                .with_verifier(hub.clone())
                .with_fetcher(fetcher.clone()),
        )
        .unwrap();
        Self {
            clock,
            hub,
            engine,
            fetcher,
        }
    }

    pub fn human(&self) -> ChannelIdentity {
        let t = self.hub.issue_user_token("session", Channel::HumanUi).unwrap();
        ChannelIdentity::human(t.token)
    }

    pub fn exec(&self, key: &str, action: &str, params: &str, who: &ChannelIdentity) -> Result<Value, String> {
        let cmd = CliCommand::new(CardKey::parse(key).unwrap(), action, params).map_err(|e| e.to_string())?;
        self.engine
            .execute(&cmd, who)
            .map(|r| serde_json::to_value(r).unwrap())
            .map_err(|e| e.to_string())
    }
}

fn find_leak(text: &str, secrets: &BTreeMap<String, String>) -> Option<String> {
    secrets.values().find(|s| text.contains(s.as_str())).cloned()
}

fn plain_value(r: &mut StdRng, item: &ItemDef) -> String {
    match item.options_set.as_ref().map(|o| &o.dataset) {
        Some(Dataset::Url(_)) => ["it", "finance"].choose(r).unwrap().to_string(),
        Some(Dataset::Inline(opts)) if !opts.is_empty() => opts.choose(r).unwrap().value.clone(),
        _ => gen::text(r, gen::PLAIN, 1, 10),
    }
}

/// Runs `traces` random command sequences and scans every agent-channel
/// response (reads after each step and the agent's own command results,
/// including error text) for any value that ever entered the vault.
pub fn isolation(traces: usize, seed: u64) -> Result<String, String> {
    let mut responses = 0usize;
    let mut vaulted = 0usize;
    for t in 0..traces {
        let mut r = gen::rng(seed.wrapping_add(t as u64));
        let w = World::new();
        let mut cfg = gen::form(&mut r);
        if cfg.sensitive_nicks().is_empty() {
            let mut i = ItemDef::new("secretField", ItemKind::Input);
            i.sensitive = true;
            i.required = r.gen_bool(0.5);
            cfg.items.push(i);
        }
        let human = w.human();
        let key = w.engine.register_card(cfg.clone(), &ChannelIdentity::Agent).unwrap().to_string();
        let sensitive: Vec<String> = cfg.sensitive_nicks().into_iter().collect();
        let plain: Vec<&ItemDef> = cfg.items.iter().filter(|i| i.kind.carries_value() && !i.sensitive).collect();
        let taps: Vec<String> = cfg.items.iter().filter_map(|i| i.tap.clone()).chain(["submit".to_string()]).collect();
        // Currently vaulted value per nick; a superseded value is no longer secret.
        let mut secrets: BTreeMap<String, String> = BTreeMap::new();
        let mut nodes: Vec<String> = Vec::new();

        for _ in 0..r.gen_range(4..=14) {
            let mut agent_out: Vec<String> = Vec::new();
            match r.gen_range(0..8) {
                0 | 1 => {
                    let mut m = serde_json::Map::new();
                    for i in &plain {
                        if !r.gen_bool(0.5) {
                            continue;
                        }
                        m.insert(i.nick.clone(), Value::String(plain_value(&mut r, i)));
                    }
                    if r.gen_bool(0.2) {
                        let nick = sensitive.choose(&mut r).unwrap();
                        m.insert(nick.clone(), Value::String(gen::text(&mut r, gen::PLAIN, 1, 6)));
                    }
                    agent_out.push(format!("{:?}", w.exec(&key, "set_form", &Value::Object(m).to_string(), &ChannelIdentity::Agent)));
                }
                2 | 3 => {
                    let mut fields = BTreeMap::new();
                    for nick in &sensitive {
                        if !r.gen_bool(0.7) {
                            continue;
                        }
                        let s = gen::secret(&mut r);
                        fields.insert(nick.clone(), s);
                    }
                    if w.engine.submit_sensitive(&key, &fields, &human).is_ok() {
                        secrets.extend(fields);
                    }
                }
                4 => {
                    let tap = taps.choose(&mut r).unwrap();
                    agent_out.push(format!("{:?}", w.exec(&key, tap, "", &ChannelIdentity::Agent)));
                }
                5 => {
                    let gates = w.engine.gates(&key).unwrap();
                    if let Some(g) = gates.first() {
                        let action = if r.gen_bool(0.5) { "confirm" } else { "cancel" };
                        let _ = w.exec(&key, action, &json!({ "gate_id": g.gate_id }).to_string(), &human);
                        // The agent tries the same and reads the refusal.
                        agent_out.push(format!("{:?}", w.exec(&key, action, &json!({ "gate_id": g.gate_id }).to_string(), &ChannelIdentity::Agent)));
                    }
                }
                6 => {
                    let id = format!("n{}", r.gen_range(0..3));
                    let leak = secrets.values().next().cloned().unwrap_or_default();
                    let _ = w.engine.write_node(&key, &id, json!({ "note": leak, "nested": [{ leak.clone(): 1 }] }), &human);
                    nodes.push(id);
                }
                _ => {
                    let id = format!("n{}", r.gen_range(0..3));
                    let _ = w.engine.write_node(&key, &id, json!({ "score": r.gen_range(0..100) }), &ChannelIdentity::Agent);
                    nodes.push(id);
                }
            }
            if !secrets.is_empty() {
                vaulted += 1;
            }

            agent_out.push(format!("{:?}", w.engine.get_markup(&key, &ChannelIdentity::Agent, false)));
            agent_out.push(format!("{:?}", w.engine.get_markup(&key, &ChannelIdentity::Agent, true)));
            agent_out.push(format!("{:?}", w.engine.get_state(&key, &ChannelIdentity::Agent)));
            agent_out.push(format!("{:?}", w.exec(&key, "get_markup", "", &ChannelIdentity::Agent)));
            agent_out.push(format!("{:?}", w.exec(&key, "get_state", "", &ChannelIdentity::Agent)));
            for id in &nodes {
                agent_out.push(format!("{:?}", w.exec(&key, "read_node", &json!({ "node_id": id }).to_string(), &ChannelIdentity::Agent)));
            }
            agent_out.push(audit_ndjson(&w.engine.audit(&key).unwrap()));
            for out in &agent_out {
                responses += 1;
                if let Some(s) = find_leak(out, &secrets) {
                    return Err(format!("trace {t}: secret {s:?} in agent response {out}"));
                }
            }
        }
    }
    Ok(format!("{traces} traces, {responses} agent responses scanned, {vaulted} steps with a non-empty vault, 0 leaks"))
}

/// Form with a confirm-required submit, a plain tap, a sensitive field and
/// a url dataset.
pub fn confirm_form() -> AnxConfig {
    anx_core::markup::parse_config(
        r#"{"protocol":"ANX","version":"1.0.0","kind":"form","title":"Transfer",
            "items":[
              {"nick":"amount","kind":"input","required":true},
              {"nick":"pin","kind":"input","sensitive":true},
              {"nick":"bank","kind":"options","optionsSet":{"dataset":{"url_dataset":"http://localhost:7887/dataset/banks"},"valueNick":"id","titleNick":"name"}},
              {"nick":"draft","kind":"button","tap":"save_draft"},
              {"nick":"send","kind":"button","tap":"submit","confirm":true}
            ]}"#,
    )
    .unwrap()
}

/// Drives a fresh card to CONFIRMING; returns its key and gate id.
pub fn to_confirming(w: &World) -> (String, String) {
    let key = w.engine.register_card(confirm_form(), &ChannelIdentity::Agent).unwrap().to_string();
    w.exec(&key, "set_form", r#"{"amount":"10","bank":"it"}"#, &ChannelIdentity::Agent).unwrap();
    let res = w.exec(&key, "submit", "", &ChannelIdentity::Agent).unwrap();
    assert_eq!(res["new_state"], "CONFIRMING");
    let gate = res["body"]["gate_id"].as_str().unwrap().to_owned();
    (key, gate)
}

/// Every agent-channel command against a CONFIRMING card, then the human
/// exits. Compares observed `(from, event, to)` with the table.
pub fn confirming_exhaustive() -> Result<String, String> {
    let w = World::new();
    let (key, gate) = to_confirming(&w);
    let snapshot = |w: &World| {
        let mut s = w.engine.get_state(&key, &w.human()).unwrap();
        s.as_object_mut().unwrap().remove("result");
        s
    };
    let before = snapshot(&w);

    let cfg = confirm_form();
    let mut actions: Vec<String> = BUILTIN_ACTIONS.iter().map(|s| s.to_string()).collect();
    actions.extend(cfg.items.iter().filter_map(|i| i.tap.clone()));
    actions.extend(["run_step", "resolve_gate", "submit_sensitive", "approve", "x"].map(String::from));
    let mut params: Vec<String> = vec![
        String::new(),
        "{}".into(),
        "not json".into(),
        json!({ "gate_id": gate }).to_string(),
        json!({ "gate_id": "gate_bogus" }).to_string(),
        json!({ "node_id": "n" }).to_string(),
        json!({ "decision": "pass", "gate_id": gate }).to_string(),
        json!({ "resolve_options": true }).to_string(),
    ];
    for i in cfg.items.iter().filter(|i| i.kind.carries_value()) {
        params.push(json!({ i.nick.clone(): "it" }).to_string());
    }

    let mut attempts = 0;
    for a in &actions {
        for p in &params {
            attempts += 1;
            let _ = w.exec(&key, a, p, &ChannelIdentity::Agent);
            let now = w.engine.lifecycle(&key).unwrap();
            if now != LifecycleState::Confirming || snapshot(&w) != before {
                return Err(format!("agent `{a}` with `{p}` changed the card to {now}"));
            }
        }
    }
    // Direct entry points with the agent identity.
    let pin = BTreeMap::from([("pin".to_string(), "0000".to_string())]);
    let direct: Vec<(&str, bool)> = vec![
        ("confirm", w.engine.confirm(&key, &gate, &ChannelIdentity::Agent).is_ok()),
        ("cancel", w.engine.cancel(&key, &gate, &ChannelIdentity::Agent).is_ok()),
        ("submit_sensitive", w.engine.submit_sensitive(&key, &pin, &ChannelIdentity::Agent).is_ok()),
        ("resolve_step_gate", w.engine.resolve_step_gate(&key, &gate, &ChannelIdentity::Agent, "pass").is_ok()),
    ];
    for (name, ok) in direct {
        attempts += 1;
        if ok || snapshot(&w) != before {
            return Err(format!("agent {name} was accepted"));
        }
    }
    // Forged and expired tokens fare no better.
    attempts += 1;
    if w.engine.confirm(&key, &gate, &ChannelIdentity::human("ut_forged")).is_ok() {
        return Err("forged token confirmed".into());
    }
    let stale = w.human();
    w.clock.advance(chrono::Duration::seconds(3601));
    attempts += 1;
    if w.engine.confirm(&key, &gate, &stale).is_ok() {
        return Err("expired token confirmed".into());
    }
    if snapshot(&w) != before {
        return Err("token failures changed the card".into());
    }

    // Human exits: confirm, cancel, and a confirm whose action fails.
    let fresh = w.human();
    w.exec(&key, "confirm", &json!({ "gate_id": gate }).to_string(), &fresh)
        .map_err(|e| format!("human confirm failed: {e}"))?;
    if w.engine.lifecycle(&key).unwrap() != LifecycleState::Completed {
        return Err("confirm did not complete the card".into());
    }
    let (k2, g2) = to_confirming(&w);
    w.exec(&k2, "cancel", &json!({ "gate_id": g2 }).to_string(), &fresh)
        .map_err(|e| format!("human cancel failed: {e}"))?;
    if w.engine.lifecycle(&k2).unwrap() != LifecycleState::Executing {
        return Err("cancel did not return to EXECUTING".into());
    }

    // Every transition that happened is in the table, and the exits taken
    // from CONFIRMING are exactly the human ones.
    let mut exits = BTreeSet::new();
    for k in [&key, &k2] {
        for e in w.engine.audit(k).unwrap() {
            let (Some(from), Some(to)) = (e.from, e.to) else { continue };
            let ev: LifecycleEvent = serde_json::from_value(json!(e.event)).map_err(|x| x.to_string())?;
            if !is_allowed(from, ev, to) {
                return Err(format!("observed ({from}, {}, {to}) outside the table", e.event));
            }
            if from == LifecycleState::Confirming && to != LifecycleState::Confirming {
                if e.channel != "human_ui" {
                    return Err(format!("CONFIRMING left via {} on {}", e.event, e.channel));
                }
                exits.insert(e.event.clone());
            }
        }
    }
    if exits != BTreeSet::from(["confirm".to_string(), "cancel".to_string()]) {
        return Err(format!("unexpected exits {exits:?}"));
    }
    Ok(format!("{attempts} agent/forged attempts, 0 state changes; human confirm and cancel exit as tabled"))
}

// ---- SOP scheduling ----

use anx_core::sop::{
    ready_steps, sop_from_steps, CaseArm, DecisionProvider, JoinRule, NodeSnapshot, ProviderError, RouteMap, SopDef,
    StatusMap, StepDef, StepKind, StepStatus,
};

const STATUSES: [StepStatus; 7] = [
    StepStatus::Pending,
    StepStatus::Ready,
    StepStatus::Running,
    StepStatus::Completed,
    StepStatus::Skipped,
    StepStatus::BlockedOnHuman,
    StepStatus::Failed,
];

fn subset<T: Clone>(r: &mut StdRng, xs: &[T], p: f64) -> Vec<T> {
    let mut out = Vec::new();
    for x in xs {
        if r.gen_bool(p) {
            out.push(x.clone());
        }
    }
    out
}

/// Random valid step graph on `n` steps: `s0` starts, every later step has
/// earlier sources or is the target of an earlier router. Routers are
/// condition steps, human gates (both with arms) or action steps with
/// `targets`; routes only point forward.
pub fn random_sop(r: &mut StdRng, n: usize) -> SopDef {
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut steps: Vec<StepDef> = ids.iter().map(|u| StepDef::new(u.clone(), StepKind::Action)).collect();
    steps[0].start = true;
    for i in 0..n {
        let later = &ids[i + 1..];
        if later.is_empty() || !r.gen_bool(0.45) {
            continue;
        }
        match r.gen_range(0..3) {
            0 | 1 => {
                steps[i].kind = if r.gen_bool(0.5) { StepKind::Condition } else { StepKind::HumanGate };
                for a in 0..r.gen_range(1..=3) {
                    let mut targets = subset(r, later, 0.5);
                    if targets.is_empty() {
                        targets.push(later.choose(r).unwrap().clone());
                    }
                    steps[i].case.push(CaseArm { when: format!("arm{a}"), targets });
                }
            }
            _ => {
                let mut targets = subset(r, later, 0.5);
                if targets.is_empty() {
                    targets.push(later.choose(r).unwrap().clone());
                }
                steps[i].targets = Some(targets);
            }
        }
    }
    for i in 1..n {
        steps[i].sources = subset(r, &ids[..i], 0.5);
        steps[i].sources_join = if r.gen_bool(0.5) { JoinRule::All } else { JoinRule::Any };
        let targeted = steps[..i].iter().any(|s| s.route_targets().contains(&ids[i].as_str()));
        if steps[i].sources.is_empty() && !targeted {
            steps[i].sources.push(ids[r.gen_range(0..i)].clone());
        }
    }
    sop_from_steps("random".into(), steps).expect("generated graph is valid")
}

/// Independent restatement of the ready rule, evaluated from scratch.
pub fn oracle_ready(def: &SopDef, status: &StatusMap, routes: &RouteMap) -> BTreeSet<String> {
    let st = |u: &str| status.get(u).copied().unwrap_or(StepStatus::Pending);
    let targets_of = |p: &StepDef| -> BTreeSet<String> {
        p.case.iter().flat_map(|a| a.targets.clone()).chain(p.targets.clone().unwrap_or_default()).collect()
    };
    let picked = |p: &str, s: &str| routes.get(p).is_some_and(|t| t.iter().any(|x| x == s));
    let mut out = BTreeSet::new();
    for s in &def.steps {
        if st(&s.uuid) != StepStatus::Pending {
            continue;
        }
        // Completed sources, split by whether routing let them through.
        let mut through = 0;
        let mut blocked = 0;
        for p in def.steps.iter().filter(|p| s.sources.contains(&p.uuid)) {
            if st(&p.uuid) != StepStatus::Completed {
                continue;
            }
            if targets_of(p).contains(&s.uuid) && !picked(&p.uuid, &s.uuid) {
                blocked += 1;
            } else {
                through += 1;
            }
        }
        let routed_in = def.steps.iter().any(|r| {
            !s.sources.contains(&r.uuid)
                && targets_of(r).contains(&s.uuid)
                && st(&r.uuid) == StepStatus::Completed
                && picked(&r.uuid, &s.uuid)
        });
        let all_settled = s
            .sources
            .iter()
            .all(|p| matches!(st(p), StepStatus::Completed | StepStatus::Skipped));
        let ready = if s.sources.is_empty() {
            s.start || routed_in
        } else {
            match s.sources_join {
                JoinRule::All => all_settled && blocked == 0 && (through > 0 || routed_in),
                JoinRule::Any => through > 0 || routed_in,
            }
        };
        if ready {
            out.insert(s.uuid.clone());
        }
    }
    out
}

fn random_history(r: &mut StdRng, def: &SopDef) -> (StatusMap, RouteMap) {
    let mut status = StatusMap::new();
    let mut routes = RouteMap::new();
    for s in &def.steps {
        // Weighted towards the statuses the rule distinguishes.
        let st = match r.gen_range(0..10) {
            0..=2 => StepStatus::Pending,
            3..=5 => StepStatus::Completed,
            6 | 7 => StepStatus::Skipped,
            _ => *STATUSES.choose(r).unwrap(),
        };
        status.insert(s.uuid.clone(), st);
        if s.is_router() && (st == StepStatus::Completed || r.gen_bool(0.1)) {
            let chosen = if s.case.is_empty() {
                let all: Vec<String> = s.route_targets().into_iter().map(String::from).collect();
                let mut c = subset(r, &all, 0.5);
                if c.is_empty() {
                    c.push(all[0].clone());
                }
                c
            } else {
                s.case.choose(r).unwrap().targets.clone()
            };
            routes.insert(s.uuid.clone(), chosen);
        }
    }
    (status, routes)
}

/// Ready-set agreement over `dags` random graphs, `per_dag` histories each.
/// Also reports how many comparisons exercised each rule.
pub fn ready_oracle(dags: usize, per_dag: usize, seed: u64) -> Result<String, String> {
    let mut r = gen::rng(seed);
    let (mut cmp, mut all_join, mut any_join, mut skipped_src, mut precedence) = (0usize, 0, 0, 0, 0);
    for d in 0..dags {
        let n = r.gen_range(2..=6);
        let def = random_sop(&mut r, n);
        for _ in 0..per_dag {
            let (status, routes) = random_history(&mut r, &def);
            let got = ready_steps(&def, &status, &routes);
            let want = oracle_ready(&def, &status, &routes);
            if got != want {
                return Err(format!(
                    "dag {d}: ready {got:?} != oracle {want:?}\nsteps {:#?}\nstatus {status:?}\nroutes {routes:?}",
                    def.steps
                ));
            }
            cmp += 1;
            for s in def.steps.iter().filter(|s| s.sources.len() > 1) {
                match s.sources_join {
                    JoinRule::All => all_join += 1,
                    JoinRule::Any => any_join += 1,
                }
            }
            for s in &def.steps {
                if s.sources.iter().any(|p| status.get(p) == Some(&StepStatus::Skipped)) {
                    skipped_src += 1;
                }
                if s.sources.iter().any(|p| def.step(p).is_some_and(|p| p.route_targets().contains(&s.uuid.as_str()))) {
                    precedence += 1;
                }
            }
        }
    }
    if all_join == 0 || any_join == 0 || skipped_src == 0 || precedence == 0 {
        return Err("generator missed a rule".into());
    }
    Ok(format!(
        "{dags} DAGs, {cmp} histories, 100% agreement (multi-source all={all_join} any={any_join}, skipped source={skipped_src}, route precedence={precedence})"
    ))
}

/// Picks arms and targets from a seed, so whole runs are reproducible.
pub struct SeededProvider(pub u64);

impl SeededProvider {
    fn pick(&self, uuid: &str, n: usize) -> usize {
        let h = uuid.bytes().fold(self.0, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
        (h % n as u64) as usize
    }
}

impl DecisionProvider for SeededProvider {
    fn choose_arm(&self, step: &StepDef, _nodes: &NodeSnapshot) -> Result<usize, ProviderError> {
        Ok(self.pick(&step.uuid, step.case.len()))
    }

    fn step_outputs(&self, step: &StepDef, _nodes: &NodeSnapshot) -> Result<serde_json::Map<String, Value>, ProviderError> {
        let mut m = serde_json::Map::new();
        m.insert("by".into(), json!(step.uuid));
        Ok(m)
    }

    fn choose_targets(&self, step: &StepDef, _nodes: &NodeSnapshot) -> Result<Vec<String>, ProviderError> {
        let all = step.targets.clone().unwrap_or_default();
        let keep: Vec<String> = all
            .iter()
            .enumerate()
            .filter(|(i, t)| self.pick(&format!("{}{t}", step.uuid), 2) == 0 || *i == 0)
            .map(|(_, t)| t.clone())
            .collect();
        Ok(keep)
    }
}

// ---- resume screening ----

use anx_core::sop::RunStatus;

pub const CASE_STUDY: &str = "resume_screening_case_study.anx.json";

fn screening_trace(score: f64, decision: Option<&str>) -> Result<(Vec<Value>, anx_core::runtime::RunSummary), String> {
    let rt = super::screening_runtime(score);
    let run = rt.start_run(super::config(CASE_STUDY), &ChannelIdentity::Agent).map_err(|e| e.to_string())?;
    let mut s = rt.advance(&run.run_id).map_err(|e| e.to_string())?;
    if let Some(d) = decision {
        if s.status != RunStatus::WaitingHuman {
            return Err(format!("score {score}: expected a blocked gate, got {:?}", s.status));
        }
        // The agent channel cannot complete it.
        if rt.resolve_human_gate(&run.run_id, "s2", d, &ChannelIdentity::Agent).is_ok() {
            return Err("agent resolved the manual review".into());
        }
        s = rt
            .resolve_human_gate(&run.run_id, "s2", d, &super::human(&rt))
            .map_err(|e| e.to_string())?;
    }
    let trace = rt.trace(&run.run_id).map_err(|e| e.to_string())?;
    // Run and gate ids are random per run; everything else must repeat.
    let gates: Vec<String> = trace
        .iter()
        .filter_map(|e| e.detail.as_ref()?.get("gate_id")?.as_str().map(str::to_owned))
        .collect();
    let events = trace
        .iter()
        .map(|e| {
            let mut text = e.untimed().to_string().replace(&run.run_id, "<run>");
            for g in &gates {
                text = text.replace(g.as_str(), "<gate>");
            }
            serde_json::from_str(&text).expect("trace event json")
        })
        .collect();
    Ok((events, s))
}

/// The three case-study outcomes, each repeated `reps` times.
pub fn screening_outcomes(reps: usize) -> Result<String, String> {
    let expect = |s: &anx_core::runtime::RunSummary, done: &str, skipped: &str| -> Result<(), String> {
        let ok = s.status == RunStatus::Completed
            && s.steps[done] == StepStatus::Completed
            && s.steps[skipped] == StepStatus::Skipped
            && s.lifecycle == LifecycleState::Completed;
        if ok {
            Ok(())
        } else {
            Err(format!("expected {done} completed and {skipped} skipped, got {:?}", s.steps))
        }
    };
    let cases: [(f64, Option<&str>, &str, &str); 4] = [
        (85.0, None, "s4", "s3"),
        (50.0, None, "s3", "s4"),
        (72.0, Some("pass"), "s4", "s3"),
        (72.0, Some("reject"), "s3", "s4"),
    ];
    for (score, decision, done, skipped) in cases {
        let (first, summary) = screening_trace(score, decision)?;
        expect(&summary, done, skipped).map_err(|e| format!("score {score}: {e}"))?;
        if score == 72.0 {
            let events: Vec<&str> = first.iter().filter_map(|e| e["event"].as_str()).collect();
            let gate_at = events.iter().position(|e| *e == "gate_opened");
            let resolved_at = events.iter().position(|e| *e == "gate_resolved");
            let done_at = first
                .iter()
                .position(|e| e["event"] == "completed" && e["step"] == done);
            if !(gate_at < resolved_at && resolved_at < done_at && gate_at.is_some()) {
                return Err(format!("score 72: {done} completed before the gate was resolved"));
            }
            let resolver = &first[resolved_at.unwrap()];
            if resolver["channel"] != "human_ui" {
                return Err(format!("gate resolved on {}", resolver["channel"]));
            }
        }
        for i in 1..reps {
            let (again, _) = screening_trace(score, decision)?;
            if again != first {
                let at = first.iter().zip(&again).position(|(a, b)| a != b).unwrap_or(first.len().min(again.len()));
                return Err(format!(
                    "score {score}: repetition {i} differs at event {at}: {:?} vs {:?}",
                    first.get(at),
                    again.get(at)
                ));
            }
        }
    }
    Ok(format!("85→s4, 50→s3, 72→blocked then pass→s4 / reject→s3 via human_ui; {reps} identical traces per case"))
}

// ---- round trips ----

use anx_core::cli::{format_command, parse_command};
use anx_core::markup::{parse_config, parse_markup, render_markup, ResolvedOptions, TagKind, ViewerRole};

pub fn form_round_trips(n: usize, seed: u64) -> Result<String, String> {
    let mut r = gen::rng(seed);
    for i in 0..n {
        let cfg = gen::form(&mut r);
        let values = gen::values(&mut r, &cfg);
        for viewer in [ViewerRole::HumanUi, ViewerRole::Agent] {
            let out = render_markup(&cfg, &values, "c_8193", viewer, &ResolvedOptions::new()).map_err(|e| e.to_string())?;
            let doc = parse_markup(&out).map_err(|e| format!("form {i}: {e}\n{out}"))?;
            if doc.serialize() != out {
                return Err(format!("form {i}: serialize differs\n{out}"));
            }
        }
        if parse_config(&cfg.to_json().to_string()).map_err(|e| e.to_string())? != cfg {
            return Err(format!("form {i}: config json round trip differs"));
        }
    }
    Ok(format!("{n} forms byte-identical on both channels"))
}

pub fn command_round_trips(n: usize, seed: u64) -> Result<String, String> {
    let mut r = gen::rng(seed);
    for i in 0..n {
        let cmd = gen::command(&mut r);
        let line = format_command(&cmd);
        match parse_command(&line) {
            Ok(back) if back == cmd => {}
            other => return Err(format!("command {i}: {line:?} parsed as {other:?}")),
        }
    }
    Ok(format!("{n} commands"))
}

/// The published examples parse as documented.
pub fn fixtures_parse() -> Result<String, String> {
    let c1 = super::config("code1_job_seeker.anx.json");
    let nicks: Vec<&str> = c1.items.iter().map(|i| i.nick.as_str()).collect();
    if nicks != ["lastName", "industry"] || c1.items[0].kind != ItemKind::Input || c1.items[1].kind != ItemKind::Options {
        return Err(format!("code 1 items {nicks:?}"));
    }

    let text = super::fixture("code2_job_seeker.anxm");
    let doc = parse_markup(&text).map_err(|e| e.to_string())?;
    if doc.serialize().trim_end() != text.trim_end() {
        return Err("code 2 does not re-serialize to itself".into());
    }
    let kids: Vec<(TagKind, Option<&str>)> = doc.root.elements().map(|e| (e.kind, e.key())).collect();
    let want = [
        (TagKind::Input, Some("c_2354")),
        (TagKind::Options, Some("card_1675")),
        (TagKind::Button, Some("c_2326")),
    ];
    if doc.card_key() != "c_8193" || kids != want {
        return Err(format!("code 2 structure {kids:?}"));
    }
    let opts: Vec<Option<&str>> = doc.root.elements().nth(1).unwrap().elements().map(|o| o.key()).collect();
    if opts != [None, Some("it"), Some("finance")] {
        return Err(format!("code 2 options {opts:?}"));
    }

    // Code 1 with the published values renders the Code 2 shape.
    let mut resolved = ResolvedOptions::new();
    resolved.insert(
        "industry".into(),
        vec![
            anx_core::markup::AnxOption::new("it", "Information Technology"),
            anx_core::markup::AnxOption::new("finance", "Finance"),
        ],
    );
    let values = BTreeMap::from([("lastName".to_string(), "Mingze".to_string()), ("industry".to_string(), "it".to_string())]);
    let rendered = render_markup(&c1, &values, "c_8193", ViewerRole::HumanUi, &resolved).map_err(|e| e.to_string())?;
    let rdoc = parse_markup(&rendered).map_err(|e| e.to_string())?;
    let shape = |d: &anx_core::markup::AnxMarkupDoc| -> Vec<(TagKind, Vec<Option<String>>, Option<String>)> {
        d.root
            .elements()
            .map(|e| {
                let sub = e.elements().map(|o| o.first_text().map(str::to_owned)).collect();
                (e.kind, sub, e.attr("tap").map(str::to_owned))
            })
            .collect()
    };
    if shape(&rdoc) != shape(&doc) {
        return Err(format!("code 1 render differs from code 2:\n{rendered}"));
    }

    let c3 = anx_core::sop::load_sop(&super::config("code3_resume_screening.anx.json")).map_err(|e| e.to_string())?;
    let s2 = c3.step("s2").ok_or("code 3 lacks s2")?;
    let arms: Vec<Vec<String>> = s2.case.iter().map(|a| a.targets.clone()).collect();
    if c3.start().uuid != "s1" || s2.kind != StepKind::Condition || arms != [vec!["s3".to_string()], vec!["s4".to_string()]] {
        return Err(format!("code 3 arms {arms:?}"));
    }
    Ok("code 1, code 2, code 3 as published".into())
}

// ---- discovery ----

use anx_core::hub::AppManifest;

fn vocabulary(r: &mut StdRng, n: usize) -> Vec<String> {
    let mut words = BTreeSet::new();
    while words.len() < n {
        let len = r.gen_range(4..=8);
        words.insert((0..len).map(|_| (b'a' + r.gen_range(0..26)) as char).collect::<String>());
    }
    words.into_iter().collect()
}

fn words(r: &mut StdRng, vocab: &[String], lo: usize, hi: usize) -> String {
    let n = r.gen_range(lo..=hi);
    (0..n).map(|_| vocab.choose(r).unwrap().as_str()).collect::<Vec<_>>().join(" ")
}

pub fn manifest(app_id: &str, title: &str, description: &str, tags: Vec<String>) -> AppManifest {
    let cfg = parse_config(
        &json!({"protocol":"ANX","version":"1.0.0","kind":"form","title": title, "description": description,
                "items":[{"nick":"q","kind":"input"}]})
        .to_string(),
    )
    .expect("manifest config");
    AppManifest::for_config(app_id, cfg, tags)
}

/// Plain cosine over tf-idf vectors, recomputed from the raw texts.
pub fn brute_force_rank(docs: &[(String, String)], query: &str) -> Vec<(String, f64)> {
    let split = |t: &str| -> Vec<String> {
        t.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
    };
    let n = docs.len() as f64;
    let bags: Vec<BTreeMap<String, f64>> = docs
        .iter()
        .map(|(_, t)| {
            let mut m = BTreeMap::new();
            for w in split(t) {
                *m.entry(w).or_insert(0.0) += 1.0;
            }
            m
        })
        .collect();
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for b in &bags {
        for w in b.keys() {
            *df.entry(w.as_str()).or_insert(0.0) += 1.0;
        }
    }
    let idf = |w: &str| ((n + 1.0) / (df.get(w).copied().unwrap_or(0.0) + 1.0)).ln() + 1.0;
    let mut q = BTreeMap::new();
    for w in split(query) {
        *q.entry(w).or_insert(0.0) += 1.0;
    }
    let qv: BTreeMap<&String, f64> = q.iter().map(|(w, c)| (w, c * idf(w))).collect();
    let qn = qv.values().map(|x| x * x).sum::<f64>().sqrt();
    let mut out: Vec<(String, f64)> = Vec::new();
    for ((id, _), bag) in docs.iter().zip(&bags) {
        let dv: BTreeMap<&String, f64> = bag.iter().map(|(w, c)| (w, c * idf(w))).collect();
        let dn = dv.values().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = qv.iter().map(|(w, x)| x * dv.get(w).copied().unwrap_or(0.0)).sum();
        if qn > 0.0 && dn > 0.0 && dot > 0.0 {
            out.push((id.clone(), (dot / (qn * dn)).min(1.0)));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Top-k agreement with the brute force at each index size, immediate
/// discoverability, and the spread of mean response size for fixed k.
pub fn discovery(sizes: &[usize], queries: usize, k: usize, seed: u64) -> Result<String, String> {
    let mut r = gen::rng(seed);
    let vocab = vocabulary(&mut r, 400);
    let mut mean_bytes = Vec::new();
    for &size in sizes {
        let hub = Hub::in_memory();
        let mut docs = Vec::new();
        let mut titles = Vec::new();
        for i in 0..size {
            let id = format!("app{i:04}");
            let title = words(&mut r, &vocab, 3, 3);
            let desc = words(&mut r, &vocab, 4, 12);
            let tags: Vec<String> = (0..r.gen_range(0..3)).map(|_| vocab.choose(&mut r).unwrap().clone()).collect();
            let text = format!("{title} {desc} {}", tags.join(" "));
            hub.publish(manifest(&id, &title, &desc, tags)).map_err(|e| e.to_string())?;
            docs.push((id, text));
            titles.push(title);
        }
        let mut total = 0usize;
        let mut counted = 0usize;
        for qi in 0..queries {
            // Odd queries take one title word from each of 6 distinct apps,
            // so they usually fill k; even ones are arbitrary vocabulary.
            let q = if qi % 2 == 1 {
                let picks: Vec<&String> = titles.choose_multiple(&mut r, 6).collect();
                picks
                    .iter()
                    .map(|t| t.split(' ').collect::<Vec<_>>().choose(&mut r).unwrap().to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            } else {
                words(&mut r, &vocab, 1, 4)
            };
            let got = hub.discover_exact(&q, k);
            let want: Vec<(String, f64)> = brute_force_rank(&docs, &q).into_iter().take(k).collect();
            if got.len() != want.len() {
                return Err(format!("size {size} query {qi} {q:?}: {} results, oracle {}", got.len(), want.len()));
            }
            for (pos, (g, (wid, ws))) in got.iter().zip(&want).enumerate() {
                let tied = (g.score - ws).abs() < 1e-9;
                if !tied || (g.app_id != *wid && !want.iter().any(|(id, s)| *id == g.app_id && (s - ws).abs() < 1e-9)) {
                    return Err(format!("size {size} query {q:?} rank {pos}: {} {} vs oracle {wid} {ws}", g.app_id, g.score));
                }
            }
            let wire = hub.discover(&q, k).map_err(|e| e.to_string())?;
            if qi % 2 == 1 && wire.entries.len() == k {
                total += serde_json::to_vec(&wire).unwrap().len();
                counted += 1;
            }
        }
        // A fresh app is found on the next call.
        let fresh = format!("zq{size}novelterm");
        hub.publish(manifest("fresh.app", &format!("Fresh {fresh}"), "", vec![])).map_err(|e| e.to_string())?;
        let top = hub.discover(&fresh, 1).map_err(|e| e.to_string())?;
        if top.entries.first().map(|e| e.app_id.as_str()) != Some("fresh.app") {
            return Err(format!("size {size}: fresh app not discoverable"));
        }
        if counted == 0 {
            return Err(format!("size {size}: no query filled k"));
        }
        mean_bytes.push(total as f64 / counted as f64);
    }
    let lo = mean_bytes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean_bytes.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    if spread > 0.05 {
        return Err(format!("mean response bytes {mean_bytes:?} spread {:.1}% > 5%", spread * 100.0));
    }
    let sizes_s: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    let bytes_s: Vec<String> = mean_bytes.iter().map(|b| format!("{b:.0}")).collect();
    Ok(format!(
        "top-{k} matches brute force at {} apps; fresh app found at once; mean response bytes {} (spread {:.1}%)",
        sizes_s.join("/"),
        bytes_s.join("/"),
        spread * 100.0
    ))
}

// ---- representation size ----

use anx_core::bench::{compare_representations, sample_values, BenchReport};

pub const JOB_FORM: &str = "job_form_10_fields.anx.json";

pub fn representation_report() -> BenchReport {
    let form = super::config(JOB_FORM);
    compare_representations(&form, &sample_values(&form), &[0, 2, 50, 200])
}

/// At least 40% fewer tokens with 50 options on the dynamic field. The gap
/// with no options inlined is reported alongside.
pub fn representation(report: &BenchReport) -> Result<String, String> {
    let row = |n: usize| report.rows.iter().find(|r| r.option_count == n).ok_or(format!("no row for {n}"));
    let r50 = row(50)?;
    let r0 = row(0)?;
    let line = format!(
        "50 options: anx {} vs inlined {} tokens ({:.1}% smaller); with 0 options the gap is {:.1}%",
        r50.anx.approx_tokens,
        r50.inlined.approx_tokens,
        r50.token_reduction * 100.0,
        zero_option_gap(r0) * 100.0
    );
    if r50.token_reduction >= 0.40 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Relative token gap between the two sides of a row.
pub fn zero_option_gap(row: &anx_core::bench::BenchRow) -> f64 {
    (row.anx.approx_tokens as f64 - row.inlined.approx_tokens as f64).abs() / row.inlined.approx_tokens as f64
}
