mod common;

use std::path::Path;
use std::sync::Arc;

use common::{butterfly, core_fixture, fixture, BUTTERFLY_CAPTION, BUTTERFLY_TOPIC};
use diagplan::llm_client::ReplayClient;
use diagplan::service::{router, AppState, Backend, SessionStore};
use diagplan_core::plan::{DiagramPlan, EntityId, GridBox};
use diagplan_core::NoIcons;
use serde_json::{json, Value};

struct Server {
    base: String,
    agent: ureq::Agent,
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

impl Server {
    fn start(backend: Backend, store: SessionStore, ui: Option<&Path>) -> Server {
        let app = router(AppState::new(store, backend), ui);
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        std::thread::spawn(move || runtime.block_on(async { axum::serve(listener, app).await.unwrap() }));
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Server { base, agent }
    }

    fn offline() -> Server {
        Self::start(Backend::offline(Arc::new(NoIcons)), SessionStore::in_memory(), None)
    }

    fn reply(mut resp: ureq::http::Response<ureq::Body>) -> Reply {
        Reply { status: resp.status().as_u16(), body: resp.body_mut().read_to_string().unwrap() }
    }

    fn get(&self, path: &str) -> Reply {
        Self::reply(self.agent.get(format!("{}{path}", self.base)).call().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> Reply {
        let req = self.agent.post(format!("{}{path}", self.base)).header("content-type", "application/json");
        Self::reply(req.send(body.to_string()).unwrap())
    }

    fn put(&self, path: &str, body: Value) -> Reply {
        let req = self.agent.put(format!("{}{path}", self.base)).header("content-type", "application/json");
        Self::reply(req.send(body.to_string()).unwrap())
    }

    fn create(&self, plan: &DiagramPlan) -> String {
        let r = self.post("/session", json!({ "caption": plan.caption, "topic": "biology", "plan": plan }));
        assert_eq!(r.status, 201, "{}", r.body);
        r.json()["id"].as_str().unwrap().to_string()
    }
}

fn moved(plan: &DiagramPlan, id: EntityId, b: GridBox) -> DiagramPlan {
    let mut p = plan.clone();
    p.layouts.insert(id, b);
    p
}

#[test]
fn edit_then_render() {
    let s = Server::offline();
    let id = s.create(&butterfly());
    let got = s.get(&format!("/session/{id}/plan")).json();
    assert_eq!(got["version"], 1);
    assert_eq!(serde_json::from_value::<DiagramPlan>(got["plan"].clone()).unwrap(), butterfly());

    let svg = s.get(&format!("/session/{id}/render.svg"));
    assert_eq!(svg.status, 200);
    assert!(svg.body.contains(r#"<rect x="122.88" y="256""#), "{}", svg.body);

    let edited = moved(&butterfly(), EntityId::object(0), GridBox { x: 10, y: 50, w: 14, h: 14 });
    let r = s.put(&format!("/session/{id}/plan"), json!({ "version": 1, "plan": edited }));
    assert_eq!(r.status, 200, "{}", r.body);
    assert_eq!(r.json()["version"], 2);

    let svg = s.get(&format!("/session/{id}/render.svg")).body;
    assert!(svg.contains(r#"<rect x="51.2" y="256""#));
    assert!(!svg.contains(r#"<rect x="122.88""#));
    // cached copy is identical
    assert_eq!(s.get(&format!("/session/{id}/render.svg")).body, svg);
}

#[test]
fn stale_and_invalid_puts_are_refused() {
    let s = Server::offline();
    let id = s.create(&butterfly());
    let path = format!("/session/{id}/plan");
    assert_eq!(s.put(&path, json!({ "version": 1, "plan": butterfly() })).status, 200);

    let stale = s.put(&path, json!({ "version": 1, "plan": butterfly() }));
    assert_eq!(stale.status, 409);
    assert!(stale.json()["error"].as_str().unwrap().contains("current version is 2"));

    let mut bad = serde_json::to_value(butterfly()).unwrap();
    bad["relationships"].as_array_mut().unwrap().push(json!({ "source": "I9", "target": "I0", "kind": "arrow" }));
    let r = s.put(&path, json!({ "version": 2, "plan": bad }));
    assert_eq!(r.status, 400, "{}", r.body);
    let violations = r.json()["violations"].as_array().unwrap().clone();
    assert!(!violations.is_empty());
    assert!(violations[0].to_string().contains("I9"));

    // nothing invalid was stored
    assert_eq!(s.get(&path).json()["version"], 2);
    assert_eq!(s.put(&path, json!({ "nonsense": true })).status, 400);
}

#[test]
fn unknown_session_is_404() {
    let s = Server::offline();
    assert_eq!(s.get("/session/nope/plan").status, 404);
    assert_eq!(s.get("/session/nope/render.svg").status, 404);
    assert_eq!(s.get("/session/nope/trace").status, 404);
    assert_eq!(s.post("/session/nope/refine", json!({})).status, 404);
    assert_eq!(s.put("/session/nope/plan", json!({ "version": 1, "plan": butterfly() })).status, 404);
}

#[test]
fn rules_refinement_one_round_per_call() {
    let s = Server::offline();
    let plan = moved(&butterfly(), EntityId::object(2), GridBox { x: 90, y: 50, w: 14, h: 14 });
    let id = s.create(&plan);

    let report = s.post(&format!("/session/{id}/audit"), json!({})).json();
    assert_eq!(report["verdict"], "needs_revision");
    assert!(report["issues"].to_string().contains("out_of_bounds"));

    let r = s.post(&format!("/session/{id}/refine"), json!({ "auditor_mode": "rules", "refiner_mode": "rules" }));
    assert_eq!(r.status, 200, "{}", r.body);
    let r = r.json();
    assert_eq!(r["approved"], false);
    assert_eq!(r["version"], 2);
    assert_eq!(r["plan"]["layouts"]["I2"], json!([86, 50, 14, 14]));
    assert_eq!(r["entry"]["source"], "initial");
    assert_eq!(s.get(&format!("/session/{id}/trace")).json()["entries"].as_array().unwrap().len(), 1);

    let r = s.post(&format!("/session/{id}/refine"), json!({})).json();
    assert_eq!(r["approved"], true);
    assert_eq!(r["version"], 2);
    assert_eq!(r["entry"]["source"], "rules");
    let trace = s.get(&format!("/session/{id}/trace")).json();
    assert_eq!(trace["entries"].as_array().unwrap().len(), 2);
    assert_eq!(trace["termination"]["reason"], "approved");
}

#[test]
fn user_edit_then_refine_extends_the_timeline() {
    let s = Server::offline();
    let id = s.create(&butterfly());
    let edited = moved(&butterfly(), EntityId::object(0), GridBox { x: 10, y: 50, w: 14, h: 14 });
    assert_eq!(s.put(&format!("/session/{id}/plan"), json!({ "version": 1, "plan": edited })).status, 200);
    assert!(s.get(&format!("/session/{id}/trace")).json()["entries"].as_array().unwrap().is_empty());
    let r = s.post(&format!("/session/{id}/refine"), json!({})).json();
    assert_eq!(r["entry"]["source"], "user");
    assert_eq!(s.get(&format!("/session/{id}/trace")).json()["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn audit_of_an_unsaved_plan() {
    let s = Server::offline();
    let id = s.create(&butterfly());
    let clean = s.post(&format!("/session/{id}/audit"), json!({})).json();
    assert_eq!(clean["verdict"], "approved");
    let overlapping = moved(&butterfly(), EntityId::object(2), GridBox { x: 26, y: 52, w: 14, h: 14 });
    let r = s.post(&format!("/session/{id}/audit"), json!({ "plan": overlapping })).json();
    assert!(r["issues"].to_string().contains("overlap"), "{r}");
    // the stored plan is untouched
    assert_eq!(s.get(&format!("/session/{id}/plan")).json()["version"], 1);
}

#[test]
fn export_matches_the_committed_scripts() {
    let s = Server::offline();
    let id = s.create(&butterfly());
    let office = s.post(&format!("/session/{id}/export"), json!({ "dialect": "office" }));
    assert_eq!(office.status, 200, "{}", office.body);
    let want = std::fs::read_to_string(core_fixture("butterfly.bas")).unwrap();
    assert_eq!(office.json()["text"], want);
    let ink = s.post(&format!("/session/{id}/export"), json!({ "dialect": "inkscape_scripting" })).json();
    assert_eq!(ink["text"], std::fs::read_to_string(core_fixture("butterfly_inkscape.py")).unwrap());
    assert_eq!(s.post(&format!("/session/{id}/export"), json!({ "dialect": "visio" })).status, 400);
}

#[test]
fn sessions_from_dsl_and_from_the_model() {
    let s = Server::offline();
    let dsl = std::fs::read_to_string(core_fixture("butterfly.plan")).unwrap();
    let r = s.post("/session", json!({ "caption": BUTTERFLY_CAPTION, "dsl": dsl }));
    assert_eq!(r.status, 201);
    assert_eq!(serde_json::from_value::<DiagramPlan>(r.json()["plan"].clone()).unwrap(), butterfly());
    let r = s.post("/session", json!({ "caption": BUTTERFLY_CAPTION }));
    assert_eq!(r.status, 503, "{}", r.body);
    assert_eq!(s.post("/session", json!({ "caption": "x", "dsl": "Required Entities:\nEntity Relationships:\nI0 has an arrow to I1\n" })).status, 400);

    let client = ReplayClient::open(&fixture("butterfly_transcript.jsonl")).unwrap();
    let mut backend = Backend::offline(Arc::new(NoIcons));
    backend.client = Some(Arc::new(client));
    let live = Server::start(backend, SessionStore::in_memory(), None);
    let r = live.post("/session", json!({ "caption": BUTTERFLY_CAPTION, "topic": BUTTERFLY_TOPIC }));
    assert_eq!(r.status, 201, "{}", r.body);
    assert_eq!(serde_json::from_value::<DiagramPlan>(r.json()["plan"].clone()).unwrap(), butterfly());
    let id = r.json()["id"].as_str().unwrap().to_string();
    let r = live.post(&format!("/session/{id}/refine"), json!({ "auditor_mode": "llm" })).json();
    assert_eq!(r["approved"], true);
    assert_eq!(r["entry"]["feedback"]["verdict"], "approved");
}

#[test]
fn concurrent_puts_on_one_version() {
    let s = Arc::new(Server::offline());
    let id = s.create(&butterfly());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let s = s.clone();
            let id = id.clone();
            std::thread::spawn(move || {
                let plan = moved(&butterfly(), EntityId::object(0), GridBox { x: i, y: 50, w: 14, h: 14 });
                s.put(&format!("/session/{id}/plan"), json!({ "version": 1, "plan": plan })).status
            })
        })
        .collect();
    let mut statuses: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    statuses.sort();
    assert_eq!(statuses, [200, 409, 409, 409, 409, 409, 409, 409]);
    assert_eq!(s.get(&format!("/session/{id}/plan")).json()["version"], 2);
}

#[test]
fn snapshots_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = Server::start(
        Backend::offline(Arc::new(NoIcons)),
        SessionStore::with_snapshots(dir.path()).unwrap(),
        None,
    );
    let id = first.create(&butterfly());
    let edited = moved(&butterfly(), EntityId::object(0), GridBox { x: 10, y: 50, w: 14, h: 14 });
    assert_eq!(first.put(&format!("/session/{id}/plan"), json!({ "version": 1, "plan": edited })).status, 200);
    std::fs::write(dir.path().join("junk.json"), "{").unwrap();

    let store = SessionStore::with_snapshots(dir.path()).unwrap();
    assert_eq!(store.len(), 1);
    let second = Server::start(Backend::offline(Arc::new(NoIcons)), store, None);
    let got = second.get(&format!("/session/{id}/plan")).json();
    assert_eq!(got["version"], 2);
    assert_eq!(got["plan"]["layouts"]["I0"], json!([10, 50, 14, 14]));
}

#[test]
fn serves_the_editor_bundle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>editor</html>").unwrap();
    let s = Server::start(Backend::offline(Arc::new(NoIcons)), SessionStore::in_memory(), Some(dir.path()));
    assert_eq!(s.get("/index.html").body, "<html>editor</html>");
    assert_eq!(s.get("/").body, "<html>editor</html>");
    assert_eq!(s.get("/session/x/plan").status, 404);
}
