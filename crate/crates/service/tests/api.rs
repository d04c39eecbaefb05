use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use causal_debias::discovery::DiscoveryConfig;
use causal_debias::pipeline;
use causal_debias::simulate::SimulationConfig;
use causal_debias::synthgen::{generate_hiring, hiring_edges, SynthConfig};
use causal_debias::tabular::Dataset;
use causal_debias_service::{router, AppState, ServiceOptions};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    text: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        content_type,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

fn hiring(n: usize) -> Dataset {
    generate_hiring(&SynthConfig { n, seed: 2, ..Default::default() }).unwrap()
}

/// Create a session and upload `data` with Job / Y as label.
async fn loaded(app: &Router, data: &Dataset) -> String {
    let r = call(app, "POST", "/sessions", None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let id = r.json()["id"].as_str().unwrap().to_string();
    let r = call(
        app,
        "POST",
        &format!("/sessions/{id}/dataset"),
        Some(json!({
            "revision": 0,
            "name": "hiring",
            "csv": data.to_csv_string(),
            "schema": {"label": "Job", "favorable": "Y"}
        })),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    id
}

fn edge<'a>(graph: &'a Value, s: &str, t: &str) -> Option<&'a Value> {
    graph["graph"]["edges"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["source"] == s && e["target"] == t)
}

#[tokio::test]
async fn full_session_round_trip() {
    let data = hiring(800);
    let app = router(AppState::default());
    let id = loaded(&app, &data).await;
    let base = format!("/sessions/{id}");

    let r = call(&app, "POST", &format!("{base}/config"), Some(json!({"revision": 1, "groups": {"kind": "column", "column": "Gender"}, "seed": 5}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["dataset"]["label"], "Job");

    // Stale revision.
    let r = call(&app, "POST", &format!("{base}/discover"), Some(json!({"revision": 1}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = call(&app, "POST", &format!("{base}/discover"), Some(json!({"revision": 2}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let discovered = r.json();
    assert_eq!(discovered["stage"], "discovered");
    assert_eq!(call(&app, "GET", &format!("{base}/graph"), None).await.json(), discovered);

    // Orient to the generating DAG with the script the engine derives locally.
    let (_, local) = pipeline::discover_model(&data, &DiscoveryConfig::default()).unwrap();
    let mut rev = 3;
    for e in local.script_to_dag(&hiring_edges()) {
        let r = call(
            &app,
            "POST",
            &format!("{base}/refine"),
            Some(json!({"revision": rev, "op": e.op, "source": e.source, "target": e.target})),
        )
        .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        let v = r.json();
        assert!(v["delta_bic"].is_f64());
        // Push and pull views agree; ΔBIC belongs to the operation only.
        let pulled = call(&app, "GET", &format!("{base}/graph"), None).await.json();
        assert_eq!(pulled["graph"], v["graph"]);
        assert_eq!(pulled["revision"], v["revision"]);
        rev += 1;
    }

    // Debias-stage edits are refused before the switch.
    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "delete", "source": "Gender", "target": "Job"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(&app, "POST", &format!("{base}/stage"), Some(json!({"revision": rev, "action": "debias"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    rev += 1;

    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "set_alpha", "source": "Gender", "target": "Major", "slider": -75}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    rev += 1;
    let v = r.json();
    let e = edge(&v, "Gender", "Major").unwrap();
    assert_eq!(e["alpha"], 0.25);
    // A multi-level nominal target has no single weight to scale.
    assert_eq!(e["representable"], false);
    assert!(e["effective_std_beta"].is_null());

    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "set_alpha", "source": "Work experience", "target": "Job", "slider": 35}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    rev += 1;
    let v = r.json();
    let e = edge(&v, "Work experience", "Job").unwrap();
    assert_eq!(e["alpha"], 1.35);
    let (b, eb) = (e["std_beta"].as_f64().unwrap(), e["effective_std_beta"].as_f64().unwrap());
    assert!((eb - 1.35 * b).abs() < 1e-12);

    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "delete", "source": "Gender", "target": "Job"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    rev += 1;
    assert!(edge(&r.json(), "Gender", "Job").is_none());

    // Illegal op: reason in the body, revision unchanged.
    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "delete", "source": "Gender", "target": "Job"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains("Gender"));
    let r = call(&app, "POST", &format!("{base}/debias"), Some(json!({"revision": rev, "op": "flip", "source": "Gender", "target": "Job"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(&app, "GET", &format!("{base}/paths?source=Gender&target=Job"), None).await;
    assert_eq!(r.json()["paths"], json!([["Gender", "Major", "Job"]]));

    let logs = call(&app, "GET", &format!("{base}/logs"), None).await.json();
    assert_eq!(logs["deleted"], json!([["Gender", "Job"]]));
    let modified: Vec<(String, f64)> = logs["modified"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["source"].as_str().unwrap().to_string(), m["alpha"].as_f64().unwrap()))
        .collect();
    assert!(modified.contains(&("Gender".into(), 0.25)));
    assert!(modified.contains(&("Work experience".into(), 1.35)));
    assert_eq!(logs["impacted"], json!(["Job", "Major"]));

    // Download before simulate: simulated implicitly with the session seed.
    let csv = call(&app, "GET", &format!("{base}/debiased.csv"), None).await;
    assert_eq!(csv.status, StatusCode::OK);
    assert!(csv.content_type.unwrap().starts_with("text/csv"));

    // The persisted edit log replays to the same data through the batch path.
    let script: Vec<causal_debias::graph::ScriptEntry> =
        serde_json::from_str(&call(&app, "GET", &format!("{base}/edit-log"), None).await.text).unwrap();
    let (_, sim) = pipeline::debias(&data, &local, &script, &SimulationConfig::new(5)).unwrap();
    assert_eq!(sim.data.to_csv_string(), csv.text);

    let r = call(&app, "POST", &format!("{base}/simulate"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let s = r.json();
    assert_eq!(s["simulated"], json!(["Major", "Job"]));
    assert!(s["distortion"].as_f64().unwrap() > 0.0);

    let r = call(&app, "POST", &format!("{base}/evaluate"), Some(json!({"revision": rev}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let report = r.json()["report"].clone();
    let before = report["original"]["parity_diff"].as_f64().unwrap();
    let after = report["debiased"]["parity_diff"].as_f64().unwrap();
    assert!(after < before, "{before} -> {after}");
    for side in ["original", "debiased"] {
        let f = &report[side]["fourfold"];
        let sum = f["a_positive"].as_f64().unwrap() + f["a_negative"].as_f64().unwrap();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    let c = call(&app, "GET", &format!("{base}/comparison?node=Major"), None).await.json();
    let d = &c["distribution"];
    assert_eq!(d["categories"].as_array().unwrap().len(), 3);
    assert!(d["debiased"].is_array());
    let c = call(&app, "GET", &format!("{base}/comparison?source=Gender&target=Job"), None).await.json();
    let rel = &c["relation"];
    for row in rel["original"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    let c = call(&app, "GET", &format!("{base}/comparison?node=Age"), None).await.json();
    assert_eq!(c["distribution"]["original"].as_array().unwrap().len(), 5);
    let r = call(&app, "GET", &format!("{base}/comparison"), None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    // Reset drops every debias edit, restores the refined graph and the cache.
    let r = call(&app, "POST", &format!("{base}/stage"), Some(json!({"revision": rev, "action": "reset"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let v = r.json();
    assert_eq!(edge(&v, "Gender", "Job").unwrap()["alpha"], 1.0);
    assert_eq!(edge(&v, "Gender", "Major").unwrap()["alpha"], 1.0);
    let info = call(&app, "GET", &base, None).await.json();
    assert_eq!(info["has_debiased"], false);
    assert_eq!(info["stage"], "debias");
}

#[tokio::test]
async fn errors_and_guardrails() {
    let app = router(AppState::default());
    let r = call(&app, "GET", "/sessions/nope/graph", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert!(r.json()["error"].as_str().unwrap().contains("nope"));

    let id = call(&app, "POST", "/sessions", None).await.json()["id"].as_str().unwrap().to_string();
    // Graph before discovery.
    let r = call(&app, "GET", &format!("/sessions/{id}/graph"), None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    // Too many columns.
    let header: Vec<String> = (0..41).map(|j| format!("c{j}")).collect();
    let row: Vec<String> = (0..41).map(|j| j.to_string()).collect();
    let csv = format!("{}\n{}\n{}\n", header.join(","), row.join(","), row.join(","));
    let r = call(&app, "POST", &format!("/sessions/{id}/dataset"), Some(json!({"revision": 0, "csv": csv}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains("40 columns"));
    // Malformed JSON.
    let req = Request::builder()
        .method("POST")
        .uri(format!("/sessions/{id}/discover"))
        .header("content-type", "application/json")
        .body(Body::from("{"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    // Evaluate without configuration.
    let data = hiring(300);
    let id = loaded(&app, &data).await;
    call(&app, "POST", &format!("/sessions/{id}/discover"), Some(json!({"revision": 1}))).await;
    let r = call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains("group"));
    // Label fixed after discovery.
    let r = call(&app, "POST", &format!("/sessions/{id}/config"), Some(json!({"revision": 2, "label": "Gender"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_isolated() {
    let data = hiring(400);
    let app = router(AppState::default());
    let a = loaded(&app, &data).await;
    let b = loaded(&app, &data).await;
    let (ua, ub) = (format!("/sessions/{a}/discover"), format!("/sessions/{b}/discover"));
    let (ra, rb) = tokio::join!(
        call(&app, "POST", &ua, Some(json!({"revision": 1}))),
        call(&app, "POST", &ub, Some(json!({"revision": 1}))),
    );
    assert_eq!(ra.json()["graph"], rb.json()["graph"]);
    call(&app, "POST", &format!("/sessions/{a}/stage"), Some(json!({"revision": 2, "action": "debias"}))).await;
    let ga = call(&app, "GET", &format!("/sessions/{a}/graph"), None).await.json();
    let gb = call(&app, "GET", &format!("/sessions/{b}/graph"), None).await.json();
    assert_eq!(ga["stage"], "debias");
    assert_eq!(gb["stage"], "discovered");
    assert_eq!(gb["revision"], 2);
    let r = call(&app, "DELETE", &format!("/sessions/{a}"), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &format!("/sessions/{a}"), None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", &format!("/sessions/{b}"), None).await.status, StatusCode::OK);
}

#[tokio::test]
async fn snapshots_written_per_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(ServiceOptions {
        snapshot_dir: Some(dir.path().to_path_buf()),
    }));
    let data = hiring(300);
    let id = loaded(&app, &data).await;
    assert!(dir.path().join(format!("{id}.csv")).exists());
    let schema = std::fs::read_to_string(dir.path().join(format!("{id}.schema.json"))).unwrap();
    assert!(schema.contains("\"favorable\": \"Y\""));
    call(&app, "POST", &format!("/sessions/{id}/discover"), Some(json!({"revision": 1}))).await;
    call(&app, "POST", &format!("/sessions/{id}/stage"), Some(json!({"revision": 2, "action": "debias"}))).await;
    let snap: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap()).unwrap();
    assert_eq!(snap["revision"], 3);
    assert_eq!(snap["stage"], "debias");
    let edits = std::fs::read_to_string(dir.path().join(format!("{id}.edits.json"))).unwrap();
    assert_eq!(edits.trim(), "[]");
}
