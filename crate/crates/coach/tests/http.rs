mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use corgi_coach::http::router;
use corgi_coach::preference::{PreferenceItem, SourcedOption};
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "study-token";

fn app(dir: &std::path::Path) -> Router {
    let opt = |s: &str, t: &str| SourcedOption { source: s.into(), text: t.into() };
    let item = PreferenceItem {
        pair_id: "pair-1".into(),
        stimulus_id: Some("arabic-c01".into()),
        candidates: [opt("corgi", "curve it"), opt("random", "go faster"), opt("human", "close the loop")],
    };
    router(Arc::new(common::coach(dir).with_preference_items([item])), Some(TOKEN.into()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri).header(header::AUTHORIZATION, format!("Bearer {TOKEN}"));
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn strokes(offset: f64) -> Value {
    serde_json::to_value(common::shifted("arabic-c01", offset)).unwrap()
}

#[tokio::test]
async fn bearer_token_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = Request::get("/stimuli").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let req = Request::get("/stimuli").header(header::AUTHORIZATION, "Bearer wrong").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let (status, body) = call(&app, Method::GET, "/stimuli", None).await;
    assert_eq!((status, body), (StatusCode::OK, json!(["arabic-c01", "futurama-c02"])));
}

#[tokio::test]
async fn a_full_corgi_session_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, created) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"stimulus_id": "arabic-c01", "condition": "corgi", "seed": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(created.get("overlay").is_none());
    let id = created["session_id"].as_str().unwrap().to_string();
    let trials = format!("/sessions/{id}/trials");
    for (k, offset) in [0.1, 0.05, 0.0].into_iter().enumerate() {
        let (status, trial) =
            call(&app, Method::POST, &trials, Some(json!({"strokes": strokes(offset)["strokes"]}))).await;
        assert_eq!(status, StatusCode::CREATED, "{trial}");
        assert_eq!(trial["trial_index"], json!(k + 1));
        assert_eq!(trial["correction"], json!(common::CORGI_TEXT));
    }
    let (status, err) = call(&app, Method::POST, &trials, Some(strokes(0.0))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("session_complete")));
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["trials"].as_array().unwrap().len(), 3);
    assert_eq!(view["trials"][2]["score"], json!(100.0));

    let (status, report) = call(&app, Method::GET, "/reports/gains?condition=corgi", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["n"], json!(1));
    assert!(report["display"].as_str().unwrap().contains('\u{b1}'));

    let req = Request::get("/export/sessions")
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let text = String::from_utf8(axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec()).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(serde_json::from_str::<Value>(text.lines().next().unwrap()).unwrap()["session_id"], json!(id));
}

#[tokio::test]
async fn visual_sessions_carry_the_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, created) =
        call(&app, Method::POST, "/sessions", Some(json!({"stimulus_id": "arabic-c01", "condition": "visual"}))).await;
    assert_eq!(created["overlay"][0].as_array().unwrap().len(), 80);
    let id = created["session_id"].as_str().unwrap();
    let (_, trial) = call(&app, Method::POST, &format!("/sessions/{id}/trials"), Some(strokes(0.03))).await;
    assert_eq!(trial["overlay_served"], json!(true));
    assert!(trial.get("correction").is_none());
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, _) = call(&app, Method::GET, "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) =
        call(&app, Method::POST, "/sessions", Some(json!({"stimulus_id": "zzz", "condition": "none"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) =
        call(&app, Method::POST, "/sessions", Some(json!({"stimulus_id": "arabic-c01", "condition": "control"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, created) =
        call(&app, Method::POST, "/sessions", Some(json!({"stimulus_id": "arabic-c01", "condition": "none"}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, body) =
        call(&app, Method::POST, &format!("/sessions/{id}/trials"), Some(json!({"strokes": [[[1.5, 0.2]]]}))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation")));
    let (status, _) = call(&app, Method::GET, "/reports/gains?condition=none", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stimulus_render_is_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, Method::GET, "/stimuli/arabic-c01", None).await;
    assert_eq!(status, StatusCode::OK);
    let bytes = base64::engine::general_purpose::STANDARD.decode(body["image_png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
}

#[tokio::test]
async fn preference_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, prompt) = call(&app, Method::GET, "/preference-pairs/pair-1?seed=4", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(prompt["prompt"], json!(corgi_coach::preference::PROMPT));
    assert!(prompt.get("option_sources").is_none() && !prompt.to_string().contains("corgi"));
    let perm: Vec<usize> = serde_json::from_value(prompt["permutation"].clone()).unwrap();
    let slot = perm.iter().position(|&i| i == 2).unwrap();
    let sub = json!({"pair_id": "pair-1", "rater_id": "r1", "permutation": perm, "choice": slot});
    let (status, stored) = call(&app, Method::POST, "/preferences", Some(sub)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(stored["id"].is_string());
    let (_, rates) = call(&app, Method::GET, "/reports/preferences", None).await;
    assert_eq!(rates, json!({"corgi": 0.0, "human": 1.0, "random": 0.0}));
    let bad = json!({"pair_id": "pair-1", "rater_id": "r1", "permutation": [0, 1, 2], "choice": 5});
    assert_eq!(call(&app, Method::POST, "/preferences", Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}
