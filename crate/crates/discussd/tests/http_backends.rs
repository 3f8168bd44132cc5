use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use discuss_core::decision::Label;
use discuss_core::generation::ChatRequest;
use discuss_core::transcript::Turn;
use discussd::backend::{BackendError, ChatBackend, ClassifierBackend, HttpClassifier, OpenAiClient};
use discussd::policy::{HttpPolicyFactory, PolicyConfig, PolicyFactory};
use serde_json::{json, Value};

#[derive(Default)]
struct Seen {
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<Option<String>>>,
    fail_first: AtomicUsize,
}

async fn chat(State(seen): State<Arc<Seen>>, headers: HeaderMap, Json(body): Json<Value>) -> impl IntoResponse {
    seen.auth.lock().unwrap().push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    seen.bodies.lock().unwrap().push(body.clone());
    if seen.fail_first.load(Ordering::SeqCst) > 0 {
        seen.fail_first.fetch_sub(1, Ordering::SeqCst);
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "warming up"})));
    }
    let one_token = body["max_tokens"] == 1;
    let content = if one_token { ">" } else { "Nexus: The number dates from 1968." };
    let tokens: Vec<Value> = if one_token {
        vec![json!({"token": ">", "logprob": -0.02, "top_logprobs": []})]
    } else {
        content.split(' ').map(|w| json!({"token": w, "logprob": -0.5})).collect()
    };
    (
        StatusCode::OK,
        Json(json!({
            "id": "cmpl-1",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content},
                         "logprobs": {"content": tokens}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 40, "completion_tokens": tokens.len(), "total_tokens": 40 + tokens.len()}
        })),
    )
}

async fn classify(Json(body): Json<Value>) -> impl IntoResponse {
    let ctx = body["context"].as_str().unwrap_or_default();
    let p = if ctx.trim_end().ends_with('?') { 0.8 } else { 0.2 };
    Json(json!({ "probability": p }))
}

async fn bad_classifier() -> impl IntoResponse {
    Json(json!({ "probability": 1.7 }))
}

async fn start() -> (String, Arc<Seen>) {
    let seen = Arc::new(Seen::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/classify", post(classify))
        .route("/bad", post(bad_classifier))
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), seen)
}

#[tokio::test]
async fn chat_request_and_response_wire_format() {
    let (base, seen) = start().await;
    let client = OpenAiClient::new(&format!("{base}/v1"), Some("sk-test".into()), "test-model");
    let mut req = ChatRequest::user("hello", 0.8, 64);
    req.seed = Some(9);
    req.logprobs = true;
    let resp = client.complete(&req).await.unwrap();
    assert_eq!(resp.text, "Nexus: The number dates from 1968.");
    assert_eq!(resp.token_logprobs.as_ref().unwrap().len(), 6);
    assert_eq!(resp.usage.prompt_tokens, 40);

    let body = seen.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0], json!({"role": "user", "content": "hello"}));
    assert_eq!(body["temperature"], 0.8);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["seed"], 9);
    assert_eq!(body["logprobs"], true);
    assert_eq!(seen.auth.lock().unwrap()[0].as_deref(), Some("Bearer sk-test"));
}

#[tokio::test]
async fn transient_failures_are_retried() {
    let (base, seen) = start().await;
    seen.fail_first.store(1, Ordering::SeqCst);
    let client = OpenAiClient::new(&format!("{base}/v1"), None, "m");
    assert!(client.complete(&ChatRequest::user("x", 0.0, 8)).await.is_ok());
    assert_eq!(seen.bodies.lock().unwrap().len(), 2);

    seen.fail_first.store(5, Ordering::SeqCst);
    let client = client.with_transport_retries(0);
    match client.complete(&ChatRequest::user("x", 0.0, 8)).await {
        Err(BackendError::Status { status: 503, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn unreachable_backend_is_a_transport_error() {
    let client = OpenAiClient::new("http://127.0.0.1:9/v1", None, "m").with_transport_retries(0);
    assert!(matches!(client.complete(&ChatRequest::user("x", 0.0, 8)).await, Err(BackendError::Transport(_))));
}

#[tokio::test]
async fn classifier_endpoint() {
    let (base, _) = start().await;
    let c = HttpClassifier::new(format!("{base}/classify"), None);
    assert_eq!(c.score("Ann: why?").await.unwrap().probability, 0.8);
    let bad = HttpClassifier::new(format!("{base}/bad"), None);
    assert!(matches!(bad.score("x").await, Err(BackendError::Decode(_))));
}

#[tokio::test]
async fn http_policies_end_to_end() {
    let (base, seen) = start().await;
    let factory = HttpPolicyFactory::default();
    let ctx = vec![Turn::human("Ann", "Why is it 911?"), Turn::human("Bo", "No idea.")];

    let e2e = factory
        .build(&PolicyConfig { backend_url: Some(format!("{base}/v1")), ..PolicyConfig::end_to_end() })
        .unwrap();
    let d = e2e.decide(&ctx).await.unwrap();
    assert_eq!(d.decision, Label::Silent);
    assert_eq!(d.first_token.as_deref(), Some(">"));
    let body = seen.bodies.lock().unwrap().last().cloned().unwrap();
    assert_eq!(body["max_tokens"], 1);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Ann: Why is it 911?\n>\nBo: No idea.\n");

    let dec = factory
        .build(&PolicyConfig {
            backend_url: Some(format!("{base}/v1")),
            classifier_url: Some(format!("{base}/classify")),
            ..PolicyConfig::decoupled(0.5)
        })
        .unwrap();
    assert_eq!(dec.decide(&ctx).await.unwrap().decision, Label::Silent);
    let ctx2 = vec![Turn::human("Ann", "Fine."), Turn::human("Bo", "But why 911?")];
    let d = dec.decide(&ctx2).await.unwrap();
    assert_eq!((d.decision, d.probability), (Label::Speak, Some(0.8)));
    let g = dec.generate(&ctx2).await.unwrap();
    assert_eq!(g.text, "The number dates from 1968.");
}
