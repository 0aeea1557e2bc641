mod common;

use std::time::Duration;

use futures::future::join_all;
use serde_json::json;

use common::{completion, error_body, serve, TOKEN};
use shg::gateway::{Credentials, Gateway, GatewayError, Mode, ReasoningEffort};
use shg::prompting::{Message, MessageSequence, Role};

fn msgs() -> MessageSequence {
    MessageSequence {
        messages: vec![
            Message {
                role: Role::System,
                content: "Grade the speech.".into(),
            },
            Message {
                role: Role::User,
                content: "Speech text.".into(),
            },
        ],
    }
}

fn gateway() -> Gateway {
    Gateway::new(Credentials::Static(TOKEN.into()))
}

#[tokio::test]
async fn returns_fixture_text_verbatim() {
    let text = "  Reasoning: élite vs. people…\n\nFINAL SCORE: 1.3\n";
    let mock = serve(Duration::ZERO, move |_, _| (200, completion(text))).await;
    let r = gateway().complete(&mock.config("m"), &msgs()).await.unwrap();
    assert_eq!(r.text.as_bytes(), text.as_bytes());
    assert_eq!(r.attempt_count, 1);
    assert_eq!(r.finish_reason, "stop");
    assert_eq!((r.usage.prompt_tokens, r.usage.completion_tokens), (12, 5));
    assert_eq!(r.raw_request["model"], "org/m");
    assert_eq!(r.raw_response["id"], "cmpl-1");
}

#[tokio::test]
async fn retries_429_then_succeeds() {
    let mock = serve(Duration::ZERO, |_, hit| {
        if hit < 2 {
            (429, error_body("rate limited"))
        } else {
            (200, completion("FINAL SCORE: 0.5"))
        }
    })
    .await;
    let mut cfg = mock.config("m");
    cfg.retry.max_attempts = 3;
    let r = gateway().complete(&cfg, &msgs()).await.unwrap();
    assert_eq!(r.attempt_count, 3);
    assert_eq!(mock.hits(), 3);
}

#[tokio::test]
async fn always_500_exhausts_retries() {
    let mock = serve(Duration::ZERO, |_, _| (500, error_body("upstream down"))).await;
    let mut cfg = mock.config("m");
    cfg.retry.max_attempts = 3;
    let err = gateway().complete(&cfg, &msgs()).await.unwrap_err();
    assert!(matches!(err, GatewayError::ExhaustedRetries { attempts: 3, .. }), "{err:?}");
    assert_eq!(err.kind(), "exhausted_retries");
    assert_eq!(mock.hits(), 3);
}

#[tokio::test]
async fn retry_classes_respected() {
    let mock = serve(Duration::ZERO, |_, _| (503, error_body("busy"))).await;
    let mut cfg = mock.config("m");
    cfg.retry.retry_on.clear();
    let err = gateway().complete(&cfg, &msgs()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Http { status: 503, .. }));
    assert_eq!(mock.hits(), 1);
}

#[tokio::test]
async fn auth_failure_is_not_retried() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("x"))).await;
    let gw = Gateway::new(Credentials::Static("wrong".into()));
    let err = gw.complete(&mock.config("m"), &msgs()).await.unwrap_err();
    assert_eq!(err.kind(), "auth_failure");
    assert_eq!(mock.hits(), 1);
}

#[tokio::test]
async fn missing_credential_env() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("x"))).await;
    let mut cfg = mock.config("m");
    cfg.api_key_env = Some("SHG_TEST_KEY_THAT_IS_NOT_SET".into());
    let err = Gateway::new(Credentials::Env).complete(&cfg, &msgs()).await.unwrap_err();
    assert_eq!(err.kind(), "missing_credential");
    assert_eq!(mock.hits(), 0);
}

#[tokio::test]
async fn context_length_and_missing_content() {
    let mock = serve(Duration::ZERO, |body, _| {
        if body["model"] == "org/long" {
            (400, error_body("This model's maximum context length is 8192 tokens"))
        } else {
            (200, json!({ "choices": [{ "message": { "role": "assistant", "content": null } }] }))
        }
    })
    .await;
    let gw = gateway();
    let err = gw.complete(&mock.config("long"), &msgs()).await.unwrap_err();
    assert_eq!(err.kind(), "context_length");
    let err = gw.complete(&mock.config("empty"), &msgs()).await.unwrap_err();
    assert_eq!(err, GatewayError::MissingContent);
}

#[tokio::test]
async fn in_flight_cap_per_model() {
    let mock = serve(Duration::from_millis(40), |_, _| (200, completion("FINAL SCORE: 1.0"))).await;
    let mut cfg = mock.config("m");
    cfg.max_in_flight = 2;
    let gw = gateway();
    let m = msgs();
    let results = join_all((0..10).map(|_| gw.complete(&cfg, &m))).await;
    assert!(results.iter().all(Result::is_ok));
    assert_eq!(mock.hits(), 10);
    assert_eq!(mock.max_in_flight(), 2);
    assert_eq!(gw.in_flight(), 0);
}

#[tokio::test]
async fn separate_models_have_separate_caps() {
    let mock = serve(Duration::from_millis(40), |_, _| (200, completion("FINAL SCORE: 1.0"))).await;
    let mut a = mock.config("a");
    let mut b = mock.config("b");
    a.max_in_flight = 1;
    b.max_in_flight = 1;
    let gw = gateway();
    let m = msgs();
    let futs = (0..4).map(|i| gw.complete(if i % 2 == 0 { &a } else { &b }, &m));
    assert!(join_all(futs).await.iter().all(Result::is_ok));
    assert_eq!(mock.max_in_flight(), 2);
}

#[tokio::test]
async fn request_body_capture() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("ok"))).await;
    let gw = gateway();

    let mut reasoning = mock.config("r");
    reasoning.mode = Mode::Reasoning;
    reasoning.reasoning_effort = Some(ReasoningEffort::Minimal);
    gw.complete(&reasoning, &msgs()).await.unwrap();

    let mut standard = mock.config("s");
    standard.temperature = Some(0.2);
    standard.max_output_tokens = 300;
    gw.complete(&standard, &msgs()).await.unwrap();

    let bodies = mock.bodies();
    assert_eq!(bodies[0]["reasoning"]["effort"], "minimal");
    assert!(bodies[0].get("temperature").is_none());
    assert_eq!(bodies[0]["messages"][0], json!({ "role": "system", "content": "Grade the speech." }));
    assert!(bodies[1].get("reasoning").is_none());
    assert_eq!(bodies[1]["temperature"], 0.2);
    assert_eq!(bodies[1]["max_tokens"], 300);
}

#[tokio::test]
async fn probe_outcomes() {
    let mock = serve(Duration::ZERO, |body, _| {
        if body["model"] == "org/ghost" {
            (404, error_body("No endpoints found for org/ghost"))
        } else {
            (200, completion("OK"))
        }
    })
    .await;
    let report = gateway().probe(&mock.config("live")).await.unwrap();
    assert_eq!(report.label, "live");

    let err = Gateway::new(Credentials::Static("bad".into()))
        .probe(&mock.config("live"))
        .await
        .unwrap_err();
    assert_eq!(err.kind(), "auth_failure");

    let err = gateway().probe(&mock.config("ghost")).await.unwrap_err();
    assert_eq!(err.kind(), "model_unavailable");
}

#[tokio::test]
async fn unreachable_endpoint_is_transport_failure() {
    let mut cfg = shg::gateway::ModelConfig::new("m", "http://127.0.0.1:9", "org/m", Mode::Standard);
    cfg.retry.max_attempts = 2;
    cfg.retry.base_backoff_ms = 1;
    let err = gateway().complete(&cfg, &msgs()).await.unwrap_err();
    assert!(matches!(err, GatewayError::ExhaustedRetries { attempts: 2, .. }), "{err:?}");
}
