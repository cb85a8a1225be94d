mod common;

use std::collections::HashSet;
use std::sync::Arc;

use aquabot_server::app::router;
use aquabot_server::service::Service;
use axum::http::{Method, StatusCode};
use common::*;
use serde_json::json;

async fn trained(tmp: &std::path::Path) -> (Arc<Service>, axum::Router) {
    let s = Service::start(fixture_config(tmp)).unwrap();
    let app = router(s.clone());
    let r = call(&app, Method::POST, "/model/train", None).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    (s, app)
}

#[tokio::test]
async fn untrained_service() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(Service::start(fixture_config(tmp.path())).unwrap());
    let h = call(&app, Method::GET, "/health", None).await;
    assert_eq!(h.status, StatusCode::OK);
    assert_eq!(h.body["model_loaded"], false);
    assert_eq!(
        call(&app, Method::GET, "/model/version", None).await.status,
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(say(&app, "a", "hi").await.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(
        call(&app, Method::POST, "/model/evaluate", None).await.status,
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(
        call(&app, Method::POST, "/interactive/sessions", None).await.status,
        StatusCode::SERVICE_UNAVAILABLE
    );
    let nf = call(&app, Method::GET, "/no/such/route", None).await;
    assert_eq!(nf.status, StatusCode::NOT_FOUND);
    assert!(nf.body["error"].is_string());
}

#[tokio::test]
async fn webhook_answers_and_tracker() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, app) = trained(tmp.path()).await;
    let version = s.bundle().unwrap().version.clone();

    let r = say(&app, "fig2a", "is it safe to drink water in Cape Town").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.version(), Some(version.as_str()));
    assert_eq!(texts(&r), ["It is safe to drink the water."]);
    assert_eq!(r.body[0]["recipient_id"], "fig2a");

    let r = say(&app, "fig2b", "is it safe to drink water in escape town").await;
    assert_eq!(texts(&r), ["It is not safe to drink the water."]);

    let t = call(&app, Method::GET, "/conversations/fig2a/tracker", None).await;
    assert_eq!(t.status, StatusCode::OK);
    let kinds: Vec<&str> = t.body["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["event"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["user_message", "slot_set", "bot_action", "listen"]);
    assert_eq!(t.body["events"][2]["action"], "utter_water_quality");
    assert_eq!(t.body["slots"]["location"], "Cape Town");

    let r = call(&app, Method::POST, "/conversations/fig2a/restart", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["slots"], json!({}));
    assert_eq!(
        call(&app, Method::GET, "/conversations/fresh/tracker", None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, Method::POST, "/conversations/fresh/restart", None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let (_s, app) = trained(tmp.path()).await;
    assert_eq!(say(&app, "a", "").await.status, StatusCode::BAD_REQUEST);
    assert_eq!(say(&app, "a", "   ").await.status, StatusCode::BAD_REQUEST);
    let no_body = call(&app, Method::POST, "/webhooks/rest/a/messages", None).await;
    assert_eq!(no_body.status, StatusCode::BAD_REQUEST);
    let wrong_sender = call(
        &app,
        Method::POST,
        "/webhooks/rest/a/messages",
        Some(json!({"sender": "b", "message": "hi"})),
    )
    .await;
    assert_eq!(wrong_sender.status, StatusCode::BAD_REQUEST);
    let no_sender = call(
        &app,
        Method::POST,
        "/webhooks/rest/a/messages",
        Some(json!({"message": "hi"})),
    )
    .await;
    assert_eq!(no_sender.status, StatusCode::OK);
    assert_eq!(say(&app, "bad..id%2F", "hi").await.status, StatusCode::BAD_REQUEST);
    // the empty message must not have created a tracker entry
    assert_eq!(
        call(&app, Method::GET, "/conversations/b/tracker", None).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn retrain_is_deterministic_and_failures_keep_the_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = copy_fixture(tmp.path());
    let s = Service::start(cfg.clone()).unwrap();
    let app = router(s.clone());
    let a = call(&app, Method::POST, "/model/train", None).await;
    let b = call(&app, Method::POST, "/model/train", None).await;
    assert_eq!(a.body["version"], b.body["version"]);
    assert_eq!(b.body["previous_version"], a.body["version"]);
    let v = a.body["version"].as_str().unwrap().to_string();

    let stories = std::fs::read_to_string(&cfg.data.stories).unwrap();
    std::fs::write(
        &cfg.data.stories,
        format!("{stories}\n## broken\n* greet\n  - utter_nonexistent\n"),
    )
    .unwrap();
    let r = call(&app, Method::POST, "/model/train", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let d = &r.body["details"][0];
    assert_eq!(d["kind"], "unknown label");
    assert_eq!(d["file"], "stories");
    assert!(d["message"].as_str().unwrap().contains("utter_nonexistent"));
    assert_eq!(s.bundle().unwrap().version, v);
    assert_eq!(texts(&say(&app, "c", "hi").await).len(), 1);

    // a body overrides the configured hyperparameters
    std::fs::write(&cfg.data.stories, stories).unwrap();
    cfg.train.nlu.seed += 1;
    let r = call(
        &app,
        Method::POST,
        "/model/train",
        Some(serde_json::to_value(&cfg.train).unwrap()),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_ne!(r.body["version"], v.as_str());
}

#[tokio::test]
async fn evaluation_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let (_s, app) = trained(tmp.path()).await;
    let r = call(&app, Method::POST, "/model/evaluate", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let report: aquabot_core::eval::EvaluationReport = serde_json::from_value(r.body["policy"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), r.body["policy"]);
    assert!(r.body["policy_table"].as_str().unwrap().contains("Average / Total"));
    assert_eq!(r.body["most_confused"]["truth"], "utter_water_availability");

    // evaluating on the training stories: converged
    let mut cfg = fixture_config(&tmp.path().join("b"));
    cfg.data.test_stories = Some(cfg.data.stories.clone());
    let s = Service::start(cfg).unwrap();
    s.train(s.config.train.clone()).await.unwrap();
    let out = s.evaluate().await.unwrap();
    assert!(
        aquabot_core::eval::to_f64(&out.policy.weighted.f1) >= 0.95,
        "{}",
        out.policy_table
    );

    let mut cfg = fixture_config(&tmp.path().join("c"));
    cfg.data.test_stories = None;
    let s = Service::start(cfg).unwrap();
    s.train(s.config.train.clone()).await.unwrap();
    let r = call(&router(s), Method::POST, "/model/evaluate", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.body["error"].as_str().unwrap().contains("test stories"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn every_turn_sees_one_bundle_during_swap() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, app) = trained(tmp.path()).await;
    let v1 = s.bundle().unwrap().version.clone();
    let mut other = s.config.train.clone();
    other.policy.hyper.seed += 7;

    let trainer = {
        let s = s.clone();
        tokio::spawn(async move { s.train(other).await.unwrap().version })
    };
    let mut clients = Vec::new();
    for c in 0..8 {
        let app = app.clone();
        clients.push(tokio::spawn(async move {
            let mut seen = Vec::new();
            for i in 0..6 {
                let id = format!("load-{c}");
                let text = if i % 2 == 0 {
                    "hi"
                } else {
                    "is it safe to drink water in Cape Town"
                };
                let r = say(&app, &id, text).await;
                assert_eq!(r.status, StatusCode::OK);
                seen.push(r.version().unwrap().to_string());
            }
            seen
        }));
    }
    let v2 = trainer.await.unwrap();
    assert_ne!(v1, v2);
    let allowed: HashSet<_> = [v1, v2.clone()].into();
    for c in clients {
        for v in c.await.unwrap() {
            assert!(allowed.contains(&v), "{v}");
        }
    }
    assert_eq!(say(&app, "after", "hi").await.version(), Some(v2.as_str()));
}

#[tokio::test]
async fn interactive_confirm_only_export() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, app) = trained(tmp.path()).await;
    let open = call(
        &app,
        Method::POST,
        "/interactive/sessions",
        Some(json!({"session_id": "t1"})),
    )
    .await;
    assert_eq!(open.status, StatusCode::CREATED);
    assert_eq!(open.body["session_id"], "t1");
    assert_eq!(
        call(
            &app,
            Method::POST,
            "/interactive/sessions",
            Some(json!({"session_id": "t1"}))
        )
        .await
        .status,
        StatusCode::CONFLICT
    );

    assert_eq!(
        call(&app, Method::POST, "/interactive/t1/confirm", None).await.status,
        StatusCode::CONFLICT
    );
    let p = call(
        &app,
        Method::POST,
        "/interactive/t1/predict",
        Some(json!({"message": "hello"})),
    )
    .await;
    assert_eq!(p.status, StatusCode::OK);
    assert_eq!(p.body["proposed_action"], "utter_greet");
    let c = call(&app, Method::POST, "/interactive/t1/confirm", None).await;
    assert_eq!(c.body["utterances"].as_array().unwrap().len(), 1);
    assert!(c.body["next"].is_null());

    let state = call(&app, Method::GET, "/interactive/t1", None).await;
    let transcript = state.body["transcript"].as_str().unwrap().to_string();
    let f = call(&app, Method::POST, "/interactive/t1/finish", None).await;
    assert_eq!(f.status, StatusCode::OK);
    assert_eq!(f.body["story"].as_str().unwrap(), transcript);
    let stories = aquabot_core::corpus::parse_stories_markdown(f.body["augmented_stories"].as_str().unwrap()).unwrap();
    assert_eq!(stories.len(), s.corpus().unwrap().stories.len() + 1);
    assert_eq!(stories.last().unwrap().name, "interactive_t1");
    assert_eq!(
        call(&app, Method::GET, "/interactive/t1", None).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn interactive_correct_rewind_and_busy() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, app) = trained(tmp.path()).await;
    let sid = call(&app, Method::POST, "/interactive/sessions", None).await.body["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let base = format!("/interactive/{sid}");

    call(
        &app,
        Method::POST,
        &format!("{base}/predict"),
        Some(json!({"message": "hi"})),
    )
    .await;
    call(&app, Method::POST, &format!("{base}/confirm"), None).await;
    let p = call(
        &app,
        Method::POST,
        &format!("{base}/predict"),
        Some(json!({"message": "are there water restrictions in cape town"})),
    )
    .await;
    assert_eq!(p.body["proposed_action"], "utter_water_quality");

    let bad = call(
        &app,
        Method::POST,
        &format!("{base}/correct"),
        Some(json!({"kind": "action", "label": "utter_nope"})),
    )
    .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let c = call(
        &app,
        Method::POST,
        &format!("{base}/correct"),
        Some(json!({"kind": "action", "label": "utter_water_availability"})),
    )
    .await;
    assert_eq!(c.status, StatusCode::OK, "{:?}", c.body);
    let t = call(&app, Method::GET, &base, None).await;
    let events = t.body["tracker"]["events"].as_array().unwrap().clone();
    let actions: Vec<&str> = events.iter().filter_map(|e| e["action"].as_str()).collect();
    assert_eq!(actions, ["utter_greet", "utter_water_availability"]);
    assert_eq!(t.body["corrections"]["entries"][0]["predicted"], "utter_water_quality");

    let r = call(&app, Method::POST, &format!("{base}/rewind"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.body["events"].as_array().unwrap().len() < events.len());
    let actions: Vec<&str> = r.body["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|e| e["action"].as_str())
        .collect();
    assert_eq!(actions, ["utter_greet"]);

    let session = s.session(&sid).unwrap();
    let guard = session.lock().await;
    let busy = call(
        &app,
        Method::POST,
        &format!("{base}/predict"),
        Some(json!({"message": "bye"})),
    )
    .await;
    assert_eq!(busy.status, StatusCode::CONFLICT);
    drop(guard);
    let ok = call(
        &app,
        Method::POST,
        &format!("{base}/predict"),
        Some(json!({"message": "bye"})),
    )
    .await;
    assert_eq!(ok.status, StatusCode::OK);
}

#[tokio::test]
async fn restart_replays_logs_and_reloads_model() {
    let tmp = tempfile::tempdir().unwrap();
    let version;
    {
        let (s, app) = trained(tmp.path()).await;
        version = s.bundle().unwrap().version.clone();
        say(&app, "p", "is it safe to drink water in escape town").await;
        say(&app, "q", "hello").await;
    }
    let s = Service::start(fixture_config(tmp.path())).unwrap();
    assert_eq!(s.bundle().unwrap().version, version);
    assert_eq!(s.tracker("p").await.unwrap().slots()["location"], "Escape Town");
    assert!(s.tracker("q").await.unwrap().slots().is_empty());
    let app = router(s);
    let r = say(&app, "p", "what about cape town").await;
    assert_eq!(r.status, StatusCode::OK);
}
