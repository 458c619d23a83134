use std::net::SocketAddr;

use actlabel_cli::service::{router, serve, AppState};
use actlabel_core::review::{ReviewItem, ReviewStore};
use actlabel_core::BoundingBox;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Server {
    addr: SocketAddr,
    client: Client,
    _dir: tempfile::TempDir,
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn decide(&self, id: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(self.url(&format!("/api/item/{id}/decision")))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let crop = dir.path().join("b.png");
    std::fs::write(&crop, b"\x89PNG fake").unwrap();
    let bx = BoundingBox::new(1.0, 2.0, 30.0, 40.0).unwrap();
    let mut items = vec![
        ReviewItem::pending("c", "f1", bx, "Act1", 0.9),
        ReviewItem::pending("b", "f1", bx, "NG", 0.2),
        ReviewItem::pending("a", "f0", bx, "Act2", 0.7),
    ];
    items[1].crop_path = Some(crop);
    let classes = vec!["Act1".into(), "Act2".into(), "NG".into()];
    let store = ReviewStore::create(&dir.path().join("review"), classes, items).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, router(AppState::new(store), None)));
    Server {
        addr,
        client: Client::new(),
        _dir: dir,
    }
}

fn ids(page: &Value) -> Vec<&str> {
    page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["item_id"].as_str().unwrap())
        .collect()
}

#[tokio::test]
async fn queue_puts_ng_first_and_honours_limit() {
    let s = start().await;
    let (status, page) = s.get("/api/queue").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ids(&page), ["b", "a", "c"]);
    assert_eq!(page["total"], 3);
    assert_eq!(page["items"][0]["ng_flagged"], true);

    let (_, page) = s.get("/api/queue?status=pending&limit=2").await;
    assert_eq!(ids(&page), ["b", "a"]);
    assert_eq!(page["total"], 3);

    let (status, body) = s.get("/api/queue?status=later").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("later"));
}

#[tokio::test]
async fn decisions_are_visible_immediately() {
    let s = start().await;
    let (status, item) = s
        .decide("a", json!({"action": "relabel", "label": "Act1"}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "relabeled");
    assert_eq!(item["relabeled_to"], "Act1");

    let (_, item) = s.get("/api/item/a").await;
    assert_eq!(item["relabeled_to"], "Act1");
    assert!(item["decided_at"].is_string());

    let (_, pending) = s.get("/api/queue").await;
    assert_eq!(ids(&pending), ["b", "c"]);
    let (_, decided) = s.get("/api/queue?status=decided").await;
    assert_eq!(ids(&decided), ["a"]);

    let (_, stats) = s.get("/api/stats").await;
    assert_eq!(stats["pending"], 2);
    assert_eq!(stats["relabeled"], 1);
    assert_eq!(stats["per_class_counts"]["Act1"], 1);
}

#[tokio::test]
async fn error_statuses() {
    let s = start().await;
    let (status, body) = s.get("/api/item/zzz").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NotFound");

    let (status, _) = s.decide("zzz", json!({"action": "accept"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = s
        .decide("c", json!({"action": "relabel", "label": "Act7"}))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "UnknownLabel");

    let (status, _) = s.decide("c", json!({"action": "relabel"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.decide("c", json!({"action": "maybe"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(
        s.decide("c", json!({"action": "reject"})).await.0,
        StatusCode::OK
    );
    let (status, body) = s.decide("c", json!({"action": "accept"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "AlreadyDecided");
}

#[tokio::test]
async fn classes_and_media() {
    let s = start().await;
    let (_, classes) = s.get("/api/classes").await;
    assert_eq!(classes, json!(["Act1", "Act2", "NG"]));

    let r = s.client.get(s.url("/media/b")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(&r.bytes().await.unwrap()[..], b"\x89PNG fake");

    let r = s.client.get(s.url("/media/a")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}
