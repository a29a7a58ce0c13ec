#![allow(dead_code)]

use std::net::SocketAddr;

use axum::Router;
use serde_json::Value;

/// Serves `router` on an ephemeral port from a background runtime.
pub fn spawn(router: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

/// Status and JSON body of a response, success or not.
pub fn call(req: ureq::Request, body: Option<Value>) -> (u16, Value) {
    let res = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport: {e}"),
    };
    let status = resp.status();
    let text = resp.into_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub struct Client {
    pub base: String,
    pub token: Option<String>,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Self { base: base.to_owned(), token: None }
    }

    pub fn with_token(base: &str, token: &str) -> Self {
        Self { base: base.to_owned(), token: Some(token.to_owned()) }
    }

    fn req(&self, method: &str, path: &str) -> ureq::Request {
        let r = ureq::request(method, &format!("{}{path}", self.base));
        match &self.token {
            Some(t) => r.set(anx_server::USER_TOKEN_HEADER, t),
            None => r,
        }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        call(self.req("GET", path), None)
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        call(self.req("POST", path), Some(body))
    }

    pub fn put(&self, path: &str, body: Value) -> (u16, Value) {
        call(self.req("PUT", path), Some(body))
    }
}

/// Core with the Hub routes merged in, memory storage.
pub fn embedded() -> String {
    let (router, _) = anx_server::build_core(&anx_server::CoreSettings::default()).unwrap();
    spawn(router)
}

pub fn issue_token(hub: &str) -> String {
    let (status, t) = Client::new(hub).post("/ui/token", serde_json::json!({ "session_id": "reviewer" }));
    assert_eq!(status, 200, "{t}");
    t["token"].as_str().unwrap().to_owned()
}
