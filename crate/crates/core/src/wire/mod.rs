//! The JSON request/response protocol shared by the broker and the
//! datastore, its TCP and WebSocket servers, and a TCP client.
//!
//! Each request is one JSON object on its own line (or in its own WebSocket
//! text message) carrying an `"op"` field. Each reply is `{"ok": value}` or
//! `{"err": "<ErrorCode>"}`, in request order.

mod client;
mod server;

pub use client::RemoteClient;
pub use server::{serve_tcp, serve_ws, Coordinator, CoordinatorConfig, Role, ServerHandle, Services};

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::broker::{Broker, LeaseId};
use crate::error::{Error, ErrorCode, Result};
use crate::job::{decode_envelope, QueueName};
use crate::store::{DataStore, VersionedRecord};

/// Upper bound on how long one `wait_for_version` request may park a
/// session on the server.
pub const MAX_SERVER_WAIT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    CreateQueue {
        queue: QueueName,
    },
    Publish {
        queue: QueueName,
        /// Kept raw so a bad envelope is reported as such, not as a bad request.
        task: Value,
    },
    Fetch {
        queue: QueueName,
        worker_id: String,
    },
    Ack {
        lease_id: LeaseId,
    },
    Release {
        lease_id: LeaseId,
    },
    Depth {
        queue: QueueName,
    },
    PutPlain {
        key: String,
        payload_b64: String,
    },
    GetPlain {
        key: String,
    },
    PutVersioned {
        key: String,
        version: u64,
        payload_b64: String,
    },
    GetVersioned {
        key: String,
    },
    WaitForVersion {
        key: String,
        min_version: u64,
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordWire {
    pub key: String,
    pub version: u64,
    pub payload_b64: String,
}

impl From<&VersionedRecord> for RecordWire {
    fn from(r: &VersionedRecord) -> Self {
        RecordWire {
            key: r.key.clone(),
            version: r.version,
            payload_b64: B64.encode(&*r.payload),
        }
    }
}

impl RecordWire {
    pub fn into_record(self) -> Result<VersionedRecord> {
        Ok(VersionedRecord {
            key: self.key,
            version: self.version,
            payload: Arc::new(decode_b64(&self.payload_b64)?),
        })
    }
}

pub(crate) fn decode_b64(s: &str) -> Result<Vec<u8>> {
    B64.decode(s).map_err(|e| Error::Protocol(format!("base64: {e}")))
}

pub(crate) fn encode_b64(b: &[u8]) -> String {
    B64.encode(b)
}

pub fn ok_frame(v: Value) -> String {
    json!({ "ok": v }).to_string()
}

pub fn err_frame(code: ErrorCode) -> String {
    json!({ "err": code.as_str() }).to_string()
}

fn no_service(what: &str) -> Error {
    Error::Protocol(format!("this coordinator does not serve the {what}"))
}

fn need<'a, T>(svc: &'a Option<Arc<T>>, what: &str) -> Result<&'a T> {
    svc.as_deref().ok_or_else(|| no_service(what))
}

fn execute(broker: &Option<Arc<Broker>>, store: &Option<Arc<DataStore>>, req: Request) -> Result<Value> {
    Ok(match req {
        Request::CreateQueue { queue } => {
            need(broker, "broker")?.create_queue(&queue)?;
            Value::Null
        }
        Request::Publish { queue, task } => {
            let b = need(broker, "broker")?;
            let bytes = serde_json::to_vec(&task).expect("json");
            b.publish(&queue, decode_envelope(&bytes)?)?;
            Value::Null
        }
        Request::Fetch { queue, worker_id } => {
            let lease = need(broker, "broker")?.fetch(&queue, &worker_id)?;
            serde_json::to_value(lease).expect("json")
        }
        Request::Ack { lease_id } => {
            need(broker, "broker")?.ack(lease_id)?;
            Value::Null
        }
        Request::Release { lease_id } => {
            need(broker, "broker")?.release(lease_id)?;
            Value::Null
        }
        Request::Depth { queue } => serde_json::to_value(need(broker, "broker")?.depth(&queue)?).expect("json"),
        Request::PutPlain { key, payload_b64 } => {
            let s = need(store, "datastore")?;
            s.put_plain(&key, decode_b64(&payload_b64)?);
            Value::Null
        }
        Request::GetPlain { key } => {
            let p = need(store, "datastore")?.get_plain(&key)?;
            json!({ "payload_b64": encode_b64(&p) })
        }
        Request::PutVersioned {
            key,
            version,
            payload_b64,
        } => {
            let s = need(store, "datastore")?;
            s.put_versioned(&key, version, decode_b64(&payload_b64)?)?;
            Value::Null
        }
        Request::GetVersioned { key } => {
            let r = need(store, "datastore")?.get_versioned(&key)?;
            serde_json::to_value(RecordWire::from(&r)).expect("json")
        }
        Request::WaitForVersion {
            key,
            min_version,
            timeout_ms,
        } => {
            let wait = Duration::from_millis(timeout_ms).min(MAX_SERVER_WAIT);
            let r = need(store, "datastore")?.wait_for_version(&key, min_version, wait)?;
            serde_json::to_value(RecordWire::from(&r)).expect("json")
        }
    })
}

/// Handles one request frame and returns the reply frame.
pub fn handle_frame(services: &Services, frame: &str) -> String {
    let req: Request = match serde_json::from_str(frame.trim()) {
        Ok(r) => r,
        Err(_) => return err_frame(ErrorCode::BadRequest),
    };
    match execute(&services.broker, &services.store, req) {
        Ok(v) => ok_frame(v),
        Err(e) => err_frame(e.code()),
    }
}
