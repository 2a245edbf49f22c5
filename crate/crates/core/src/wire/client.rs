use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{decode_b64, encode_b64, RecordWire, Request};
use crate::broker::{Depth, Lease, LeaseId};
use crate::client::{QueueClient, StoreClient};
use crate::error::{Error, ErrorCode, Result};
use crate::job::{encode_envelope, QueueName, TaskEnvelope};
use crate::store::VersionedRecord;

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn open(addr: &str) -> std::io::Result<Conn> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Conn {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }
}

/// A TCP session with a coordinator. Requests are serialized over one
/// connection; after a transport failure the next request reconnects.
pub struct RemoteClient {
    addr: String,
    conn: Mutex<Option<Conn>>,
    /// Interval between version probes in `wait_for_version`.
    poll_interval: Duration,
}

fn lost(e: impl std::fmt::Display) -> Error {
    Error::ConnectionLost(e.to_string())
}

impl RemoteClient {
    pub fn connect(addr: impl Into<String>) -> Result<Arc<RemoteClient>> {
        Self::connect_with_poll(addr, Duration::from_millis(100))
    }

    pub fn connect_with_poll(addr: impl Into<String>, poll_interval: Duration) -> Result<Arc<RemoteClient>> {
        let addr = addr.into();
        let conn = Conn::open(&addr).map_err(lost)?;
        Ok(Arc::new(RemoteClient {
            addr,
            conn: Mutex::new(Some(conn)),
            poll_interval,
        }))
    }

    fn roundtrip(&self, frame: &str) -> Result<String> {
        let mut guard = self.conn.lock();
        if guard.is_none() {
            *guard = Some(Conn::open(&self.addr).map_err(lost)?);
        }
        let conn = guard.as_mut().expect("connected");
        let mut reply = String::new();
        let io = conn
            .writer
            .write_all(frame.as_bytes())
            .and_then(|()| conn.writer.write_all(b"\n"))
            .and_then(|()| conn.reader.read_line(&mut reply));
        match io {
            Ok(0) => {
                *guard = None;
                Err(lost("connection closed by peer"))
            }
            Ok(_) => Ok(reply),
            Err(e) => {
                *guard = None;
                Err(lost(e))
            }
        }
    }

    fn call<T: DeserializeOwned>(&self, req: &Request, on_err: impl FnOnce(ErrorCode) -> Error) -> Result<T> {
        let reply = self.roundtrip(&serde_json::to_string(req).expect("json"))?;
        let v: Value = serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("reply: {e}")))?;
        if let Some(code) = v.get("err") {
            let code = code.as_str().and_then(ErrorCode::parse).unwrap_or(ErrorCode::Internal);
            return Err(on_err(code));
        }
        match v.get("ok") {
            Some(ok) => serde_json::from_value(ok.clone()).map_err(|e| Error::Protocol(format!("reply: {e}"))),
            None => Err(Error::Protocol("reply has neither ok nor err".into())),
        }
    }
}

/// Rebuilds an error from its wire code and what the caller knows.
fn generic(code: ErrorCode) -> Error {
    match code {
        ErrorCode::Timeout => Error::Timeout,
        ErrorCode::MalformedEnvelope => Error::MalformedEnvelope("rejected by server".into()),
        other => Error::Protocol(other.as_str().into()),
    }
}

fn queue_err(q: &QueueName) -> impl FnOnce(ErrorCode) -> Error + '_ {
    move |c| match c {
        ErrorCode::QueueExists => Error::QueueExists(q.to_string()),
        ErrorCode::NoSuchQueue => Error::NoSuchQueue(q.to_string()),
        other => generic(other),
    }
}

fn lease_err(id: LeaseId) -> impl FnOnce(ErrorCode) -> Error {
    move |c| match c {
        ErrorCode::UnknownLease => Error::UnknownLease(id),
        other => generic(other),
    }
}

fn key_err(key: &str, attempted: Option<u64>) -> impl FnOnce(ErrorCode) -> Error + '_ {
    move |c| match c {
        ErrorCode::NoSuchKey => Error::NoSuchKey(key.to_string()),
        ErrorCode::VersionConflict => Error::VersionConflict {
            key: key.to_string(),
            attempted: attempted.unwrap_or(0),
            current: None,
        },
        other => generic(other),
    }
}

impl QueueClient for RemoteClient {
    fn create_queue(&self, q: &QueueName) -> Result<()> {
        self.call::<Value>(&Request::CreateQueue { queue: q.clone() }, queue_err(q))
            .map(drop)
    }

    fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()> {
        task.validate()?;
        let task: Value = serde_json::from_slice(&encode_envelope(&task)).expect("json");
        self.call::<Value>(&Request::Publish { queue: q.clone(), task }, queue_err(q))
            .map(drop)
    }

    fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>> {
        self.call(
            &Request::Fetch {
                queue: q.clone(),
                worker_id: worker_id.into(),
            },
            queue_err(q),
        )
    }

    fn ack(&self, lease_id: LeaseId) -> Result<()> {
        self.call::<Value>(&Request::Ack { lease_id }, lease_err(lease_id)).map(drop)
    }

    fn release(&self, lease_id: LeaseId) -> Result<()> {
        self.call::<Value>(&Request::Release { lease_id }, lease_err(lease_id))
            .map(drop)
    }

    fn depth(&self, q: &QueueName) -> Result<Depth> {
        self.call(&Request::Depth { queue: q.clone() }, queue_err(q))
    }
}

#[derive(serde::Deserialize)]
struct PlainWire {
    payload_b64: String,
}

impl StoreClient for RemoteClient {
    fn put_plain(&self, key: &str, payload: Vec<u8>) -> Result<()> {
        let req = Request::PutPlain {
            key: key.into(),
            payload_b64: encode_b64(&payload),
        };
        self.call::<Value>(&req, key_err(key, None)).map(drop)
    }

    fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>> {
        let w: PlainWire = self.call(&Request::GetPlain { key: key.into() }, key_err(key, None))?;
        Ok(Arc::new(decode_b64(&w.payload_b64)?))
    }

    fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()> {
        let req = Request::PutVersioned {
            key: key.into(),
            version,
            payload_b64: encode_b64(&payload),
        };
        self.call::<Value>(&req, key_err(key, Some(version))).map(drop)
    }

    fn get_versioned(&self, key: &str) -> Result<VersionedRecord> {
        let w: RecordWire = self.call(&Request::GetVersioned { key: key.into() }, key_err(key, None))?;
        w.into_record()
    }

    /// Polls `get_versioned` every `poll_interval` rather than parking the
    /// session on the server.
    fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.get_versioned(key) {
                Ok(r) if r.version >= min_version => return Ok(r),
                Ok(_) | Err(Error::NoSuchKey(_)) => {}
                Err(e) => return Err(e),
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout);
            }
            thread::sleep(self.poll_interval.min(deadline - now));
        }
    }
}
