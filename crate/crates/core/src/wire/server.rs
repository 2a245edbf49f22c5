use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tungstenite::{Error as WsError, Message};

use super::handle_frame;
use crate::broker::Broker;
use crate::error::{Error, Result};
use crate::store::DataStore;

/// Which services a coordinator exposes.
#[derive(Clone, Default)]
pub struct Services {
    pub broker: Option<Arc<Broker>>,
    pub store: Option<Arc<DataStore>>,
}

impl Services {
    pub fn both(broker: Arc<Broker>, store: Arc<DataStore>) -> Self {
        Services {
            broker: Some(broker),
            store: Some(store),
        }
    }

    pub fn broker_only(broker: Arc<Broker>) -> Self {
        Services {
            broker: Some(broker),
            store: None,
        }
    }

    pub fn store_only(store: Arc<DataStore>) -> Self {
        Services {
            broker: None,
            store: Some(store),
        }
    }
}

const READ_TICK: Duration = Duration::from_millis(200);

/// A listening server; dropping it does not stop it, [`ServerHandle::stop`] does.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
    serve: impl Fn(TcpStream, Arc<AtomicBool>) + Send + Sync + 'static,
) -> thread::JoinHandle<()> {
    let serve = Arc::new(serve);
    thread::spawn(move || {
        for conn in listener.incoming() {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let _ = stream.set_nodelay(true);
            let serve = serve.clone();
            let shutdown = shutdown.clone();
            thread::spawn(move || serve(stream, shutdown));
        }
    })
}

fn serve_lines(services: &Services, stream: TcpStream, shutdown: &AtomicBool) -> std::io::Result<()> {
    stream.set_read_timeout(Some(READ_TICK))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if !line.trim().is_empty() {
                    let mut reply = handle_frame(services, &line);
                    reply.push('\n');
                    writer.write_all(reply.as_bytes())?;
                }
                line.clear();
            }
            // A partial line stays buffered in `line`; keep reading.
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if shutdown.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Serves newline-delimited JSON on `listener`, one thread per connection.
pub fn serve_tcp(listener: TcpListener, services: Services) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let acceptor = accept_loop(listener, shutdown.clone(), move |stream, shutdown| {
        let _ = serve_lines(&services, stream, &shutdown);
    });
    Ok(ServerHandle {
        addr,
        shutdown,
        acceptor: Some(acceptor),
    })
}

fn serve_websocket(services: &Services, stream: TcpStream, shutdown: &AtomicBool) {
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    let _ = ws.get_ref().set_read_timeout(Some(READ_TICK));
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = handle_frame(services, text.as_str());
                if ws.send(Message::text(reply)).is_err() {
                    return;
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return;
            }
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if shutdown.load(Ordering::SeqCst) {
                    let _ = ws.close(None);
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

/// Serves the same protocol over WebSocket: one request per text message.
pub fn serve_ws(listener: TcpListener, services: Services) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let acceptor = accept_loop(listener, shutdown.clone(), move |stream, shutdown| {
        serve_websocket(&services, stream, &shutdown);
    });
    Ok(ServerHandle {
        addr,
        shutdown,
        acceptor: Some(acceptor),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Broker,
    Store,
    Both,
}

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub role: Role,
    pub tcp: Option<String>,
    pub ws: Option<String>,
    /// How often expired leases are swept back to pending.
    pub sweep_interval: Duration,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            role: Role::Both,
            tcp: Some("127.0.0.1:0".into()),
            ws: None,
            sweep_interval: Duration::from_millis(50),
        }
    }
}

/// A broker and/or datastore behind TCP and optionally WebSocket.
pub struct Coordinator {
    services: Services,
    tcp: Option<ServerHandle>,
    ws: Option<ServerHandle>,
    shutdown: Arc<AtomicBool>,
    sweeper: Option<thread::JoinHandle<()>>,
}

impl Coordinator {
    pub fn start(cfg: &CoordinatorConfig) -> Result<Coordinator> {
        if cfg.tcp.is_none() && cfg.ws.is_none() {
            return Err(Error::InvalidConfig("coordinator needs a TCP or WebSocket address".into()));
        }
        let broker = matches!(cfg.role, Role::Broker | Role::Both).then(|| Arc::new(Broker::new()));
        let store = matches!(cfg.role, Role::Store | Role::Both).then(|| Arc::new(DataStore::new()));
        let services = Services { broker, store };
        let tcp = cfg
            .tcp
            .as_deref()
            .map(|a| serve_tcp(TcpListener::bind(a)?, services.clone()))
            .transpose()?;
        let ws = cfg
            .ws
            .as_deref()
            .map(|a| serve_ws(TcpListener::bind(a)?, services.clone()))
            .transpose()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let sweeper = services.broker.clone().map(|b| {
            let shutdown = shutdown.clone();
            let every = cfg.sweep_interval;
            thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) {
                    b.sweep_now();
                    thread::sleep(every);
                }
            })
        });
        Ok(Coordinator {
            services,
            tcp,
            ws,
            shutdown,
            sweeper,
        })
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp.as_ref().map(|s| s.local_addr())
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws.as_ref().map(|s| s.local_addr())
    }

    pub fn broker(&self) -> Option<&Arc<Broker>> {
        self.services.broker.as_ref()
    }

    pub fn store(&self) -> Option<&Arc<DataStore>> {
        self.services.store.as_ref()
    }

    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(s) = self.tcp.as_mut() {
            s.stop();
        }
        if let Some(s) = self.ws.as_mut() {
            s.stop();
        }
        if let Some(t) = self.sweeper.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Coordinator {
    fn drop(&mut self) {
        self.stop();
    }
}
