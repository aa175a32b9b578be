//! WebSocket front end: one simulation thread owns the scene, connection
//! threads only parse and forward.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tignn_core::{Error, Result};
use tungstenite::{Message as WsMessage, WebSocket};

use crate::replay::Script;
use crate::scene::Scene;
use crate::wire::Message;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: String,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    /// Write every client message with its tick index here on shutdown.
    pub record: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub connections: usize,
    pub messages: usize,
}

enum Event {
    Connected(u64, Sender<Arc<str>>),
    Text(u64, String),
    Disconnected(u64),
}

const POLL: Duration = Duration::from_millis(2);

/// Binds `opts.addr`; bind failures surface here, before any thread starts.
pub fn bind(opts: &ServeOptions) -> Result<(SocketAddr, TcpListener)> {
    let listener = TcpListener::bind(&opts.addr).map_err(|e| Error::io(&opts.addr, e))?;
    let addr = listener.local_addr().map_err(|e| Error::io(&opts.addr, e))?;
    listener.set_nonblocking(true).map_err(|e| Error::io(&opts.addr, e))?;
    Ok((addr, listener))
}

/// Runs the session on a bound listener until `stop` is raised or the tick
/// limit is reached. Sends `hello` on connect, broadcasts every frame and
/// answers bad input with an `error` to the sender only.
pub fn serve_listener(mut scene: Scene, listener: TcpListener, opts: &ServeOptions, stop: Arc<AtomicBool>) -> Result<ServeSummary> {
    let (tx, rx) = mpsc::channel();
    let accept_stop = stop.clone();
    let acceptor = thread::spawn(move || accept_loop(listener, tx, accept_stop));
    let start_tick = scene.tick_index();
    let mut script = Script::new(0);
    let mut clients: BTreeMap<u64, Sender<Arc<str>>> = BTreeMap::new();
    let mut summary = ServeSummary {
        ticks: 0,
        connections: 0,
        messages: 0,
    };
    let t0 = Instant::now();
    let period = Duration::from_secs_f64(scene.settings.tick_dt);
    while !stop.load(Ordering::SeqCst) && opts.max_ticks.is_none_or(|m| summary.ticks < m) {
        loop {
            match rx.try_recv() {
                Ok(Event::Connected(id, out)) => {
                    log::info!("viewer {id} connected");
                    summary.connections += 1;
                    let _ = out.send(Message::Hello(scene.hello()).to_json().into());
                    clients.insert(id, out);
                }
                Ok(Event::Text(id, text)) => {
                    summary.messages += 1;
                    if opts.record.is_some() {
                        script.push(scene.tick_index() - start_tick, serde_json::Value::String(text.clone()));
                    }
                    for reply in scene.handle_message(&text) {
                        let json: Arc<str> = reply.to_json().into();
                        match reply {
                            Message::Frame(_) => broadcast(&mut clients, &json),
                            _ => {
                                if let Some(c) = clients.get(&id) {
                                    let _ = c.send(json);
                                }
                            }
                        }
                    }
                }
                Ok(Event::Disconnected(id)) => {
                    log::info!("viewer {id} disconnected");
                    clients.remove(&id);
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
            }
        }
        let out = scene.tick();
        summary.ticks += 1;
        if let Some(err) = out.error {
            broadcast(&mut clients, &Message::Error(err).to_json().into());
        }
        broadcast(&mut clients, &Message::Frame(out.frame).to_json().into());
        if scene.settings.realtime {
            let due = t0 + period.mul_f64(summary.ticks as f64);
            while Instant::now() < due && !stop.load(Ordering::SeqCst) {
                thread::sleep((due - Instant::now()).min(Duration::from_millis(10)));
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    drop(clients);
    let _ = acceptor.join();
    if let Some(path) = &opts.record {
        script.ticks = summary.ticks;
        script.save(path)?;
    }
    Ok(summary)
}

pub fn serve(scene: Scene, opts: &ServeOptions, stop: Arc<AtomicBool>) -> Result<ServeSummary> {
    let (addr, listener) = bind(opts)?;
    log::info!("serving wire/1 on ws://{addr}");
    serve_listener(scene, listener, opts, stop)
}

fn broadcast(clients: &mut BTreeMap<u64, Sender<Arc<str>>>, json: &Arc<str>) {
    clients.retain(|_, c| c.send(json.clone()).is_ok());
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    let mut handles = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id;
                next_id += 1;
                let tx = tx.clone();
                let stop = stop.clone();
                handles.push(thread::spawn(move || {
                    if let Err(e) = client_loop(id, stream, &tx, &stop) {
                        log::info!("viewer {id} ({peer}): {e}");
                    }
                    let _ = tx.send(Event::Disconnected(id));
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    for h in handles {
        let _ = h.join();
    }
}

fn client_loop(id: u64, stream: TcpStream, tx: &Sender<Event>, stop: &AtomicBool) -> std::result::Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let mut ws = tungstenite::accept(stream).map_err(|e| format!("handshake failed: {e}"))?;
    ws.get_ref().set_read_timeout(Some(POLL)).map_err(|e| e.to_string())?;
    let (out_tx, out_rx) = mpsc::channel();
    tx.send(Event::Connected(id, out_tx)).map_err(|_| "session closed".to_string())?;
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        if !drain(&mut ws, &out_rx)? {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(WsMessage::Text(t)) => {
                tx.send(Event::Text(id, t.as_str().to_string())).map_err(|_| "session closed".to_string())?;
            }
            Ok(WsMessage::Binary(b)) => {
                let text = String::from_utf8_lossy(&b).into_owned();
                tx.send(Event::Text(id, text)).map_err(|_| "session closed".to_string())?;
            }
            Ok(WsMessage::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }
    }
}

/// Writes queued messages; `false` once the session dropped this client.
fn drain(ws: &mut WebSocket<TcpStream>, out: &Receiver<Arc<str>>) -> std::result::Result<bool, String> {
    loop {
        match out.try_recv() {
            Ok(json) => ws.write(WsMessage::text(json.to_string())).map_err(|e| e.to_string())?,
            Err(TryRecvError::Empty) => break,
            Err(TryRecvError::Disconnected) => return Ok(false),
        }
    }
    match ws.flush() {
        Ok(()) => Ok(true),
        Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(true),
        Err(e) => Err(e.to_string()),
    }
}
