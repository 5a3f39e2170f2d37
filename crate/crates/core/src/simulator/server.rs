//! UDP server side of the simulator.
//!
//! A listener thread tracks the subscription (peer address, last keepalive,
//! stop request); the emitter thread waits for a subscriber, sends one
//! announce datagram and then streams the scenario in tick order.

use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{ScenarioConfig, Simulator};
use crate::protocol::{parse_datagram, serialize_datagram, Datagram, KeepaliveOp};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Decouple simulated time from wall time.
    pub fast: bool,
    /// Simulated seconds per wall second in fast mode.
    pub speedup: f64,
    /// Stop after this much keepalive silence (wall time).
    pub keepalive_timeout: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            fast: false,
            speedup: 100.0,
            keepalive_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    StopRequested,
    KeepaliveTimeout,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerReport {
    pub samples_sent: u64,
    pub reason: StopReason,
}

#[derive(Debug)]
struct Subscription {
    peer: Option<SocketAddr>,
    last_keepalive: Instant,
    stop_requested: bool,
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    sent: Arc<AtomicU64>,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<std::io::Result<ServerReport>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn samples_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().map_or(true, |t| t.is_finished())
    }

    /// Waits for the session to end on its own.
    pub fn join(mut self) -> std::io::Result<ServerReport> {
        let t = self.thread.take().expect("joined once");
        t.join()
            .map_err(|_| std::io::Error::new(ErrorKind::Other, "server thread panicked"))?
    }

    pub fn shutdown(self) -> std::io::Result<ServerReport> {
        self.shutdown.store(true, Ordering::SeqCst);
        self.join()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `bind` and serves one session of `config`.
///
/// Nothing is emitted until a `Keepalive(start)` arrives. The session ends
/// after `config.duration` of simulated time, on `Keepalive(stop)`, or after
/// `options.keepalive_timeout` without keepalives.
pub fn run_server(
    config: ScenarioConfig,
    bind: &str,
    options: ServerOptions,
) -> std::io::Result<ServerHandle> {
    config
        .validate()
        .map_err(|e| std::io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;
    let socket = UdpSocket::bind(bind)?;
    let local_addr = socket.local_addr()?;
    let listener_socket = socket.try_clone()?;
    listener_socket.set_read_timeout(Some(Duration::from_millis(20)))?;

    let sub = Arc::new(Mutex::new(Subscription {
        peer: None,
        last_keepalive: Instant::now(),
        stop_requested: false,
    }));
    let sent = Arc::new(AtomicU64::new(0));
    let shutdown = Arc::new(AtomicBool::new(false));
    let done = Arc::new(AtomicBool::new(false));

    let listener = {
        let sub = sub.clone();
        let done = done.clone();
        thread::Builder::new()
            .name("gazeload-sim-ka".into())
            .spawn(move || listen(listener_socket, sub, done))?
    };

    let emitter = Emitter {
        socket,
        sim: Simulator::new(config),
        options,
        sub,
        sent: sent.clone(),
        shutdown: shutdown.clone(),
    };
    let thread = thread::Builder::new()
        .name("gazeload-sim".into())
        .spawn(move || {
            let report = emitter.run();
            done.store(true, Ordering::SeqCst);
            let _ = listener.join();
            report
        })?;

    Ok(ServerHandle {
        local_addr,
        sent,
        shutdown,
        thread: Some(thread),
    })
}

fn listen(socket: UdpSocket, sub: Arc<Mutex<Subscription>>, done: Arc<AtomicBool>) {
    let mut buf = [0u8; 1024];
    while !done.load(Ordering::SeqCst) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if let Ok(Datagram::Keepalive { op, .. }) = parse_datagram(&buf[..n]) {
            let mut s = sub.lock().unwrap();
            s.last_keepalive = Instant::now();
            match op {
                KeepaliveOp::Start => {
                    if s.peer.is_none() {
                        tracing::info!(%from, "subscriber connected");
                        s.peer = Some(from);
                    }
                }
                KeepaliveOp::Stop => s.stop_requested = true,
            }
        }
    }
}

struct Emitter {
    socket: UdpSocket,
    sim: Simulator,
    options: ServerOptions,
    sub: Arc<Mutex<Subscription>>,
    sent: Arc<AtomicU64>,
    shutdown: Arc<AtomicBool>,
}

impl Emitter {
    fn check(&self) -> Option<StopReason> {
        if self.shutdown.load(Ordering::SeqCst) {
            return Some(StopReason::Shutdown);
        }
        let s = self.sub.lock().unwrap();
        if s.stop_requested {
            Some(StopReason::StopRequested)
        } else if s.last_keepalive.elapsed() > self.options.keepalive_timeout {
            Some(StopReason::KeepaliveTimeout)
        } else {
            None
        }
    }

    fn report(&self, reason: StopReason) -> std::io::Result<ServerReport> {
        Ok(ServerReport {
            samples_sent: self.sent.load(Ordering::Relaxed),
            reason,
        })
    }

    fn run(self) -> std::io::Result<ServerReport> {
        let peer = loop {
            if self.shutdown.load(Ordering::SeqCst) {
                return self.report(StopReason::Shutdown);
            }
            if let Some(p) = self.sub.lock().unwrap().peer {
                break p;
            }
            thread::sleep(Duration::from_millis(5));
        };

        let cfg = self.sim.config();
        let announce = serialize_datagram(&Datagram::Announce {
            device_id: cfg.device_id.clone(),
            sample_rate_hz: cfg.sample_rate_hz,
        });
        self.socket.send_to(&announce, peer)?;

        let rate = if self.options.fast {
            self.options.speedup.max(1.0)
        } else {
            1.0
        };
        let start = Instant::now();
        let mut last_check = Instant::now();
        for sample in self.sim.samples() {
            // Pace to simulated time / rate.
            let due = Duration::from_secs_f64(sample.ts as f64 / 1e6 / rate);
            let elapsed = start.elapsed();
            if due > elapsed {
                thread::sleep(due - elapsed);
            }
            if last_check.elapsed() >= Duration::from_millis(10) || sample.seq == 0 {
                if let Some(reason) = self.check() {
                    return self.report(reason);
                }
                last_check = Instant::now();
            }
            let bytes = serialize_datagram(&Datagram::Sample(sample));
            match self.socket.send_to(&bytes, peer) {
                Ok(_) => {}
                // The subscriber vanished; keep going until the keepalive timeout says so.
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
                Err(e) => return Err(e),
            }
            self.sent.fetch_add(1, Ordering::Relaxed);
        }
        self.report(StopReason::Completed)
    }
}
