//! Receiving side of the protocol: subscribes with keepalives and forwards
//! parsed samples through a bounded, ordered queue.

use std::io::ErrorKind;
use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{parse_datagram, serialize_datagram, Datagram, DeviceEndpoint, KeepaliveOp, PupilSample};

const QUEUE_CAPACITY: usize = 16_384;
const POLL_INTERVAL: Duration = Duration::from_millis(20);
const KEEPALIVE_KEY: &str = "gazeload";

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("cannot resolve {endpoint}: {source}")]
    Resolve {
        endpoint: String,
        source: std::io::Error,
    },
    #[error("connection to {endpoint} failed: {source}")]
    Connection {
        endpoint: String,
        source: std::io::Error,
    },
    #[error("receiver thread panicked")]
    Panicked,
}

/// Live counters, updated by the receiver thread.
#[derive(Debug, Default)]
pub struct StreamStats {
    datagrams: AtomicU64,
    samples: AtomicU64,
    parse_errors: AtomicU64,
    gaps: AtomicU64,
    missing: AtomicU64,
    out_of_order: AtomicU64,
    keepalives: AtomicU64,
}

/// Point-in-time copy of [`StreamStats`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamSummary {
    pub datagrams: u64,
    pub samples: u64,
    pub parse_errors: u64,
    /// Number of places where `seq` jumped by more than one.
    pub gaps: u64,
    /// Total datagrams skipped over by those jumps.
    pub missing: u64,
    pub out_of_order: u64,
    pub keepalives_sent: u64,
    pub device_id: Option<String>,
    pub device_rate_hz: Option<f64>,
    /// The device stopped answering after having sent data.
    pub device_closed: bool,
}

impl StreamStats {
    fn snapshot(&self) -> StreamSummary {
        StreamSummary {
            datagrams: self.datagrams.load(Ordering::Relaxed),
            samples: self.samples.load(Ordering::Relaxed),
            parse_errors: self.parse_errors.load(Ordering::Relaxed),
            gaps: self.gaps.load(Ordering::Relaxed),
            missing: self.missing.load(Ordering::Relaxed),
            out_of_order: self.out_of_order.load(Ordering::Relaxed),
            keepalives_sent: self.keepalives.load(Ordering::Relaxed),
            ..Default::default()
        }
    }
}

#[derive(Debug, Default)]
struct DeviceInfo {
    id: Option<String>,
    rate: Option<f64>,
    closed: bool,
}

/// Tracks sequence continuity (modulo 2^32).
#[derive(Debug, Default, Clone)]
pub(crate) struct SeqTracker {
    last: Option<u32>,
}

pub(crate) enum SeqEvent {
    InOrder,
    Gap(u32),
    OutOfOrder,
}

impl SeqTracker {
    pub(crate) fn observe(&mut self, seq: u32) -> SeqEvent {
        let Some(last) = self.last else {
            self.last = Some(seq);
            return SeqEvent::InOrder;
        };
        let step = seq.wrapping_sub(last);
        if step == 0 || step > u32::MAX / 2 {
            return SeqEvent::OutOfOrder;
        }
        self.last = Some(seq);
        if step == 1 {
            SeqEvent::InOrder
        } else {
            SeqEvent::Gap(step - 1)
        }
    }
}

pub struct StreamHandle {
    samples: Receiver<PupilSample>,
    stats: Arc<StreamStats>,
    device: Arc<Mutex<DeviceInfo>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), StreamError>>>,
}

impl StreamHandle {
    /// Ordered sample queue. Disconnects when the receiver stops.
    pub fn samples(&self) -> &Receiver<PupilSample> {
        &self.samples
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<PupilSample, RecvTimeoutError> {
        self.samples.recv_timeout(timeout)
    }

    pub fn stats(&self) -> StreamSummary {
        let mut s = self.stats.snapshot();
        let dev = self.device.lock().unwrap();
        s.device_id = dev.id.clone();
        s.device_rate_hz = dev.rate;
        s.device_closed = dev.closed;
        s
    }

    /// Sends `Keepalive(stop)`, joins the receiver and returns final counters.
    pub fn stop(mut self) -> Result<StreamSummary, StreamError> {
        self.stop.store(true, Ordering::SeqCst);
        let result = match self.thread.take() {
            Some(t) => t.join().map_err(|_| StreamError::Panicked)?,
            None => Ok(()),
        };
        result.map(|_| self.stats())
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Subscribes to `endpoint` and starts the receiver thread.
///
/// A keepalive with `op: start` goes out immediately and then every
/// `endpoint.keepalive_interval`. Parse failures are counted and skipped;
/// only socket-level failures end the stream with an error.
pub fn receive_stream(endpoint: &DeviceEndpoint) -> Result<StreamHandle, StreamError> {
    let addr = endpoint.resolve().map_err(|source| StreamError::Resolve {
        endpoint: endpoint.to_string(),
        source,
    })?;
    let conn_err = |source| StreamError::Connection {
        endpoint: endpoint.to_string(),
        source,
    };
    let local = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket = UdpSocket::bind(local).map_err(conn_err)?;
    socket.connect(addr).map_err(conn_err)?;
    socket.set_read_timeout(Some(POLL_INTERVAL)).map_err(conn_err)?;

    let (tx, rx) = mpsc::sync_channel(QUEUE_CAPACITY);
    let stats = Arc::new(StreamStats::default());
    let device = Arc::new(Mutex::new(DeviceInfo::default()));
    let stop = Arc::new(AtomicBool::new(false));

    let worker = Worker {
        socket,
        endpoint: endpoint.clone(),
        tx,
        stats: stats.clone(),
        device: device.clone(),
        stop: stop.clone(),
    };
    let thread = thread::Builder::new()
        .name("gazeload-recv".into())
        .spawn(move || worker.run())
        .map_err(conn_err)?;

    Ok(StreamHandle {
        samples: rx,
        stats,
        device,
        stop,
        thread: Some(thread),
    })
}

struct Worker {
    socket: UdpSocket,
    endpoint: DeviceEndpoint,
    tx: SyncSender<PupilSample>,
    stats: Arc<StreamStats>,
    device: Arc<Mutex<DeviceInfo>>,
    stop: Arc<AtomicBool>,
}

impl Worker {
    fn keepalive(&self, op: KeepaliveOp) -> std::io::Result<()> {
        let bytes = serialize_datagram(&Datagram::Keepalive {
            key: KEEPALIVE_KEY.to_string(),
            op,
        });
        self.socket.send(&bytes)?;
        self.stats.keepalives.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn connection_error(&self, source: std::io::Error) -> StreamError {
        StreamError::Connection {
            endpoint: self.endpoint.to_string(),
            source,
        }
    }

    fn run(self) -> Result<(), StreamError> {
        let mut buf = [0u8; 2048];
        let mut seq = SeqTracker::default();
        let mut next_keepalive = Instant::now();
        let mut seen_data = false;

        loop {
            if self.stop.load(Ordering::SeqCst) {
                let _ = self.keepalive(KeepaliveOp::Stop);
                return Ok(());
            }
            if Instant::now() >= next_keepalive {
                if let Err(e) = self.keepalive(KeepaliveOp::Start) {
                    return self.closed_or_error(seen_data, e);
                }
                next_keepalive += self.endpoint.keepalive_interval;
            }
            let n = match self.socket.recv(&mut buf) {
                Ok(n) => n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    continue
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return self.closed_or_error(seen_data, e),
            };
            seen_data = true;
            self.stats.datagrams.fetch_add(1, Ordering::Relaxed);
            match parse_datagram(&buf[..n]) {
                Ok(Datagram::Sample(sample)) => {
                    match seq.observe(sample.seq) {
                        SeqEvent::InOrder => {}
                        SeqEvent::Gap(missing) => {
                            self.stats.gaps.fetch_add(1, Ordering::Relaxed);
                            self.stats
                                .missing
                                .fetch_add(u64::from(missing), Ordering::Relaxed);
                        }
                        SeqEvent::OutOfOrder => {
                            self.stats.out_of_order.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    self.stats.samples.fetch_add(1, Ordering::Relaxed);
                    if self.tx.send(sample).is_err() {
                        // Consumer went away.
                        let _ = self.keepalive(KeepaliveOp::Stop);
                        return Ok(());
                    }
                }
                Ok(Datagram::Announce {
                    device_id,
                    sample_rate_hz,
                }) => {
                    tracing::debug!(%device_id, sample_rate_hz, "device announced");
                    let mut dev = self.device.lock().unwrap();
                    dev.id = Some(device_id);
                    dev.rate = Some(sample_rate_hz);
                }
                Ok(Datagram::Keepalive { .. }) => {}
                Err(e) => {
                    tracing::trace!(error = %e, "dropping datagram");
                    self.stats.parse_errors.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    /// A refused port after data has flowed means the device shut down.
    fn closed_or_error(&self, seen_data: bool, e: std::io::Error) -> Result<(), StreamError> {
        if seen_data && e.kind() == ErrorKind::ConnectionRefused {
            self.device.lock().unwrap().closed = true;
            return Ok(());
        }
        Err(self.connection_error(e))
    }
}
