//! Device wire protocol.
//!
//! Every UDP datagram carries exactly one newline-free JSON object of at most
//! [`MAX_DATAGRAM_LEN`] bytes. Three shapes exist:
//!
//! ```text
//! sample     {"ts":<int>,"eye":"left"|"right","pd":<number>,"s":<int>,"seq":<int>}
//! keepalive  {"type":"live.data","key":<string>,"op":"start"|"stop"}
//! announce   {"type":"announce","id":<string>,"rate":<number>}
//! ```
//!
//! Parsing is strict: unknown keys are rejected, and a sample with status 0
//! must carry a positive diameter.

mod client;

use std::fmt;
use std::net::{SocketAddr, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use client::{receive_stream, StreamError, StreamHandle, StreamStats, StreamSummary};

/// Upper bound on the encoded size of a datagram.
pub const MAX_DATAGRAM_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn as_str(&self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }

    pub fn other(&self) -> Eye {
        match self {
            Eye::Left => Eye::Right,
            Eye::Right => Eye::Left,
        }
    }
}

/// One per-eye pupil reading as delivered by the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilSample {
    /// Device monotonic clock, microseconds.
    pub ts: i64,
    pub eye: Eye,
    /// Millimetres. May be 0 when `status != 0`.
    pub diameter: f64,
    /// 0 = valid, anything else = invalid (blink, lost track).
    pub status: i32,
    pub seq: u32,
}

impl PupilSample {
    pub fn is_valid(&self) -> bool {
        self.status == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeepaliveOp {
    Start,
    Stop,
}

impl KeepaliveOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeepaliveOp::Start => "start",
            KeepaliveOp::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Datagram {
    Sample(PupilSample),
    Keepalive { key: String, op: KeepaliveOp },
    Announce { device_id: String, sample_rate_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolErrorKind {
    MalformedJson,
    UnknownType,
    MissingField,
    BadValue,
}

impl ProtocolErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolErrorKind::MalformedJson => "malformed_json",
            ProtocolErrorKind::UnknownType => "unknown_type",
            ProtocolErrorKind::MissingField => "missing_field",
            ProtocolErrorKind::BadValue => "bad_value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {detail}", kind.as_str())]
pub struct ProtocolError {
    pub kind: ProtocolErrorKind,
    pub detail: String,
}

impl ProtocolError {
    fn new(kind: ProtocolErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    fn missing(field: &str) -> Self {
        Self::new(ProtocolErrorKind::MissingField, field)
    }

    fn bad(field: &str) -> Self {
        Self::new(ProtocolErrorKind::BadValue, field)
    }
}

/// Where a device (or the simulator) listens.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEndpoint {
    pub address: String,
    pub port: u16,
    pub keepalive_interval: Duration,
}

impl DeviceEndpoint {
    pub const DEFAULT_KEEPALIVE: Duration = Duration::from_secs(1);

    pub fn new(address: impl Into<String>, port: u16) -> Result<Self, EndpointError> {
        if port == 0 {
            return Err(EndpointError::Port);
        }
        Ok(Self {
            address: address.into(),
            port,
            keepalive_interval: Self::DEFAULT_KEEPALIVE,
        })
    }

    pub fn with_keepalive(mut self, interval: Duration) -> Result<Self, EndpointError> {
        if interval.is_zero() {
            return Err(EndpointError::Keepalive);
        }
        self.keepalive_interval = interval;
        Ok(self)
    }

    /// Parses `host:port`.
    pub fn parse(s: &str) -> Result<Self, EndpointError> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| EndpointError::Syntax(s.to_string()))?;
        let port: u16 = port
            .parse()
            .map_err(|_| EndpointError::Syntax(s.to_string()))?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        Self::new(host, port)
    }

    pub fn resolve(&self) -> std::io::Result<SocketAddr> {
        (self.address.as_str(), self.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address"))
    }
}

impl fmt::Display for DeviceEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.address, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndpointError {
    #[error("expected host:port, got {0:?}")]
    Syntax(String),
    #[error("port must be in 1..=65535")]
    Port,
    #[error("keepalive interval must be positive")]
    Keepalive,
}

#[derive(Serialize)]
struct SampleWire<'a> {
    ts: i64,
    eye: &'a str,
    pd: f64,
    s: i32,
    seq: u32,
}

#[derive(Serialize)]
struct KeepaliveWire<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    key: &'a str,
    op: &'a str,
}

#[derive(Serialize)]
struct AnnounceWire<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    id: &'a str,
    rate: f64,
}

pub fn serialize_datagram(d: &Datagram) -> Vec<u8> {
    let out = match d {
        Datagram::Sample(s) => serde_json::to_vec(&SampleWire {
            ts: s.ts,
            eye: s.eye.as_str(),
            pd: s.diameter,
            s: s.status,
            seq: s.seq,
        }),
        Datagram::Keepalive { key, op } => serde_json::to_vec(&KeepaliveWire {
            kind: "live.data",
            key,
            op: op.as_str(),
        }),
        Datagram::Announce {
            device_id,
            sample_rate_hz,
        } => serde_json::to_vec(&AnnounceWire {
            kind: "announce",
            id: device_id,
            rate: *sample_rate_hz,
        }),
    };
    // Only non-finite floats can fail, and those never pass validation.
    out.expect("datagram fields are serializable")
}

pub fn parse_datagram(bytes: &[u8]) -> Result<Datagram, ProtocolError> {
    use ProtocolErrorKind::*;

    if bytes.len() > MAX_DATAGRAM_LEN {
        return Err(ProtocolError::new(MalformedJson, "datagram too large"));
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ProtocolError::new(MalformedJson, "invalid utf-8"))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::new(MalformedJson, e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ProtocolError::new(MalformedJson, "not a JSON object"));
    };

    match obj.get("type") {
        None => parse_sample(&obj).map(Datagram::Sample),
        Some(Value::String(t)) => match t.as_str() {
            "live.data" => parse_keepalive(&obj),
            "announce" => parse_announce(&obj),
            other => Err(ProtocolError::new(UnknownType, other)),
        },
        Some(_) => Err(ProtocolError::bad("type")),
    }
}

fn only_keys(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), ProtocolError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ProtocolError::new(
            ProtocolErrorKind::BadValue,
            format!("unexpected field {k}"),
        )),
        None => Ok(()),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, ProtocolError> {
    obj.get(name).ok_or_else(|| ProtocolError::missing(name))
}

fn str_field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a str, ProtocolError> {
    field(obj, name)?
        .as_str()
        .ok_or_else(|| ProtocolError::bad(name))
}

fn parse_sample(obj: &Map<String, Value>) -> Result<PupilSample, ProtocolError> {
    // Missing fields are reported before unexpected ones.
    for name in ["ts", "eye", "pd", "s", "seq"] {
        field(obj, name)?;
    }
    only_keys(obj, &["ts", "eye", "pd", "s", "seq"])?;

    let ts = obj["ts"]
        .as_i64()
        .filter(|ts| *ts >= 0)
        .ok_or_else(|| ProtocolError::bad("ts"))?;
    let eye = match obj["eye"].as_str() {
        Some("left") => Eye::Left,
        Some("right") => Eye::Right,
        _ => return Err(ProtocolError::bad("eye")),
    };
    let diameter = obj["pd"]
        .as_f64()
        .filter(|d| d.is_finite() && *d >= 0.0)
        .ok_or_else(|| ProtocolError::bad("pd"))?;
    let status = obj["s"]
        .as_i64()
        .and_then(|s| i32::try_from(s).ok())
        .ok_or_else(|| ProtocolError::bad("s"))?;
    let seq = obj["seq"]
        .as_u64()
        .and_then(|s| u32::try_from(s).ok())
        .ok_or_else(|| ProtocolError::bad("seq"))?;
    if status == 0 && diameter <= 0.0 {
        return Err(ProtocolError::bad("pd"));
    }
    Ok(PupilSample {
        ts,
        eye,
        diameter,
        status,
        seq,
    })
}

fn parse_keepalive(obj: &Map<String, Value>) -> Result<Datagram, ProtocolError> {
    let key = str_field(obj, "key")?;
    let op = match str_field(obj, "op")? {
        "start" => KeepaliveOp::Start,
        "stop" => KeepaliveOp::Stop,
        _ => return Err(ProtocolError::bad("op")),
    };
    only_keys(obj, &["type", "key", "op"])?;
    Ok(Datagram::Keepalive {
        key: key.to_string(),
        op,
    })
}

fn parse_announce(obj: &Map<String, Value>) -> Result<Datagram, ProtocolError> {
    let id = str_field(obj, "id")?;
    let rate = field(obj, "rate")?
        .as_f64()
        .filter(|r| r.is_finite() && *r > 0.0)
        .ok_or_else(|| ProtocolError::bad("rate"))?;
    only_keys(obj, &["type", "id", "rate"])?;
    Ok(Datagram::Announce {
        device_id: id.to_string(),
        sample_rate_hz: rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kind(bytes: &[u8]) -> ProtocolErrorKind {
        parse_datagram(bytes).unwrap_err().kind
    }

    #[test]
    fn parses_sample() {
        let d = parse_datagram(br#"{"ts":1000,"eye":"left","pd":3.45,"s":0,"seq":7}"#).unwrap();
        assert_eq!(
            d,
            Datagram::Sample(PupilSample {
                ts: 1000,
                eye: Eye::Left,
                diameter: 3.45,
                status: 0,
                seq: 7
            })
        );
    }

    #[test]
    fn parses_keepalive() {
        let d = parse_datagram(br#"{"type":"live.data","key":"abc","op":"start"}"#).unwrap();
        assert_eq!(
            d,
            Datagram::Keepalive {
                key: "abc".into(),
                op: KeepaliveOp::Start
            }
        );
    }

    #[test]
    fn serializes_exact_bytes() {
        let ka = Datagram::Keepalive {
            key: "abc".into(),
            op: KeepaliveOp::Stop,
        };
        assert_eq!(
            serialize_datagram(&ka),
            br#"{"type":"live.data","key":"abc","op":"stop"}"#
        );
        let an = Datagram::Announce {
            device_id: "sim01".into(),
            sample_rate_hz: 50.0,
        };
        assert_eq!(
            serialize_datagram(&an),
            br#"{"type":"announce","id":"sim01","rate":50.0}"#
        );
        let s = Datagram::Sample(PupilSample {
            ts: 1000,
            eye: Eye::Left,
            diameter: 3.45,
            status: 0,
            seq: 7,
        });
        assert_eq!(
            serialize_datagram(&s),
            br#"{"ts":1000,"eye":"left","pd":3.45,"s":0,"seq":7}"#
        );
    }

    #[test]
    fn error_reasons() {
        assert_eq!(kind(b"{not json"), ProtocolErrorKind::MalformedJson);
        assert_eq!(kind(b"[1,2]"), ProtocolErrorKind::MalformedJson);
        assert_eq!(kind(&[0xff, 0xfe]), ProtocolErrorKind::MalformedJson);
        assert_eq!(kind(br#"{"type":"gaze"}"#), ProtocolErrorKind::UnknownType);
        assert_eq!(kind(br#"{"type":7}"#), ProtocolErrorKind::BadValue);
        assert_eq!(
            kind(br#"{"ts":1,"eye":"left","pd":3.0,"s":0}"#),
            ProtocolErrorKind::MissingField
        );
        assert_eq!(
            kind(br#"{"ts":1,"eye":"up","pd":3.0,"s":0,"seq":1}"#),
            ProtocolErrorKind::BadValue
        );
        assert_eq!(
            kind(br#"{"ts":1,"eye":"left","pd":0,"s":0,"seq":1}"#),
            ProtocolErrorKind::BadValue
        );
        assert_eq!(
            kind(br#"{"ts":1,"eye":"left","pd":3.0,"s":0,"seq":4294967296}"#),
            ProtocolErrorKind::BadValue
        );
        assert_eq!(
            kind(br#"{"ts":1,"eye":"left","pd":3.0,"s":0,"seq":1,"x":1}"#),
            ProtocolErrorKind::BadValue
        );
        assert_eq!(
            kind(br#"{"type":"announce","id":"a","rate":0}"#),
            ProtocolErrorKind::BadValue
        );
        assert_eq!(
            kind(br#"{"type":"live.data","key":"a"}"#),
            ProtocolErrorKind::MissingField
        );
        let big = format!(r#"{{"type":"announce","id":"{}","rate":1}}"#, "x".repeat(600));
        assert_eq!(kind(big.as_bytes()), ProtocolErrorKind::MalformedJson);
    }

    #[test]
    fn blink_sample_may_have_zero_diameter() {
        let d = parse_datagram(br#"{"ts":5,"eye":"right","pd":0,"s":1,"seq":0}"#).unwrap();
        match d {
            Datagram::Sample(s) => assert!(!s.is_valid()),
            _ => panic!("expected sample"),
        }
    }

    #[test]
    fn endpoint_parsing() {
        let ep = DeviceEndpoint::parse("127.0.0.1:4999").unwrap();
        assert_eq!(ep.port, 4999);
        assert_eq!(ep.keepalive_interval, Duration::from_secs(1));
        assert_eq!(DeviceEndpoint::parse("host:0"), Err(EndpointError::Port));
        assert!(DeviceEndpoint::parse("nohost").is_err());
        assert!(ep.with_keepalive(Duration::ZERO).is_err());
    }

    fn arb_datagram() -> impl Strategy<Value = Datagram> {
        let sample = (
            0i64..i64::MAX / 2,
            any::<bool>(),
            1u32..10_000,
            -3i32..3,
            any::<u32>(),
        )
            .prop_map(|(ts, left, pd, s, seq)| {
                Datagram::Sample(PupilSample {
                    ts,
                    eye: if left { Eye::Left } else { Eye::Right },
                    diameter: pd as f64 / 1000.0,
                    status: s,
                    seq,
                })
            });
        let keepalive = ("[a-zA-Z0-9_\\-\"\\\\ ]{0,32}", any::<bool>()).prop_map(|(key, start)| {
            Datagram::Keepalive {
                key,
                op: if start {
                    KeepaliveOp::Start
                } else {
                    KeepaliveOp::Stop
                },
            }
        });
        let announce = ("\\PC{0,24}", 0.001f64..1.0e4).prop_map(|(id, rate)| Datagram::Announce {
            device_id: id,
            sample_rate_hz: rate,
        });
        prop_oneof![sample, keepalive, announce]
    }

    proptest! {
        #[test]
        fn round_trip(d in arb_datagram()) {
            let bytes = serialize_datagram(&d);
            prop_assert!(!bytes.contains(&b'\n'));
            prop_assert_eq!(parse_datagram(&bytes).unwrap(), d);
        }

        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
            let _ = parse_datagram(&bytes);
        }
    }
}
