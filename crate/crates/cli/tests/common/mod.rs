#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub const BIN: &str = env!("CARGO_BIN_EXE_gazeload");

pub struct Simulator {
    pub child: Child,
    pub addr: String,
}

impl Drop for Simulator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts `gazeload [global] simulate --bind 127.0.0.1:0 [extra]` and waits
/// for its listening address.
pub fn spawn_simulator(global: &[&str], extra: &[&str]) -> Simulator {
    let mut child = Command::new(BIN)
        .args(global)
        .args(["simulate", "--bind", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn simulator");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .expect("read simulator address");
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected simulator output {line:?}"))
        .to_string();
    Simulator { child, addr }
}

pub fn gazeload(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run gazeload")
}

/// Runs a simulator and a `--fast stream` against it; returns the stream
/// process output and its wall time.
pub fn fast_session(sim_args: &[&str], stream_args: &[&str], out: &Path) -> (Output, Duration) {
    let mut sim = spawn_simulator(&["--fast"], sim_args);
    let started = Instant::now();
    let mut args = vec!["--fast", "stream", "--device", &sim.addr, "--out"];
    let out = out.to_str().unwrap();
    args.push(out);
    args.push("--quiet");
    args.extend_from_slice(stream_args);
    let output = gazeload(&args);
    let elapsed = started.elapsed();
    let _ = sim.child.wait();
    (output, elapsed)
}
