//! Live terminal readout: one line per emitted estimate.

use std::io::Write;

use gazeload_core::LoadEstimate;

pub fn format_line(e: &LoadEstimate) -> String {
    format!(
        "{:>10.3}s  win {:.3} mm  avg {:.3} mm  max {:.3} mm  {}",
        e.ts as f64 / 1e6,
        e.windowed_avg,
        e.running_avg,
        e.running_max,
        if e.high_load { "HIGH" } else { "ok" }
    )
}

pub struct Readout {
    enabled: bool,
    out: std::io::Stdout,
}

impl Readout {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            out: std::io::stdout(),
        }
    }

    pub fn show(&mut self, e: &LoadEstimate) {
        if self.enabled {
            let mut lock = self.out.lock();
            let _ = writeln!(lock, "{}", format_line(e));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let e = LoadEstimate {
            ts: 12_345_678,
            running_avg: 3.5,
            windowed_avg: 4.25,
            running_max: 4.5,
            high_load: true,
            frames_seen: 10,
        };
        assert_eq!(
            format_line(&e),
            "    12.346s  win 4.250 mm  avg 3.500 mm  max 4.500 mm  HIGH"
        );
    }
}
