use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    Fast,
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalConfig {
    pub log_level: String,
    pub clock_mode: ClockMode,
    pub emit_rate_hz: f64,
    pub threshold_fraction: f64,
}

impl GlobalConfig {
    pub fn new(
        log_level: &str,
        fast: bool,
        emit_rate_hz: f64,
        threshold_fraction: f64,
    ) -> Result<Self, String> {
        if !(1.0..=100.0).contains(&emit_rate_hz) {
            return Err(format!("--emit-rate must be in [1, 100], got {emit_rate_hz}"));
        }
        if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
            return Err(format!(
                "--threshold must be in (0, 1), got {threshold_fraction}"
            ));
        }
        Ok(Self {
            log_level: log_level.to_string(),
            clock_mode: if fast { ClockMode::Fast } else { ClockMode::Wall },
            emit_rate_hz,
            threshold_fraction,
        })
    }

    pub fn fast(&self) -> bool {
        self.clock_mode == ClockMode::Fast
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert!(GlobalConfig::new("warn", false, 17.5, 0.7).is_ok());
        assert!(GlobalConfig::new("warn", false, 0.5, 0.7).is_err());
        assert!(GlobalConfig::new("warn", false, 101.0, 0.7).is_err());
        assert!(GlobalConfig::new("warn", true, 17.5, 1.0).is_err());
        assert!(GlobalConfig::new("warn", true, 17.5, 0.0).is_err());
        assert_eq!(
            GlobalConfig::new("warn", true, 17.5, 0.7).unwrap().clock_mode,
            ClockMode::Fast
        );
    }
}
