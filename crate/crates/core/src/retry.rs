//! Exponential backoff shared by the chat backend and the caption source.

use std::time::Duration;

use rand::RngExt;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Fraction of the computed delay that may be shaved off at random.
    #[serde(default)]
    pub jitter_fraction: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter_fraction: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if self.base_delay_ms > self.max_delay_ms {
            return Err("retry.base_delay_ms must not exceed retry.max_delay_ms".into());
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err("retry.jitter_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Delay to wait after the `failed_attempts`-th failure (1-based).
    pub fn delay_after(&self, failed_attempts: u32) -> Duration {
        let exp = failed_attempts.saturating_sub(1).min(32);
        let raw = self
            .base_delay_ms
            .saturating_mul(1u64 << exp)
            .min(self.max_delay_ms);
        let jitter = if self.jitter_fraction > 0.0 {
            let u: f64 = rand::rng().random_range(0.0..1.0);
            1.0 - self.jitter_fraction * u
        } else {
            1.0
        };
        Duration::from_millis((raw as f64 * jitter).round() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
            jitter_fraction: 0.0,
        };
        let delays: Vec<u64> = (1..=6).map(|n| p.delay_after(n).as_millis() as u64).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1000, 1000]);
    }

    #[test]
    fn jitter_never_exceeds_cap() {
        let p = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 100,
            max_delay_ms: 100,
            jitter_fraction: 0.5,
        };
        for n in 1..50 {
            let d = p.delay_after(n).as_millis();
            assert!((50..=100).contains(&d), "{d}");
        }
    }

    #[test]
    fn invalid_policies_rejected() {
        let p = RetryPolicy {
            max_attempts: 0,
            ..RetryPolicy::default()
        };
        assert!(p.validate().is_err());
        let mut p = RetryPolicy::default();
        p.base_delay_ms = p.max_delay_ms + 1;
        assert!(p.validate().is_err());
    }
}
