//! Per-minute request/token budgets and the in-flight bound.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::clock::Clock;
use crate::retry::RetryPolicy;

const WINDOW: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePolicy {
    pub requests_per_minute: u64,
    pub tokens_per_minute: u64,
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for RatePolicy {
    fn default() -> Self {
        Self {
            requests_per_minute: 500,
            tokens_per_minute: 200_000,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl RatePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.requests_per_minute == 0 || self.tokens_per_minute == 0 {
            return Err("rate budgets must be positive".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        self.retry.validate()
    }
}

#[derive(Default)]
struct Window {
    /// Admission time and token estimate, oldest first.
    admitted: VecDeque<(Duration, u64)>,
    tokens: u64,
}

/// Sliding-window admission: within any 60 s window at most
/// `requests_per_minute` requests and `tokens_per_minute` estimated tokens.
///
/// Admission times are handed out in non-decreasing order, so the busiest
/// window containing a new admission at `t` is `(t - 60 s, t]`.
pub struct RateLimiter {
    rpm: u64,
    tpm: u64,
    clock: Arc<dyn Clock>,
    window: Mutex<Window>,
}

impl RateLimiter {
    pub fn new(policy: &RatePolicy, clock: Arc<dyn Clock>) -> Self {
        Self {
            rpm: policy.requests_per_minute,
            tpm: policy.tokens_per_minute,
            clock,
            window: Mutex::new(Window::default()),
        }
    }

    /// Reserves a slot for a request of `tokens` and waits until it opens.
    /// Returns the admission time on the limiter's clock.
    pub fn acquire(&self, tokens: u64) -> Result<Duration, BackendError> {
        if tokens > self.tpm {
            return Err(BackendError::RequestTooLarge {
                tokens,
                budget: self.tpm,
            });
        }
        let at = {
            let mut w = self.window.lock().unwrap();
            let mut t = self.clock.now();
            if let Some(&(last, _)) = w.admitted.back() {
                t = t.max(last);
            }
            loop {
                while let Some(&(first, n)) = w.admitted.front() {
                    if first + WINDOW <= t {
                        w.admitted.pop_front();
                        w.tokens -= n;
                    } else {
                        break;
                    }
                }
                let fits = (w.admitted.len() as u64) < self.rpm && w.tokens + tokens <= self.tpm;
                if fits {
                    break;
                }
                let (first, _) = *w.admitted.front().expect("a full window is non-empty");
                t = first + WINDOW;
            }
            w.admitted.push_back((t, tokens));
            w.tokens += tokens;
            t
        };
        self.clock.sleep_until(at);
        Ok(at)
    }
}

/// Counting semaphore bounding concurrent backend calls.
pub struct InFlightGate {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> InFlightPermit<'_> {
        let mut cur = self.current.lock().unwrap();
        while *cur >= self.max {
            cur = self.freed.wait(cur).unwrap();
        }
        *cur += 1;
        InFlightPermit { gate: self }
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.gate.current.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}
