//! Retry, rate limiting and per-host politeness shared by the HTTP clients.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Exponential backoff with full jitter.
///
/// Each delay is drawn uniformly from `[0, min(max_delay, base * factor^i)]`
/// and then raised to at least the previous delay, so the schedule never
/// shrinks between attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_ms: 500, factor: 2.0, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Upper bound for the delay after the `retry`-th failure (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let raw = self.base_delay_ms as f64 * self.factor.powi(retry as i32);
        Duration::from_millis(raw.min(self.max_delay_ms as f64) as u64)
    }

    /// Delays to sleep between attempts; `max_attempts - 1` entries.
    pub fn schedule<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Duration> {
        let mut prev = Duration::ZERO;
        (0..self.max_attempts.saturating_sub(1))
            .map(|i| {
                let cap = self.ceiling(i).as_millis() as u64;
                let drawn = Duration::from_millis(if cap == 0 { 0 } else { rng.random_range(0..=cap) });
                prev = prev.max(drawn);
                prev
            })
            .collect()
    }
}

/// How a single attempt failed.
#[derive(Debug)]
pub enum AttemptError<E> {
    /// Worth retrying (connection reset, 429, 5xx, timeout).
    Transient(String),
    /// Give up immediately.
    Fatal(E),
}

#[derive(Debug)]
pub enum RetryError<E> {
    Exhausted { attempts: u32, last: String },
    Fatal { attempts: u32, error: E },
}

/// Runs `op` until it succeeds, fails fatally, or the policy runs out of attempts.
/// Returns the value and the number of attempts used.
pub fn retry<T, E, R, F>(policy: &RetryPolicy, rng: &mut R, mut op: F) -> Result<(T, u32), RetryError<E>>
where
    R: Rng + ?Sized,
    F: FnMut(u32) -> Result<T, AttemptError<E>>,
{
    let max = policy.max_attempts.max(1);
    let schedule = policy.schedule(rng);
    let mut last = String::new();
    for attempt in 1..=max {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(AttemptError::Fatal(error)) => return Err(RetryError::Fatal { attempts: attempt, error }),
            Err(AttemptError::Transient(msg)) => {
                log::warn!("attempt {attempt}/{max} failed: {msg}");
                last = msg;
                if let Some(d) = schedule.get(attempt as usize - 1) {
                    thread::sleep(*d);
                }
            }
        }
    }
    Err(RetryError::Exhausted { attempts: max, last })
}

/// Spaces calls at least `1 / requests_per_second` apart across all threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// A non-positive rate disables limiting.
    pub fn new(requests_per_second: f64) -> Self {
        let interval =
            if requests_per_second > 0.0 { Duration::from_secs_f64(1.0 / requests_per_second) } else { Duration::ZERO };
        Self { interval, next: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// One request in flight per host, with a minimum delay between requests.
#[derive(Debug)]
pub struct HostGate {
    delay: Duration,
    last: Mutex<Option<Instant>>,
}

impl HostGate {
    pub fn new(delay: Duration) -> Self {
        Self { delay, last: Mutex::new(None) }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut last = self.last.lock().expect("host gate poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.delay {
                thread::sleep(self.delay - elapsed);
            }
        }
        let out = f();
        *last = Some(Instant::now());
        out
    }
}
