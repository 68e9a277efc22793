//! Per-client token bucket.

use std::collections::HashMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};

/// One token, in units of token-milliseconds per day. Refilling at `r`
/// tokens per day adds `r` units per elapsed millisecond, so all arithmetic
/// stays exact.
const TOKEN: u128 = 86_400_000;

#[derive(Debug, Clone, Copy)]
struct Bucket {
    units: u128,
    updated: DateTime<Utc>,
}

/// `capacity` tokens per key, refilled continuously at `refill_per_day`.
/// Each admitted request takes one token.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: u128,
    refill_per_day: u128,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_day: u32) -> Self {
        assert!(capacity > 0 && refill_per_day > 0, "token bucket needs positive capacity and refill");
        Self {
            capacity: u128::from(capacity) * TOKEN,
            refill_per_day: u128::from(refill_per_day),
            buckets: Mutex::new(HashMap::new()),
        }
    }

    fn refilled(&self, b: &Bucket, now: DateTime<Utc>) -> u128 {
        let elapsed_ms = (now - b.updated).num_milliseconds().max(0) as u128;
        (b.units + elapsed_ms * self.refill_per_day).min(self.capacity)
    }

    /// Takes a token for `key` or returns the whole seconds until one is
    /// available.
    pub fn try_acquire(&self, key: &str, now: DateTime<Utc>) -> Result<(), u64> {
        let mut buckets = self.buckets.lock().expect("rate limiter lock");
        let b = buckets.entry(key.to_string()).or_insert(Bucket {
            units: self.capacity,
            updated: now,
        });
        b.units = self.refilled(b, now);
        b.updated = b.updated.max(now);
        if b.units >= TOKEN {
            b.units -= TOKEN;
            Ok(())
        } else {
            let ms = (TOKEN - b.units).div_ceil(self.refill_per_day);
            Err(ms.div_ceil(1000) as u64)
        }
    }

    /// Whole tokens currently available to `key`.
    pub fn available(&self, key: &str, now: DateTime<Utc>) -> u32 {
        let buckets = self.buckets.lock().expect("rate limiter lock");
        let units = buckets.get(key).map_or(self.capacity, |b| self.refilled(b, now));
        (units / TOKEN) as u32
    }
}
