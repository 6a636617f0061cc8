use std::time::Duration;

use rand::Rng;

use super::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with +/-50% jitter.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay);
        let jitter: f64 = rand::rng().random_range(0.5..1.5);
        exp.mul_f64(jitter)
    }
}

/// Runs `op` until it succeeds, fails with a non-transient error, or the
/// retry budget runs out. Returns the value and the number of retries spent.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T>,
) -> Result<(T, u32)> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(e) if e.is_transient() && attempt < policy.max_retries => {
                log::warn!("retrying after transient failure ({}): {e}", attempt + 1);
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BackendError;

    fn fast(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    #[test]
    fn transient_then_success() {
        let (v, retries) = with_retry(&fast(3), |a| {
            if a < 2 {
                Err(BackendError::transport("t", "timeout"))
            } else {
                Ok(7)
            }
        })
        .unwrap();
        assert_eq!((v, retries), (7, 2));
    }

    #[test]
    fn gives_up() {
        let mut calls = 0;
        let r: Result<((), u32)> = with_retry(&fast(2), |_| {
            calls += 1;
            Err(BackendError::transport("t", "down"))
        });
        assert!(r.is_err());
        assert_eq!(calls, 3);
    }

    #[test]
    fn protocol_errors_not_retried() {
        let mut calls = 0;
        let r: Result<((), u32)> = with_retry(&fast(5), |_| {
            calls += 1;
            Err(BackendError::protocol("t", "bad json"))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn delay_grows_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
        };
        assert!(p.delay(0) <= Duration::from_millis(150));
        assert!(p.delay(0) >= Duration::from_millis(50));
        assert!(p.delay(20) <= Duration::from_millis(1500));
    }
}
