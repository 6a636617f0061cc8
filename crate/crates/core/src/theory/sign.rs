use serde::{Deserialize, Serialize};

/// How the sign of each error component is chosen. The error model fixes
/// only `|z_i|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignPolicy {
    AllNegative,
    AllPositive,
    /// Fair coin per `(seed, trial, source, unit)`.
    SeededRandom {
        seed: u64,
    },
    /// `+` when `unit + source` is even.
    Alternating,
}

impl Default for SignPolicy {
    fn default() -> Self {
        SignPolicy::SeededRandom { seed: 0 }
    }
}

impl SignPolicy {
    pub fn sign(&self, trial: u64, source: u64, unit: u64) -> f64 {
        match *self {
            SignPolicy::AllNegative => -1.0,
            SignPolicy::AllPositive => 1.0,
            SignPolicy::SeededRandom { seed } => {
                if counter_hash(seed, trial, source, unit) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            SignPolicy::Alternating => {
                if (unit + source).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless hash of a counter tuple; the same inputs give the same bits in
/// any thread and any evaluation order.
pub fn counter_hash(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(seed) ^ a) ^ b) ^ c)
}
