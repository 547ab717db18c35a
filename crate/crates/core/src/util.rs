//! Small numeric and serialization helpers shared across modules.

use sha2::{Digest, Sha256};

/// Rounds to 12 significant decimal digits. Applied to every float that
/// leaves the library through a report or a data file, so downstream
/// consumers see stable, diff-friendly numbers.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// `sig12` rendered as the shortest string that round-trips.
pub fn fmt_sig12(x: f64) -> String {
    sig12(x).to_string()
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Hex-encoded SHA-256; used to fingerprint configurations in metadata.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
