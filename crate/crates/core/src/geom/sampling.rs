use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Jitter policy for stratified sampling.
pub enum Jitter<'a> {
    /// Deterministic bin centers.
    Center,
    /// One uniform draw per bin from the given generator.
    Rng(&'a mut ChaCha8Rng),
}

/// One sample per equal-width bin of `(t0, t1)`, strictly ascending.
///
/// `n = 0` yields an empty sequence. With [`Jitter::Center`] the samples sit
/// at bin centers; with a seeded generator the output is deterministic for
/// that seed.
pub fn stratified_samples(t0: f64, t1: f64, n: usize, jitter: Jitter<'_>) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    assert!(t0 < t1, "stratified_samples requires t0 < t1");
    let width = (t1 - t0) / n as f64;
    let mut out = Vec::with_capacity(n);
    match jitter {
        Jitter::Center => {
            for i in 0..n {
                out.push(t0 + width * (i as f64 + 0.5));
            }
        }
        Jitter::Rng(rng) => {
            for i in 0..n {
                let u: f64 = rng.gen(); // [0, 1)
                out.push(t0 + width * (i as f64 + u));
            }
        }
    }
    out
}
