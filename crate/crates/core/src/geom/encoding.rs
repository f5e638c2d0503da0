use std::f64::consts::PI;

/// Output length of [`positional_encode`] for an `n`-vector.
pub fn encoded_len(n: usize, num_freqs: usize, include_input: bool) -> usize {
    n * (usize::from(include_input) + 2 * num_freqs)
}

/// Sinusoidal positional encoding with frequencies `2^k * pi`, `k = 0..L-1`.
///
/// Layout: `[x (if include_input), sin(2^0 pi x), cos(2^0 pi x), ...,
/// sin(2^{L-1} pi x), cos(2^{L-1} pi x)]`, each block holding all `n`
/// components of `x` in order.
pub fn positional_encode(x: &[f64], num_freqs: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(x.len(), num_freqs, include_input));
    positional_encode_into(x, num_freqs, include_input, &mut out);
    out
}

/// Append the encoding of `x` to `out`; used to fill batched rows without
/// reallocating.
pub fn positional_encode_into(x: &[f64], num_freqs: usize, include_input: bool, out: &mut Vec<f64>) {
    if include_input {
        out.extend_from_slice(x);
    }
    let mut freq = PI;
    for _ in 0..num_freqs {
        for &v in x {
            out.push((freq * v).sin());
        }
        for &v in x {
            out.push((freq * v).cos());
        }
        freq *= 2.0;
    }
}
