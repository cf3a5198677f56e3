//! Naive reference implementations used as oracles.
//!
//! These are deliberately straight-line: no tiling, no buffering, no
//! blocking. Tests and the CLI's error-vs-oracle output compare the tiled
//! and fused execution paths against them; they must stay independent of
//! those paths.

/// Row-major `y[m,n] = x[m,k] * w[k,n]`, FP32 accumulation in i-k-j order.
pub fn naive_gemm(x: &[f32], w: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    assert_eq!(x.len(), m * k);
    assert_eq!(w.len(), k * n);
    let mut y = vec![0.0f32; m * n];
    for i in 0..m {
        for kk in 0..k {
            let xv = x[i * k + kk];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[kk * n..(kk + 1) * n];
            let yrow = &mut y[i * n..(i + 1) * n];
            for (yj, wj) in yrow.iter_mut().zip(wrow) {
                *yj += xv * wj;
            }
        }
    }
    y
}

/// Interleaved-pair rotary embedding applied in place to `y[m,n]`.
/// Pair `j` of row `i` is rotated by `positions[i] * theta_base^(-2j/n)`.
pub fn apply_rope(y: &mut [f32], m: usize, n: usize, positions: &[u64], theta_base: f64) {
    assert_eq!(y.len(), m * n);
    assert_eq!(positions.len(), m);
    assert_eq!(n % 2, 0);
    for i in 0..m {
        let pos = positions[i] as f64;
        for j in 0..n / 2 {
            let angle = pos * theta_base.powf(-2.0 * j as f64 / n as f64);
            let (sin, cos) = angle.sin_cos();
            let (sin, cos) = (sin as f32, cos as f32);
            let a = y[i * n + 2 * j];
            let b = y[i * n + 2 * j + 1];
            y[i * n + 2 * j] = a * cos - b * sin;
            y[i * n + 2 * j + 1] = b * cos + a * sin;
        }
    }
}

/// Single-head scaled dot-product attention,
/// `softmax(q k^T / sqrt(d)) v`, FP32 throughout.
pub fn naive_attention(q: &[f32], k: &[f32], v: &[f32], s: usize, d: usize) -> Vec<f32> {
    assert_eq!(q.len(), s * d);
    assert_eq!(k.len(), s * d);
    assert_eq!(v.len(), s * d);
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; s * d];
    let mut scores = vec![0.0f32; s];
    for i in 0..s {
        for (j, score) in scores.iter_mut().enumerate() {
            let mut dot = 0.0f32;
            for t in 0..d {
                dot += q[i * d + t] * k[j * d + t];
            }
            *score = dot * scale;
        }
        let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for score in scores.iter_mut() {
            *score = (*score - max).exp();
            sum += *score;
        }
        for (j, &score) in scores.iter().enumerate() {
            let weight = score / sum;
            for t in 0..d {
                out[i * d + t] += weight * v[j * d + t];
            }
        }
    }
    out
}

/// Column sums across `groups` vectors of `lanes` elements each.
pub fn column_sums(values: &[f32], groups: usize, lanes: usize) -> Vec<f32> {
    assert_eq!(values.len(), groups * lanes);
    let mut out = vec![0.0f32; lanes];
    for g in 0..groups {
        for l in 0..lanes {
            out[l] += values[g * lanes + l];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_identity_left() {
        let n = 3;
        let x = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let w: Vec<f32> = (0..9).map(|i| i as f32).collect();
        assert_eq!(naive_gemm(&x, &w, n, n, n), w);
    }

    #[test]
    fn rope_at_position_zero_is_identity() {
        let mut y = vec![1.0, 2.0, 3.0, 4.0];
        let orig = y.clone();
        apply_rope(&mut y, 1, 4, &[0], 10_000.0);
        assert_eq!(y, orig);
    }

    #[test]
    fn attention_single_token_returns_v() {
        let out = naive_attention(&[2.0], &[3.0], &[5.0], 1, 1);
        assert_eq!(out, vec![5.0]);
    }
}
