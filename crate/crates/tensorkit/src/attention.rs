//! Fused multi-head scaled dot-product attention over packed segments.
//!
//! Several independent sequences share one packed `[rows, heads * d_head]`
//! buffer. Each segment attends only within its own key range, with an
//! optional additive per-head bias block and an optional causal mask.

use crate::float::{gemm, Float, MatRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    /// Query `i` may see key `j` only when `j <= i + (k_len - q_len)`.
    pub causal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub segments: Vec<AttnSegment>,
}

impl AttentionLayout {
    pub fn new(heads: usize, segments: Vec<AttnSegment>) -> Self {
        AttentionLayout { heads, segments }
    }

    /// Self-attention over consecutive packed sequences of the given lengths.
    pub fn self_attention(heads: usize, lengths: &[usize], causal: bool) -> Self {
        let mut start = 0;
        let segments = lengths
            .iter()
            .map(|&len| {
                let s = AttnSegment { q_start: start, q_len: len, k_start: start, k_len: len, causal };
                start += len;
                s
            })
            .collect();
        AttentionLayout { heads, segments }
    }

    /// Cross-attention: segment `i` of the queries attends segment `i` of the keys.
    pub fn cross_attention(heads: usize, q_lengths: &[usize], k_lengths: &[usize]) -> Self {
        assert_eq!(q_lengths.len(), k_lengths.len());
        let (mut qs, mut ks) = (0, 0);
        let segments = q_lengths
            .iter()
            .zip(k_lengths)
            .map(|(&ql, &kl)| {
                let s = AttnSegment { q_start: qs, q_len: ql, k_start: ks, k_len: kl, causal: false };
                qs += ql;
                ks += kl;
                s
            })
            .collect();
        AttentionLayout { heads, segments }
    }

    /// Offset of segment `s` inside a bias or probability buffer.
    pub fn block_offset(&self, s: usize) -> usize {
        self.segments[..s]
            .iter()
            .map(|seg| self.heads * seg.q_len * seg.k_len)
            .sum()
    }

    /// Total length of a flat `[segment][head][query][key]` buffer.
    pub fn block_len(&self) -> usize {
        self.block_offset(self.segments.len())
    }

    pub fn q_rows(&self) -> usize {
        self.segments.iter().map(|s| s.q_start + s.q_len).max().unwrap_or(0)
    }

    pub fn k_rows(&self) -> usize {
        self.segments.iter().map(|s| s.k_start + s.k_len).max().unwrap_or(0)
    }
}

fn visible(seg: &AttnSegment, i: usize, j: usize) -> bool {
    !seg.causal || j + seg.q_len <= i + seg.k_len
}

/// Forward pass. Writes the context into `out` (`[q_rows, width]`, zeroed by
/// the caller) and the attention probabilities into `probs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<F: Float>(
    layout: &AttentionLayout,
    width: usize,
    q: &[F],
    k: &[F],
    v: &[F],
    bias: Option<&[F]>,
    out: &mut [F],
    probs: &mut [F],
) {
    let heads = layout.heads;
    let dh = width / heads;
    let scale = F::one() / F::from_f64_lossy(dh as f64).sqrt();
    let mut offset = 0;
    for seg in &layout.segments {
        let (ql, kl) = (seg.q_len, seg.k_len);
        for h in 0..heads {
            let block = &mut probs[offset..offset + ql * kl];
            let qv = MatRef { offset: seg.q_start * width + h * dh, rows: ql, cols: dh, row_stride: width, col_stride: 1 };
            let kv = MatRef { offset: seg.k_start * width + h * dh, rows: kl, cols: dh, row_stride: width, col_stride: 1 };
            gemm(scale, q, qv, k, kv.transposed(), F::zero(), block, MatRef::dense(0, ql, kl));
            if let Some(b) = bias {
                for (s, &bb) in block.iter_mut().zip(&b[offset..offset + ql * kl]) {
                    *s += bb;
                }
            }
            for i in 0..ql {
                let row = &mut block[i * kl..(i + 1) * kl];
                let mut max = F::neg_infinity();
                for (j, s) in row.iter().enumerate() {
                    if visible(seg, i, j) && *s > max {
                        max = *s;
                    }
                }
                let mut total = F::zero();
                for (j, s) in row.iter_mut().enumerate() {
                    if visible(seg, i, j) {
                        *s = (*s - max).exp();
                        total += *s;
                    } else {
                        *s = F::zero();
                    }
                }
                if total > F::zero() {
                    for s in row.iter_mut() {
                        *s /= total;
                    }
                }
            }
            let vv = MatRef { offset: seg.k_start * width + h * dh, rows: kl, cols: dh, row_stride: width, col_stride: 1 };
            let ov = MatRef { offset: seg.q_start * width + h * dh, rows: ql, cols: dh, row_stride: width, col_stride: 1 };
            gemm(F::one(), block, MatRef::dense(0, ql, kl), v, vv, F::zero(), out, ov);
            offset += ql * kl;
        }
    }
}

/// Gradient buffers for the attention inputs; `None` skips that input.
pub(crate) struct AttnGrads<'a, F> {
    pub dq: Option<&'a mut [F]>,
    pub dk: Option<&'a mut [F]>,
    pub dv: Option<&'a mut [F]>,
    pub dbias: Option<&'a mut [F]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<F: Float>(
    layout: &AttentionLayout,
    width: usize,
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    mut grads: AttnGrads<'_, F>,
) {
    let heads = layout.heads;
    let dh = width / heads;
    let scale = F::one() / F::from_f64_lossy(dh as f64).sqrt();
    let mut offset = 0;
    let mut dscore: Vec<F> = Vec::new();
    for seg in &layout.segments {
        let (ql, kl) = (seg.q_len, seg.k_len);
        for h in 0..heads {
            let p = &probs[offset..offset + ql * kl];
            let qv = MatRef { offset: seg.q_start * width + h * dh, rows: ql, cols: dh, row_stride: width, col_stride: 1 };
            let kv = MatRef { offset: seg.k_start * width + h * dh, rows: kl, cols: dh, row_stride: width, col_stride: 1 };
            let dov = qv;
            if let Some(dv) = grads.dv.as_deref_mut() {
                // dV += P^T dO
                gemm(F::one(), p, MatRef::dense(0, ql, kl).transposed(), dout, dov, F::one(), dv, kv);
            }
            dscore.clear();
            dscore.resize(ql * kl, F::zero());
            // dP = dO V^T
            gemm(F::one(), dout, dov, v, kv.transposed(), F::zero(), &mut dscore, MatRef::dense(0, ql, kl));
            for i in 0..ql {
                let prow = &p[i * kl..(i + 1) * kl];
                let drow = &mut dscore[i * kl..(i + 1) * kl];
                let dot: F = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pp) in drow.iter_mut().zip(prow) {
                    *d = pp * (*d - dot);
                }
            }
            if let Some(db) = grads.dbias.as_deref_mut() {
                for (d, &s) in db[offset..offset + ql * kl].iter_mut().zip(&dscore) {
                    *d += s;
                }
            }
            if let Some(dq) = grads.dq.as_deref_mut() {
                gemm(scale, &dscore, MatRef::dense(0, ql, kl), k, kv, F::one(), dq, qv);
            }
            if let Some(dk) = grads.dk.as_deref_mut() {
                gemm(scale, &dscore, MatRef::dense(0, ql, kl).transposed(), q, qv, F::one(), dk, kv);
            }
            offset += ql * kl;
        }
    }
}
