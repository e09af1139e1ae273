//! Dense row-major kernels for the reference interpreter.
//!
//! Deterministic by construction: every reduction scans in ascending memory
//! order, so results are bit-stable across runs and across segmented
//! execution (segments never change a reduction's operand order).

use num_traits::Float;

use crate::graph::row_major_strides;

fn product(shape: &[u64]) -> usize {
    shape.iter().product::<u64>() as usize
}

/// Splits `shape` at `dim` into (outer, axis, inner) extents.
fn axis_split(shape: &[u64], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product::<u64>() as usize;
    let axis = shape[dim] as usize;
    let inner = shape[dim + 1..].iter().product::<u64>() as usize;
    (outer, axis, inner)
}

pub fn matmul<T: Float>(a: &[T], ashape: &[u64], b: &[T], bshape: &[u64]) -> (Vec<T>, Vec<u64>) {
    let ar = ashape.len();
    let m = ashape[ar - 2] as usize;
    let k = ashape[ar - 1] as usize;
    let n = bshape[bshape.len() - 1] as usize;
    let batch = ashape[..ar - 2].iter().product::<u64>() as usize;
    let rhs_batched = bshape.len() == ashape.len();

    let mut out_shape: Vec<u64> = ashape[..ar - 2].to_vec();
    out_shape.push(m as u64);
    out_shape.push(n as u64);

    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let a_base = bi * m * k;
        let b_base = if rhs_batched { bi * k * n } else { 0 };
        let o_base = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc = acc + a[a_base + i * k + p] * b[b_base + p * n + j];
                }
                out[o_base + i * n + j] = acc;
            }
        }
    }
    (out, out_shape)
}

/// Elementwise binary with trailing-dim broadcast.
pub fn binary<T: Float>(
    a: &[T],
    ashape: &[u64],
    b: &[T],
    bshape: &[u64],
    out_shape: &[u64],
    op: impl Fn(T, T) -> T,
) -> Vec<T> {
    let rank = out_shape.len();
    let total = product(out_shape);
    let mut out = Vec::with_capacity(total);

    // Right-aligned strides; broadcast (extent-1 or missing) dims stride 0.
    let effective = |shape: &[u64]| -> Vec<usize> {
        let strides = row_major_strides(shape);
        let offset = rank - shape.len();
        (0..rank)
            .map(|d| {
                if d < offset || (shape[d - offset] == 1 && out_shape[d] != 1) {
                    0
                } else {
                    strides[d - offset] as usize
                }
            })
            .collect()
    };
    let sa = effective(ashape);
    let sb = effective(bshape);

    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for _ in 0..total {
        out.push(op(a[oa], b[ob]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] as usize {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d] as usize;
            ob -= sb[d] * out_shape[d] as usize;
        }
    }
    out
}

pub fn relu<T: Float>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Tanh-approximated gelu: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu<T: Float>(x: &[T]) -> Vec<T> {
    let half = T::from(0.5).unwrap();
    let c = T::from(0.797_884_560_802_865_4).unwrap();
    let k = T::from(0.044_715).unwrap();
    x.iter()
        .map(|&v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()))
        .collect()
}

pub fn exp<T: Float>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.exp()).collect()
}

/// Numerically stable softmax along `dim`.
pub fn softmax<T: Float>(x: &[T], shape: &[u64], dim: usize) -> Vec<T> {
    let (outer, axis, inner) = axis_split(shape, dim);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis * inner + i;
            let mut max = x[base];
            for a in 1..axis {
                let v = x[base + a * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for a in 0..axis {
                let e = (x[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                sum = sum + e;
            }
            for a in 0..axis {
                out[base + a * inner] = out[base + a * inner] / sum;
            }
        }
    }
    out
}

/// Layer normalization over the trailing `norm_size` elements of each group.
pub fn layernorm<T: Float>(x: &[T], norm_size: usize, eps: T) -> Vec<T> {
    let groups = x.len() / norm_size;
    let size_t = T::from(norm_size).unwrap();
    let mut out = vec![T::zero(); x.len()];
    for g in 0..groups {
        let lane = &x[g * norm_size..(g + 1) * norm_size];
        let mut sum = T::zero();
        for &v in lane {
            sum = sum + v;
        }
        let mean = sum / size_t;
        let mut var = T::zero();
        for &v in lane {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / size_t;
        let denom = (var + eps).sqrt();
        for (i, &v) in lane.iter().enumerate() {
            out[g * norm_size + i] = (v - mean) / denom;
        }
    }
    out
}

#[derive(Clone, Copy)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Reduce along `dim`, keeping the dimension with extent 1.
pub fn reduce<T: Float>(x: &[T], shape: &[u64], dim: usize, kind: Reduction) -> (Vec<T>, Vec<u64>) {
    let (outer, axis, inner) = axis_split(shape, dim);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis * inner + i;
            let mut acc = match kind {
                Reduction::Max => x[base],
                _ => T::zero(),
            };
            let start = matches!(kind, Reduction::Max) as usize;
            for a in start..axis {
                let v = x[base + a * inner];
                acc = match kind {
                    Reduction::Sum | Reduction::Mean => acc + v,
                    Reduction::Max => {
                        if v > acc {
                            v
                        } else {
                            acc
                        }
                    }
                };
            }
            if matches!(kind, Reduction::Mean) {
                acc = acc / T::from(axis).unwrap();
            }
            out[o * inner + i] = acc;
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[dim] = 1;
    (out, out_shape)
}

pub fn transpose<T: Float>(x: &[T], shape: &[u64], perm: &[usize]) -> (Vec<T>, Vec<u64>) {
    let rank = shape.len();
    let out_shape: Vec<u64> = perm.iter().map(|&d| shape[d]).collect();
    let in_strides = row_major_strides(shape);
    let total = product(shape);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut in_offset = 0usize;
    // Odometer over the output index; corresponding input stride per digit.
    let digit_stride: Vec<usize> = perm.iter().map(|&d| in_strides[d] as usize).collect();
    for _ in 0..total {
        out.push(x[in_offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            in_offset += digit_stride[d];
            if idx[d] < out_shape[d] as usize {
                break;
            }
            idx[d] = 0;
            in_offset -= digit_stride[d] * out_shape[d] as usize;
        }
    }
    (out, out_shape)
}

pub fn concat<T: Float>(parts: &[(&[T], &[u64])], dim: usize) -> (Vec<T>, Vec<u64>) {
    let first_shape = parts[0].1;
    let mut out_shape = first_shape.to_vec();
    out_shape[dim] = parts.iter().map(|(_, s)| s[dim]).sum();
    let outer = first_shape[..dim].iter().product::<u64>() as usize;
    let inner = first_shape[dim + 1..].iter().product::<u64>() as usize;
    let mut out = Vec::with_capacity(product(&out_shape));
    for o in 0..outer {
        for (data, shape) in parts {
            let axis = shape[dim] as usize;
            let base = o * axis * inner;
            out.extend_from_slice(&data[base..base + axis * inner]);
        }
    }
    (out, out_shape)
}

/// Copy of the sub-block `[start, start+len)` per dimension.
pub fn slice<T: Float>(x: &[T], shape: &[u64], ranges: &[(u64, u64)]) -> (Vec<T>, Vec<u64>) {
    let rank = shape.len();
    let out_shape: Vec<u64> = ranges.iter().map(|&(s, e)| e - s).collect();
    let in_strides = row_major_strides(shape);
    let total = product(&out_shape);
    let mut out = Vec::with_capacity(total);
    let base: usize = ranges
        .iter()
        .enumerate()
        .map(|(d, &(s, _))| s as usize * in_strides[d] as usize)
        .sum();
    let mut idx = vec![0usize; rank];
    let mut offset = base;
    for _ in 0..total {
        out.push(x[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += in_strides[d] as usize;
            if idx[d] < out_shape[d] as usize {
                break;
            }
            idx[d] = 0;
            offset -= in_strides[d] as usize * out_shape[d] as usize;
        }
    }
    (out, out_shape)
}

/// Writes `src` (shaped `src_shape`) into `dst` at `offset` along `dim`.
pub fn write_slice<T: Float>(
    dst: &mut [T],
    dst_shape: &[u64],
    src: &[T],
    src_shape: &[u64],
    dim: usize,
    offset: u64,
) {
    let outer = dst_shape[..dim].iter().product::<u64>() as usize;
    let inner = dst_shape[dim + 1..].iter().product::<u64>() as usize;
    let dst_axis = dst_shape[dim] as usize;
    let src_axis = src_shape[dim] as usize;
    let off = offset as usize;
    for o in 0..outer {
        let src_base = o * src_axis * inner;
        let dst_base = (o * dst_axis + off) * inner;
        dst[dst_base..dst_base + src_axis * inner]
            .copy_from_slice(&src[src_base..src_base + src_axis * inner]);
    }
}
