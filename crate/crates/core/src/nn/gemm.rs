//! `C = init + A W^T` for small weight matrices, with `W` packed once into
//! 16-column panels. Every output element is a sequential fused multiply-add
//! chain over `k`, so its value does not depend on which row tile it lands in.

/// Column width of one packed panel.
const NR: usize = 16;
/// Rows per register tile.
const MR: usize = 12;

/// `W` (`n x k`, row-major) repacked as `ceil(n / 16)` panels of `k x 16`.
#[derive(Clone, Debug)]
pub struct PackedWeights {
    pub n: usize,
    pub k: usize,
    panels: Vec<f64>,
}

impl PackedWeights {
    pub fn pack(w: &[f64], n: usize, k: usize) -> Self {
        assert_eq!(w.len(), n * k);
        let np = n.div_ceil(NR);
        let mut panels = vec![0.0; np * k * NR];
        for j in 0..n {
            let (p, jj) = (j / NR, j % NR);
            for kk in 0..k {
                panels[(p * k + kk) * NR + jj] = w[j * k + kk];
            }
        }
        PackedWeights { n, k, panels }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Zero,
    /// Same bias row for every output row.
    Bias(&'a [f64]),
    /// Accumulate into the existing contents of `C`.
    Accumulate,
    /// Accumulate into `C + bias`.
    AccumulateBias(&'a [f64]),
}

/// `C[m x n] = init + A[m x k] W^T`, `A` and `C` row-major with the given strides.
pub fn gemm_nt(m: usize, a: &[f64], lda: usize, w: &PackedWeights, init: Init, c: &mut [f64], ldc: usize) {
    let (n, k) = (w.n, w.k);
    if m == 0 || n == 0 {
        return;
    }
    assert!(lda >= k && ldc >= n);
    assert!(a.len() >= (m - 1) * lda + k);
    assert!(c.len() >= (m - 1) * ldc + n);
    if let Init::Bias(b) | Init::AccumulateBias(b) = init {
        assert_eq!(b.len(), n);
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature detected; bounds asserted above.
            unsafe { avx512::gemm(m, a, lda, w, init, c, ldc) };
            return;
        }
    }
    portable(m, a, lda, w, init, c, ldc)
}

fn portable(m: usize, a: &[f64], lda: usize, w: &PackedWeights, init: Init, c: &mut [f64], ldc: usize) {
    let (n, k) = (w.n, w.k);
    for i in 0..m {
        for j in 0..n {
            let mut acc = match init {
                Init::Zero => 0.0,
                Init::Bias(b) => b[j],
                Init::Accumulate => c[i * ldc + j],
                Init::AccumulateBias(b) => c[i * ldc + j] + b[j],
            };
            let (p, jj) = (j / NR, j % NR);
            for kk in 0..k {
                acc = a[i * lda + kk].mul_add(w.panels[(p * k + kk) * NR + jj], acc);
            }
            c[i * ldc + j] = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{Init, PackedWeights, MR, NR};
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gemm(m: usize, a: &[f64], lda: usize, w: &PackedWeights, init: Init, c: &mut [f64], ldc: usize) {
        let (n, k) = (w.n, w.k);
        let np = n.div_ceil(NR);
        let accumulate = matches!(init, Init::Accumulate | Init::AccumulateBias(_));
        // Row tiles outer so each A tile stays in L1 while every panel passes over it.
        let mut i = 0;
        while i < m {
            let rows = (m - i).min(MR);
            let ap = a.as_ptr().add(i * lda);
            for p in 0..np {
                let j0 = p * NR;
                let width = (n - j0).min(NR);
                let mask_lo: __mmask8 = if width >= 8 { 0xff } else { ((1u32 << width) - 1) as u8 };
                let mask_hi: __mmask8 = if width <= 8 { 0 } else { ((1u32 << (width - 8)) - 1) as u8 };
                let panel = w.panels.as_ptr().add(p * k * NR);
                let bias = match init {
                    Init::Bias(b) | Init::AccumulateBias(b) => Some(b.as_ptr().add(j0)),
                    _ => None,
                };
                let cp = c.as_mut_ptr().add(i * ldc + j0);
                macro_rules! dispatch {
                    ($($r:literal)*) => {
                        match rows {
                            $($r => tile::<$r>(ap, lda, panel, k, cp, ldc, bias, accumulate, mask_lo, mask_hi),)*
                            _ => unreachable!(),
                        }
                    };
                }
                dispatch!(1 2 3 4 5 6 7 8 9 10 11 12);
            }
            i += rows;
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn tile<const R: usize>(
        a: *const f64,
        lda: usize,
        panel: *const f64,
        k: usize,
        c: *mut f64,
        ldc: usize,
        bias: Option<*const f64>,
        accumulate: bool,
        mask_lo: __mmask8,
        mask_hi: __mmask8,
    ) {
        let mut lo = [_mm512_setzero_pd(); R];
        let mut hi = [_mm512_setzero_pd(); R];
        if accumulate {
            for r in 0..R {
                lo[r] = _mm512_maskz_loadu_pd(mask_lo, c.add(r * ldc));
                hi[r] = _mm512_maskz_loadu_pd(mask_hi, c.add(r * ldc + 8));
            }
        }
        if let Some(b) = bias {
            let bl = _mm512_maskz_loadu_pd(mask_lo, b);
            let bh = _mm512_maskz_loadu_pd(mask_hi, b.add(8));
            for r in 0..R {
                lo[r] = _mm512_add_pd(lo[r], bl);
                hi[r] = _mm512_add_pd(hi[r], bh);
            }
        }
        for kk in 0..k {
            let bl = _mm512_loadu_pd(panel.add(kk * NR));
            let bh = _mm512_loadu_pd(panel.add(kk * NR + 8));
            for r in 0..R {
                let x = _mm512_set1_pd(*a.add(r * lda + kk));
                lo[r] = _mm512_fmadd_pd(x, bl, lo[r]);
                hi[r] = _mm512_fmadd_pd(x, bh, hi[r]);
            }
        }
        for r in 0..R {
            _mm512_mask_storeu_pd(c.add(r * ldc), mask_lo, lo[r]);
            _mm512_mask_storeu_pd(c.add(r * ldc + 8), mask_hi, hi[r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(m: usize, k: usize, n: usize, a: &[f64], w: &[f64], init: &[f64]) -> Vec<f64> {
        let mut c = init.to_vec();
        for i in 0..m {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for kk in 0..k {
                    acc = a[i * k + kk].mul_add(w[j * k + kk], acc);
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn matches_reference_bitwise_on_odd_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (13, 5, 17), (25, 64, 64), (7, 192, 66), (30, 4, 78), (12, 3, 8), (40, 15, 12)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 31 % 97) as f64 - 48.0) / 17.0).collect();
            let w: Vec<f64> = (0..n * k).map(|i| ((i * 13 % 89) as f64 - 44.0) / 23.0).collect();
            let bias: Vec<f64> = (0..n).map(|j| j as f64 * 0.25 - 1.0).collect();
            let packed = PackedWeights::pack(&w, n, k);

            let mut c = vec![f64::NAN; m * n];
            gemm_nt(m, &a, k, &packed, Init::Zero, &mut c, n);
            assert_eq!(c, reference(m, k, n, &a, &w, &vec![0.0; m * n]), "zero {m}x{k}x{n}");

            let mut c = vec![f64::NAN; m * n];
            gemm_nt(m, &a, k, &packed, Init::Bias(&bias), &mut c, n);
            let tiled: Vec<f64> = (0..m * n).map(|i| bias[i % n]).collect();
            assert_eq!(c, reference(m, k, n, &a, &w, &tiled), "bias {m}x{k}x{n}");

            let start: Vec<f64> = (0..m * n).map(|i| (i % 7) as f64).collect();
            let mut c = start.clone();
            gemm_nt(m, &a, k, &packed, Init::Accumulate, &mut c, n);
            assert_eq!(c, reference(m, k, n, &a, &w, &start), "acc {m}x{k}x{n}");

            let mut c = start.clone();
            gemm_nt(m, &a, k, &packed, Init::AccumulateBias(&bias), &mut c, n);
            let shifted: Vec<f64> = start.iter().enumerate().map(|(i, x)| x + bias[i % n]).collect();
            assert_eq!(c, reference(m, k, n, &a, &w, &shifted), "acc+bias {m}x{k}x{n}");

            let mut p = vec![0.0; m * n];
            portable(m, &a, k, &packed, Init::Accumulate, &mut p, n);
            assert_eq!(p, reference(m, k, n, &a, &w, &vec![0.0; m * n]));
        }
    }

    #[test]
    fn row_results_independent_of_position() {
        let (k, n) = (9, 20);
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let packed = PackedWeights::pack(&w, n, k);
        let row: Vec<f64> = (0..k).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut alone = vec![0.0; n];
        gemm_nt(1, &row, k, &packed, Init::Zero, &mut alone, n);
        let m = 29;
        let mut a = vec![0.5; m * k];
        a[17 * k..18 * k].copy_from_slice(&row);
        let mut c = vec![0.0; m * n];
        gemm_nt(m, &a, k, &packed, Init::Zero, &mut c, n);
        assert_eq!(&c[17 * n..18 * n], &alone[..]);
    }
}
