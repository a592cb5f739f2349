//! Row-major matrix multiply, `C (+)= A · B`, with either operand optionally
//! transposed.
//!
//! Every output element is accumulated by fused multiply-adds,
//! `c = fma(a[p], b[p], c)`, in strictly increasing `p` order whatever the
//! register blocking, SIMD width or operand layout. Results are therefore
//! bitwise identical across the dispatch paths (the portable path uses
//! software FMA) and between `gemm_tn`/`gemm_nt` and an explicit transpose
//! followed by `gemm`.

use std::any::TypeId;

use super::{transpose_into, Scalar};

/// Strided matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

impl<T: Copy> View<'_, T> {
    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.rs + j * self.cs]
    }
}

fn check(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert_eq!(a, m * k, "lhs length");
    assert_eq!(b, k * n, "rhs length");
    assert_eq!(c, m * n, "output length");
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`; when `accumulate` is false `c` is overwritten.
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    check(m, k, n, a.len(), b.len(), c.len());
    let a = View { data: a, rs: k, cs: 1 };
    let b = View { data: b, rs: n, cs: 1 };
    dispatch(m, k, n, a, b, c, accumulate);
}

/// `c[m×n] (+)= aᵀ · b` where `a` is stored `[k×m]`.
pub fn gemm_tn<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    check(m, k, n, a.len(), b.len(), c.len());
    let a = View { data: a, rs: 1, cs: m };
    let b = View { data: b, rs: n, cs: 1 };
    dispatch(m, k, n, a, b, c, accumulate);
}

/// `c[m×n] (+)= a · bᵀ` where `b` is stored `[n×k]`.
pub fn gemm_nt<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    check(m, k, n, a.len(), b.len(), c.len());
    let a = View { data: a, rs: k, cs: 1 };
    let b = View { data: b, rs: 1, cs: k };
    dispatch(m, k, n, a, b, c, accumulate);
}

fn dispatch<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_, T>,
    b: View<'_, T>,
    c: &mut [T],
    accumulate: bool,
) {
    if !accumulate {
        c.fill(T::ZERO);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        let fma = std::arch::is_x86_feature_detected!("fma");
        let avx512 = fma && std::arch::is_x86_feature_detected!("avx512f");
        let avx2 = fma && std::arch::is_x86_feature_detected!("avx2");
        if TypeId::of::<T>() == TypeId::of::<f32>() && (avx512 || avx2) {
            let cast = |v: View<'_, T>| View {
                // SAFETY: T is f32, so the reinterpretation is an identity.
                data: unsafe { std::slice::from_raw_parts(v.data.as_ptr().cast::<f32>(), v.data.len()) },
                rs: v.rs,
                cs: v.cs,
            };
            // SAFETY: as above.
            let c = unsafe { std::slice::from_raw_parts_mut(c.as_mut_ptr().cast::<f32>(), c.len()) };
            // SAFETY: the CPU supports the enabled features.
            unsafe {
                if avx512 {
                    simd::gemm_f32_avx512(m, k, n, cast(a), cast(b), c);
                } else {
                    simd::gemm_f32_avx2(m, k, n, cast(a), cast(b), c);
                }
            }
            return;
        }
    }
    // the portable kernels want contiguous row-major operands
    let a_buf;
    let a = if a.cs == 1 {
        a.data
    } else {
        let mut t = vec![T::ZERO; m * k];
        transpose_into(a.data, k, m, &mut t);
        a_buf = t;
        &a_buf
    };
    let b_buf;
    let b = if b.cs == 1 {
        b.data
    } else {
        let mut t = vec![T::ZERO; k * n];
        transpose_into(b.data, n, k, &mut t);
        b_buf = t;
        &b_buf
    };
    #[cfg(target_arch = "x86_64")]
    {
        let fma = std::arch::is_x86_feature_detected!("fma");
        if fma && std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports the enabled features.
            unsafe { gemm_avx512(m, k, n, a, b, c) };
            return;
        }
        if fma && std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            unsafe { gemm_avx2(m, k, n, a, b, c) };
            return;
        }
    }
    blocked::<T, 4, 8>(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn gemm_avx512<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    blocked::<T, 6, 16>(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx2<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    blocked::<T, 4, 8>(m, k, n, a, b, c);
}

#[inline(always)]
fn blocked<T: Scalar, const MR: usize, const NR: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let (av, bv) = (View { data: a, rs: k, cs: 1 }, View { data: b, rs: n, cs: 1 });
    let mut j0 = 0;
    while j0 < n {
        let nw = NR.min(n - j0);
        let mut i0 = 0;
        while i0 < m {
            let mh = MR.min(m - i0);
            if mh == MR && nw == NR {
                micro::<T, MR, NR>(k, n, a, b, c, i0, j0);
            } else {
                edge(k, n, av, bv, c, (i0, mh), (j0, nw));
            }
            i0 += MR;
        }
        j0 += NR;
    }
}

#[inline(always)]
fn micro<T: Scalar, const MR: usize, const NR: usize>(
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    i0: usize,
    j0: usize,
) {
    let mut acc = [[T::ZERO; NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i0 + r) * n + j0..][..NR]);
    }
    let a_rows: [&[T]; MR] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
    for p in 0..k {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        for r in 0..MR {
            let av = a_rows[r][p];
            let row = &mut acc[r];
            for q in 0..NR {
                row[q] = av.mul_add(brow[q], row[q]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..][..NR].copy_from_slice(row);
    }
}

/// Scalar kernel for the block `rows × cols` of `c`.
#[inline(always)]
fn edge<T: Scalar>(
    k: usize,
    n: usize,
    a: View<'_, T>,
    b: View<'_, T>,
    c: &mut [T],
    (i0, mh): (usize, usize),
    (j0, nw): (usize, usize),
) {
    for i in i0..i0 + mh {
        let crow = &mut c[i * n + j0..i * n + j0 + nw];
        for p in 0..k {
            let av = a.at(i, p);
            for (q, cv) in crow.iter_mut().enumerate() {
                *cv = av.mul_add(b.at(p, j0 + q), *cv);
            }
        }
    }
}

/// Explicit f32 kernels: B is packed into contiguous `k × NR` panels and a
/// 6-row block of C is held in vector registers.
#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::View;

    const MR: usize = 6;

    fn pack(b: View<'_, f32>, k: usize, j0: usize, nr: usize, panel: &mut [f32]) {
        if b.cs == 1 {
            for p in 0..k {
                let src = &b.data[p * b.rs + j0..p * b.rs + j0 + nr];
                panel[p * nr..p * nr + nr].copy_from_slice(src);
            }
        } else {
            // transposed operand: read each source row contiguously
            for q in 0..nr {
                let col = (j0 + q) * b.cs;
                for p in 0..k {
                    panel[p * nr + q] = b.data[col + p * b.rs];
                }
            }
        }
    }

    macro_rules! kernel {
        ($name:ident, $feat:literal, $vec:ty, $lanes:expr, $load:ident, $store:ident,
         $set1:ident, $fma:ident) => {
            #[target_feature(enable = $feat)]
            pub(super) unsafe fn $name(
                m: usize,
                k: usize,
                n: usize,
                a: View<'_, f32>,
                b: View<'_, f32>,
                c: &mut [f32],
            ) {
                const NR: usize = 2 * $lanes;
                let mut panel = vec![0.0f32; k * NR];
                let full_cols = n / NR * NR;
                let full_rows = m / MR * MR;
                assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs);
                let mut j0 = 0;
                while j0 < full_cols {
                    pack(b, k, j0, NR, &mut panel);
                    let mut i0 = 0;
                    while i0 < full_rows {
                        let cp = c.as_mut_ptr().add(i0 * n + j0);
                        let ap = a.data.as_ptr().add(i0 * a.rs);
                        let mut acc: [[$vec; 2]; MR] = [[$set1(0.0); 2]; MR];
                        for r in 0..MR {
                            acc[r][0] = $load(cp.add(r * n));
                            acc[r][1] = $load(cp.add(r * n + $lanes));
                        }
                        let bp = panel.as_ptr();
                        for p in 0..k {
                            let b0 = $load(bp.add(p * NR));
                            let b1 = $load(bp.add(p * NR + $lanes));
                            let arow = ap.add(p * a.cs);
                            for r in 0..MR {
                                let av = $set1(*arow.add(r * a.rs));
                                acc[r][0] = $fma(av, b0, acc[r][0]);
                                acc[r][1] = $fma(av, b1, acc[r][1]);
                            }
                        }
                        for r in 0..MR {
                            $store(cp.add(r * n), acc[r][0]);
                            $store(cp.add(r * n + $lanes), acc[r][1]);
                        }
                        i0 += MR;
                    }
                    j0 += NR;
                }
                // ragged right columns and bottom rows
                if full_cols < n {
                    super::edge(k, n, a, b, c, (0, m), (full_cols, n - full_cols));
                }
                if full_rows < m && full_cols > 0 {
                    super::edge(k, n, a, b, c, (full_rows, m - full_rows), (0, full_cols));
                }
            }
        };
    }

    kernel!(gemm_f32_avx512, "avx512f,fma", __m512, 16, _mm512_loadu_ps, _mm512_storeu_ps,
        _mm512_set1_ps, _mm512_fmadd_ps);
    kernel!(gemm_f32_avx2, "avx2,fma", __m256, 8, _mm256_loadu_ps, _mm256_storeu_ps,
        _mm256_set1_ps, _mm256_fmadd_ps);
}
