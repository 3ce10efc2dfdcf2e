//! Inner-loop numeric kernels.
//!
//! All matrix products are accumulate-into (`C += ...`) over row-major
//! slices. Loop orders are chosen so the innermost loop is a contiguous
//! axpy/dot that LLVM vectorizes without reassociating float adds — results
//! stay bit-identical across batch sizes and optimization levels.

use crate::scalar::Scalar;

/// y += a * x
#[inline]
pub fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // Four independent lanes so the reduction pipelines; lane order is fixed,
    // so the result is deterministic.
    let mut s0 = F::zero();
    let mut s1 = F::zero();
    let mut s2 = F::zero();
    let mut s3 = F::zero();
    let mut chunks = a.chunks_exact(4).zip(b.chunks_exact(4));
    for (ca, cb) in &mut chunks {
        s0 += ca[0] * cb[0];
        s1 += ca[1] * cb[1];
        s2 += ca[2] * cb[2];
        s3 += ca[3] * cb[3];
    }
    let rem = a.len() - a.len() % 4;
    let mut tail = F::zero();
    for (&xa, &xb) in a[rem..].iter().zip(&b[rem..]) {
        tail += xa * xb;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// C[m,n] += A[m,k] · B[k,n]
pub fn matmul_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            axpy(crow, av, &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// C[m,n] += Aᵀ · B with A stored [k,m], B stored [k,n]
pub fn matmul_at_b_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            axpy(&mut c[i * n..(i + 1) * n], av, brow);
        }
    }
}

/// C[m,n] += A · Bᵀ with A stored [m,k], B stored [n,k]
pub fn matmul_a_bt_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cij) in crow.iter_mut().enumerate() {
            *cij += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}
