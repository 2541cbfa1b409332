//! Raw slice kernels shared by the forward and backward rules.
//!
//! Every kernel accumulates into its output buffer and visits elements in a
//! fixed order, so results are bit-reproducible for identical inputs.

use super::dense::Real;

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[M,N] += a[M,K] · b[K,N]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            axpy(av, b_row, out_row);
        }
    }
}

/// `out[M,N] += a[M,K] · b[N,K]ᵀ`
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, out);
}

/// `out[M,N] += a[K,M]ᵀ · b[K,N]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&av, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            axpy(av, b_row, out_row);
        }
    }
}

/// `[R,C] -> [C,R]`
pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Geometry of a channels-last 3D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv3dGeom {
    pub batch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl Conv3dGeom {
    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Calls `f(out_pos, tap, in_pos)` for every in-bounds (output, kernel tap) pair.
    /// Positions are flat spatial indices including the batch.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d1, d2, d3] = self.input;
        let [o1, o2, o3] = self.output;
        let [k1, k2, k3] = self.kernel;
        let [p1, p2, p3] = self.pad;
        for n in 0..self.batch {
            for a1 in 0..o1 {
                for a2 in 0..o2 {
                    for a3 in 0..o3 {
                        let out_pos = ((n * o1 + a1) * o2 + a2) * o3 + a3;
                        for t1 in 0..k1 {
                            let i1 = a1 + t1;
                            if i1 < p1 || i1 - p1 >= d1 {
                                continue;
                            }
                            let i1 = i1 - p1;
                            for t2 in 0..k2 {
                                let i2 = a2 + t2;
                                if i2 < p2 || i2 - p2 >= d2 {
                                    continue;
                                }
                                let i2 = i2 - p2;
                                for t3 in 0..k3 {
                                    let i3 = a3 + t3;
                                    if i3 < p3 || i3 - p3 >= d3 {
                                        continue;
                                    }
                                    let i3 = i3 - p3;
                                    let tap = (t1 * k2 + t2) * k3 + t3;
                                    let in_pos = ((n * d1 + i1) * d2 + i2) * d3 + i3;
                                    f(out_pos, tap, in_pos);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward<T: Real>(g: &Conv3dGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (ci, co) = (g.cin, g.cout);
    for row in out.chunks_exact_mut(co) {
        row.copy_from_slice(b);
    }
    g.for_each_tap(|op, tap, ip| {
        let xin = &x[ip * ci..(ip + 1) * ci];
        let wk = &w[tap * ci * co..(tap + 1) * ci * co];
        let orow = &mut out[op * co..(op + 1) * co];
        for (&xv, wrow) in xin.iter().zip(wk.chunks_exact(co)) {
            axpy(xv, wrow, orow);
        }
    });
}

/// Accumulates input, weight and bias gradients.
pub(crate) fn conv3d_backward<T: Real>(
    g: &Conv3dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ci, co) = (g.cin, g.cout);
    if let Some(db) = db {
        for row in dy.chunks_exact(co) {
            axpy(T::one(), row, db);
        }
    }
    if let Some(dx) = dx {
        // per-tap transposed weights [taps, Co, Ci]
        let mut wt = Vec::with_capacity(w.len());
        for tap in w.chunks_exact(ci * co) {
            wt.extend(transpose(ci, co, tap));
        }
        g.for_each_tap(|op, tap, ip| {
            let grow = &dy[op * co..(op + 1) * co];
            let wk = &wt[tap * ci * co..(tap + 1) * ci * co];
            let xrow = &mut dx[ip * ci..(ip + 1) * ci];
            for (&gv, wrow) in grow.iter().zip(wk.chunks_exact(ci)) {
                axpy(gv, wrow, xrow);
            }
        });
    }
    if let Some(dw) = dw {
        debug_assert_eq!(dw.len(), g.taps() * ci * co);
        g.for_each_tap(|op, tap, ip| {
            let grow = &dy[op * co..(op + 1) * co];
            let xin = &x[ip * ci..(ip + 1) * ci];
            let wk = &mut dw[tap * ci * co..(tap + 1) * ci * co];
            for (&xv, wrow) in xin.iter().zip(wk.chunks_exact_mut(co)) {
                axpy(xv, grow, wrow);
            }
        });
    }
}

/// Depthwise "same" convolution along the token axis of `[N,T,E]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_tokens_forward<T: Real>(
    n: usize,
    t: usize,
    e: usize,
    k: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    let half = k / 2;
    for s in 0..n {
        let xs = &x[s * t * e..(s + 1) * t * e];
        let os = &mut out[s * t * e..(s + 1) * t * e];
        for (ti, orow) in os.chunks_exact_mut(e).enumerate() {
            orow.copy_from_slice(b);
            for (j, wrow) in w.chunks_exact(e).enumerate() {
                let src = ti + j;
                if src < half || src - half >= t {
                    continue;
                }
                let xrow = &xs[(src - half) * e..(src - half + 1) * e];
                for ((o, &xv), &wv) in orow.iter_mut().zip(xrow).zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_tokens_backward<T: Real>(
    n: usize,
    t: usize,
    e: usize,
    k: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let half = k / 2;
    if let Some(db) = db {
        for row in dy.chunks_exact(e) {
            axpy(T::one(), row, db);
        }
    }
    for s in 0..n {
        for ti in 0..t {
            let grow = &dy[(s * t + ti) * e..(s * t + ti + 1) * e];
            for j in 0..k {
                let src = ti + j;
                if src < half || src - half >= t {
                    continue;
                }
                let xi = (s * t + src - half) * e;
                let wrow = &w[j * e..(j + 1) * e];
                if let Some(dx) = dx.as_deref_mut() {
                    for ((d, &gv), &wv) in dx[xi..xi + e].iter_mut().zip(grow).zip(wrow) {
                        *d += gv * wv;
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let xrow = &x[xi..xi + e];
                    for ((d, &gv), &xv) in dw[j * e..(j + 1) * e].iter_mut().zip(grow).zip(xrow) {
                        *d += gv * xv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 2.0).collect(); // 3x4
        let mut nn = vec![0.0; 8];
        gemm_nn(2, 3, 4, &a, &b, &mut nn);
        let bt = transpose(3, 4, &b);
        let mut nt = vec![0.0; 8];
        gemm_nt(2, 3, 4, &a, &bt, &mut nt);
        let at = transpose(2, 3, &a);
        let mut tn = vec![0.0; 8];
        gemm_tn(2, 3, 4, &at, &b, &mut tn);
        assert_eq!(nn, nt);
        assert_eq!(nn, tn);
        assert_eq!(nn[0], 1.0 * -2.0 + 2.0 * 0.0 + 3.0 * 2.0);
    }
}
