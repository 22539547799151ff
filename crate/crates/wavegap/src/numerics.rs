//! Shared numerical kernels: sparse symmetric matrices, banded Cholesky,
//! subspace iteration for generalized symmetric eigenproblems, a small dense
//! Hermitian eigensolver, and power-law (Richardson) extrapolation.

use num_complex::Complex64;

/// Compressed sparse row matrix with `f64` entries.
///
/// Only what the discretizations need: assembly from triplets and matvec.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build an `n` x `n` matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        let mut fill = counts.clone();
        for &(r, c, v) in triplets {
            let k = fill[r];
            cols[k] = c;
            vals[k] = v;
            fill[r] += 1;
        }
        // sort each row by column and merge duplicates
        let mut row_ptr = vec![0usize; n + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        for r in 0..n {
            let lo = counts[r];
            let hi = counts[r + 1];
            let mut entries: Vec<(usize, f64)> =
                (lo..hi).map(|k| (cols[k], vals[k])).collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (c, v) in entries {
                if let Some(last) = out_cols.last() {
                    if *last == c && out_cols.len() > row_ptr[r] {
                        *out_vals.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_cols.push(c);
                out_vals.push(v);
            }
            row_ptr[r + 1] = out_cols.len();
        }
        CsrMatrix { n, row_ptr, cols: out_cols, vals: out_vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Half bandwidth: max |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0usize;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                b = b.max(r.abs_diff(self.cols[k]));
            }
        }
        b
    }
}

/// Reverse Cuthill-McKee ordering computed from an adjacency list.
/// Returns `perm` such that new index `i` holds old node `perm[i]`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree = |i: usize| adj[i].len();
    // process each connected component from a minimum-degree seed
    loop {
        let seed = match (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree(i)) {
            Some(s) => s,
            None => break,
        };
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(seed);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> =
                adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_unstable_by_key(|&v| degree(v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric positive definite banded matrix factored as L * L^T.
///
/// Lower band stored column-wise: entry (i, j) with 0 <= i - j <= b lives at
/// `band[j * (b + 1) + (i - j)]`.
pub struct BandedCholesky {
    n: usize,
    b: usize,
    band: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

impl BandedCholesky {
    /// Factor a symmetric matrix given in CSR form (both triangles present).
    pub fn factor(a: &CsrMatrix) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let b = a.bandwidth();
        let w = b + 1;
        let mut band = vec![0.0; n * w];
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.cols[k];
                if c <= r {
                    band[c * w + (r - c)] = a.vals[k];
                }
            }
        }
        for j in 0..n {
            for k in j.saturating_sub(b)..j {
                let ljk = band[k * w + (j - k)];
                if ljk == 0.0 {
                    continue;
                }
                let imax = (k + b).min(n - 1);
                for i in j..=imax {
                    band[j * w + (i - j)] -= band[k * w + (i - k)] * ljk;
                }
            }
            let d = band[j * w];
            if d <= 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite { row: j, pivot: d });
            }
            let ds = d.sqrt();
            let imax = (j + b).min(n - 1);
            for i in j..=imax {
                band[j * w + (i - j)] /= ds;
            }
        }
        Ok(BandedCholesky { n, b, band })
    }

    /// Solve A x = rhs in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        // forward: L y = rhs
        for j in 0..n {
            let xj = x[j] / self.band[j * w];
            x[j] = xj;
            let imax = (j + b).min(n - 1);
            for i in (j + 1)..=imax {
                x[i] -= self.band[j * w + (i - j)] * xj;
            }
        }
        // backward: L^T x = y
        for j in (0..n).rev() {
            let mut acc = x[j];
            let imax = (j + b).min(n - 1);
            for i in (j + 1)..=imax {
                acc -= self.band[j * w + (i - j)] * x[i];
            }
            x[j] = acc / self.band[j * w];
        }
    }
}

/// Small deterministic RNG (xorshift64*) for seeding iteration subspaces.
pub(crate) struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        // uniform in [-1, 1)
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

/// Result of [`lowest_eigenpairs`].
pub struct EigenResult {
    pub values: Vec<f64>,
    /// Eigenvectors, B-orthonormal, one `Vec<f64>` per eigenvalue.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Relative residuals ||A x - lambda B x|| / ((1 + |lambda|) ||B x||).
    pub residuals: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EigenError {
    #[error("subspace iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error(transparent)]
    Factorization(#[from] NotPositiveDefinite),
}

/// Lowest `k` eigenpairs of the generalized symmetric problem A x = lambda B x,
/// with B positive definite, by block inverse iteration on the shifted operator
/// A + shift * B (which must be positive definite).
pub fn lowest_eigenpairs(
    a: &CsrMatrix,
    b_mat: &CsrMatrix,
    shift: f64,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<EigenResult, EigenError> {
    let n = a.n;
    assert!(k >= 1 && k < n);
    // shifted operator for the inner solves
    let shifted = {
        let mut trip = Vec::with_capacity(a.vals.len() + b_mat.vals.len());
        for r in 0..n {
            for kk in a.row_ptr[r]..a.row_ptr[r + 1] {
                trip.push((r, a.cols[kk], a.vals[kk]));
            }
            for kk in b_mat.row_ptr[r]..b_mat.row_ptr[r + 1] {
                trip.push((r, b_mat.cols[kk], shift * b_mat.vals[kk]));
            }
        }
        CsrMatrix::from_triplets(n, &trip)
    };
    let chol = BandedCholesky::factor(&shifted)?;

    let p = (k + (k / 2).max(3)).min(n - 1); // guard vectors
    let mut rng = SplitMix64(0x5eed_1234_abcd_0001);
    let mut xs: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.next_f64()).collect())
        .collect();

    let bdot = |u: &[f64], bv: &[f64]| -> f64 {
        u.iter().zip(bv).map(|(a, b)| a * b).sum()
    };

    let mut values = vec![0.0; p];
    let mut residuals = vec![f64::INFINITY; p];
    let mut last = vec![f64::INFINITY; p];
    for it in 0..max_iter {
        // Y = (A + shift B)^{-1} B X
        for x in xs.iter_mut() {
            let mut y = b_mat.matvec_alloc(x);
            chol.solve_in_place(&mut y);
            *x = y;
        }
        // B-orthonormalize (modified Gram-Schmidt, one re-pass)
        for i in 0..p {
            for _pass in 0..2 {
                for j in 0..i {
                    let bxj = b_mat.matvec_alloc(&xs[j]);
                    let c = bdot(&xs[i], &bxj);
                    let (head, tail) = xs.split_at_mut(i);
                    let xi = &mut tail[0];
                    for (v, w) in xi.iter_mut().zip(head[j].iter()) {
                        *v -= c * w;
                    }
                }
            }
            let bxi = b_mat.matvec_alloc(&xs[i]);
            let nrm = bdot(&xs[i], &bxi).sqrt();
            if nrm < 1e-300 {
                // degenerate direction, reseed
                for v in xs[i].iter_mut() {
                    *v = rng.next_f64();
                }
            } else {
                for v in xs[i].iter_mut() {
                    *v /= nrm;
                }
            }
        }
        // Rayleigh-Ritz
        let axs: Vec<Vec<f64>> = xs.iter().map(|x| a.matvec_alloc(x)).collect();
        let mut t = nalgebra::DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = bdot(&xs[i], &axs[j]);
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(t);
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let mut new_xs = vec![vec![0.0; n]; p];
        for (slot, &col) in idx.iter().enumerate() {
            for i in 0..p {
                let c = eig.eigenvectors[(i, col)];
                if c != 0.0 {
                    for (nv, xv) in new_xs[slot].iter_mut().zip(xs[i].iter()) {
                        *nv += c * xv;
                    }
                }
            }
            values[slot] = eig.eigenvalues[idx[slot]];
        }
        xs = new_xs;

        // residuals for the wanted part
        let mut done = true;
        for i in 0..k {
            let ax = a.matvec_alloc(&xs[i]);
            let bx = b_mat.matvec_alloc(&xs[i]);
            let mut rn = 0.0;
            let mut bn = 0.0;
            for j in 0..n {
                let r = ax[j] - values[i] * bx[j];
                rn += r * r;
                bn += bx[j] * bx[j];
            }
            residuals[i] = rn.sqrt() / ((1.0 + values[i].abs()) * bn.sqrt().max(1e-300));
            let stagnant = (values[i] - last[i]).abs() <= 1e-13 * (1.0 + values[i].abs());
            if residuals[i] > tol && !stagnant {
                done = false;
            }
        }
        last.copy_from_slice(&values);
        if done && it >= 2 {
            xs.truncate(k);
            values.truncate(k);
            residuals.truncate(k);
            return Ok(EigenResult { values, vectors: xs, iterations: it + 1, residuals });
        }
    }
    Err(EigenError::NoConvergence(max_iter))
}

/// Dense Hermitian matrix eigensolver (cyclic Jacobi). Intended for the small
/// projected matrices that show up in Rayleigh-Ritz steps; `n` up to a few dozen.
pub fn hermitian_eigen(h: &[Complex64], n: usize) -> (Vec<f64>, Vec<Complex64>) {
    assert_eq!(h.len(), n * n);
    let mut a = h.to_vec();
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let off = |a: &[Complex64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[p * n + q].norm_sqr();
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| a[i * n + i].re.abs()).fold(1e-300, f64::max);
    for _sweep in 0..60 {
        if off(&a).sqrt() <= 1e-15 * scale * (n as f64) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let beta = apq.norm();
                if beta <= 1e-300 {
                    continue;
                }
                let u = apq / beta; // phase
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let tau = (aqq - app) / (2.0 * beta);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J = [[c, s u], [-s conj(u), c]]; A <- J^H A J, V <- V J
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = aip * c - aiq * s * u.conj();
                    a[i * n + q] = aip * s * u + aiq * c;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = apj * c - aqj * s * u;
                    a[q * n + j] = apj * s * u.conj() + aqj * c;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = vip * c - viq * s * u.conj();
                    v[i * n + q] = vip * s * u + viq * c;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[i * n + i].re, i)).collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vectors = vec![Complex64::new(0.0, 0.0); n * n];
    for (slot, &(_, col)) in pairs.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + slot] = v[i * n + col];
        }
    }
    (values, vectors)
}

/// Power-law fit lambda(h) = lambda* + C h^p through three refinement levels.
///
/// Returns the extrapolated limit and the fitted exponent. Falls back to a
/// second-order two-point extrapolation when the three-point fit is not
/// usable (non-monotone differences).
pub fn richardson_extrapolate(h: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    // order so that h[0] > h[1] > h[2]
    let mut pairs = [(h[0], y[0]), (h[1], y[1]), (h[2], y[2])];
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (h1, y1) = pairs[0];
    let (h2, y2) = pairs[1];
    let (h3, y3) = pairs[2];
    let d12 = y1 - y2;
    let d23 = y2 - y3;
    let two_point = |p: f64| -> f64 {
        let r = h2 / h3;
        y3 + (y3 - y2) / (r.powf(p) - 1.0)
    };
    if d12 == 0.0 && d23 == 0.0 {
        return (y3, 2.0);
    }
    if d12 * d23 <= 0.0 || d23.abs() >= d12.abs() {
        // non-monotone or non-contracting: assume second order
        return (two_point(2.0), 2.0);
    }
    // solve (h1^p - h2^p) / (h2^p - h3^p) = d12/d23 for p by bisection
    let target = d12 / d23;
    let g = |p: f64| (h1.powf(p) - h2.powf(p)) / (h2.powf(p) - h3.powf(p)) - target;
    let (mut lo, mut hi) = (0.2, 8.0);
    if g(lo) * g(hi) > 0.0 {
        return (two_point(2.0), 2.0);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    (two_point(p), p)
}

/// Least-squares slope of y against x through the origin, with rms residual.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let s = sxy / sxx;
    let res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - s * a;
            r * r
        })
        .sum::<f64>()
        / x.len() as f64;
    (s, res.sqrt())
}

/// Ordinary least-squares line y = a + b x; returns (a, b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let a = (sy - b * sx) / n;
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        let h = 1.0 / (n as f64 + 1.0);
        for i in 0..n {
            t.push((i, i, 2.0 / (h * h)));
            if i > 0 {
                t.push((i, i - 1, -1.0 / (h * h)));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / (h * h)));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    fn identity(n: usize) -> CsrMatrix {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn banded_cholesky_solves() {
        let a = laplacian_1d(40);
        let chol = BandedCholesky::factor(&a).unwrap();
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut rhs = a.matvec_alloc(&x_true);
        chol.solve_in_place(&mut rhs);
        for (a, b) in rhs.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn subspace_iteration_dirichlet_laplacian() {
        // 1D Dirichlet Laplacian eigenvalues: (2/h^2)(1 - cos(k pi h))
        let n = 60;
        let h = 1.0 / (n as f64 + 1.0);
        let a = laplacian_1d(n);
        let b = identity(n);
        let res = lowest_eigenpairs(&a, &b, 1.0, 3, 1e-10, 300).unwrap();
        for k in 1..=3 {
            let exact = 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h).cos());
            assert!(
                (res.values[k - 1] - exact).abs() < 1e-6 * exact,
                "k={k}: {} vs {}",
                res.values[k - 1],
                exact
            );
        }
    }

    #[test]
    fn hermitian_jacobi_matches_known_values() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3
        let h = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(2.0, 0.0),
        ];
        let (vals, vecs) = hermitian_eigen(&h, 2);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // residual check
        for k in 0..2 {
            let x = [vecs[k], vecs[2 + k]];
            let hx = [h[0] * x[0] + h[1] * x[1], h[2] * x[0] + h[3] * x[1]];
            for i in 0..2 {
                assert!((hx[i] - x[i] * vals[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_jacobi_random_eigenpairs() {
        let mut rng = SplitMix64(7);
        for trial in 0..30 {
            let n = 3 + trial % 7;
            let mut h = vec![Complex64::new(0.0, 0.0); n * n];
            for i in 0..n {
                h[i * n + i] = Complex64::new(10.0 * rng.next_f64(), 0.0);
                for j in (i + 1)..n {
                    let z = Complex64::new(rng.next_f64(), rng.next_f64());
                    h[i * n + j] = z;
                    h[j * n + i] = z.conj();
                }
            }
            let (vals, vecs) = hermitian_eigen(&h, n);
            let trace: f64 = (0..n).map(|i| h[i * n + i].re).sum();
            assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-10);
            // ascending
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-14);
            }
            // eigen residuals per pair
            for k in 0..n {
                for i in 0..n {
                    let hv: Complex64 =
                        (0..n).map(|j| h[i * n + j] * vecs[j * n + k]).sum();
                    let r = hv - vecs[i * n + k] * vals[k];
                    assert!(r.norm() < 1e-10, "n={n} k={k}: residual {}", r.norm());
                }
            }
            // columns orthonormal
            for a in 0..n {
                for b in 0..n {
                    let dot: Complex64 = (0..n)
                        .map(|i| vecs[i * n + a].conj() * vecs[i * n + b])
                        .sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn richardson_recovers_power_law() {
        let f = |h: f64| 5.0 + 3.0 * h.powf(1.7);
        let (lim, p) = richardson_extrapolate([0.2, 0.1, 0.05], [f(0.2), f(0.1), f(0.05)]);
        assert!((lim - 5.0).abs() < 1e-8);
        assert!((p - 1.7).abs() < 1e-6);
    }

    #[test]
    fn rcm_reduces_bandwidth() {
        // path graph with scrambled labels
        let n = 50;
        let relabel: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n - 1 {
            let (a, b) = (relabel[i], relabel[i + 1]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0usize;
        for u in 0..n {
            for &v in &adj[u] {
                bw = bw.max(inv[u].abs_diff(inv[v]));
            }
        }
        assert!(bw <= 2, "bandwidth {bw}");
    }
}
