//! Shared numerical kernels: sparse CSR storage, Krylov solvers, power and
//! Arnoldi iterations, a scaling-and-squaring matrix exponential, and small
//! fitting helpers used by the classification heuristics.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

/// Compressed sparse row matrix with square shape.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut row_ptr = vec![0usize; n + 1];
        let mut it = triplets.iter().peekable();
        for r in 0..n {
            let start = col_idx.len();
            while let Some(&&(tr, tc, tv)) = it.peek() {
                if tr != r {
                    break;
                }
                it.next();
                if col_idx.len() > start && *col_idx.last().unwrap() == tc {
                    *values.last_mut().unwrap() += tv;
                } else {
                    col_idx.push(tc);
                    values.push(tv);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.values.len());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                trip.push((self.col_idx[k], r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.n, &mut trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    /// A + alpha * diag(d)
    pub fn add_diag(&self, alpha: f64, d: &DVector<f64>) -> CsrMatrix {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.values.len() + self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                trip.push((r, self.col_idx[k], self.values[k]));
            }
            trip.push((r, r, alpha * d[r]));
        }
        CsrMatrix::from_triplets(self.n, &mut trip)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let t = self.transpose();
        if t.col_idx != self.col_idx || t.row_ptr != self.row_ptr {
            return false;
        }
        self.values
            .iter()
            .zip(t.values.iter())
            .all(|(a, b)| (a - b).abs() <= tol * (a.abs() + b.abs() + 1.0))
    }
}

/// Outcome of an iterative linear solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradient for a symmetric positive definite CSR system.
///
/// Returns `Err` with the iteration count on breakdown (non-positive
/// curvature, i.e. the matrix is not SPD) or stagnation.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, SolveStats), usize> {
    let n = a.n;
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut r = b - a.matvec(&x);
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    let mut p = r.clone();
    let mut rs_old = r.dot(&r);
    let target = rel_tol * b_norm;
    if rs_old.sqrt() <= target {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: rs_old.sqrt() / b_norm,
            },
        ));
    }
    for it in 1..=max_iter {
        let ap = a.matvec(&p);
        let curvature = p.dot(&ap);
        if curvature <= 0.0 {
            return Err(it);
        }
        let alpha = rs_old / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.dot(&r);
        if rs_new.sqrt() <= target {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: rs_new.sqrt() / b_norm,
                },
            ));
        }
        p = &r + (rs_new / rs_old) * p;
        rs_old = rs_new;
    }
    Err(max_iter)
}

/// BiCGStab for general square CSR systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, SolveStats), usize> {
    let n = a.n;
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let r_hat = r.clone();
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    let target = rel_tol * b_norm;
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    for it in 1..=max_iter {
        let rho_new = r_hat.dot(&r);
        if rho_new.abs() < 1e-300 {
            return Err(it);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        p = &r + beta * (&p - omega * &v);
        v = a.matvec(&p);
        let denom = r_hat.dot(&v);
        if denom.abs() < 1e-300 {
            return Err(it);
        }
        alpha = rho_new / denom;
        let s = &r - alpha * &v;
        if s.norm() <= target {
            x.axpy(alpha, &p, 1.0);
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: s.norm() / b_norm,
                },
            ));
        }
        let t = a.matvec(&s);
        let tt = t.dot(&t);
        if tt < 1e-300 {
            return Err(it);
        }
        omega = t.dot(&s) / tt;
        x.axpy(alpha, &p, 1.0);
        x.axpy(omega, &s, 1.0);
        r = &s - omega * &t;
        rho = rho_new;
        if r.norm() <= target {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: r.norm() / b_norm,
                },
            ));
        }
    }
    Err(max_iter)
}

/// Largest singular value via power iteration on the Gram operator.
///
/// `apply` and `apply_t` realize `T` and `T^t`; convergence is measured on
/// the singular-value estimate itself.
pub fn top_singular_value(
    n: usize,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    apply_t: impl Fn(&DVector<f64>) -> DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64, usize> {
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    // deterministic asymmetry so we never start orthogonal to the top pair
    for i in 0..n {
        v[i] += 1e-3 * ((i % 7) as f64 - 3.0) / (n as f64).sqrt();
    }
    v /= v.norm();
    let mut sigma_old = 0.0;
    for it in 1..=max_iter {
        let w = apply(&v);
        let mut z = apply_t(&w);
        let z_norm = z.norm();
        if z_norm == 0.0 {
            return Ok(0.0);
        }
        z /= z_norm;
        let sigma = apply(&z).norm();
        v = z;
        if (sigma - sigma_old).abs() <= rel_tol * sigma.max(f64::MIN_POSITIVE) && it > 3 {
            return Ok(sigma);
        }
        sigma_old = sigma;
    }
    Err(max_iter)
}

/// Complex analogue of [`top_singular_value`] for resolvent-norm estimates.
pub fn top_singular_value_complex(
    n: usize,
    apply: impl Fn(&DVector<C64>) -> DVector<C64>,
    apply_adj: impl Fn(&DVector<C64>) -> DVector<C64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64, usize> {
    let mut v: DVector<C64> = DVector::from_fn(n, |i, _| {
        C64::new(1.0, 0.5 * ((i % 5) as f64 - 2.0) / (n as f64))
    });
    let nv = v.norm();
    v.unscale_mut(nv);
    let mut sigma_old = 0.0;
    for it in 1..=max_iter {
        let w = apply(&v);
        let mut z = apply_adj(&w);
        let z_norm = z.norm();
        if z_norm == 0.0 {
            return Ok(0.0);
        }
        z.unscale_mut(z_norm);
        let sigma = apply(&z).norm();
        v = z;
        if (sigma - sigma_old).abs() <= rel_tol * sigma.max(f64::MIN_POSITIVE) && it > 3 {
            return Ok(sigma);
        }
        sigma_old = sigma;
    }
    Err(max_iter)
}

/// Arnoldi iteration with full reorthogonalization; returns the Ritz values
/// of the Krylov space of dimension `m`, sorted by decreasing modulus.
pub fn arnoldi_ritz_values(
    n: usize,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    m: usize,
) -> Vec<C64> {
    let m = m.min(n);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut v0 = DVector::from_element(n, 1.0);
    for i in 0..n {
        v0[i] += 1e-2 * (((i * 2654435761) % 1024) as f64 / 1024.0 - 0.5);
    }
    v0 /= v0.norm();
    q.push(v0);
    let mut k_eff = m;
    for j in 0..m {
        let mut w = apply(&q[j]);
        for i in 0..=j {
            let hij = q[i].dot(&w);
            h[(i, j)] = hij;
            w.axpy(-hij, &q[i], 1.0);
        }
        // second Gram-Schmidt pass
        for i in 0..=j {
            let corr = q[i].dot(&w);
            h[(i, j)] += corr;
            w.axpy(-corr, &q[i], 1.0);
        }
        let wn = w.norm();
        h[(j + 1, j)] = wn;
        if wn < 1e-14 {
            k_eff = j + 1;
            break;
        }
        q.push(w / wn);
    }
    let hk = h.view((0, 0), (k_eff, k_eff)).into_owned();
    let mut vals = complex_eigenvalues(&hk).expect("Ritz eigensolve on a small Hessenberg matrix");
    vals.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    vals
}

/// Matrix exponential by scaling and squaring with a [13/13] Pade approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = one_norm(a);
    let theta13 = 5.371920351148152;
    let s = if norm1 > theta13 {
        (norm1 / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a / 2f64.powi(s);
    let mut e = pade13(&a_scaled);
    for _ in 0..s {
        e = &e * &e;
    }
    debug_assert_eq!(e.nrows(), n);
    e
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &id;
    let u = a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &id;
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu()
        .solve(&rhs)
        .expect("pade denominator must be invertible")
}

/// Complex Givens rotation zeroing `b` against `a`: returns (c, s) with
/// c real so that `[c, s; -conj(s), c] [a; b] = [r; 0]`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let r = (an * an + bn * bn).sqrt();
    let c = an / r;
    let s = (a / an) * b.conj() / r;
    (c, s)
}

/// In-place complex Householder reduction to upper Hessenberg form.
fn hessenberg_in_place(h: &mut DMatrix<C64>) {
    let n = h.nrows();
    for k in 0..n.saturating_sub(2) {
        let mut norm2 = 0.0f64;
        for i in k + 1..n {
            norm2 += h[(i, k)].norm_sqr();
        }
        let norm = norm2.sqrt();
        if norm <= 1e-300 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let alpha = -phase * norm;
        // v = x - alpha e1, normalized
        let mut v: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm <= 1e-300 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // left update: rows k+1.., all columns
        for j in k..n {
            let mut dot = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                dot += vi.conj() * h[(k + 1 + t, j)];
            }
            let dot = dot * 2.0;
            for (t, vi) in v.iter().enumerate() {
                let val = h[(k + 1 + t, j)] - vi * dot;
                h[(k + 1 + t, j)] = val;
            }
        }
        // right update: all rows, columns k+1..
        for i in 0..n {
            let mut dot = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                dot += h[(i, k + 1 + t)] * *vi;
            }
            let dot = dot * 2.0;
            for (t, vi) in v.iter().enumerate() {
                let val = h[(i, k + 1 + t)] - dot * vi.conj();
                h[(i, k + 1 + t)] = val;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C64::new(0.0, 0.0);
        }
    }
}

/// Eigenvalues of a general real matrix through complex Hessenberg QR with
/// Wilkinson shifts, explicit-shift Givens sweeps, and deflation.
///
/// Written against stalls observed in off-the-shelf real Schur iterations
/// on Green-kernel matrices with tightly clustered spectra.
pub fn complex_eigenvalues(mat: &DMatrix<f64>) -> Result<Vec<C64>, usize> {
    let h = mat.map(|x| C64::new(x, 0.0));
    complex_eigenvalues_of(h)
}

pub fn complex_eigenvalues_of(mut h: DMatrix<C64>) -> Result<Vec<C64>, usize> {
    let n = h.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![h[(0, 0)]]);
    }
    hessenberg_in_place(&mut h);
    let eps = 4.0 * f64::EPSILON;
    let mut eigenvalues: Vec<C64> = Vec::with_capacity(n);
    let mut hi = n; // active window is 0..hi
    let mut stall = 0usize;
    let mut total_sweeps = 0usize;
    let max_sweeps = 60 * n;
    while hi > 0 {
        if total_sweeps > max_sweeps {
            return Err(total_sweeps);
        }
        // deflate converged trailing eigenvalues
        if hi == 1 {
            eigenvalues.push(h[(0, 0)]);
            hi = 0;
            continue;
        }
        let sub = h[(hi - 1, hi - 2)].norm();
        let local = h[(hi - 1, hi - 1)].norm() + h[(hi - 2, hi - 2)].norm();
        if sub <= eps * local.max(1e-300) {
            eigenvalues.push(h[(hi - 1, hi - 1)]);
            hi -= 1;
            stall = 0;
            continue;
        }
        // find the start of the active block: the nearest negligible
        // subdiagonal above
        let mut lo = hi - 1;
        while lo > 0 {
            let s = h[(lo, lo - 1)].norm();
            let l = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if s <= eps * l.max(1e-300) {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        // Wilkinson shift from the trailing 2x2 of the active block
        let a = h[(hi - 2, hi - 2)];
        let b = h[(hi - 2, hi - 1)];
        let c = h[(hi - 1, hi - 2)];
        let d = h[(hi - 1, hi - 1)];
        let tr = a + d;
        let det = a * d - b * c;
        let disc = (tr * tr - det * 4.0).sqrt();
        let r1 = (tr + disc) * 0.5;
        let r2 = (tr - disc) * 0.5;
        let mut shift = if (r1 - d).norm() <= (r2 - d).norm() {
            r1
        } else {
            r2
        };
        stall += 1;
        if stall % 16 == 0 {
            // exceptional shift to break rare limit cycles
            shift = d + C64::new(1.5 * sub, 0.5 * sub);
        }
        // explicit-shift QR sweep on the active window lo..hi
        let m = hi - lo;
        for i in lo..hi {
            h[(i, i)] -= shift;
        }
        let mut rotations: Vec<(f64, C64)> = Vec::with_capacity(m - 1);
        for k in lo..hi - 1 {
            let (cs, sn) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..n {
                let x = h[(k, j)];
                let y = h[(k + 1, j)];
                h[(k, j)] = x * cs + y * sn;
                h[(k + 1, j)] = -x * sn.conj() + y * cs;
            }
            rotations.push((cs, sn));
        }
        for (k, (cs, sn)) in (lo..hi - 1).zip(rotations) {
            let top = (k + 2).min(hi);
            for i in 0..top {
                let x = h[(i, k)];
                let y = h[(i, k + 1)];
                h[(i, k)] = x * cs + y * sn.conj();
                h[(i, k + 1)] = -x * sn + y * cs;
            }
        }
        for i in lo..hi {
            h[(i, i)] += shift;
        }
        total_sweeps += 1;
    }
    eigenvalues.reverse();
    Ok(eigenvalues)
}

pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..a.nrows() {
        let s: f64 = a.row(i).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Least squares fit of `y = intercept + slope * x`; returns (intercept, slope, r2).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return (my, 0.0, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = (sxy * sxy) / (sxx * syy);
    (intercept, slope, r2)
}

/// Aitken delta-squared extrapolation of the last three terms of a sequence.
///
/// Falls back to the last term when the increments do not contract.
pub fn aitken_extrapolate(seq: &[f64]) -> (f64, f64) {
    let m = seq.len();
    assert!(m >= 2, "need at least two terms");
    let last = seq[m - 1];
    let err = (seq[m - 1] - seq[m - 2]).abs();
    if m < 3 {
        return (last, err);
    }
    let (a, b, c) = (seq[m - 3], seq[m - 2], seq[m - 1]);
    let d1 = b - a;
    let d2 = c - b;
    let denom = d2 - d1;
    if denom.abs() < 1e-300 || (d2 / d1).abs() >= 1.0 {
        return (last, err);
    }
    let accel = c - d2 * d2 / denom;
    (accel, (accel - c).abs().max(err * 1e-3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lap1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &mut t)
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let a = lap1d(17);
        let d = a.to_dense();
        let x = DVector::from_fn(17, |i, _| (i as f64 * 0.7).sin());
        assert_relative_eq!(a.matvec(&x), &d * &x, epsilon = 1e-14);
    }

    #[test]
    fn csr_duplicate_triplets_are_summed() {
        let mut t = vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0), (1, 1, 4.0)];
        let a = CsrMatrix::from_triplets(2, &mut t);
        let d = a.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], -1.0);
        assert_eq!(d[(1, 1)], 4.0);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = lap1d(50);
        let b = DVector::from_element(50, 1.0);
        let (x, stats) = conjugate_gradient(&a, &b, None, 1e-13, 10_000).unwrap();
        let r = &b - a.to_dense() * &x;
        assert!(r.norm() <= 1e-11 * b.norm(), "residual {}", r.norm());
        assert!(stats.iterations <= 60);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.4));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.6));
            }
        }
        let a = CsrMatrix::from_triplets(n, &mut t);
        let b = DVector::from_fn(n, |i, _| 1.0 + (i as f64).cos());
        let (x, _) = bicgstab(&a, &b, 1e-13, 10_000).unwrap();
        let r = &b - a.matvec(&x);
        assert!(r.norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn power_sigma_matches_svd() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let sigma = top_singular_value(
            3,
            |v| &a * v,
            |v| a.transpose() * v,
            1e-14,
            100_000,
        )
        .unwrap();
        // eigenvalues of the symmetric matrix are 2 - sqrt(2), 2, 2 + sqrt(2)
        assert_relative_eq!(sigma, 2.0 + 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn expm_of_diagonalizable_matrix() {
        // A = [[0, 1], [-1, 0]] generates rotations
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&(a * std::f64::consts::FRAC_PI_2));
        assert_relative_eq!(e[(0, 0)], 0.0, epsilon = 1e-13);
        assert_relative_eq!(e[(0, 1)], 1.0, epsilon = 1e-13);
        assert_relative_eq!(e[(1, 0)], -1.0, epsilon = 1e-13);
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        let a = DMatrix::from_row_slice(2, 2, &[-30.0, 5.0, 0.0, -20.0]);
        let e = expm(&a);
        // exact: e^(-30), off-diagonal 5*(e^-20 - e^-30)/10, e^(-20)
        assert_relative_eq!(e[(1, 1)], (-20.0f64).exp(), max_relative = 1e-11);
        assert_relative_eq!(e[(0, 0)], (-30.0f64).exp(), max_relative = 1e-11);
        let off = 5.0 * ((-20.0f64).exp() - (-30.0f64).exp()) / 10.0;
        assert_relative_eq!(e[(0, 1)], off, max_relative = 1e-10);
    }

    #[test]
    fn arnoldi_finds_leading_eigenvalues_of_resolvent() {
        // leading eigenvalues of L^{-1} are well separated, the typical
        // shape of the Green operators this is used on
        let n = 60;
        let lu = lap1d(n).to_dense().lu();
        let vals = arnoldi_ritz_values(n, |v| lu.solve(v).unwrap(), 40);
        let eig = |k: usize| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (n as f64 + 1.0)).cos();
        for k in 1..=3 {
            assert_relative_eq!(vals[k - 1].re, 1.0 / eig(k), max_relative = 1e-9);
            assert!(vals[k - 1].im.abs() < 1e-9);
        }
    }

    #[test]
    fn qr_eigenvalues_match_nalgebra_on_small_random_matrices() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 5, 8, 13] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let mut mine: Vec<C64> = complex_eigenvalues(&a).unwrap();
            let mut theirs: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
            let key = |z: &C64| (z.re, z.im);
            mine.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            theirs.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            for (m, t) in mine.iter().zip(theirs.iter()) {
                assert!(
                    (m - t).norm() <= 1e-9 * (1.0 + t.norm()),
                    "n={n}: {m} vs {t}"
                );
            }
        }
    }

    #[test]
    fn qr_eigenvalues_handle_rotations_and_defective_blocks() {
        // pure rotation: eigenvalues +/- i
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let vals = complex_eigenvalues(&rot).unwrap();
        let mut ims: Vec<f64> = vals.iter().map(|z| z.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(ims[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(ims[1], 1.0, epsilon = 1e-12);
        // Jordan block: double eigenvalue 2
        let jordan = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        for z in complex_eigenvalues(&jordan).unwrap() {
            assert!((z - C64::new(2.0, 0.0)).norm() <= 1e-7);
        }
    }

    #[test]
    fn qr_eigenvalues_of_clustered_spd_inverse() {
        // the shape that stalls off-the-shelf Schur: an inverse with many
        // tightly clustered small eigenvalues
        let n = 80;
        let lu = lap1d(n).to_dense().lu();
        let inv = lu.try_inverse().unwrap();
        let vals = complex_eigenvalues(&inv).unwrap();
        let mut re: Vec<f64> = vals.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (k, r) in re.iter().enumerate() {
            let exact =
                1.0 / (2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n as f64 + 1.0)).cos());
            assert_relative_eq!(*r, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (b, m, r2) = linear_fit(&x, &y);
        assert_relative_eq!(b, 3.0, epsilon = 1e-12);
        assert_relative_eq!(m, -0.5, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn aitken_accelerates_geometric_sequence() {
        let limit = 0.7;
        let seq: Vec<f64> = (0..6).map(|i| limit + 2.0 * 0.3f64.powi(i)).collect();
        let (acc, _) = aitken_extrapolate(&seq);
        assert_relative_eq!(acc, limit, epsilon = 1e-10);
    }
}
