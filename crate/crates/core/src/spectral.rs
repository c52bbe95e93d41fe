//! Weighted Green operators, their induced norms on L^p(phi_p), Schur
//! bounds, spectra, Gelfand radius sequences, resolvent identities, and
//! generator/semigroup checks.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::SpectralError;
use crate::green::GreenKernel;
use crate::linalg::{self, C64};
use crate::operator::AssembledOperator;
use crate::spaces::{Exponent, WeightedSpace};

/// Dense eigensolve cap for `spectrum`.
pub const DENSE_EIG_CAP: usize = 4000;

/// The pair of integral operators with kernels `K(x,y) = G(x,y) W(y) nu(y)`
/// and `K_dual = G^T diag(W nu)`, so `(G f)(x) = sum_y K(x,y) f(y)` and
/// `(G^dual g)(y) = sum_x G(x,y) W(x) nu(x) g(x)`.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    pub radius: i64,
    pub lambda: f64,
    pub kernel: DMatrix<f64>,
    pub kernel_dual: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub weight: DVector<f64>,
    pub min_entry: f64,
    /// Worst relative duality defect `<g, Gf> - <G^dual g, f>` sampled at
    /// construction.
    pub duality_defect: f64,
    /// True when the kernel is symmetrizable by diag(W nu)^{1/2}.
    pub symmetric: bool,
}

pub fn green_operator(green: &GreenKernel) -> Result<GreenOperator, SpectralError> {
    let n = green.n();
    if !(green.min_entry > 0.0) {
        return Err(SpectralError::NonPositiveKernel(green.min_entry));
    }
    let mut kernel = green.g.clone();
    for y in 0..n {
        let s = green.weight[y] * green.nu[y];
        for x in 0..n {
            kernel[(x, y)] *= s;
        }
    }
    let mut kernel_dual = green.g.transpose();
    for x in 0..n {
        let s = green.weight[x] * green.nu[x];
        for y in 0..n {
            kernel_dual[(y, x)] *= s;
        }
    }
    let min_entry = kernel.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min_entry > 0.0) {
        return Err(SpectralError::NonPositiveKernel(min_entry));
    }
    // duality audit on seeded pairs
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut defect = 0.0f64;
    for _ in 0..8 {
        let f = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let g = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let gf = &kernel * &f;
        let gd = &kernel_dual * &g;
        let lhs = crate::spaces::pairing(&g, &gf, &green.weight, &green.nu);
        let rhs = crate::spaces::pairing(&gd, &f, &green.weight, &green.nu);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        defect = defect.max((lhs - rhs).abs() / scale);
    }
    Ok(GreenOperator {
        radius: green.radius,
        lambda: green.lambda,
        kernel,
        kernel_dual,
        nu: green.nu.clone(),
        weight: green.weight.clone(),
        min_entry,
        duality_defect: defect,
        symmetric: green.symmetric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    ExactColumnSum,
    ExactRowSum,
    SingularValue,
    InterpolationBound,
}

/// Norm multiplier per node: the similarity weight turning the
/// L^p(phi_p, nu) norm into a plain l^p norm.
fn norm_multiplier(sp: &WeightedSpace) -> DVector<f64> {
    match sp.p {
        Exponent::Infinity => sp.weight.clone(),
        Exponent::Finite(p) => DVector::from_fn(sp.weight.len(), |i, _| {
            sp.nu[i].powf(1.0 / p) * sp.weight[i]
        }),
    }
}

fn multiplier_for(sp: &WeightedSpace, p: Exponent) -> DVector<f64> {
    let n = sp.phi.len();
    match p {
        Exponent::Infinity => DVector::from_fn(n, |i, _| 1.0 / sp.phi[i]),
        Exponent::Finite(q) => DVector::from_fn(n, |i, _| {
            let phi_q = (sp.phi[i] * sp.w[i] * sp.phi_tilde[i]).powf(1.0 / q) / sp.phi[i];
            sp.nu[i].powf(1.0 / q) * phi_q
        }),
    }
}

fn transformed_column_norm(mat: &DMatrix<f64>, m: &DVector<f64>) -> f64 {
    let n = mat.nrows();
    let mut best = 0.0f64;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += (m[i] * mat[(i, j)]).abs();
        }
        best = best.max(s / m[j]);
    }
    best
}

fn transformed_row_norm(mat: &DMatrix<f64>, m: &DVector<f64>) -> f64 {
    let n = mat.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += (mat[(i, j)] / m[j]).abs();
        }
        best = best.max(s * m[i]);
    }
    best
}

fn transformed_sigma_max(mat: &DMatrix<f64>, m: &DVector<f64>) -> Result<f64, SpectralError> {
    let n = mat.nrows();
    let apply = |v: &DVector<f64>| {
        let scaled = DVector::from_fn(n, |i, _| v[i] / m[i]);
        let mut out = mat * scaled;
        for i in 0..n {
            out[i] *= m[i];
        }
        out
    };
    let apply_t = |v: &DVector<f64>| {
        let scaled = DVector::from_fn(n, |i, _| v[i] * m[i]);
        let mut out = mat.tr_mul(&scaled);
        for i in 0..n {
            out[i] /= m[i];
        }
        out
    };
    linalg::top_singular_value(n, apply, apply_t, 1e-13, 200_000)
        .map_err(SpectralError::SolverNoConvergence)
}

/// Operator norm of a dense matrix acting on `sp`. Exact for p in
/// {1, 2, inf}; a certified Riesz-Thorin style upper bound through the
/// family endpoints otherwise.
pub fn matrix_norm_on_space(
    mat: &DMatrix<f64>,
    sp: &WeightedSpace,
) -> Result<(f64, NormMethod), SpectralError> {
    match sp.p {
        Exponent::Finite(p) if p == 1.0 => {
            Ok((transformed_column_norm(mat, &norm_multiplier(sp)), NormMethod::ExactColumnSum))
        }
        Exponent::Infinity => {
            Ok((transformed_row_norm(mat, &norm_multiplier(sp)), NormMethod::ExactRowSum))
        }
        Exponent::Finite(p) if p == 2.0 => {
            Ok((transformed_sigma_max(mat, &norm_multiplier(sp))?, NormMethod::SingularValue))
        }
        Exponent::Finite(p) => {
            let m1 = multiplier_for(sp, Exponent::Finite(1.0));
            let minf = multiplier_for(sp, Exponent::Infinity);
            let n1 = transformed_column_norm(mat, &m1);
            let ninf = transformed_row_norm(mat, &minf);
            let bound = n1.powf(1.0 / p) * ninf.powf(1.0 - 1.0 / p);
            Ok((bound, NormMethod::InterpolationBound))
        }
    }
}

/// Induced norm of the weighted Green operator on `sp`.
pub fn induced_norm(
    opr: &GreenOperator,
    sp: &WeightedSpace,
) -> Result<(f64, NormMethod), SpectralError> {
    matrix_norm_on_space(&opr.kernel, sp)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SchurReport {
    /// sup_x (G phi)(x) / phi(x)
    pub sup_right: f64,
    /// sup_y (G^dual phi~)(y) / phi~(y)
    pub sup_left: f64,
    /// max of the two suprema (p-independent once invariance is equality)
    pub bound: f64,
    /// classical Schur form sup_right^{1/p'} sup_left^{1/p}
    pub geometric_bound: f64,
}

/// Weighted Schur test: evaluates the two invariance quotients behind the
/// test and returns their max (and the geometric combination).
pub fn schur_bound(
    opr: &GreenOperator,
    phi: &DVector<f64>,
    phi_tilde: &DVector<f64>,
    p: Exponent,
) -> Result<SchurReport, SpectralError> {
    let pval = p.value();
    if !(pval > 1.0) || p.is_infinite() {
        return Err(SpectralError::ExponentOutOfRange(p.label()));
    }
    let gphi = &opr.kernel * phi;
    let gtphit = &opr.kernel_dual * phi_tilde;
    let n = phi.len();
    let mut sup_right = f64::NEG_INFINITY;
    let mut sup_left = f64::NEG_INFINITY;
    for i in 0..n {
        sup_right = sup_right.max(gphi[i] / phi[i]);
        sup_left = sup_left.max(gtphit[i] / phi_tilde[i]);
    }
    let bound = sup_right.max(sup_left);
    let geometric_bound = sup_right.powf(1.0 - 1.0 / pval) * sup_left.powf(1.0 / pval);
    Ok(SchurReport {
        sup_right,
        sup_left,
        bound,
        geometric_bound,
    })
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub radius: i64,
    pub lambda: f64,
    /// All eigenvalues of the weighted Green operator, modulus-descending.
    pub eigenvalues: Vec<C64>,
    pub eta_max: f64,
    pub top_eigenvector: DVector<f64>,
    pub top_sign_definite: bool,
    /// |eta_1| - |eta_2|.
    pub modulus_gap: f64,
    pub top_cluster_size: usize,
    pub min_modulus: f64,
    /// (eigenvalue, relative PDE residual) for the leading checked pairs.
    pub pde_residuals: Vec<(C64, f64)>,
    pub conjugation_closed: bool,
}

fn sort_by_modulus(mut vals: Vec<C64>) -> Vec<C64> {
    vals.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    vals
}

/// Eigenvalues of a kernel matrix, modulus-descending. When `sym_weight`
/// is given (entries of diag(W nu) for a nu-self-adjoint operator), the
/// matrix is symmetrized by similarity and solved with the tridiagonal
/// symmetric eigensolver; otherwise the complex Hessenberg QR is used.
fn kernel_eigenvalues(
    mat: &DMatrix<f64>,
    sym_weight: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<Vec<C64>, SpectralError> {
    let n = mat.nrows();
    if let Some((w, nu)) = sym_weight {
        let d: Vec<f64> = (0..n).map(|i| (w[i] * nu[i]).sqrt()).collect();
        let mut s = mat.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= d[i] / d[j];
            }
        }
        let sym = (&s + s.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        return Ok(sort_by_modulus(
            eig.eigenvalues.iter().map(|&v| C64::new(v, 0.0)).collect(),
        ));
    }
    linalg::complex_eigenvalues(mat)
        .map(sort_by_modulus)
        .map_err(SpectralError::SolverNoConvergence)
}

#[cfg(test)]
fn sorted_complex_eigenvalues(mat: &DMatrix<f64>) -> Vec<C64> {
    kernel_eigenvalues(mat, None).expect("QR eigensolver did not converge")
}

/// Real inverse iteration for the eigenvector of a real simple eigenvalue.
fn real_eigenvector(mat: &DMatrix<f64>, eta: f64) -> Result<DVector<f64>, SpectralError> {
    let n = mat.nrows();
    let scale = linalg::max_abs(mat).max(1e-300);
    let shift = eta * (1.0 + 1e-9) + 1e-13 * scale;
    let shifted = mat - DMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..5 {
        let w = lu
            .solve(&v)
            .ok_or(SpectralError::SolverNoConvergence(0))?;
        v = &w / w.norm();
    }
    Ok(v)
}

/// Complex inverse iteration used for PDE residual back-checks of
/// non-leading (possibly complex) eigenpairs.
fn complex_eigenvector(mat: &DMatrix<f64>, eta: C64) -> Result<DVector<C64>, SpectralError> {
    let n = mat.nrows();
    let scale = linalg::max_abs(mat).max(1e-300);
    let shift = eta * C64::new(1.0 + 1e-9, 0.0) + C64::new(1e-13 * scale, 1e-13 * scale);
    let mut shifted = mat.map(|x| C64::new(x, 0.0));
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let mut v: DVector<C64> =
        DVector::from_fn(n, |i, _| C64::new(1.0, 0.3 * ((i % 3) as f64 - 1.0)));
    let nv = v.norm();
    v.unscale_mut(nv);
    for _ in 0..5 {
        let w = lu
            .solve(&v)
            .ok_or(SpectralError::SolverNoConvergence(0))?;
        let nw = w.norm();
        v = w.unscale(nw);
    }
    Ok(v)
}

/// Full dense spectrum of the weighted Green operator, with Perron-structure
/// verification and PDE residual back-checks on the leading eigenpairs.
///
/// `op` must be the assembled operator the kernel was built from, at shift
/// zero relative to the kernel's `lambda`.
pub fn spectrum(
    opr: &GreenOperator,
    op: &AssembledOperator,
) -> Result<SpectralReport, SpectralError> {
    let n = opr.kernel.nrows();
    if n > DENSE_EIG_CAP {
        return Err(SpectralError::DenseCapExceeded {
            nodes: n,
            cap: DENSE_EIG_CAP,
        });
    }
    let sym = opr.symmetric.then_some((&opr.weight, &opr.nu));
    let eigenvalues = kernel_eigenvalues(&opr.kernel, sym)?;
    let top = eigenvalues[0];
    let eta_max = top.re;
    let top_modulus = top.norm();
    let second_modulus = eigenvalues.get(1).map(|z| z.norm()).unwrap_or(0.0);
    let modulus_gap = top_modulus - second_modulus;
    let gap_tol = 1e-8 * top_modulus;
    if top.im.abs() > 1e-10 * top_modulus {
        return Err(SpectralError::DegenerateTopEigenvalue {
            gap: top.im.abs(),
            tol: gap_tol,
        });
    }
    let top_cluster_size = eigenvalues
        .iter()
        .filter(|z| (z.norm() - top_modulus).abs() <= gap_tol)
        .count();
    if top_cluster_size > 1 || modulus_gap <= gap_tol {
        return Err(SpectralError::DegenerateTopEigenvalue {
            gap: modulus_gap,
            tol: gap_tol,
        });
    }
    let min_modulus = eigenvalues.last().map(|z| z.norm()).unwrap_or(0.0);
    // conjugation closure of the list (real matrix)
    let mut conjugation_closed = true;
    for z in &eigenvalues {
        if z.im.abs() > 1e-10 * top_modulus {
            let found = eigenvalues
                .iter()
                .any(|w| (w - z.conj()).norm() <= 1e-7 * top_modulus);
            if !found {
                conjugation_closed = false;
            }
        }
    }

    let mut v = real_eigenvector(&opr.kernel, eta_max)?;
    if v.sum() < 0.0 {
        v = -v;
    }
    let top_sign_definite = v.min() * v.max() > 0.0;

    // PDE back-check (L - [lambda + 1/eta] W) v = 0 on the leading pairs
    let lambda = opr.lambda;
    let mut pde_residuals = Vec::new();
    let mut checked = 0usize;
    let mut idx = 0usize;
    while checked < 5 && idx < eigenvalues.len() {
        let eta = eigenvalues[idx];
        idx += 1;
        if eta.norm() <= 1e-12 * top_modulus {
            break;
        }
        // skip the conjugate twin of an already-checked eigenvalue
        if eta.im < -1e-12 * top_modulus {
            continue;
        }
        let vc = if idx == 1 {
            v.map(|x| C64::new(x, 0.0))
        } else {
            complex_eigenvector(&opr.kernel, eta)?
        };
        let shift_total = C64::new(lambda, 0.0) + C64::new(1.0, 0.0) / eta;
        let vre = vc.map(|z| z.re);
        let vim = vc.map(|z| z.im);
        let l_re = op.matrix.matvec(&vre);
        let l_im = op.matrix.matvec(&vim);
        let mut res = 0.0f64;
        let mut vnorm = 0.0f64;
        let mut lscale = 0.0f64;
        for i in 0..n {
            let lv = C64::new(l_re[i], l_im[i]);
            let r = lv - shift_total * op.weight[i] * vc[i];
            res += r.norm_sqr();
            vnorm += vc[i].norm_sqr();
            lscale += lv.norm_sqr();
        }
        let rel = (res / vnorm).sqrt() / (lscale / vnorm).sqrt().max(1.0);
        pde_residuals.push((eta, rel));
        checked += 1;
    }

    Ok(SpectralReport {
        radius: opr.radius,
        lambda,
        eigenvalues,
        eta_max,
        top_eigenvector: v,
        top_sign_definite,
        modulus_gap,
        top_cluster_size,
        min_modulus,
        pde_residuals,
        conjugation_closed,
    })
}

/// Leading distinct eigenvalue moduli of the weighted Green operator at
/// shift `lambda`, by dense Schur below the cap and Arnoldi with sparse
/// solves above it.
pub fn leading_moduli(
    op: &AssembledOperator,
    lambda: f64,
    count: usize,
) -> Result<Vec<f64>, SpectralError> {
    let n = op.n();
    let moduli: Vec<f64> = if n <= crate::green::DENSE_SOLVE_CAP {
        let shifted = crate::operator::shift(op, lambda);
        let inv = shifted
            .dense()
            .lu()
            .try_inverse()
            .ok_or(SpectralError::SolverNoConvergence(0))?;
        let mut k = inv;
        for j in 0..n {
            let s = op.weight[j];
            for i in 0..n {
                k[(i, j)] *= s;
            }
        }
        let sym = op.symmetric.then_some((&op.weight, &op.nu));
        kernel_eigenvalues(&k, sym)?
            .iter()
            .map(|z| z.norm())
            .collect()
    } else {
        let solver = crate::green::shifted_solver(op, lambda);
        let weight = op.weight.clone();
        let apply = move |v: &DVector<f64>| {
            let wv = DVector::from_fn(v.len(), |i, _| weight[i] * v[i]);
            solver.solve(&wv).expect("sparse solve failed inside Arnoldi")
        };
        let m = (6 * count + 20).min(n);
        linalg::arnoldi_ritz_values(n, apply, m)
            .iter()
            .map(|z| z.norm())
            .collect()
    };
    // deduplicate into distinct moduli
    let mut distinct: Vec<f64> = Vec::new();
    let scale = moduli.first().copied().unwrap_or(1.0);
    for m in moduli {
        if distinct.last().map_or(true, |&d| (d - m).abs() > 1e-6 * scale) {
            distinct.push(m);
        }
        if distinct.len() == count {
            break;
        }
    }
    Ok(distinct)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GelfandEntry {
    pub n: usize,
    pub p: String,
    pub r_n: f64,
}

/// Gelfand radius estimates `r_n = ||T^n||_p^{1/n}` for n = 1..n_max, with
/// per-step renormalization against overflow.
pub fn gelfand_radius(
    opr: &GreenOperator,
    family: &[WeightedSpace],
    n_max: usize,
) -> Result<Vec<GelfandEntry>, SpectralError> {
    if n_max < 8 {
        return Err(SpectralError::PowerBudgetTooSmall(n_max));
    }
    let mut entries = Vec::new();
    let mut power = opr.kernel.clone();
    let mut log_scale = 0.0f64;
    for step in 1..=n_max {
        if step > 1 {
            power = &power * &opr.kernel;
            let s = linalg::max_abs(&power);
            power /= s;
            log_scale += s.ln();
        }
        for sp in family {
            let (norm, _) = matrix_norm_on_space(&power, sp)?;
            let r_n = ((log_scale + norm.ln()) / step as f64).exp();
            entries.push(GelfandEntry {
                n: step,
                p: sp.p.label(),
                r_n,
            });
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ResolventDefect {
    pub lambda: f64,
    pub mu: f64,
    /// Relative max-norm defect of the kernel-level resolvent equation.
    pub kernel_defect: f64,
    /// Relative max-norm defect of the operator-level pseudoresolvent
    /// identity.
    pub pseudoresolvent_defect: f64,
}

/// Defect of `G_lambda - G_mu = (lambda - mu) G_lambda W G_mu` (kernel
/// composition against the measure) and of the induced pseudoresolvent
/// identity for the weighted operators.
pub fn resolvent_defect(
    g_lambda: &GreenKernel,
    g_mu: &GreenKernel,
) -> Result<ResolventDefect, SpectralError> {
    if g_lambda.radius != g_mu.radius {
        return Err(SpectralError::BoxMismatch(g_lambda.radius, g_mu.radius));
    }
    let (lambda, mu) = (g_lambda.lambda, g_mu.lambda);
    if lambda == mu {
        return Err(SpectralError::ExponentOutOfRange(format!(
            "identical shifts lambda = mu = {lambda}; the resolvent defect is trivially zero"
        )));
    }
    let n = g_lambda.n();
    let wnu = DVector::from_fn(n, |i, _| g_lambda.weight[i] * g_lambda.nu[i]);
    let mut middle = g_mu.g.clone();
    for x in 0..n {
        let s = wnu[x];
        for y in 0..n {
            middle[(x, y)] *= s;
        }
    }
    let composed = &g_lambda.g * middle;
    let defect_mat = &g_lambda.g - &g_mu.g - (lambda - mu) * composed;
    let scale = linalg::max_abs(&g_lambda.g).max(linalg::max_abs(&g_mu.g));
    let kernel_defect = linalg::max_abs(&defect_mat) / scale;

    let k_l = green_operator(g_lambda)?;
    let k_m = green_operator(g_mu)?;
    let pseudo = &k_l.kernel - &k_m.kernel - (lambda - mu) * (&k_l.kernel * &k_m.kernel);
    let pscale = linalg::max_abs(&k_l.kernel).max(linalg::max_abs(&k_m.kernel));
    let pseudoresolvent_defect = linalg::max_abs(&pseudo) / pscale;
    Ok(ResolventDefect {
        lambda,
        mu,
        kernel_defect,
        pseudoresolvent_defect,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ResolventBoundRow {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub p: String,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ContractionRow {
    pub t: f64,
    pub p: String,
    pub norm: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GeneratorReport {
    pub lambda1: f64,
    pub mu: f64,
    /// Relative max-norm of `A + W^{-1} L`.
    pub identity_defect: f64,
    pub resolvent_table: Vec<ResolventBoundRow>,
    pub contraction_table: Vec<ContractionRow>,
    /// Smallest entry of exp(tA) over the time grid (positivity check).
    pub semigroup_min_entry: f64,
    pub domain_note: String,
}

fn complex_norm_on_space(
    mat: &DMatrix<C64>,
    sp: &WeightedSpace,
) -> Result<f64, SpectralError> {
    let n = mat.nrows();
    let m = norm_multiplier(sp);
    match sp.p {
        Exponent::Finite(p) if p == 1.0 => {
            let mut best = 0.0f64;
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += m[i] * mat[(i, j)].norm();
                }
                best = best.max(s / m[j]);
            }
            Ok(best)
        }
        Exponent::Infinity => {
            let mut best = 0.0f64;
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += mat[(i, j)].norm() / m[j];
                }
                best = best.max(s * m[i]);
            }
            Ok(best)
        }
        Exponent::Finite(p) if p == 2.0 => {
            let apply = |v: &DVector<C64>| {
                let scaled = DVector::from_fn(n, |i, _| v[i] / m[i]);
                let mut out = mat * scaled;
                for i in 0..n {
                    out[i] *= m[i];
                }
                out
            };
            let adj = mat.adjoint();
            let m2 = &m;
            let apply_adj = move |v: &DVector<C64>| {
                let scaled = DVector::from_fn(n, |i, _| v[i] * m2[i]);
                let mut out = &adj * scaled;
                for i in 0..n {
                    out[i] /= m2[i];
                }
                out
            };
            linalg::top_singular_value_complex(n, apply, apply_adj, 1e-13, 200_000)
                .map_err(SpectralError::SolverNoConvergence)
        }
        Exponent::Finite(_) => Err(SpectralError::ExponentOutOfRange(sp.p.label())),
    }
}

/// Build `A = -(G_{lambda1})^{-1} - lambda1` on the box, verify the
/// `A = -W^{-1} L` identity, and check Hille-Yosida resolvent bounds and
/// semigroup contraction on the given grids.
///
/// `family` should contain the p in {1, 2, inf} spaces. The contraction
/// and resolvent bounds are guaranteed when `mu >= 0` and the weights come
/// from the box principal pair; violations then surface as
/// `NotContractive`.
#[allow(clippy::too_many_arguments)]
pub fn generator_checks(
    opr: &GreenOperator,
    op: &AssembledOperator,
    mu: f64,
    family: &[WeightedSpace],
    lambda_grid: &[C64],
    t_grid: &[f64],
) -> Result<GeneratorReport, SpectralError> {
    let lambda1 = opr.lambda;
    if lambda1 >= mu {
        return Err(SpectralError::ShiftOutsideLambdaSet { lambda1, mu });
    }
    let n = op.n();
    let inv_k = opr
        .kernel
        .clone()
        .lu()
        .try_inverse()
        .ok_or(SpectralError::SolverNoConvergence(0))?;
    let mut a = -inv_k;
    for i in 0..n {
        a[(i, i)] -= lambda1;
    }
    // reference: -W^{-1} L
    let l = op.dense();
    let mut reference = l.clone();
    for i in 0..n {
        let s = 1.0 / op.weight[i];
        for j in 0..n {
            reference[(i, j)] *= -s;
        }
    }
    let identity_defect =
        linalg::max_abs(&(&a - &reference)) / linalg::max_abs(&reference).max(1e-300);

    let contraction_claims = mu >= 0.0;
    let mut violations: Vec<(String, f64, f64)> = Vec::new();

    let mut resolvent_table = Vec::new();
    for &z in lambda_grid {
        if z.re <= 0.0 {
            continue;
        }
        // R(z, A) = (z I - A)^{-1}
        let mut zia = a.map(|x| C64::new(-x, 0.0));
        for i in 0..n {
            zia[(i, i)] += z;
        }
        let resolvent = zia
            .lu()
            .try_inverse()
            .ok_or(SpectralError::SolverNoConvergence(0))?;
        let bound = 1.0 / z.re;
        for sp in family {
            let norm = complex_norm_on_space(&resolvent, sp)?;
            resolvent_table.push(ResolventBoundRow {
                lambda_re: z.re,
                lambda_im: z.im,
                p: sp.p.label(),
                norm,
                bound,
            });
            if contraction_claims && norm > bound + 1e-9 {
                violations.push((format!("R({z}, A) on p={}", sp.p.label()), norm, bound));
            }
        }
    }

    let mut contraction_table = Vec::new();
    let mut semigroup_min_entry = f64::INFINITY;
    for &t in t_grid {
        let e = linalg::expm(&(t * &a));
        semigroup_min_entry =
            semigroup_min_entry.min(e.iter().fold(f64::INFINITY, |m, &v| m.min(v)));
        for sp in family {
            let (norm, _) = matrix_norm_on_space(&e, sp)?;
            contraction_table.push(ContractionRow {
                t,
                p: sp.p.label(),
                norm,
            });
            if contraction_claims && norm > 1.0 + 1e-9 {
                violations.push((format!("exp({t} A) on p={}", sp.p.label()), norm, 1.0));
            }
        }
    }

    if let Some((context, norm, bound)) = violations.into_iter().next() {
        return Err(SpectralError::NotContractive {
            context,
            norm,
            bound,
        });
    }

    Ok(GeneratorReport {
        lambda1,
        mu,
        identity_defect,
        resolvent_table,
        contraction_table,
        semigroup_min_entry,
        domain_note: format!(
            "A = -W^{{-1}}L on the radius-{} box; D(A) = range(G_lambda1) is the whole space \
             in finite dimension",
            op.radius()
        ),
    })
}
