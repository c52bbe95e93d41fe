//! Assembly of the discrete divergence-form operator L, its formal adjoint
//! L*, spectral shifts L - lambda*W, and Doob transforms.
//!
//! Row x of L reads
//!
//! ```text
//! (Lu)(x) = nu(x)^{-1} sum_{y~x} [ a(xy)(u(x)-u(y)) - b~(x->y)(u(x)+u(y))/2
//!                                  + b(x->y)(u(y)-u(x))/2 ] + c(x)u(x)
//! ```
//!
//! with the flux-slot drift `b~` and the advection-slot drift `b` both
//! centered. Exterior nodes are Dirichlet (treated as zero), so edges that
//! leave the box contribute only to the diagonal. With these conventions
//! the adjoint relation L* = D_nu^{-1} L^T D_nu holds exactly as matrices,
//! with b and b~ swapped.

use nalgebra::{DMatrix, DVector};

use crate::error::AssemblyError;
use crate::lattice::{Exhaustion, GridBox, Node};
use crate::linalg::CsrMatrix;

/// Scalar field on lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeField {
    Constant(f64),
    /// scale * (1 + |x|_inf)^exponent
    RadialPower { scale: f64, exponent: f64 },
    /// floor + height * indicator(|x|_inf <= radius)
    BoxBump { floor: f64, height: f64, radius: i64 },
    /// Explicit values with a default for unlisted nodes.
    Table { default: f64, entries: Vec<(Node, f64)> },
}

impl NodeField {
    pub fn eval(&self, node: Node, dim: usize) -> f64 {
        match self {
            NodeField::Constant(v) => *v,
            NodeField::RadialPower { scale, exponent } => {
                scale * (1.0 + crate::lattice::sup_norm(node, dim) as f64).powf(*exponent)
            }
            NodeField::BoxBump {
                floor,
                height,
                radius,
            } => {
                if crate::lattice::sup_norm(node, dim) <= *radius {
                    floor + height
                } else {
                    *floor
                }
            }
            NodeField::Table { default, entries } => entries
                .iter()
                .find(|(n, _)| *n == node)
                .map(|(_, v)| *v)
                .unwrap_or(*default),
        }
    }
}

/// Scalar field on undirected lattice edges, addressed by the lower
/// endpoint `from` and the axis of the edge (from, from + e_axis).
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeField {
    Constant(f64),
    /// Value depends on the coordinate-sum parity of the lower endpoint.
    Checkerboard { even: f64, odd: f64 },
    /// Direction-dependent constant (anisotropy).
    Axis([f64; 3]),
    Table {
        default: f64,
        entries: Vec<(Node, usize, f64)>,
    },
}

impl EdgeField {
    pub fn eval(&self, from: Node, axis: usize) -> f64 {
        match self {
            EdgeField::Constant(v) => *v,
            EdgeField::Checkerboard { even, odd } => {
                if (from[0] + from[1] + from[2]).rem_euclid(2) == 0 {
                    *even
                } else {
                    *odd
                }
            }
            EdgeField::Axis(v) => v[axis],
            EdgeField::Table { default, entries } => entries
                .iter()
                .find(|(n, a, _)| *n == from && *a == axis)
                .map(|(_, _, v)| *v)
                .unwrap_or(*default),
        }
    }
}

/// Constant discrete vector field used for drifts: the value on the
/// directed edge x -> x + e_axis is `components[axis]`; the reversed edge
/// carries the negated value.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftField {
    Zero,
    Vector([f64; 3]),
    Table {
        default: f64,
        entries: Vec<(Node, usize, f64)>,
    },
}

impl DriftField {
    /// Value on the directed edge from -> from + sign * e_axis.
    pub fn eval(&self, from: Node, axis: usize, sign: i64) -> f64 {
        let forward = match self {
            DriftField::Zero => 0.0,
            DriftField::Vector(v) => v[axis],
            DriftField::Table { default, entries } => {
                // stored on the lower endpoint of the undirected edge
                let lower = if sign > 0 {
                    from
                } else {
                    let mut n = from;
                    n[axis] -= 1;
                    n
                };
                entries
                    .iter()
                    .find(|(n, a, _)| *n == lower && *a == axis)
                    .map(|(_, _, v)| *v)
                    .unwrap_or(*default)
            }
        };
        if sign > 0 {
            forward
        } else {
            -forward
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DriftField::Zero => true,
            DriftField::Vector(v) => v.iter().all(|&x| x == 0.0),
            DriftField::Table { default, entries } => {
                *default == 0.0 && entries.iter().all(|(_, _, v)| *v == 0.0)
            }
        }
    }
}

/// Coefficient bundle for the divergence-form operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub conductance: EdgeField,
    pub drift_advection: DriftField,
    pub drift_flux: DriftField,
    pub potential: NodeField,
    pub weight: NodeField,
}

impl OperatorSpec {
    pub fn laplacian() -> Self {
        OperatorSpec {
            conductance: EdgeField::Constant(1.0),
            drift_advection: DriftField::Zero,
            drift_flux: DriftField::Zero,
            potential: NodeField::Constant(0.0),
            weight: NodeField::Constant(1.0),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.drift_advection == self.drift_flux
    }

    fn stable_hash(&self) -> u64 {
        fnv1a(format!("{self:?}").as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// L and L* restricted to a box with Dirichlet exterior condition.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub grid: GridBox,
    pub matrix: CsrMatrix,
    pub adjoint: CsrMatrix,
    pub nu: DVector<f64>,
    pub weight: DVector<f64>,
    pub shift: f64,
    pub spec_hash: u64,
    pub symmetric: bool,
    pub anchor_index: usize,
}

impl AssembledOperator {
    pub fn n(&self) -> usize {
        self.grid.node_count()
    }

    pub fn radius(&self) -> i64 {
        self.grid.radius
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    pub fn dense_adjoint(&self) -> DMatrix<f64> {
        self.adjoint.to_dense()
    }

    /// The nu-weighted inner product `sum_x u(x) v(x) nu(x)`.
    pub fn nu_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.iter()
            .zip(v.iter())
            .zip(self.nu.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Operator with the adjoint playing the role of L (swaps L and L*).
    pub fn adjoint_operator(&self) -> AssembledOperator {
        AssembledOperator {
            grid: self.grid,
            matrix: self.adjoint.clone(),
            adjoint: self.matrix.clone(),
            nu: self.nu.clone(),
            weight: self.weight.clone(),
            shift: self.shift,
            spec_hash: self.spec_hash,
            symmetric: self.symmetric,
            anchor_index: self.anchor_index,
        }
    }
}

pub fn assemble(
    spec: &OperatorSpec,
    ex: &Exhaustion,
    radius: i64,
) -> Result<AssembledOperator, AssemblyError> {
    if radius > ex.ambient_radius() || radius < 0 {
        return Err(AssemblyError::SpecDomainMismatch(format!(
            "box radius {radius} not contained in ambient radius {}",
            ex.ambient_radius()
        )));
    }
    let dim = ex.dim();
    let grid = ex.grid_box(radius);
    let n = grid.node_count();
    let nu = DVector::from_vec(ex.measure_on_box(grid));

    let mut weight = DVector::zeros(n);
    for (i, node) in grid.nodes().enumerate() {
        let w = spec.weight.eval(node, dim);
        if !(w > 0.0) || !w.is_finite() {
            return Err(AssemblyError::NonPositiveWeight { node, value: w });
        }
        weight[i] = w;
    }

    let mut trip_l: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (2 * dim + 1));
    let mut trip_ls: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (2 * dim + 1));
    for (i, node) in grid.nodes().enumerate() {
        let inv_nu = 1.0 / nu[i];
        let mut diag = spec.potential.eval(node, dim);
        for axis in 0..dim {
            for sign in [1i64, -1] {
                let mut nb = node;
                nb[axis] += sign;
                let edge_from = if sign > 0 {
                    node
                } else {
                    nb
                };
                let a = spec.conductance.eval(edge_from, axis);
                if !(a > 0.0) || !a.is_finite() {
                    return Err(AssemblyError::NonPositiveConductance {
                        from: node,
                        to: nb,
                        value: a,
                    });
                }
                let b = spec.drift_advection.eval(node, axis, sign);
                let bt = spec.drift_flux.eval(node, axis, sign);
                diag += inv_nu * (a - 0.5 * (b + bt));
                if let Some(j) = grid.index_of(nb) {
                    let off = inv_nu * (-a + 0.5 * (b - bt));
                    let off_star = inv_nu * (-a + 0.5 * (bt - b));
                    if off >= 0.0 || off_star >= 0.0 {
                        return Err(AssemblyError::DriftTooStrong {
                            from: node,
                            to: nb,
                            entry: off.max(off_star),
                        });
                    }
                    trip_l.push((i, j, off));
                    trip_ls.push((i, j, off_star));
                }
            }
        }
        trip_l.push((i, i, diag));
        trip_ls.push((i, i, diag));
    }

    let anchor_index = grid.index_of(ex.anchor()).ok_or_else(|| {
        AssemblyError::SpecDomainMismatch(format!(
            "anchor {:?} outside box of radius {radius}",
            ex.anchor()
        ))
    })?;

    Ok(AssembledOperator {
        grid,
        matrix: CsrMatrix::from_triplets(n, &mut trip_l),
        adjoint: CsrMatrix::from_triplets(n, &mut trip_ls),
        nu,
        weight,
        shift: 0.0,
        spec_hash: spec.stable_hash(),
        symmetric: spec.is_symmetric(),
        anchor_index,
    })
}

/// L - lambda * diag(W); the shift accumulates in the metadata.
pub fn shift(op: &AssembledOperator, lambda: f64) -> AssembledOperator {
    if lambda == 0.0 {
        return op.clone();
    }
    AssembledOperator {
        grid: op.grid,
        matrix: op.matrix.add_diag(-lambda, &op.weight),
        adjoint: op.adjoint.add_diag(-lambda, &op.weight),
        nu: op.nu.clone(),
        weight: op.weight.clone(),
        shift: op.shift + lambda,
        spec_hash: op.spec_hash,
        symmetric: op.symmetric,
        anchor_index: op.anchor_index,
    }
}

/// Doob transform L^h = D_h^{-1} L D_h for a positive function h on the box.
pub fn doob_transform(
    op: &AssembledOperator,
    h: &DVector<f64>,
) -> Result<AssembledOperator, AssemblyError> {
    for (i, &hv) in h.iter().enumerate() {
        if !(hv > 0.0) || !hv.is_finite() {
            return Err(AssemblyError::NonPositiveTransformFunction {
                node: op.grid.node_at(i),
                value: hv,
            });
        }
    }
    let conj = |m: &CsrMatrix, left: &DVector<f64>, right: &DVector<f64>| {
        let mut out = m.clone();
        for r in 0..m.n {
            for k in m.row_ptr[r]..m.row_ptr[r + 1] {
                out.values[k] = m.values[k] * right[m.col_idx[k]] / left[r];
            }
        }
        out
    };
    // (L^h)* = D_h L* D_h^{-1}
    Ok(AssembledOperator {
        grid: op.grid,
        matrix: conj(&op.matrix, h, h),
        adjoint: {
            let hinv = DVector::from_fn(h.len(), |i, _| 1.0 / h[i]);
            conj(&op.adjoint, &hinv, &hinv)
        },
        nu: op.nu.clone(),
        weight: op.weight.clone(),
        shift: op.shift,
        spec_hash: op.spec_hash,
        symmetric: false,
        anchor_index: op.anchor_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_exhaustion;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn path3(spec: &OperatorSpec) -> AssembledOperator {
        let ex = build_exhaustion(1, &[1], 1, None, |_| 1.0).unwrap();
        assemble(spec, &ex, 1).unwrap()
    }

    #[test]
    fn path3_free_laplacian_is_tridiagonal() {
        let op = path3(&OperatorSpec::laplacian());
        let expected =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        assert_eq!(op.dense(), expected);
        assert_eq!(op.dense_adjoint(), expected.transpose());
        assert!(op.symmetric);
    }

    #[test]
    fn adjoint_is_nu_weighted_transpose() {
        let ex = build_exhaustion(2, &[2], 3, None, |x| {
            1.0 + 0.25 * crate::lattice::sup_norm(x, 2) as f64
        })
        .unwrap();
        let spec = OperatorSpec {
            conductance: EdgeField::Checkerboard { even: 1.0, odd: 2.0 },
            drift_advection: DriftField::Vector([0.4, -0.3, 0.0]),
            drift_flux: DriftField::Vector([-0.1, 0.2, 0.0]),
            potential: NodeField::Constant(0.7),
            weight: NodeField::Constant(1.0),
        };
        let op = assemble(&spec, &ex, 2).unwrap();
        let l = op.dense();
        let ls = op.dense_adjoint();
        // L* = D_nu^{-1} L^T D_nu entrywise
        for i in 0..op.n() {
            for j in 0..op.n() {
                let expected = l[(j, i)] * op.nu[j] / op.nu[i];
                assert_relative_eq!(ls[(i, j)], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn adjointness_pairing_on_random_pairs() {
        let ex = build_exhaustion(1, &[6], 6, None, |_| 1.0).unwrap();
        let spec = OperatorSpec {
            conductance: EdgeField::Constant(1.0),
            drift_advection: DriftField::Vector([0.5, 0.0, 0.0]),
            drift_flux: DriftField::Zero,
            potential: NodeField::Constant(0.0),
            weight: NodeField::Constant(1.0),
        };
        let op = assemble(&spec, &ex, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = DVector::from_fn(op.n(), |_, _| rng.random::<f64>() - 0.5);
            let v = DVector::from_fn(op.n(), |_, _| rng.random::<f64>() - 0.5);
            let lu = op.matrix.matvec(&u);
            let lsv = op.adjoint.matvec(&v);
            let defect = (op.nu_inner(&lu, &v) - op.nu_inner(&u, &lsv)).abs();
            assert!(
                defect <= 1e-12 * u.norm() * v.norm() * 10.0,
                "defect {defect}"
            );
        }
    }

    #[test]
    fn shift_zero_is_identity_and_shifts_accumulate() {
        let op = path3(&OperatorSpec::laplacian());
        let same = shift(&op, 0.0);
        assert_eq!(op.dense(), same.dense());

        let shifted = shift(&op, -1.0);
        let d = shifted.dense();
        for i in 0..3 {
            assert_eq!(d[(i, i)], 3.0);
        }
        assert_eq!(shifted.shift, -1.0);

        let twice = shift(&shift(&op, -0.25), -0.5);
        let once = shift(&op, -0.75);
        assert_relative_eq!(
            crate::linalg::max_abs(&(twice.dense() - once.dense())),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn doob_identity_transform_is_noop() {
        let op = path3(&OperatorSpec::laplacian());
        let h = DVector::from_element(3, 1.0);
        let t = doob_transform(&op, &h).unwrap();
        assert_eq!(op.dense(), t.dense());
    }

    #[test]
    fn doob_conjugation_matches_dense_and_row_sums() {
        let op = path3(&OperatorSpec::laplacian());
        let h = DVector::from_vec(vec![1.0, 2.0, 1.0]);
        let t = doob_transform(&op, &h).unwrap();
        let l = op.dense();
        let mut expected = l.clone();
        for i in 0..3 {
            for j in 0..3 {
                expected[(i, j)] = l[(i, j)] * h[j] / h[i];
            }
        }
        assert_relative_eq!(
            crate::linalg::max_abs(&(t.dense() - &expected)),
            0.0,
            epsilon = 1e-14
        );
        // row sums of L^h equal (Lh)/h per node
        let lh = &l * &h;
        for i in 0..3 {
            let row_sum: f64 = t.dense().row(i).iter().sum();
            assert_relative_eq!(row_sum, lh[i] / h[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn doob_preserves_spectrum() {
        let ex = build_exhaustion(1, &[4], 4, None, |_| 1.0).unwrap();
        let spec = OperatorSpec {
            conductance: EdgeField::Constant(1.0),
            drift_advection: DriftField::Vector([0.3, 0.0, 0.0]),
            drift_flux: DriftField::Zero,
            potential: NodeField::Constant(0.2),
            weight: NodeField::Constant(1.0),
        };
        let op = assemble(&spec, &ex, 4).unwrap();
        let h = DVector::from_fn(op.n(), |i, _| 1.0 + 0.3 * (i as f64 * 0.9).sin().abs());
        let t = doob_transform(&op, &h).unwrap();
        let eig = |m: &DMatrix<f64>| crate::linalg::complex_eigenvalues(m).unwrap();
        let mut ev_a: Vec<f64> = eig(&op.dense()).iter().map(|z| z.re).collect();
        let mut ev_b: Vec<f64> = eig(&t.dense()).iter().map(|z| z.re).collect();
        ev_a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev_b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (a, b) in ev_a.iter().zip(ev_b.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn doob_rejects_nonpositive_h() {
        let op = path3(&OperatorSpec::laplacian());
        let h = DVector::from_vec(vec![1.0, -2.0, 1.0]);
        assert!(matches!(
            doob_transform(&op, &h),
            Err(AssemblyError::NonPositiveTransformFunction { .. })
        ));
    }

    #[test]
    fn strong_drift_is_rejected() {
        let ex = build_exhaustion(1, &[2], 2, None, |_| 1.0).unwrap();
        let spec = OperatorSpec {
            conductance: EdgeField::Constant(1.0),
            drift_advection: DriftField::Vector([2.5, 0.0, 0.0]),
            drift_flux: DriftField::Zero,
            potential: NodeField::Constant(0.0),
            weight: NodeField::Constant(1.0),
        };
        assert!(matches!(
            assemble(&spec, &ex, 2),
            Err(AssemblyError::DriftTooStrong { .. })
        ));
    }

    #[test]
    fn nonpositive_conductance_is_rejected() {
        let ex = build_exhaustion(1, &[1], 1, None, |_| 1.0).unwrap();
        let spec = OperatorSpec {
            conductance: EdgeField::Constant(0.0),
            ..OperatorSpec::laplacian()
        };
        assert!(matches!(
            assemble(&spec, &ex, 1),
            Err(AssemblyError::NonPositiveConductance { .. })
        ));
    }

    #[test]
    fn nonpositive_weight_is_rejected() {
        let ex = build_exhaustion(1, &[1], 1, None, |_| 1.0).unwrap();
        let spec = OperatorSpec {
            weight: NodeField::BoxBump {
                floor: 0.0,
                height: 1.0,
                radius: 0,
            },
            ..OperatorSpec::laplacian()
        };
        assert!(matches!(
            assemble(&spec, &ex, 1),
            Err(AssemblyError::NonPositiveWeight { .. })
        ));
    }
}
