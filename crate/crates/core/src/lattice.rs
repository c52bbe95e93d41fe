//! Finite lattice boxes in Z^d, nested exhaustions, node measures and tail
//! regions.
//!
//! A "box of radius k" is the sup-norm ball {x : |x|_inf <= k} with
//! (2k+1)^d nodes. The infinite domain is represented by a finite ambient
//! box of radius `ambient_radius`; every tail region is truncated there.
//! Node ordering is lexicographic by coordinates, so rebuilding with equal
//! inputs yields bit-identical orderings and all downstream matrices
//! inherit a deterministic layout.

use crate::error::LatticeError;

/// A lattice node. Coordinates beyond the active dimension are zero.
pub type Node = [i64; 3];

pub fn sup_norm(node: Node, dim: usize) -> i64 {
    (0..dim).map(|i| node[i].abs()).max().unwrap_or(0)
}

/// Sup-norm box of a given radius with lexicographic node indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub dim: usize,
    pub radius: i64,
}

impl GridBox {
    pub fn new(dim: usize, radius: i64) -> Self {
        GridBox { dim, radius }
    }

    pub fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    pub fn node_count(&self) -> usize {
        (self.side() as usize).pow(self.dim as u32)
    }

    pub fn contains(&self, node: Node) -> bool {
        (0..self.dim).all(|i| node[i].abs() <= self.radius)
            && (self.dim..3).all(|i| node[i] == 0)
    }

    /// Lexicographic index of a node within this box.
    pub fn index_of(&self, node: Node) -> Option<usize> {
        if !self.contains(node) {
            return None;
        }
        let side = self.side();
        let mut idx: i64 = 0;
        for i in 0..self.dim {
            idx = idx * side + (node[i] + self.radius);
        }
        Some(idx as usize)
    }

    pub fn node_at(&self, mut idx: usize) -> Node {
        let side = self.side() as usize;
        let mut node = [0i64; 3];
        for i in (0..self.dim).rev() {
            node[i] = (idx % side) as i64 - self.radius;
            idx /= side;
        }
        node
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.node_count()).map(move |i| self.node_at(i))
    }

    /// Lattice neighbors of `node` within the same dimension (not clipped
    /// to the box).
    pub fn neighbors(&self, node: Node) -> impl Iterator<Item = Node> + '_ {
        let dim = self.dim;
        (0..dim).flat_map(move |i| {
            [1i64, -1].into_iter().map(move |s| {
                let mut y = node;
                y[i] += s;
                y
            })
        })
    }
}

/// Nested family of boxes with a node measure on the ambient box.
#[derive(Debug, Clone)]
pub struct Exhaustion {
    dim: usize,
    radii: Vec<i64>,
    ambient: GridBox,
    anchor: Node,
    /// nu(x) > 0 per ambient node, lexicographic order.
    measure: Vec<f64>,
}

impl Exhaustion {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radii(&self) -> &[i64] {
        &self.radii
    }

    pub fn ambient(&self) -> GridBox {
        self.ambient
    }

    pub fn ambient_radius(&self) -> i64 {
        self.ambient.radius
    }

    pub fn anchor(&self) -> Node {
        self.anchor
    }

    pub fn grid_box(&self, radius: i64) -> GridBox {
        GridBox::new(self.dim, radius)
    }

    pub fn measure_at(&self, node: Node) -> f64 {
        let idx = self
            .ambient
            .index_of(node)
            .expect("node outside ambient box");
        self.measure[idx]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn contains_radius(&self, k: i64) -> bool {
        self.radii.contains(&k)
    }

    /// Measure vector restricted to a box, in the box's local ordering.
    pub fn measure_on_box(&self, b: GridBox) -> Vec<f64> {
        b.nodes().map(|x| self.measure_at(x)).collect()
    }
}

/// Ordered node list with its parent-box indexing.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub nodes: Vec<Node>,
    /// Indices of `nodes` within the ambient box ordering.
    pub ambient_indices: Vec<usize>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    /// Nodes of the ambient box at sup-distance > k from the origin.
    OpenTail,
}

pub fn build_exhaustion(
    dim: usize,
    radii: &[i64],
    ambient_radius: i64,
    anchor: Option<Node>,
    measure_spec: impl Fn(Node) -> f64,
) -> Result<Exhaustion, LatticeError> {
    if !(1..=3).contains(&dim) {
        return Err(LatticeError::BadDimension(dim));
    }
    if radii.is_empty() {
        return Err(LatticeError::NonIncreasingRadii(0, 0));
    }
    if radii[0] < 0 {
        return Err(LatticeError::NonIncreasingRadii(radii[0], radii[0]));
    }
    for w in radii.windows(2) {
        if w[1] <= w[0] {
            return Err(LatticeError::NonIncreasingRadii(w[1], w[0]));
        }
    }
    let largest = *radii.last().unwrap();
    if ambient_radius < largest {
        return Err(LatticeError::AmbientTooSmall {
            ambient: ambient_radius,
            radius: largest,
        });
    }
    let ambient = GridBox::new(dim, ambient_radius);
    let anchor = anchor.unwrap_or([0, 0, 0]);
    let smallest = GridBox::new(dim, radii[0]);
    if !smallest.contains(anchor) {
        return Err(LatticeError::AnchorOutsideSmallestBox(anchor));
    }
    let mut measure = Vec::with_capacity(ambient.node_count());
    for node in ambient.nodes() {
        let v = measure_spec(node);
        if !(v > 0.0) || !v.is_finite() {
            return Err(LatticeError::NonPositiveMeasure { node, value: v });
        }
        measure.push(v);
    }
    Ok(Exhaustion {
        dim,
        radii: radii.to_vec(),
        ambient,
        anchor,
        measure,
    })
}

/// Nodes of the ambient box at sup-distance > k from the origin, in
/// ambient (lexicographic) order.
pub fn tail_region(ex: &Exhaustion, k: i64, _mode: TailMode) -> Result<NodeSet, LatticeError> {
    if !ex.contains_radius(k) {
        return Err(LatticeError::UnknownRadius(k));
    }
    tail_region_unchecked(ex.ambient(), k)
}

pub(crate) fn tail_region_unchecked(
    ambient: GridBox,
    k: i64,
) -> Result<NodeSet, LatticeError> {
    let mut nodes = Vec::new();
    let mut ambient_indices = Vec::new();
    for (idx, node) in ambient.nodes().enumerate() {
        if sup_norm(node, ambient.dim) > k {
            nodes.push(node);
            ambient_indices.push(idx);
        }
    }
    Ok(NodeSet {
        nodes,
        ambient_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_1d_box_has_three_nodes() {
        let ex = build_exhaustion(1, &[1], 1, None, |_| 1.0).unwrap();
        let b = ex.grid_box(1);
        assert_eq!(b.node_count(), 3);
        let nodes: Vec<Node> = b.nodes().collect();
        assert_eq!(nodes, vec![[-1, 0, 0], [0, 0, 0], [1, 0, 0]]);
    }

    #[test]
    fn box_counts_follow_side_power_d() {
        let ex = build_exhaustion(2, &[2, 4], 8, None, |_| 1.0).unwrap();
        assert_eq!(ex.grid_box(2).node_count(), 25);
        assert_eq!(ex.grid_box(4).node_count(), 81);
        assert_eq!(ex.ambient().node_count(), 289);
    }

    #[test]
    fn non_increasing_radii_rejected() {
        let err = build_exhaustion(1, &[3, 2], 4, None, |_| 1.0).unwrap_err();
        assert!(matches!(err, LatticeError::NonIncreasingRadii(2, 3)));
    }

    #[test]
    fn non_positive_measure_reports_node() {
        let err = build_exhaustion(1, &[1], 2, None, |x| if x[0] == 2 { 0.0 } else { 1.0 })
            .unwrap_err();
        match err {
            LatticeError::NonPositiveMeasure { node, value } => {
                assert_eq!(node, [2, 0, 0]);
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tail_region_1d() {
        let ex = build_exhaustion(1, &[1, 3], 3, None, |_| 1.0).unwrap();
        let tail = tail_region(&ex, 1, TailMode::OpenTail).unwrap();
        let coords: Vec<i64> = tail.nodes.iter().map(|n| n[0]).collect();
        assert_eq!(coords, vec![-3, -2, 2, 3]);
    }

    #[test]
    fn tail_region_counts_2d() {
        let ex = build_exhaustion(2, &[2], 4, None, |_| 1.0).unwrap();
        let tail = tail_region(&ex, 2, TailMode::OpenTail).unwrap();
        assert_eq!(tail.len(), 81 - 25);
    }

    #[test]
    fn tail_region_empty_at_ambient() {
        let ex = build_exhaustion(3, &[2], 2, None, |_| 1.0).unwrap();
        let tail = tail_region(&ex, 2, TailMode::OpenTail).unwrap();
        assert!(tail.is_empty());
    }

    #[test]
    fn tail_of_unknown_radius_rejected() {
        let ex = build_exhaustion(2, &[2], 4, None, |_| 1.0).unwrap();
        assert!(matches!(
            tail_region(&ex, 3, TailMode::OpenTail),
            Err(LatticeError::UnknownRadius(3))
        ));
    }

    #[test]
    fn tail_and_box_partition_ambient() {
        let ex = build_exhaustion(2, &[1, 3], 5, None, |_| 1.0).unwrap();
        for &k in ex.radii() {
            let tail = tail_region(&ex, k, TailMode::OpenTail).unwrap();
            assert_eq!(
                tail.len() + ex.grid_box(k).node_count(),
                ex.ambient().node_count()
            );
            for node in &tail.nodes {
                assert!(sup_norm(*node, 2) > k);
            }
        }
    }

    #[test]
    fn rebuild_gives_identical_ordering() {
        let mk = || build_exhaustion(3, &[1, 2], 3, None, |x| 1.0 + x[0] as f64 * 0.0 + 1e-9).unwrap();
        let a = mk();
        let b = mk();
        let na: Vec<Node> = a.ambient().nodes().collect();
        let nb: Vec<Node> = b.ambient().nodes().collect();
        assert_eq!(na, nb);
        assert_eq!(a.measure(), b.measure());
    }

    #[test]
    fn index_roundtrip_is_lexicographic() {
        let b = GridBox::new(3, 2);
        let mut prev: Option<Node> = None;
        for i in 0..b.node_count() {
            let n = b.node_at(i);
            assert_eq!(b.index_of(n), Some(i));
            if let Some(p) = prev {
                assert!(p < n, "ordering must be lexicographic");
            }
            prev = Some(n);
        }
    }

    #[test]
    fn radial_measure_is_positive_and_anchored() {
        let ex = build_exhaustion(2, &[2], 4, Some([1, 0, 0]), |x| {
            (1.0 + sup_norm(x, 2) as f64).powf(1.5)
        })
        .unwrap();
        assert_eq!(ex.anchor(), [1, 0, 0]);
        assert!(ex.measure().iter().all(|&v| v > 0.0));
        assert_eq!(ex.measure_at([0, 0, 0]), 1.0);
        assert_eq!(ex.measure_at([4, 4, 0]), 5.0f64.powf(1.5));
    }
}
