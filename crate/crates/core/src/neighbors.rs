//! Reference-set ordering, the nearest-neighbor DAG and neighbor sets for
//! arbitrary locations.
//!
//! Two neighbor structures live on a [`NeighborGraph`]:
//!
//! * `N(s_i)`, the conditioning set of the Vecchia factorization: the `m`
//!   nearest *earlier* sites in the ordering. Edges always point to lower
//!   indices, so the graph is a DAG.
//! * `N0(s_i)`, the gradient stencil of a reference site: `s_i` first, followed
//!   by the sites used to predict at `s_i + h u` for small `h`. A location `v`
//!   off the reference set uses `N(v) = N0(s_i)` of its closest site `s_i`,
//!   which makes the two coincide in the limit `v -> s_i`.
//!
//! How `N0` is filled is controlled by [`StencilRule`]. The default
//! ([`StencilRule::Nearest`]) takes the `m` nearest reference sites of `s_i`
//! in either ordering direction; [`StencilRule::Predecessors`] keeps only the
//! truncated DAG list `{s_i} ∪ N(s_i)[..m-1]`.
//!
//! Nearest-neighbor queries are exact. Distances tie-break on the lower index
//! so the graph is identical across platforms.

use std::cmp::Ordering;

use log::warn;

use crate::error::{NndpError, Result};
use crate::kernel::dist2;

/// Flat row-major coordinates of points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(NndpError::InvalidParameter("dimension must be at least 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(NndpError::LengthMismatch {
                what: "coordinates",
                expected: (coords.len() / dim + 1) * dim,
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(NndpError::NonFinite("coordinates"));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(NndpError::Empty("points"))?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(NndpError::DimensionMismatch { expected: dim, found: r.len() });
            }
            coords.extend_from_slice(r);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn subset(&self, idx: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Points { dim: self.dim, coords }
    }
}

/// How the reference set is topologically ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderingScheme {
    /// Sort by the sum of coordinates, then lexicographically.
    #[default]
    CoordinateSum,
    /// Sort lexicographically by coordinates.
    Lexicographic,
    /// Keep the input order.
    Input,
}

impl std::str::FromStr for OrderingScheme {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" | "coordinate-sum" => Ok(Self::CoordinateSum),
            "lex" | "lexicographic" => Ok(Self::Lexicographic),
            "input" | "none" => Ok(Self::Input),
            other => Err(NndpError::InvalidConfig(format!("unknown ordering '{other}'"))),
        }
    }
}

/// Ordered reference locations `s_1..s_k` with a spatial index.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    points: Points,
    input_index: Vec<usize>,
    min_separation: f64,
    tree: KdTree,
}

/// Orders `points` and indexes them. Duplicate locations are rejected.
pub fn order_reference(points: &Points, scheme: OrderingScheme) -> Result<ReferenceSet> {
    if points.is_empty() {
        return Err(NndpError::Empty("reference set"));
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    let lex = |a: &[f64], b: &[f64]| -> Ordering {
        for (x, y) in a.iter().zip(b) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    match scheme {
        OrderingScheme::CoordinateSum => order.sort_by(|&i, &j| {
            let (a, b) = (points.point(i), points.point(j));
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            sa.total_cmp(&sb).then_with(|| lex(a, b))
        }),
        OrderingScheme::Lexicographic => order.sort_by(|&i, &j| lex(points.point(i), points.point(j))),
        OrderingScheme::Input => {}
    }
    let ordered = points.subset(&order);
    let tree = KdTree::build(&ordered);
    let mut min_sep2 = f64::INFINITY;
    for i in 0..n {
        if let Some(&(d2, j)) = tree.knn(ordered.point(i), 1, n, Some(i)).first() {
            if d2 == 0.0 {
                let (a, b) = (order[i].min(order[j]), order[i].max(order[j]));
                return Err(NndpError::DuplicateLocation { first: a, second: b });
            }
            min_sep2 = min_sep2.min(d2);
        }
    }
    Ok(ReferenceSet { points: ordered, input_index: order, min_separation: min_sep2.sqrt(), tree })
}

/// Where a query location sits relative to the reference set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    /// Coincides with reference site `i` (within tolerance).
    Reference(usize),
    /// Off the reference set with a unique closest site.
    Off { closest: usize },
}

/// What to do when a query lands on the equidistance set `Z1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneracyPolicy {
    /// Report [`NndpError::EquidistantQuery`].
    #[default]
    Strict,
    /// Move the query by `1e-9 * iota` along a fixed direction and warn.
    Perturb,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.point(i)
    }

    /// Input row of ordered site `i`.
    pub fn input_index(&self, i: usize) -> usize {
        self.input_index[i]
    }

    /// Permutation from ordered position to input row.
    pub fn permutation(&self) -> &[usize] {
        &self.input_index
    }

    /// Minimal pairwise separation `iota`; infinite for a single site.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    /// Length scale for tolerances: `iota`, or 1 for a single site.
    pub fn scale(&self) -> f64 {
        if self.min_separation.is_finite() {
            self.min_separation
        } else {
            1.0
        }
    }

    /// Coincidence and equidistance tolerance, `1e-12 * iota`.
    pub fn tolerance(&self) -> f64 {
        1e-12 * self.scale()
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in self.points.iter() {
            for a in 0..d {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn contains_in_box(&self, v: &[f64]) -> bool {
        let (lo, hi) = self.bounding_box();
        v.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    /// Exact `k` nearest sites to `v`, restricted to indices `< limit` and
    /// optionally excluding one index. Sorted by `(distance, index)`.
    pub fn nearest(&self, v: &[f64], k: usize, limit: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        self.tree.knn(v, k, limit, exclude).into_iter().map(|(d2, i)| (d2.sqrt(), i)).collect()
    }

    /// Classifies `v` as a reference site or an off-set location with a unique
    /// closest site; equidistant closest sites are an error.
    pub fn locate(&self, v: &[f64]) -> Result<Location> {
        if v.len() != self.dim() {
            return Err(NndpError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        let near = self.nearest(v, 2, self.len(), None);
        let tol = self.tolerance();
        let (d1, i1) = near[0];
        if d1 <= tol {
            return Ok(Location::Reference(i1));
        }
        if let Some(&(d2, i2)) = near.get(1) {
            if d2 - d1 <= tol {
                return Err(NndpError::EquidistantQuery { first: i1.min(i2), second: i1.max(i2) });
            }
        }
        Ok(Location::Off { closest: i1 })
    }

    /// Like [`locate`](Self::locate), applying `policy` to equidistant queries.
    /// Returns the (possibly perturbed) query together with its location.
    pub fn locate_with(&self, v: &[f64], policy: DegeneracyPolicy) -> Result<(Vec<f64>, Location)> {
        let (moved, loc, perturbed) = self.locate_quiet(v, policy)?;
        if perturbed {
            warn!("query {v:?} equidistant to its two closest sites; perturbed by {:e}", 1e-9 * self.scale());
        }
        Ok((moved, loc))
    }

    /// [`locate_with`](Self::locate_with) without logging; also reports
    /// whether the query was moved.
    pub fn locate_quiet(&self, v: &[f64], policy: DegeneracyPolicy) -> Result<(Vec<f64>, Location, bool)> {
        match self.locate(v) {
            Ok(loc) => Ok((v.to_vec(), loc, false)),
            Err(NndpError::EquidistantQuery { .. }) if policy == DegeneracyPolicy::Perturb => {
                let w = perturbation_direction(self.dim());
                let step = 1e-9 * self.scale();
                let moved: Vec<f64> = v.iter().zip(&w).map(|(x, d)| x + step * d).collect();
                let loc = self.locate(&moved)?;
                Ok((moved, loc, true))
            }
            Err(e) => Err(e),
        }
    }

    /// Whether `v` belongs to the equidistance set `Z1`.
    pub fn is_equidistant(&self, v: &[f64]) -> bool {
        matches!(self.locate(v), Err(NndpError::EquidistantQuery { .. }))
    }
}

fn perturbation_direction(dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![1.0],
        2 => vec![0.6, 0.8],
        _ => {
            let raw: Vec<f64> = (1..=dim).map(|k| k as f64).collect();
            let n = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            raw.into_iter().map(|c| c / n).collect()
        }
    }
}

/// Compressed rows of index lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexLists {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl IndexLists {
    fn from_rows(rows: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut offsets = vec![0];
        let mut items = Vec::new();
        for r in rows {
            items.extend(r);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Position of row `i` in the flat item array.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }
}

/// How the gradient stencil `N0(s_i)` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StencilRule {
    /// `{s_i}` followed by the `m` nearest other reference sites.
    #[default]
    Nearest,
    /// `{s_i}` followed by `N(s_i)` truncated to `m - 1` entries.
    Predecessors,
}

impl std::str::FromStr for StencilRule {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "predecessors" | "dag" => Ok(Self::Predecessors),
            other => Err(NndpError::InvalidConfig(format!("unknown stencil rule '{other}'"))),
        }
    }
}

/// The nearest-neighbor DAG plus gradient stencils and reverse edges.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    m: usize,
    rule: StencilRule,
    parents: IndexLists,
    children: IndexLists,
    stencils: IndexLists,
}

/// Builds `N(s_i)` (the `m` nearest earlier sites) for every site, and the
/// stencils `N0(s_i)` per `rule`.
pub fn build_graph(reference: &ReferenceSet, m: usize, rule: StencilRule) -> Result<NeighborGraph> {
    if m == 0 {
        return Err(NndpError::InvalidParameter("neighbor count m must be at least 1".into()));
    }
    let k = reference.len();
    let parents: Vec<Vec<usize>> = (0..k)
        .map(|i| reference.nearest(reference.point(i), m, i, None).into_iter().map(|(_, j)| j).collect())
        .collect();
    let mut children = vec![Vec::new(); k];
    for (i, p) in parents.iter().enumerate() {
        for &j in p {
            children[j].push(i);
        }
    }
    let stencils: Vec<Vec<usize>> = match rule {
        StencilRule::Predecessors => parents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = Vec::with_capacity(m);
                s.push(i);
                s.extend(p.iter().take(m - 1));
                s
            })
            .collect(),
        StencilRule::Nearest => (0..k)
            .map(|i| {
                let mut s = Vec::with_capacity(m + 1);
                s.push(i);
                s.extend(reference.nearest(reference.point(i), m, k, Some(i)).into_iter().map(|(_, j)| j));
                s
            })
            .collect(),
    };
    Ok(NeighborGraph {
        m,
        rule,
        parents: IndexLists::from_rows(parents),
        children: IndexLists::from_rows(children),
        stencils: IndexLists::from_rows(stencils),
    })
}

impl NeighborGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rule(&self) -> StencilRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// `N(s_i)`, sorted by increasing distance.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.parents.row(i)
    }

    pub fn neighbor_lists(&self) -> &IndexLists {
        &self.parents
    }

    /// Sites `j > i` with `i` in `N(s_j)`.
    pub fn children(&self, i: usize) -> &[usize] {
        self.children.row(i)
    }

    /// `N0(s_i)`, with `i` first.
    pub fn stencil(&self, i: usize) -> &[usize] {
        self.stencils.row(i)
    }
}

/// Neighbor set of a new location.
#[derive(Debug, Clone, PartialEq)]
pub struct NewNeighbors {
    /// The closest reference site.
    pub closest: usize,
    /// `N(v) = N0(s_closest)`.
    pub set: Vec<usize>,
}

/// `N(v)` for `v` off the reference set.
pub fn neighbors_of_new(reference: &ReferenceSet, graph: &NeighborGraph, v: &[f64]) -> Result<NewNeighbors> {
    match reference.locate(v)? {
        Location::Reference(i) => Err(NndpError::CoincidesWithReference(i)),
        Location::Off { closest } => Ok(NewNeighbors { closest, set: graph.stencil(closest).to_vec() }),
    }
}

/// Classification of a location pair with respect to the degenerate sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    Valid,
    /// At least one member is equidistant to its two closest sites.
    Z1Degenerate,
    /// Both members lie in `Z1`, or `v1 == v2` off the reference set. The
    /// value/gradient cross-covariance has no limit here.
    Z2Degenerate,
}

pub fn check_degenerate_pair(v1: &[f64], v2: &[f64], reference: &ReferenceSet) -> PairClass {
    let z1a = reference.is_equidistant(v1);
    let z1b = reference.is_equidistant(v2);
    let same = v1 == v2;
    let on_reference = matches!(reference.locate(v1), Ok(Location::Reference(_)));
    if (same && !on_reference) || (z1a && z1b) {
        PairClass::Z2Degenerate
    } else if z1a || z1b {
        PairClass::Z1Degenerate
    } else {
        PairClass::Valid
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
struct KdNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    min_id: usize,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Static k-d tree over indexed points with exact filtered k-NN queries.
#[derive(Debug, Clone)]
struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    fn build(points: &Points) -> Self {
        let dim = points.dim();
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !ids.is_empty() {
            Self::build_node(points, &mut ids, 0, points.len(), &mut nodes);
        }
        let mut coords = Vec::with_capacity(points.coords().len());
        for &i in &ids {
            coords.extend_from_slice(points.point(i));
        }
        KdTree { dim, coords, ids, nodes }
    }

    fn build_node(points: &Points, ids: &mut [usize], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
        let dim = points.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut min_id = usize::MAX;
        for &i in &ids[start..end] {
            let p = points.point(i);
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            min_id = min_id.min(i);
        }
        let me = nodes.len();
        nodes.push(KdNode { lo: lo.clone(), hi: hi.clone(), min_id, start, end, children: None });
        if end - start > LEAF_SIZE {
            let axis = (0..dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
            let mid = (start + end) / 2;
            ids[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
                points.point(i)[axis].total_cmp(&points.point(j)[axis]).then(i.cmp(&j))
            });
            let left = Self::build_node(points, ids, start, mid, nodes);
            let right = Self::build_node(points, ids, mid, end, nodes);
            nodes[me].children = Some((left, right));
        }
        me
    }

    fn box_dist2(node: &KdNode, q: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..q.len() {
            let d = if q[a] < node.lo[a] {
                node.lo[a] - q[a]
            } else if q[a] > node.hi[a] {
                q[a] - node.hi[a]
            } else {
                0.0
            };
            s += d * d;
        }
        s
    }

    /// `k` nearest ids `< limit`, excluding `exclude`, as `(squared distance, id)`.
    fn knn(&self, q: &[f64], k: usize, limit: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.min_id >= limit {
                continue;
            }
            let bound = Self::box_dist2(node, q);
            if best.len() == k && bound > best[k - 1].0 {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = Self::box_dist2(&self.nodes[l], q);
                    let dr = Self::box_dist2(&self.nodes[r], q);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for slot in node.start..node.end {
                        let id = self.ids[slot];
                        if id >= limit || Some(id) == exclude {
                            continue;
                        }
                        let p = &self.coords[slot * self.dim..(slot + 1) * self.dim];
                        let cand = (dist2(p, q), id);
                        if best.len() < k || cmp_cand(&cand, &best[best.len() - 1]) == Ordering::Less {
                            let pos = best.partition_point(|b| cmp_cand(b, &cand) == Ordering::Less);
                            best.insert(pos, cand);
                            best.truncate(k);
                        }
                    }
                }
            }
        }
        best
    }
}

fn cmp_cand(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
