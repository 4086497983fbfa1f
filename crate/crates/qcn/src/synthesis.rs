//! Compiles a basic graph (vertices = intersections, edges = straight road
//! or haul-route segments) into a quasi cellular net.
//!
//! Each edge is discretized into a chain of tangent-or-closer cells:
//! `n = max(1, ceil(L / 2R))` intervals of spacing `s = L/n <= 2R`, so every
//! consecutive pair satisfies the neighborhood predicate by construction.
//! Multiband edges lay `lanes` parallel rows offset `2R` apart; a stripe
//! separator suppresses the cross-row neighborhood instead of linking it.
//!
//! Endpoint cells that land on a vertex position merge into one shared cell
//! per vertex, and that cell's directions are the first steps of the edges
//! leaving the vertex, weighted by the vertex's branch rule. Off-axis rows
//! of multiband and bidirectional edges do not pass through vertices and
//! therefore do not connect across them; junction continuity is defined for
//! the on-axis rows only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::net::{
    neighbor_predicate, Cell, CellId, CellKind, DirectionVector, NetError, NetTopology, Position,
};
use crate::num::{positive, real, sum_tolerance, Scalar};

/// Vertex identifier within a basic graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Vertex<T: Scalar> {
    pub id: VertexId,
    #[serde(flatten)]
    pub position: Position<T>,
}

/// A straight road segment. Edges are referenced by their index in
/// [`BasicGraph::edges`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: VertexId,
    pub to: VertexId,
    #[serde(default = "one_lane")]
    pub lanes: u32,
    /// Stripe separator between adjacent rows: suppresses lane changes.
    #[serde(default)]
    pub separator: bool,
    /// Adds a mirrored carriageway running `to -> from`.
    #[serde(default)]
    pub bidirectional: bool,
}

fn one_lane() -> u32 {
    1
}

impl Edge {
    /// Plain one-lane one-way segment.
    pub fn lane(from: VertexId, to: VertexId) -> Self {
        Edge {
            from,
            to,
            lanes: 1,
            separator: false,
            bidirectional: false,
        }
    }
}

/// Branch probabilities for the edges leaving one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BranchRule<T: Scalar> {
    pub vertex: VertexId,
    /// (edge index, probability); must cover every edge leaving the vertex
    /// and sum to 1 within 1e-9.
    pub branches: Vec<(usize, T)>,
}

/// The road / haul-route network a net is synthesized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BasicGraph<T: Scalar> {
    pub vertices: Vec<Vertex<T>>,
    pub edges: Vec<Edge>,
}

impl<T: Scalar> BasicGraph<T> {
    pub fn vertex(&self, id: VertexId) -> Option<&Vertex<T>> {
        self.vertices.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("edge {edge}: endpoints coincide")]
    DegenerateEdge { edge: usize },
    #[error("edge {edge}: vertex {vertex} does not exist")]
    UnknownVertex { edge: usize, vertex: VertexId },
    #[error("duplicate vertex id {vertex}")]
    DuplicateVertex { vertex: VertexId },
    #[error("edge {edge}: lanes must be >= 1")]
    ZeroLanes { edge: usize },
    #[error("branch rule at vertex {vertex}: edge {edge} does not leave this vertex's cell")]
    UnreachableBranch { vertex: VertexId, edge: usize },
    #[error("branch rule at vertex {vertex} does not cover outgoing edge {edge}")]
    IncompleteBranchRule { vertex: VertexId, edge: usize },
    #[error("vertex {vertex} has {outgoing} outgoing edges but no branch rule")]
    MissingBranchRule { vertex: VertexId, outgoing: usize },
    #[error("branch rule at vertex {vertex}: probabilities sum to {sum}")]
    BranchProbabilitySum { vertex: VertexId, sum: f64 },
    #[error("duplicate branch rule for vertex {vertex}")]
    DuplicateBranchRule { vertex: VertexId },
    #[error("cell {cell} assigned more than one kind")]
    DuplicateAssignment { cell: CellId },
    #[error("assignment references unknown cell {cell}")]
    UnknownCell { cell: CellId },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// One synthesized cell: its center and the translation vector it carries.
pub type LaneCell<T> = (Position<T>, DirectionVector<T>);

/// Discretize the segment `a -> b` into `n+1` cells of spacing
/// `s = L / max(1, ceil(L / 2R)) <= 2R`, each carrying the translation
/// vector of length `s` toward `b` (the final cell points past `b`).
/// Consecutive cells are guaranteed predicate-neighbors; if rounding ever
/// breaks the boundary case the interval count is bumped until it holds.
pub fn discretize_edge<T: Scalar>(
    a: Position<T>,
    b: Position<T>,
    radius: T,
) -> Result<Vec<LaneCell<T>>, SynthesisError> {
    discretize_indexed(a, b, radius, usize::MAX)
}

fn discretize_indexed<T: Scalar>(
    a: Position<T>,
    b: Position<T>,
    radius: T,
    edge: usize,
) -> Result<Vec<LaneCell<T>>, SynthesisError> {
    let length = a.distance_squared(&b).sqrt();
    if !positive(length) {
        return Err(SynthesisError::DegenerateEdge { edge });
    }
    let two_r = real::<T>(2.0) * radius;
    let mut intervals = (length / two_r).ceil().max(T::one());

    loop {
        let n = intervals.to_usize().expect("interval count fits usize");
        let positions: Vec<Position<T>> = (0..=n)
            .map(|i| {
                if i == 0 {
                    a
                } else if i == n {
                    b
                } else {
                    let t = real::<T>(i as f64) / intervals;
                    Position::new(
                        a.x + (b.x - a.x) * t,
                        a.y + (b.y - a.y) * t,
                        a.z + (b.z - a.z) * t,
                    )
                }
            })
            .collect();
        let chained = positions
            .windows(2)
            .all(|w| neighbor_predicate(&w[0], &w[1], radius));
        if !chained {
            // Floating rounding pushed a boundary pair past 2R; shrink the
            // spacing and retry.
            intervals = intervals + T::one();
            continue;
        }

        let cells = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let next = if i < n { positions[i + 1] } else { p };
                let prev = if i < n { p } else { positions[n - 1] };
                let step = DirectionVector::new(
                    next.x - prev.x,
                    next.y - prev.y,
                    next.z - prev.z,
                    T::one(),
                );
                (p, step)
            })
            .collect();
        return Ok(cells);
    }
}

/// Lane rows of [`build_multiband`]: flattened cells, per-row index ranges,
/// and the cross-row pairs a separator voids.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandRows<T: Scalar> {
    pub cells: Vec<LaneCell<T>>,
    pub rows: Vec<Range<usize>>,
    /// Local index pairs within `cells`; empty when `separator` is false.
    pub separator_pairs: Vec<(usize, usize)>,
}

/// Lay `lanes` parallel rows for the segment `a -> b`, offset perpendicular
/// to it at spacing `2R` and centered on the axis. Adjacent rows are
/// predicate-neighbors laterally; with `separator = true` those cross-row
/// pairs are returned for exclusion instead of being left as lane-change
/// links.
pub fn build_multiband<T: Scalar>(
    a: Position<T>,
    b: Position<T>,
    radius: T,
    lanes: u32,
    separator: bool,
) -> Result<MultibandRows<T>, SynthesisError> {
    let rows = lane_rows(a, b, radius, lanes, false, usize::MAX)?;
    Ok(collect_rows(rows, radius, separator))
}

/// One directed row per lane (both carriageways when bidirectional),
/// ordered forward rows first.
fn lane_rows<T: Scalar>(
    a: Position<T>,
    b: Position<T>,
    radius: T,
    lanes: u32,
    bidirectional: bool,
    edge: usize,
) -> Result<Vec<Vec<LaneCell<T>>>, SynthesisError> {
    let length = a.distance_squared(&b).sqrt();
    if !positive(length) {
        return Err(SynthesisError::DegenerateEdge { edge });
    }
    let unit = (
        (b.x - a.x) / length,
        (b.y - a.y) / length,
        (b.z - a.z) / length,
    );
    let perp = perpendicular(unit);
    let total = lanes * if bidirectional { 2 } else { 1 };
    let two_r = real::<T>(2.0) * radius;
    let half_span = real::<T>((total - 1) as f64) / real::<T>(2.0);

    let mut rows = Vec::with_capacity(total as usize);
    for row in 0..total {
        let offset = (real::<T>(row as f64) - half_span) * two_r;
        let shift = |p: Position<T>| {
            Position::new(
                p.x + perp.0 * offset,
                p.y + perp.1 * offset,
                p.z + perp.2 * offset,
            )
        };
        let backward = row >= lanes;
        let (start, end) = if backward { (b, a) } else { (a, b) };
        rows.push(discretize_indexed(shift(start), shift(end), radius, edge)?);
    }
    Ok(rows)
}

fn collect_rows<T: Scalar>(
    rows: Vec<Vec<LaneCell<T>>>,
    radius: T,
    separator: bool,
) -> MultibandRows<T> {
    let mut cells = Vec::new();
    let mut ranges = Vec::with_capacity(rows.len());
    for row in rows {
        let start = cells.len();
        cells.extend(row);
        ranges.push(start..cells.len());
    }

    let mut separator_pairs = Vec::new();
    if separator {
        for pair in ranges.windows(2) {
            for i in pair[0].clone() {
                for j in pair[1].clone() {
                    if neighbor_predicate(&cells[i].0, &cells[j].0, radius) {
                        separator_pairs.push((i, j));
                    }
                }
            }
        }
    }

    MultibandRows {
        cells,
        rows: ranges,
        separator_pairs,
    }
}

/// Any unit vector orthogonal to `unit`; lane offsets are laid along it.
fn perpendicular<T: Scalar>(unit: (T, T, T)) -> (T, T, T) {
    let (ux, uy, uz) = unit;
    let planar_norm = (ux * ux + uy * uy).sqrt();
    if planar_norm > real(1e-9) {
        (uy / planar_norm, -ux / planar_norm, T::zero())
    } else {
        // Segment runs along z; offset along y (cross with the x axis).
        let norm = (uy * uy + uz * uz).sqrt();
        (T::zero(), uz / norm, -uy / norm)
    }
}

/// Compile a basic graph into a net. Edge chains share one merged cell per
/// vertex; branch rules set the outgoing probabilities at junction cells;
/// separator pairs from multiband edges carry through to the topology.
pub fn build_from_graph<T: Scalar>(
    graph: &BasicGraph<T>,
    radius: T,
    rules: &[BranchRule<T>],
) -> Result<NetTopology<T>, SynthesisError> {
    let positions = validate_graph(graph)?;
    let tolerance = radius / real(100.0);
    let tol2 = tolerance * tolerance;

    let mut cells: Vec<Cell<T>> = Vec::new();
    let mut vertex_cells: BTreeMap<VertexId, CellId> = BTreeMap::new();
    // Pending vertex-cell directions: (edge index, first step of that edge).
    let mut vertex_out: BTreeMap<VertexId, Vec<(usize, DirectionVector<T>)>> = BTreeMap::new();
    // Fallback direction for dead-end vertices: the incoming overshoot.
    let mut vertex_in: BTreeMap<VertexId, DirectionVector<T>> = BTreeMap::new();
    let mut separator_pairs: BTreeSet<(CellId, CellId)> = BTreeSet::new();

    let new_cell = |cells: &mut Vec<Cell<T>>, position: Position<T>| -> CellId {
        let id = CellId(cells.len() as u32);
        cells.push(Cell::new(id, position));
        id
    };

    for (edge_index, edge) in graph.edges.iter().enumerate() {
        let from_pos = positions[&edge.from];
        let to_pos = positions[&edge.to];
        let rows = lane_rows(
            from_pos,
            to_pos,
            radius,
            edge.lanes,
            edge.bidirectional,
            edge_index,
        )?;

        let mut local_ids: Vec<Vec<CellId>> = Vec::with_capacity(rows.len());
        for (row_index, row) in rows.iter().enumerate() {
            let backward = row_index >= edge.lanes as usize;
            let (start_vertex, end_vertex) = if backward {
                (edge.to, edge.from)
            } else {
                (edge.from, edge.to)
            };
            let last = row.len() - 1;
            let mut ids = Vec::with_capacity(row.len());
            for (i, &(position, direction)) in row.iter().enumerate() {
                let id = if i == 0
                    && position.distance_squared(&positions[&start_vertex]) <= tol2
                {
                    let id = *vertex_cells
                        .entry(start_vertex)
                        .or_insert_with(|| new_cell(&mut cells, position));
                    vertex_out
                        .entry(start_vertex)
                        .or_default()
                        .push((edge_index, direction));
                    id
                } else if i == last && position.distance_squared(&positions[&end_vertex]) <= tol2
                {
                    let id = *vertex_cells
                        .entry(end_vertex)
                        .or_insert_with(|| new_cell(&mut cells, position));
                    vertex_in.entry(end_vertex).or_insert(direction);
                    id
                } else {
                    let id = new_cell(&mut cells, position);
                    if i < last {
                        cells[id.index()].directions = vec![direction];
                    }
                    id
                };
                ids.push(id);
            }
            local_ids.push(ids);
        }

        if edge.separator {
            for pair in local_ids.windows(2) {
                for &u in &pair[0] {
                    for &v in &pair[1] {
                        if u != v
                            && neighbor_predicate(
                                &cells[u.index()].position,
                                &cells[v.index()].position,
                                radius,
                            )
                        {
                            let key = if u < v { (u, v) } else { (v, u) };
                            separator_pairs.insert(key);
                        }
                    }
                }
            }
        }
    }

    apply_branch_rules(&mut cells, &vertex_cells, &vertex_out, &vertex_in, rules)?;

    Ok(NetTopology::build(
        radius,
        Some(tolerance),
        cells,
        separator_pairs,
    )?)
}

fn validate_graph<T: Scalar>(
    graph: &BasicGraph<T>,
) -> Result<BTreeMap<VertexId, Position<T>>, SynthesisError> {
    let mut positions = BTreeMap::new();
    for vertex in &graph.vertices {
        if positions.insert(vertex.id, vertex.position).is_some() {
            return Err(SynthesisError::DuplicateVertex { vertex: vertex.id });
        }
    }
    for (edge_index, edge) in graph.edges.iter().enumerate() {
        for vertex in [edge.from, edge.to] {
            if !positions.contains_key(&vertex) {
                return Err(SynthesisError::UnknownVertex {
                    edge: edge_index,
                    vertex,
                });
            }
        }
        if edge.lanes == 0 {
            return Err(SynthesisError::ZeroLanes { edge: edge_index });
        }
    }
    Ok(positions)
}

fn apply_branch_rules<T: Scalar>(
    cells: &mut [Cell<T>],
    vertex_cells: &BTreeMap<VertexId, CellId>,
    vertex_out: &BTreeMap<VertexId, Vec<(usize, DirectionVector<T>)>>,
    vertex_in: &BTreeMap<VertexId, DirectionVector<T>>,
    rules: &[BranchRule<T>],
) -> Result<(), SynthesisError> {
    let mut rule_by_vertex: BTreeMap<VertexId, &BranchRule<T>> = BTreeMap::new();
    for rule in rules {
        if rule_by_vertex.insert(rule.vertex, rule).is_some() {
            return Err(SynthesisError::DuplicateBranchRule { vertex: rule.vertex });
        }
        if !vertex_cells.contains_key(&rule.vertex)
            || !vertex_out.contains_key(&rule.vertex)
        {
            let edge = rule.branches.first().map(|&(e, _)| e).unwrap_or(0);
            return Err(SynthesisError::UnreachableBranch {
                vertex: rule.vertex,
                edge,
            });
        }
    }

    for (&vertex, &cell) in vertex_cells {
        let outgoing = vertex_out.get(&vertex).map(Vec::as_slice).unwrap_or(&[]);
        let rule = rule_by_vertex.get(&vertex);

        let directions: Vec<DirectionVector<T>> = match (outgoing.len(), rule) {
            (0, None) => {
                // Dead end: keep the incoming overshoot so the chain matches
                // the plain edge discretization.
                vertex_in.get(&vertex).map(|d| vec![*d]).unwrap_or_default()
            }
            (1, None) => {
                let mut d = outgoing[0].1;
                d.probability = T::one();
                vec![d]
            }
            (n, None) => {
                return Err(SynthesisError::MissingBranchRule {
                    vertex,
                    outgoing: n,
                });
            }
            (_, Some(rule)) => {
                let mut by_edge: BTreeMap<usize, T> = BTreeMap::new();
                for &(edge, probability) in &rule.branches {
                    by_edge.insert(edge, probability);
                }
                for &(edge, _) in &rule.branches {
                    if !outgoing.iter().any(|&(e, _)| e == edge) {
                        return Err(SynthesisError::UnreachableBranch { vertex, edge });
                    }
                }
                let mut sum = T::zero();
                let mut directions = Vec::with_capacity(outgoing.len());
                for &(edge, step) in outgoing {
                    let Some(&probability) = by_edge.get(&edge) else {
                        return Err(SynthesisError::IncompleteBranchRule { vertex, edge });
                    };
                    sum = sum + probability;
                    let mut d = step;
                    d.probability = probability;
                    directions.push(d);
                }
                if (sum - T::one()).abs() > sum_tolerance() {
                    return Err(SynthesisError::BranchProbabilitySum {
                        vertex,
                        sum: sum.to_f64().unwrap_or(f64::NAN),
                    });
                }
                directions
            }
        };
        cells[cell.index()].directions = directions;
    }
    Ok(())
}

/// Apply special-cell kinds to a synthesized net; geometry and directions
/// are retained.
pub fn mark_special_cells<T: Scalar>(
    net: NetTopology<T>,
    assignments: Vec<(CellId, CellKind<T>)>,
) -> Result<NetTopology<T>, SynthesisError> {
    let mut seen = BTreeSet::new();
    for (cell, _) in &assignments {
        if !net.contains(*cell) {
            return Err(SynthesisError::UnknownCell { cell: *cell });
        }
        if !seen.insert(*cell) {
            return Err(SynthesisError::DuplicateAssignment { cell: *cell });
        }
    }
    Ok(net.with_kinds(assignments)?)
}
