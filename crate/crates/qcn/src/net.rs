//! Static structure of a quasi cellular net.
//!
//! A net is a set of equal-radius circular cells placed in 2D/3D coordinates.
//! Two cells are neighbors when their center distance is at most `2R`
//! (squared form: `(x_u-x_v)^2 + (y_u-y_v)^2 + (z_u-z_v)^2 <= 4R^2`), unless
//! an explicit separator voids the pair. Each cell carries an ordered list of
//! translation vectors with probabilities; a direction leads to the unique
//! neighbor sitting at `position + direction` within the net's position
//! tolerance.
//!
//! 2D nets are represented with `z = 0`, so one predicate serves both forms.
//!
//! `NetTopology` is immutable after construction and safe to share across
//! threads; all simulation state lives in [`crate::state::SimState`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::num::{positive, real, sum_tolerance, Scalar};
use crate::payload::Payload;

/// Dense cell index, stable for the lifetime of a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl CellId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Cell center in length units. `z = 0` for planar nets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position<T> {
    pub x: T,
    pub y: T,
    #[serde(default)]
    pub z: T,
}

impl<T: Scalar> Position<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Position { x, y, z }
    }

    pub fn planar(x: T, y: T) -> Self {
        Position { x, y, z: T::zero() }
    }

    pub fn distance_squared(&self, other: &Position<T>) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn translated(&self, d: &DirectionVector<T>) -> Position<T> {
        Position {
            x: self.x + d.dx,
            y: self.y + d.dy,
            z: self.z + d.dz,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Translation vector to a neighbor cell plus the probability of taking it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector<T> {
    pub dx: T,
    pub dy: T,
    pub dz: T,
    /// Probability of translating along this vector; the probabilities of a
    /// cell's direction list must sum to 1.
    pub probability: T,
}

impl<T: Scalar> DirectionVector<T> {
    pub fn new(dx: T, dy: T, dz: T, probability: T) -> Self {
        DirectionVector {
            dx,
            dy,
            dz,
            probability,
        }
    }

    pub fn planar(dx: T, dy: T, probability: T) -> Self {
        Self::new(dx, dy, T::zero(), probability)
    }

    pub fn is_zero(&self) -> bool {
        self.dx == T::zero() && self.dy == T::zero() && self.dz == T::zero()
    }
}

/// Generation schedule of an inflow cell: the amount added at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenFunction<T> {
    /// The same amount every step.
    Constant(T),
    /// `amount` every `period` steps (at steps 0, period, 2*period, ...).
    Periodic { period: u64, amount: T },
    /// Explicit (step, amount) entries; absent steps contribute nothing.
    Table(Vec<(u64, T)>),
}

impl<T: Scalar> GenFunction<T> {
    pub fn amount_at(&self, step: u64) -> T {
        match self {
            GenFunction::Constant(rate) => *rate,
            GenFunction::Periodic { period, amount } => {
                if *period > 0 && step.is_multiple_of(*period) {
                    *amount
                } else {
                    T::zero()
                }
            }
            GenFunction::Table(table) => table
                .iter()
                .filter(|(at, _)| *at == step)
                .fold(T::zero(), |acc, &(_, amount)| acc + amount),
        }
    }

    /// All scheduled amounts must be finite and non-negative.
    pub fn check(&self) -> Result<(), String> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        match self {
            GenFunction::Constant(rate) if !ok(*rate) => {
                Err(format!("generator rate {rate} must be finite and >= 0"))
            }
            GenFunction::Periodic { period, amount } => {
                if *period == 0 {
                    Err("generator period must be positive".to_owned())
                } else if !ok(*amount) {
                    Err(format!("generator amount {amount} must be finite and >= 0"))
                } else {
                    Ok(())
                }
            }
            GenFunction::Table(table) => {
                for (step, amount) in table {
                    if !ok(*amount) {
                        return Err(format!(
                            "generator table amount {amount} at step {step} must be finite and >= 0"
                        ));
                    }
                }
                Ok(())
            }
            GenFunction::Constant(_) => Ok(()),
        }
    }
}

/// Static parameters of a generator (inflow) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GeneratorSpec<T: Scalar> {
    pub function: GenFunction<T>,
    /// Payload template stamped onto each emitted token (discrete mode).
    #[serde(default = "Payload::new")]
    pub payload: Payload<T>,
    /// Arrivals already waiting when the run starts.
    #[serde(default)]
    pub initial_queue: u64,
}

impl<T: Scalar> GeneratorSpec<T> {
    pub fn new(function: GenFunction<T>) -> Self {
        GeneratorSpec {
            function,
            payload: Payload::new(),
            initial_queue: 0,
        }
    }

    pub fn with_payload(mut self, payload: Payload<T>) -> Self {
        self.payload = payload;
        self
    }
}

/// Static parameters of a turnstile (delay) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnstileSpec<T> {
    /// Hold duration. Rounded up to a whole number of steps when a run
    /// starts; see [`crate::state::SimState::init`].
    pub tau: T,
}

impl<T: Scalar> TurnstileSpec<T> {
    pub fn new(tau: T) -> Self {
        TurnstileSpec { tau }
    }
}

/// What a cell is: an ordinary transit cell or one of the special roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum CellKind<T: Scalar> {
    Regular,
    Generator(GeneratorSpec<T>),
    Outflow,
    Turnstile(TurnstileSpec<T>),
}

impl<T: Scalar> CellKind<T> {
    pub fn is_special(&self) -> bool {
        !matches!(self, CellKind::Regular)
    }
}

/// One circular element of the net: constant geometry, role, and the ordered
/// direction list used by circulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Cell<T: Scalar> {
    pub id: CellId,
    pub position: Position<T>,
    pub kind: CellKind<T>,
    pub directions: Vec<DirectionVector<T>>,
    /// Declared payload attribute names, for documentation and audit only.
    #[serde(default)]
    pub payload_schema: Vec<String>,
}

impl<T: Scalar> Cell<T> {
    pub fn new(id: CellId, position: Position<T>) -> Self {
        Cell {
            id,
            position,
            kind: CellKind::Regular,
            directions: Vec::new(),
            payload_schema: Vec::new(),
        }
    }

    pub fn with_kind(mut self, kind: CellKind<T>) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_directions(mut self, directions: Vec<DirectionVector<T>>) -> Self {
        self.directions = directions;
        self
    }

    pub fn probability_sum(&self) -> T {
        self.directions
            .iter()
            .fold(T::zero(), |acc, d| acc + d.probability)
    }
}

/// Errors raised while assembling a topology.
#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("radius must be positive")]
    NonPositiveRadius,
    #[error("position tolerance must be positive")]
    NonPositiveTolerance,
    #[error("cell ids must be dense 0..n-1: slot {slot} holds id {found}")]
    NonDenseIds { slot: usize, found: CellId },
    #[error("cell {cell}: position is not finite")]
    NonFinitePosition { cell: CellId },
    #[error("cell {cell} direction {index}: translation vector is zero")]
    ZeroDirection { cell: CellId, index: usize },
    #[error("cell {cell} direction {index}: probability {probability} outside [0,1]")]
    ProbabilityRange {
        cell: CellId,
        index: usize,
        probability: f64,
    },
    #[error(
        "cell {cell} direction {index}: cells {first} and {second} both sit within \
         tolerance of the translated point"
    )]
    AmbiguousTarget {
        cell: CellId,
        index: usize,
        first: CellId,
        second: CellId,
    },
    #[error("separator pair ({a}, {b}) references a missing cell")]
    UnknownSeparatorCell { a: CellId, b: CellId },
    #[error("cell {cell} does not exist")]
    UnknownCell { cell: CellId },
    #[error("cell {cell}: {message}")]
    BadKind { cell: CellId, message: String },
}

/// Diagnostics from [`NetTopology::validate`]. Isolated cells and probability
/// violations make a net invalid; dangling directions and duplicate positions
/// are warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub isolated_cells: Vec<CellId>,
    /// (cell, probability sum) where the sum is off by more than 1e-9.
    pub probability_violations: Vec<(CellId, f64)>,
    /// (cell, direction index) pairs with no cell at the translated point.
    pub dangling_directions: Vec<(CellId, usize)>,
    /// Cell pairs closer than the position tolerance.
    pub duplicate_positions: Vec<(CellId, CellId)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.isolated_cells.is_empty() && self.probability_violations.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.is_valid()
            && self.dangling_directions.is_empty()
            && self.duplicate_positions.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "validation: {}",
            if self.is_valid() { "valid" } else { "INVALID" }
        )?;
        for cell in &self.isolated_cells {
            writeln!(f, "  isolated cell {cell} (no neighbor within 2R)")?;
        }
        for (cell, sum) in &self.probability_violations {
            writeln!(f, "  cell {cell}: direction probabilities sum to {sum}")?;
        }
        for (cell, index) in &self.dangling_directions {
            writeln!(f, "  warning: cell {cell} direction {index} is dangling")?;
        }
        for (a, b) in &self.duplicate_positions {
            writeln!(f, "  warning: cells {a} and {b} share a position within tolerance")?;
        }
        Ok(())
    }
}

/// `true` iff the squared center distance is at most `4R^2`. The boundary
/// (tangent circles) counts as a neighbor pair.
#[inline]
pub fn neighbor_predicate<T: Scalar>(u: &Position<T>, v: &Position<T>, radius: T) -> bool {
    u.distance_squared(v) <= real::<T>(4.0) * radius * radius
}

/// The immutable net: cells, radius, separator pairs, and the precomputed
/// adjacency and per-direction successors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTopology<T: Scalar> {
    radius: T,
    position_tolerance: T,
    cells: Vec<Cell<T>>,
    separator_pairs: BTreeSet<(CellId, CellId)>,
    adjacency: Vec<Vec<CellId>>,
    /// Successor per direction, aligned with each cell's direction list.
    /// `None` marks a dangling direction.
    successors: Vec<Vec<Option<CellId>>>,
}

impl<T: Scalar> NetTopology<T> {
    /// Assemble a topology: checks cell invariants, builds the symmetric
    /// adjacency (separator pairs excluded), and resolves every direction to
    /// its target cell.
    ///
    /// `position_tolerance` defaults to `R/100` when `None`.
    pub fn build(
        radius: T,
        position_tolerance: Option<T>,
        cells: Vec<Cell<T>>,
        separator_pairs: BTreeSet<(CellId, CellId)>,
    ) -> Result<Self, NetError> {
        if !positive(radius) {
            return Err(NetError::NonPositiveRadius);
        }
        let tolerance = position_tolerance.unwrap_or(radius / real(100.0));
        if !positive(tolerance) {
            return Err(NetError::NonPositiveTolerance);
        }

        for (slot, cell) in cells.iter().enumerate() {
            if cell.id.index() != slot {
                return Err(NetError::NonDenseIds {
                    slot,
                    found: cell.id,
                });
            }
            if !cell.position.is_finite() {
                return Err(NetError::NonFinitePosition { cell: cell.id });
            }
            for (index, d) in cell.directions.iter().enumerate() {
                if d.is_zero() {
                    return Err(NetError::ZeroDirection {
                        cell: cell.id,
                        index,
                    });
                }
                if !(d.probability >= T::zero() && d.probability <= T::one()) {
                    return Err(NetError::ProbabilityRange {
                        cell: cell.id,
                        index,
                        probability: d.probability.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
            if let CellKind::Generator(spec) = &cell.kind {
                spec.function.check().map_err(|message| NetError::BadKind {
                    cell: cell.id,
                    message,
                })?;
            }
            if let CellKind::Turnstile(spec) = &cell.kind {
                if !positive(spec.tau) {
                    return Err(NetError::BadKind {
                        cell: cell.id,
                        message: "turnstile tau must be finite and positive".to_owned(),
                    });
                }
            }
        }

        let separators = normalize_separators(&cells, separator_pairs)?;
        let adjacency = build_adjacency(&cells, radius, &separators);
        let successors = resolve_directed_successors(&cells, &adjacency, tolerance)?;

        Ok(NetTopology {
            radius,
            position_tolerance: tolerance,
            cells,
            separator_pairs: separators,
            adjacency,
            successors,
        })
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn position_tolerance(&self) -> T {
        self.position_tolerance
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell<T> {
        &self.cells[id.index()]
    }

    pub fn contains(&self, id: CellId) -> bool {
        id.index() < self.cells.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.cells.len() as u32).map(CellId)
    }

    pub fn neighbors(&self, id: CellId) -> &[CellId] {
        &self.adjacency[id.index()]
    }

    pub fn separator_pairs(&self) -> &BTreeSet<(CellId, CellId)> {
        &self.separator_pairs
    }

    /// Target of the cell's `index`-th direction, `None` when dangling.
    pub fn successor(&self, id: CellId, index: usize) -> Option<CellId> {
        self.successors[id.index()][index]
    }

    pub fn successors(&self, id: CellId) -> &[Option<CellId>] {
        &self.successors[id.index()]
    }

    /// Directed links of a cell: `(direction, target)` for every direction
    /// that resolved to a neighbor.
    pub fn links(&self, id: CellId) -> impl Iterator<Item = (&DirectionVector<T>, CellId)> {
        self.cells[id.index()]
            .directions
            .iter()
            .zip(self.successors[id.index()].iter())
            .filter_map(|(d, t)| t.map(|t| (d, t)))
    }

    /// Replace cell kinds. Geometry, directions, adjacency, and successors
    /// are untouched.
    pub fn with_kinds(
        mut self,
        assignments: impl IntoIterator<Item = (CellId, CellKind<T>)>,
    ) -> Result<Self, NetError> {
        let mut seen = BTreeSet::new();
        for (id, kind) in assignments {
            if !self.contains(id) {
                return Err(NetError::UnknownCell { cell: id });
            }
            if !seen.insert(id) {
                return Err(NetError::BadKind {
                    cell: id,
                    message: "cell assigned more than one kind".to_owned(),
                });
            }
            self.cells[id.index()].kind = kind;
        }
        Ok(self)
    }

    /// Structural diagnostics; see [`ValidationReport`].
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        for cell in &self.cells {
            if self.adjacency[cell.id.index()].is_empty() {
                report.isolated_cells.push(cell.id);
            }
            if !cell.directions.is_empty() {
                let sum = cell.probability_sum();
                if (sum - T::one()).abs() > sum_tolerance() {
                    report
                        .probability_violations
                        .push((cell.id, sum.to_f64().unwrap_or(f64::NAN)));
                }
            }
            for (index, target) in self.successors[cell.id.index()].iter().enumerate() {
                if target.is_none() {
                    report.dangling_directions.push((cell.id, index));
                }
            }
        }

        let tol2 = self.position_tolerance * self.position_tolerance;
        for_each_pair_within(&self.cells, self.position_tolerance, |a, b| {
            if a.position.distance_squared(&b.position) <= tol2 {
                report.duplicate_positions.push((a.id, b.id));
            }
        });
        report.duplicate_positions.sort_unstable();

        report
    }
}

fn normalize_separators<T: Scalar>(
    cells: &[Cell<T>],
    pairs: BTreeSet<(CellId, CellId)>,
) -> Result<BTreeSet<(CellId, CellId)>, NetError> {
    let n = cells.len();
    let mut normalized = BTreeSet::new();
    for (a, b) in pairs {
        if a.index() >= n || b.index() >= n {
            return Err(NetError::UnknownSeparatorCell { a, b });
        }
        if a == b {
            continue;
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        normalized.insert(pair);
    }
    Ok(normalized)
}

/// Symmetric, irreflexive adjacency from the neighborhood predicate, with
/// separator pairs excluded.
pub fn build_adjacency<T: Scalar>(
    cells: &[Cell<T>],
    radius: T,
    separator_pairs: &BTreeSet<(CellId, CellId)>,
) -> Vec<Vec<CellId>> {
    let mut adjacency = vec![Vec::new(); cells.len()];
    let reach = real::<T>(2.0) * radius;
    for_each_pair_within(cells, reach, |a, b| {
        if !neighbor_predicate(&a.position, &b.position, radius) {
            return;
        }
        let pair = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
        if separator_pairs.contains(&pair) {
            return;
        }
        adjacency[a.id.index()].push(b.id);
        adjacency[b.id.index()].push(a.id);
    });
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

/// Resolve each direction of each cell to the unique adjacent cell within
/// `tolerance` of the translated point. Directions with no match stay
/// dangling (`None`); two matches are an error.
pub fn resolve_directed_successors<T: Scalar>(
    cells: &[Cell<T>],
    adjacency: &[Vec<CellId>],
    tolerance: T,
) -> Result<Vec<Vec<Option<CellId>>>, NetError> {
    let tol2 = tolerance * tolerance;
    let mut successors = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut row = Vec::with_capacity(cell.directions.len());
        for (index, direction) in cell.directions.iter().enumerate() {
            let target_point = cell.position.translated(direction);
            let mut found: Option<CellId> = None;
            for &neighbor in &adjacency[cell.id.index()] {
                let candidate = &cells[neighbor.index()];
                if candidate.position.distance_squared(&target_point) <= tol2 {
                    if let Some(first) = found {
                        return Err(NetError::AmbiguousTarget {
                            cell: cell.id,
                            index,
                            first,
                            second: neighbor,
                        });
                    }
                    found = Some(neighbor);
                }
            }
            row.push(found);
        }
        successors.push(row);
    }
    Ok(successors)
}

/// Visit every unordered cell pair with center distance possibly within
/// `reach`, using a uniform grid so packed nets stay close to O(n).
///
/// Callers must still apply their own exact distance test; the grid only
/// prunes pairs that are certainly too far apart.
fn for_each_pair_within<T: Scalar, F: FnMut(&Cell<T>, &Cell<T>)>(
    cells: &[Cell<T>],
    reach: T,
    mut visit: F,
) {
    if cells.len() < 2 {
        return;
    }
    // Grid keyed by floor(coord / reach); all candidates for a cell live in
    // the 27 surrounding buckets.
    let key = |p: &Position<T>| -> (i64, i64, i64) {
        let f = |v: T| (v / reach).floor().to_f64().unwrap_or(0.0) as i64;
        (f(p.x), f(p.y), f(p.z))
    };
    let mut grid: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        grid.entry(key(&cell.position)).or_default().push(i);
    }
    for (i, cell) in cells.iter().enumerate() {
        let (kx, ky, kz) = key(&cell.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i {
                            visit(cell, &cells[j]);
                        }
                    }
                }
            }
        }
    }
}
