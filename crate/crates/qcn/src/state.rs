//! Mutable per-run state: one state slot per cell plus the runtime side of
//! the special cells (turnstile shutters, generator queues, outflow tallies).
//!
//! The static topology never changes during a run; everything that does
//! change lives here, in flat arrays and ordered maps so stepping is
//! deterministic.

use std::collections::BTreeMap;

use crate::net::{CellId, CellKind, GenFunction, NetTopology};
use crate::num::{real, Scalar};
use crate::payload::Payload;

/// Which kind of state circulates on the net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Whole micro objects (tokens) hopping cell to cell.
    Discrete,
    /// Non-negative levels exchanged along directed links.
    Continuous,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Discrete => write!(f, "discrete"),
            Mode::Continuous => write!(f, "continuous"),
        }
    }
}

/// State of one cell at one moment of simulation time.
#[derive(Debug, Clone, PartialEq)]
pub enum CellState<T: Scalar> {
    /// Discrete, clear: nothing occupies the cell.
    NonTransitable,
    /// Discrete, occupied: the payload describes the micro object.
    Transitable(Payload<T>),
    /// Continuous level, always >= 0.
    Level(T),
}

impl<T: Scalar> CellState<T> {
    pub fn is_transitable(&self) -> bool {
        matches!(self, CellState::Transitable(_))
    }

    pub fn payload(&self) -> Option<&Payload<T>> {
        match self {
            CellState::Transitable(p) => Some(p),
            _ => None,
        }
    }

    pub fn level(&self) -> Option<T> {
        match self {
            CellState::Level(v) => Some(*v),
            _ => None,
        }
    }
}

/// Shutter state of a turnstile cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnstileRuntime {
    /// Hold duration in whole steps, derived from tau and theta at init.
    pub hold_steps: u64,
    pub open: bool,
    /// Step index at which the held state arrived; `Some` iff closed.
    pub closed_at: Option<u64>,
}

impl TurnstileRuntime {
    pub fn is_closed(&self) -> bool {
        !self.open
    }
}

/// Arrival bookkeeping of a generator cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRuntime<T: Scalar> {
    pub function: GenFunction<T>,
    /// Template stamped onto each emitted token.
    pub payload: Payload<T>,
    /// Whole arrivals waiting for the cell to clear.
    pub queue: u64,
    /// Fractional remainder of the generation function, in [0, 1).
    pub fraction: T,
}

/// Cumulative record of everything an outflow cell has absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct OutflowTally<T: Scalar> {
    pub absorbed_tokens: u64,
    pub absorbed_level: T,
    pub attribute_totals: BTreeMap<String, T>,
}

impl<T: Scalar> OutflowTally<T> {
    fn new() -> Self {
        OutflowTally {
            absorbed_tokens: 0,
            absorbed_level: T::zero(),
            attribute_totals: BTreeMap::new(),
        }
    }

    pub(crate) fn record_token(&mut self, payload: &Payload<T>) {
        self.absorbed_tokens += 1;
        for (name, value) in payload.iter() {
            let total = self
                .attribute_totals
                .entry(name.to_owned())
                .or_insert_with(T::zero);
            *total = *total + value;
        }
    }

    pub(crate) fn record_level(&mut self, amount: T) {
        self.absorbed_level = self.absorbed_level + amount;
    }
}

/// Full mutable state of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T: Scalar> {
    mode: Mode,
    cells: Vec<CellState<T>>,
    pub(crate) turnstiles: BTreeMap<CellId, TurnstileRuntime>,
    pub(crate) generators: BTreeMap<CellId, GeneratorRuntime<T>>,
    pub(crate) outflows: BTreeMap<CellId, OutflowTally<T>>,
}

impl<T: Scalar> SimState<T> {
    /// Clear state for every cell, with special-cell runtimes derived from
    /// the topology. Turnstile hold times are converted to whole steps;
    /// a tau that is not a multiple of theta is rounded up and reported in
    /// the returned warnings.
    pub fn init(net: &NetTopology<T>, theta: T, mode: Mode) -> (Self, Vec<String>) {
        let mut warnings = Vec::new();
        let clear = match mode {
            Mode::Discrete => CellState::NonTransitable,
            Mode::Continuous => CellState::Level(T::zero()),
        };
        let cells = vec![clear; net.len()];

        let mut turnstiles = BTreeMap::new();
        let mut generators = BTreeMap::new();
        let mut outflows = BTreeMap::new();
        for cell in net.cells() {
            match &cell.kind {
                CellKind::Regular => {}
                CellKind::Turnstile(spec) => {
                    let (hold_steps, rounded) = hold_steps(spec.tau, theta);
                    if rounded {
                        warnings.push(format!(
                            "turnstile {}: tau {} is not a multiple of theta {}; holding {} steps",
                            cell.id, spec.tau, theta, hold_steps
                        ));
                    }
                    turnstiles.insert(
                        cell.id,
                        TurnstileRuntime {
                            hold_steps,
                            open: true,
                            closed_at: None,
                        },
                    );
                }
                CellKind::Generator(spec) => {
                    generators.insert(
                        cell.id,
                        GeneratorRuntime {
                            function: spec.function.clone(),
                            payload: spec.payload.clone(),
                            queue: spec.initial_queue,
                            fraction: T::zero(),
                        },
                    );
                }
                CellKind::Outflow => {
                    outflows.insert(cell.id, OutflowTally::new());
                }
            }
        }

        (
            SimState {
                mode,
                cells,
                turnstiles,
                generators,
                outflows,
            },
            warnings,
        )
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, id: CellId) -> &CellState<T> {
        &self.cells[id.index()]
    }

    pub fn cells(&self) -> &[CellState<T>] {
        &self.cells
    }

    pub(crate) fn cell_mut(&mut self, id: CellId) -> &mut CellState<T> {
        &mut self.cells[id.index()]
    }

    pub fn turnstile(&self, id: CellId) -> Option<&TurnstileRuntime> {
        self.turnstiles.get(&id)
    }

    pub fn generator(&self, id: CellId) -> Option<&GeneratorRuntime<T>> {
        self.generators.get(&id)
    }

    pub fn outflow(&self, id: CellId) -> Option<&OutflowTally<T>> {
        self.outflows.get(&id)
    }

    /// Put a token on a cell (discrete mode).
    pub fn place_token(&mut self, id: CellId, payload: Payload<T>) {
        debug_assert_eq!(self.mode, Mode::Discrete);
        self.cells[id.index()] = CellState::Transitable(payload);
    }

    /// Set a cell's level (continuous mode).
    pub fn set_level(&mut self, id: CellId, level: T) {
        debug_assert_eq!(self.mode, Mode::Continuous);
        self.cells[id.index()] = CellState::Level(level);
    }

    /// Number of occupied cells.
    pub fn transitable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_transitable()).count()
    }

    /// Sum of all levels.
    pub fn total_level(&self) -> T {
        self.cells
            .iter()
            .fold(T::zero(), |acc, c| acc + c.level().unwrap_or_else(T::zero))
    }
}

/// Whole-step hold count for a turnstile: `ceil(tau / theta)`, snapping to
/// the nearest integer when tau is a multiple of theta up to 1e-9 relative
/// error. The second value reports whether rounding changed the duration.
pub fn hold_steps<T: Scalar>(tau: T, theta: T) -> (u64, bool) {
    let ratio = tau / theta;
    let nearest = ratio.round();
    let slack = real::<T>(1e-9) * ratio.abs().max(T::one());
    let (steps, rounded) = if (ratio - nearest).abs() <= slack {
        (nearest, false)
    } else {
        (ratio.ceil(), true)
    };
    let steps = steps.to_u64().unwrap_or(1).max(1);
    (steps, rounded)
}
