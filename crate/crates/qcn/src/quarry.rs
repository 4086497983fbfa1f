//! Open-pit haulage on a quasi cellular net.
//!
//! Tippers are tokens circulating on a synthesized haul net. An excavator is
//! a turnstile whose hold period is the loading time: when the shutter
//! reopens, the tipper leaves carrying the excavator's payload template
//! (rock volume plus sand composition). Dump or plant sites either absorb
//! tippers (open-boundary quarries, where an entrance generator feeds empty
//! tippers in) or zero their volume in passing (closed loops, where a fixed
//! tipper fleet cycles forever). Fuel and exhaust accumulate per step at
//! configurable move and idle rates.
//!
//! Everything measurable is recomputed from the trace alone, so metrics for
//! an exported-then-imported run match the in-memory run exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::circulation::{
    run, BlockReason, EventKind, PayloadProcess, RunParams, SimError, Trace,
};
use crate::net::{CellId, CellKind, GenFunction, GeneratorSpec, NetTopology, TurnstileSpec};
use crate::num::{positive, real, sum_tolerance, Scalar};
use crate::payload::Payload;
use crate::state::{Mode, SimState};
use crate::synthesis::{build_from_graph, mark_special_cells, BasicGraph, BranchRule, SynthesisError};

/// Payload attribute: transported rock mass volume (m^3).
pub const ATTR_VOLUME: &str = "rock_mass_volume";
/// Payload attribute: cumulative fuel consumption (L).
pub const ATTR_FUEL: &str = "fuel_consumption";
/// Payload attribute: cumulative exhaust emission (kg).
pub const ATTR_EMISSION: &str = "exhaust_emission";

/// Attribute names that are not composition fractions.
pub const RESERVED_ATTRS: [&str; 3] = [ATTR_VOLUME, ATTR_FUEL, ATTR_EMISSION];

/// What an excavator loads into a tipper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LoadTemplate<T: Scalar> {
    /// Rock mass volume per load.
    pub volume: T,
    /// Sand composition fractions by sort (e.g. clear_sand, water, stones,
    /// clay); each in [0,1], summing to 1.
    pub composition: BTreeMap<String, T>,
}

impl<T: Scalar> LoadTemplate<T> {
    pub fn check(&self) -> Result<(), String> {
        if !self.volume.is_finite() || self.volume < T::zero() {
            return Err(format!("load volume {} must be finite and >= 0", self.volume));
        }
        if self.volume > T::zero() {
            let mut sum = T::zero();
            for (name, &fraction) in &self.composition {
                if RESERVED_ATTRS.contains(&name.as_str()) {
                    return Err(format!("`{name}` is a reserved attribute, not a sort"));
                }
                if !(fraction >= T::zero() && fraction <= T::one()) {
                    return Err(format!("composition fraction {name}={fraction} outside [0,1]"));
                }
                sum = sum + fraction;
            }
            if (sum - T::one()).abs() > sum_tolerance() {
                return Err(format!("composition fractions sum to {sum}, expected 1"));
            }
        }
        Ok(())
    }
}

/// One excavator placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExcavatorSite<T: Scalar> {
    pub cell: CellId,
    /// Loading duration; becomes the turnstile hold time.
    pub loading_time: T,
    pub template: LoadTemplate<T>,
}

/// Whether the quarry is modeled with its gates or as a closed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "snake_case")]
pub enum BoundaryMode<T: Scalar> {
    /// Fixed fleet cycling forever; dump sites zero tipper volume in
    /// passing and the tokens persist.
    ClosedLoop { tippers: u64 },
    /// An entrance generator feeds empty tippers in; dump sites are
    /// outflows absorbing them on arrival.
    OpenBoundary {
        entrance: CellId,
        generation: GenFunction<T>,
    },
}

/// Linear per-step fuel and exhaust rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default)]
pub struct MotionCosts<T: Scalar> {
    pub move_fuel: T,
    pub move_emission: T,
    pub idle_fuel: T,
    pub idle_emission: T,
}

impl<T: Scalar> Default for MotionCosts<T> {
    fn default() -> Self {
        MotionCosts {
            move_fuel: T::zero(),
            move_emission: T::zero(),
            idle_fuel: T::zero(),
            idle_emission: T::zero(),
        }
    }
}

/// Full description of a quarry scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QuarryConfig<T: Scalar> {
    pub graph: BasicGraph<T>,
    pub radius: T,
    pub theta: T,
    #[serde(default)]
    pub branch_rules: Vec<BranchRule<T>>,
    pub excavators: Vec<ExcavatorSite<T>>,
    pub dump_sites: Vec<CellId>,
    pub boundary: BoundaryMode<T>,
    #[serde(default)]
    pub costs: MotionCosts<T>,
}

#[derive(Debug, thiserror::Error)]
pub enum QuarryError {
    #[error("invalid quarry config: {0}")]
    InvalidConfig(String),
    #[error("site cell {cell} is not usable as {role}")]
    InvalidSite { cell: CellId, role: &'static str },
    #[error("trace holds no steps")]
    EmptyTrace,
    #[error("trace lacks the step-0 snapshot needed to identify tippers")]
    MissingInitialSnapshot,
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl<T: Scalar> QuarryConfig<T> {
    pub fn check(&self) -> Result<(), QuarryError> {
        let bad = |msg: String| Err(QuarryError::InvalidConfig(msg));
        if !positive(self.radius) {
            return bad("radius must be positive".into());
        }
        if !positive(self.theta) {
            return bad("theta must be positive".into());
        }
        if self.excavators.is_empty() {
            return bad("at least one excavator site is required".into());
        }
        if self.dump_sites.is_empty() {
            return bad("at least one dump/plant site is required".into());
        }
        for site in &self.excavators {
            if !positive(site.loading_time) {
                return bad(format!(
                    "excavator {}: loading time must be positive",
                    site.cell
                ));
            }
            site.template
                .check()
                .map_err(|e| QuarryError::InvalidConfig(format!("excavator {}: {e}", site.cell)))?;
        }
        for cost in [
            self.costs.move_fuel,
            self.costs.move_emission,
            self.costs.idle_fuel,
            self.costs.idle_emission,
        ] {
            if !cost.is_finite() || cost < T::zero() {
                return bad("cost rates must be finite and >= 0".into());
            }
        }
        match &self.boundary {
            BoundaryMode::ClosedLoop { tippers } => {
                if *tippers == 0 {
                    return bad("closed-loop mode needs at least one tipper".into());
                }
            }
            BoundaryMode::OpenBoundary { generation, .. } => {
                generation.check().map_err(QuarryError::InvalidConfig)?;
            }
        }
        Ok(())
    }

    fn excavator_cells(&self) -> BTreeSet<CellId> {
        self.excavators.iter().map(|s| s.cell).collect()
    }
}

/// A fresh tipper: zero volume, zero accumulated costs.
pub fn empty_tipper<T: Scalar>() -> Payload<T> {
    let mut payload = Payload::new();
    payload.set(ATTR_VOLUME, T::zero());
    payload.set(ATTR_FUEL, T::zero());
    payload.set(ATTR_EMISSION, T::zero());
    payload
}

/// Loading completed: the tipper takes the template's volume and
/// composition; accumulated fuel and emission are untouched. A re-passing
/// tipper is simply overwritten with the template.
pub fn on_load_complete<T: Scalar>(tipper: &mut Payload<T>, template: &LoadTemplate<T>) {
    tipper.set(ATTR_VOLUME, template.volume);
    for (sort, &fraction) in &template.composition {
        tipper.set(sort, fraction);
    }
}

/// One step's movement costs.
pub fn accumulate_motion_costs<T: Scalar>(tipper: &mut Payload<T>, fuel: T, emission: T) {
    tipper.add(ATTR_FUEL, fuel);
    tipper.add(ATTR_EMISSION, emission);
}

/// Net, initial state, and setup warnings, as built by [`build_quarry`].
pub type QuarryBuild<T> = (NetTopology<T>, SimState<T>, Vec<String>);

/// Synthesize the haul net and the initial tipper placement.
///
/// Returned warnings come from turnstile hold rounding.
pub fn build_quarry<T: Scalar>(config: &QuarryConfig<T>) -> Result<QuarryBuild<T>, QuarryError> {
    config.check()?;
    let net = build_from_graph(&config.graph, config.radius, &config.branch_rules)?;

    let mut taken = BTreeSet::new();
    let mut claim = |cell: CellId, role: &'static str| -> Result<(), QuarryError> {
        if cell.index() >= net.len() {
            return Err(QuarryError::InvalidSite { cell, role });
        }
        if !taken.insert(cell) {
            return Err(QuarryError::InvalidSite { cell, role });
        }
        Ok(())
    };

    let mut assignments: Vec<(CellId, CellKind<T>)> = Vec::new();
    for site in &config.excavators {
        claim(site.cell, "excavator")?;
        assignments.push((
            site.cell,
            CellKind::Turnstile(TurnstileSpec::new(site.loading_time)),
        ));
    }
    match &config.boundary {
        BoundaryMode::ClosedLoop { .. } => {
            // Dump sites stay Regular; the payload process zeroes volume on
            // passage.
            for &cell in &config.dump_sites {
                claim(cell, "dump")?;
            }
        }
        BoundaryMode::OpenBoundary {
            entrance,
            generation,
        } => {
            for &cell in &config.dump_sites {
                claim(cell, "dump")?;
                assignments.push((cell, CellKind::Outflow));
            }
            claim(*entrance, "entrance")?;
            assignments.push((
                *entrance,
                CellKind::Generator(
                    GeneratorSpec::new(generation.clone()).with_payload(empty_tipper()),
                ),
            ));
        }
    }
    let net = mark_special_cells(net, assignments)?;

    let (mut state, warnings) = SimState::init(&net, config.theta, Mode::Discrete);
    if let BoundaryMode::ClosedLoop { tippers } = &config.boundary {
        for cell in spread_along_loop(&net, *tippers) {
            state.place_token(cell, empty_tipper());
        }
    }
    Ok((net, state, warnings))
}

/// Pick `count` cells spread evenly along the net's travel order. The order
/// is a successor walk from cell 0 when the net is a single loop or chain;
/// otherwise plain id order.
fn spread_along_loop<T: Scalar>(net: &NetTopology<T>, count: u64) -> Vec<CellId> {
    let mut order: Vec<CellId> = Vec::with_capacity(net.len());
    let mut seen = vec![false; net.len()];
    let mut current = CellId(0);
    loop {
        if seen[current.index()] {
            break;
        }
        seen[current.index()] = true;
        order.push(current);
        let mut targets = net.successors(current).iter().flatten();
        match (targets.next(), targets.next()) {
            (Some(&next), None) => current = next,
            _ => break, // fork or dead end; walk order undefined past here
        }
    }
    if order.len() < net.len() {
        order = net.ids().collect();
    }

    let n = order.len() as u64;
    let count = count.min(n);
    (0..count)
        .map(|k| order[(k * n / count) as usize])
        .collect()
}

/// The payload process wiring quarry semantics into the step pipeline.
pub struct QuarryProcess<T: Scalar> {
    templates: BTreeMap<CellId, LoadTemplate<T>>,
    dump_reset: BTreeSet<CellId>,
    costs: MotionCosts<T>,
}

impl<T: Scalar> QuarryProcess<T> {
    pub fn new(config: &QuarryConfig<T>) -> Self {
        let dump_reset = match &config.boundary {
            // Open-boundary dumps are outflows; absorption does the reset.
            BoundaryMode::OpenBoundary { .. } => BTreeSet::new(),
            BoundaryMode::ClosedLoop { .. } => config.dump_sites.iter().copied().collect(),
        };
        QuarryProcess {
            templates: config
                .excavators
                .iter()
                .map(|s| (s.cell, s.template.clone()))
                .collect(),
            dump_reset,
            costs: config.costs.clone(),
        }
    }
}

impl<T: Scalar> PayloadProcess<T> for QuarryProcess<T> {
    fn on_move(&mut self, _from: CellId, _to: CellId, payload: &mut Payload<T>) {
        accumulate_motion_costs(payload, self.costs.move_fuel, self.costs.move_emission);
    }

    fn on_arrival(&mut self, at: CellId, payload: &mut Payload<T>) {
        if self.dump_reset.contains(&at) {
            payload.set(ATTR_VOLUME, T::zero());
        }
    }

    fn on_blocked(&mut self, _cell: CellId, _reason: &BlockReason, payload: &mut Payload<T>) {
        accumulate_motion_costs(payload, self.costs.idle_fuel, self.costs.idle_emission);
    }

    fn on_turnstile_open(&mut self, cell: CellId, payload: &mut Payload<T>) {
        if let Some(template) = self.templates.get(&cell) {
            on_load_complete(payload, template);
        }
    }
}

/// Build and run the scenario in one call.
pub fn simulate<T: Scalar>(
    config: &QuarryConfig<T>,
    steps: u64,
    seed: u64,
    snapshot_stride: u64,
) -> Result<(Trace<T>, Vec<String>), QuarryError> {
    let (net, state, warnings) = build_quarry(config)?;
    let mut process = QuarryProcess::new(config);
    let params = RunParams::discrete(steps, seed).with_stride(snapshot_stride);
    let trace = run(&net, state, config.theta, &params, &[], &mut process)?;
    Ok((trace, warnings))
}

/// Flow characteristics computed from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarryMetrics<T: Scalar> {
    pub steps: u64,
    /// TurnstileOpened count across excavator cells.
    pub loads_completed: u64,
    /// Mean steps between successive loads of the same tipper; `None` until
    /// some tipper has loaded twice.
    pub mean_cycle_time: Option<T>,
    /// Dump-site arrivals.
    pub deliveries: u64,
    pub delivered_volume: T,
    /// Delivered volume per composition sort.
    pub delivered_mass: BTreeMap<String, T>,
    /// Delivered volume / steps.
    pub throughput: T,
    /// Closed-shutter fraction per excavator cell.
    pub utilization: BTreeMap<CellId, T>,
    /// Mean occupied/turnstile-blocked events per step on cells upstream of
    /// each excavator.
    pub mean_queue_length: BTreeMap<CellId, T>,
}

/// Recompute all metrics from a trace. Tipper identity is reconstructed by
/// replaying Generated/Moved/Absorbed events from the step-0 snapshot, so
/// any trace that still has its events and initial snapshot yields exactly
/// the same numbers.
pub fn compute_metrics<T: Scalar>(
    trace: &Trace<T>,
    config: &QuarryConfig<T>,
) -> Result<QuarryMetrics<T>, QuarryError> {
    if trace.steps == 0 {
        return Err(QuarryError::EmptyTrace);
    }
    let (net, _, _) = build_quarry(config)?;
    let initial = trace
        .snapshot_at(0)
        .ok_or(QuarryError::MissingInitialSnapshot)?;

    let excavators = config.excavator_cells();
    let dumps: BTreeSet<CellId> = config.dump_sites.iter().copied().collect();
    let upstream: BTreeMap<CellId, BTreeSet<CellId>> = excavators
        .iter()
        .map(|&cell| (cell, upstream_cells(&net, cell)))
        .collect();

    // Tipper tracks, addressed through their current position.
    struct Track<T> {
        last_load_step: Option<u64>,
        cycles: Vec<T>,
    }
    let mut tracks: Vec<Track<T>> = Vec::new();
    let mut at: BTreeMap<CellId, usize> = BTreeMap::new();
    for (index, cell_state) in initial.cells.iter().enumerate() {
        if cell_state.is_transitable() {
            at.insert(CellId(index as u32), tracks.len());
            tracks.push(Track {
                last_load_step: None,
                cycles: Vec::new(),
            });
        }
    }

    let mut loads_completed = 0u64;
    let mut deliveries = 0u64;
    let mut delivered_volume = T::zero();
    let mut delivered_mass: BTreeMap<String, T> = BTreeMap::new();
    let mut closed_since: BTreeMap<CellId, u64> = BTreeMap::new();
    let mut closed_steps: BTreeMap<CellId, u64> = excavators.iter().map(|&c| (c, 0)).collect();
    let mut queue_events: BTreeMap<CellId, u64> = excavators.iter().map(|&c| (c, 0)).collect();

    for event in &trace.events {
        match &event.kind {
            EventKind::Generated { cell } => {
                at.insert(*cell, tracks.len());
                tracks.push(Track {
                    last_load_step: None,
                    cycles: Vec::new(),
                });
            }
            EventKind::Moved { from, to } => {
                if let Some(track) = at.remove(from) {
                    at.insert(*to, track);
                }
                if dumps.contains(to) {
                    let payload = event.payload.as_ref();
                    let volume = payload.map(|p| p.value(ATTR_VOLUME)).unwrap_or_else(T::zero);
                    deliveries += 1;
                    delivered_volume = delivered_volume + volume;
                    if let Some(payload) = payload {
                        for (name, fraction) in payload.iter() {
                            if RESERVED_ATTRS.contains(&name) {
                                continue;
                            }
                            let mass = delivered_mass
                                .entry(name.to_owned())
                                .or_insert_with(T::zero);
                            *mass = *mass + volume * fraction;
                        }
                    }
                }
            }
            EventKind::Absorbed { cell } => {
                at.remove(cell);
            }
            EventKind::TurnstileClosed { cell } => {
                if excavators.contains(cell) {
                    closed_since.insert(*cell, event.step);
                }
            }
            EventKind::TurnstileOpened { cell } => {
                if excavators.contains(cell) {
                    loads_completed += 1;
                    if let Some(closed) = closed_since.remove(cell) {
                        // Shutter was down for the steps strictly between
                        // the closing move and the reopening.
                        *closed_steps.get_mut(cell).unwrap() +=
                            event.step.saturating_sub(closed + 1);
                    }
                    if let Some(&track) = at.get(cell) {
                        let track = &mut tracks[track];
                        if let Some(previous) = track.last_load_step {
                            track.cycles.push(real((event.step - previous) as f64));
                        }
                        track.last_load_step = Some(event.step);
                    }
                }
            }
            EventKind::Blocked { cell, reason } => {
                if matches!(reason, BlockReason::Occupied | BlockReason::TurnstileClosed) {
                    for (&excavator, cells) in &upstream {
                        if cells.contains(cell) {
                            *queue_events.get_mut(&excavator).unwrap() += 1;
                        }
                    }
                }
            }
        }
    }
    // Shutters still closed when the run ended.
    for (cell, closed) in closed_since {
        *closed_steps.get_mut(&cell).unwrap() += trace.steps.saturating_sub(closed + 1);
    }

    let steps_t: T = real(trace.steps as f64);
    let cycles: Vec<T> = tracks
        .iter()
        .flat_map(|t| t.cycles.iter().copied())
        .collect();
    let mean_cycle_time = if cycles.is_empty() {
        None
    } else {
        let total = cycles.iter().fold(T::zero(), |acc, &c| acc + c);
        Some(total / real(cycles.len() as f64))
    };

    Ok(QuarryMetrics {
        steps: trace.steps,
        loads_completed,
        mean_cycle_time,
        deliveries,
        delivered_volume,
        delivered_mass,
        throughput: delivered_volume / steps_t,
        utilization: closed_steps
            .into_iter()
            .map(|(cell, closed)| (cell, real::<T>(closed as f64) / steps_t))
            .collect(),
        mean_queue_length: queue_events
            .into_iter()
            .map(|(cell, count)| (cell, real::<T>(count as f64) / steps_t))
            .collect(),
    })
}

/// Cells from which `target` is reachable along directed successor links,
/// excluding `target` itself.
fn upstream_cells<T: Scalar>(net: &NetTopology<T>, target: CellId) -> BTreeSet<CellId> {
    let mut reverse: BTreeMap<CellId, Vec<CellId>> = BTreeMap::new();
    for id in net.ids() {
        for succ in net.successors(id).iter().flatten() {
            reverse.entry(*succ).or_default().push(id);
        }
    }
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<CellId> = VecDeque::new();
    queue.push_back(target);
    while let Some(cell) = queue.pop_front() {
        for &source in reverse.get(&cell).map(Vec::as_slice).unwrap_or(&[]) {
            if source != target && seen.insert(source) {
                queue.push_back(source);
            }
        }
    }
    seen
}
