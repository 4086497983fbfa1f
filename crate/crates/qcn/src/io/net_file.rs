//! Net documents: the TOML description of a topology, the content hash that
//! ties traces to their net, and the companion initial-state document.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IoError;
use crate::net::{
    Cell, CellId, CellKind, DirectionVector, GenFunction, GeneratorSpec, NetTopology, Position,
    TurnstileSpec,
};
use crate::num::Scalar;
use crate::payload::Payload;
use crate::state::{Mode, SimState};

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct NetDoc<T: Scalar> {
    radius: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position_tolerance: Option<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    separator_pairs: Vec<(u32, u32)>,
    #[serde(default)]
    cells: Vec<CellDoc<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct CellDoc<T: Scalar> {
    id: u32,
    x: T,
    y: T,
    #[serde(default, skip_serializing_if = "super::is_zero")]
    z: T,
    #[serde(default = "regular", skip_serializing_if = "is_regular")]
    kind: String,
    /// Turnstile hold duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<T>,
    /// Generator: constant rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<T>,
    /// Generator: periodic schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    amount: Option<T>,
    /// Generator: explicit (step, amount) table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<Vec<(u64, T)>>,
    /// Generator: payload template for emitted tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<BTreeMap<String, T>>,
    /// Generator: arrivals already queued at start.
    #[serde(default, skip_serializing_if = "super::is_zero_u64")]
    queue: u64,
    /// (dx, dy, dz, probability) per direction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    directions: Vec<(T, T, T, T)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    payload_schema: Vec<String>,
}

fn regular() -> String {
    "regular".to_owned()
}

fn is_regular(kind: &str) -> bool {
    kind == "regular"
}

/// Parse a net document, build the topology, and run structural validation.
/// An invalid net (isolated cells, probability sums off) is an error that
/// carries the full report; dangling-direction and duplicate-position
/// warnings do not fail the parse.
pub fn parse_net<T: Scalar>(text: &str) -> Result<NetTopology<T>, IoError> {
    let doc: NetDoc<T> = toml::from_str(text).map_err(|e| IoError::Syntax {
        message: e.to_string(),
    })?;

    let mut cells = Vec::with_capacity(doc.cells.len());
    for cell_doc in doc.cells {
        cells.push(cell_from_doc(cell_doc)?);
    }
    let separators: BTreeSet<(CellId, CellId)> = doc
        .separator_pairs
        .into_iter()
        .map(|(a, b)| (CellId(a), CellId(b)))
        .collect();

    let net = NetTopology::build(doc.radius, doc.position_tolerance, cells, separators)?;
    let report = net.validate();
    if !report.is_valid() {
        return Err(IoError::ValidationFailed(report));
    }
    Ok(net)
}

fn cell_from_doc<T: Scalar>(doc: CellDoc<T>) -> Result<Cell<T>, IoError> {
    let id = CellId(doc.id);
    let position = Position::new(doc.x, doc.y, doc.z);
    let kind = match doc.kind.as_str() {
        "regular" => CellKind::Regular,
        "outflow" => CellKind::Outflow,
        "turnstile" => {
            let tau = doc.tau.ok_or_else(|| {
                IoError::Format(format!("cell {id}: turnstile needs a tau"))
            })?;
            CellKind::Turnstile(TurnstileSpec::new(tau))
        }
        "generator" => {
            let function = match (doc.rate, doc.period, doc.amount, &doc.table) {
                (Some(rate), None, None, None) => GenFunction::Constant(rate),
                (None, Some(period), Some(amount), None) => {
                    GenFunction::Periodic { period, amount }
                }
                (None, None, None, Some(table)) => GenFunction::Table(table.clone()),
                _ => {
                    return Err(IoError::Format(format!(
                        "cell {id}: generator needs exactly one of `rate`, \
                         `period`+`amount`, or `table`"
                    )))
                }
            };
            let payload: Payload<T> = doc
                .payload
                .clone()
                .unwrap_or_default()
                .into_iter()
                .collect();
            payload
                .check_finite()
                .map_err(|e| IoError::Format(format!("cell {id}: {e}")))?;
            CellKind::Generator(GeneratorSpec {
                function,
                payload,
                initial_queue: doc.queue,
            })
        }
        other => {
            return Err(IoError::Format(format!("cell {id}: unknown kind `{other}`")))
        }
    };

    let directions = doc
        .directions
        .into_iter()
        .map(|(dx, dy, dz, probability)| DirectionVector::new(dx, dy, dz, probability))
        .collect();

    Ok(Cell {
        id,
        position,
        kind,
        directions,
        payload_schema: doc.payload_schema,
    })
}

/// Canonical TOML for a net; `parse_net(serialize_net(net))` reproduces the
/// net field for field.
pub fn serialize_net<T: Scalar>(net: &NetTopology<T>) -> String {
    let cells = net
        .cells()
        .iter()
        .map(|cell| {
            let mut doc = CellDoc {
                id: cell.id.0,
                x: cell.position.x,
                y: cell.position.y,
                z: cell.position.z,
                kind: regular(),
                tau: None,
                rate: None,
                period: None,
                amount: None,
                table: None,
                payload: None,
                queue: 0,
                directions: cell
                    .directions
                    .iter()
                    .map(|d| (d.dx, d.dy, d.dz, d.probability))
                    .collect(),
                payload_schema: cell.payload_schema.clone(),
            };
            match &cell.kind {
                CellKind::Regular => {}
                CellKind::Outflow => doc.kind = "outflow".to_owned(),
                CellKind::Turnstile(spec) => {
                    doc.kind = "turnstile".to_owned();
                    doc.tau = Some(spec.tau);
                }
                CellKind::Generator(spec) => {
                    doc.kind = "generator".to_owned();
                    match &spec.function {
                        GenFunction::Constant(rate) => doc.rate = Some(*rate),
                        GenFunction::Periodic { period, amount } => {
                            doc.period = Some(*period);
                            doc.amount = Some(*amount);
                        }
                        GenFunction::Table(table) => doc.table = Some(table.clone()),
                    }
                    if !spec.payload.is_empty() {
                        doc.payload =
                            Some(spec.payload.iter().map(|(k, v)| (k.to_owned(), v)).collect());
                    }
                    doc.queue = spec.initial_queue;
                }
            }
            doc
        })
        .collect();

    let doc = NetDoc {
        radius: net.radius(),
        position_tolerance: Some(net.position_tolerance()),
        separator_pairs: net
            .separator_pairs()
            .iter()
            .map(|&(a, b)| (a.0, b.0))
            .collect(),
        cells,
    };
    toml::to_string(&doc).expect("net document always serializes")
}

/// Content hash (SHA-256, lowercase hex) of the canonical serialized net.
pub fn net_hash<T: Scalar>(net: &NetTopology<T>) -> String {
    let digest = Sha256::digest(serialize_net(net).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct StateDoc<T: Scalar> {
    #[serde(default)]
    tokens: Vec<TokenDoc<T>>,
    #[serde(default)]
    levels: Vec<(u32, T)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct TokenDoc<T: Scalar> {
    cell: u32,
    #[serde(default)]
    payload: BTreeMap<String, T>,
}

/// Parse an initial-state document against a net: `tokens` place discrete
/// payloads, `levels` set continuous amounts; the document must match the
/// requested mode.
pub fn parse_state<T: Scalar>(
    text: &str,
    net: &NetTopology<T>,
    theta: T,
    mode: Mode,
) -> Result<(SimState<T>, Vec<String>), IoError> {
    let doc: StateDoc<T> = toml::from_str(text).map_err(|e| IoError::Syntax {
        message: e.to_string(),
    })?;
    match mode {
        Mode::Discrete if !doc.levels.is_empty() => {
            return Err(IoError::Format(
                "`levels` entries are continuous state; the run is discrete".into(),
            ))
        }
        Mode::Continuous if !doc.tokens.is_empty() => {
            return Err(IoError::Format(
                "`tokens` entries are discrete state; the run is continuous".into(),
            ))
        }
        _ => {}
    }

    let (mut state, warnings) = SimState::init(net, theta, mode);
    for token in doc.tokens {
        let cell = CellId(token.cell);
        if !net.contains(cell) {
            return Err(IoError::Format(format!("token cell {cell} is not on the net")));
        }
        let payload: Payload<T> = token.payload.into_iter().collect();
        payload
            .check_finite()
            .map_err(|e| IoError::Format(format!("token at {cell}: {e}")))?;
        state.place_token(cell, payload);
    }
    for (cell, level) in doc.levels {
        let cell = CellId(cell);
        if !net.contains(cell) {
            return Err(IoError::Format(format!("level cell {cell} is not on the net")));
        }
        if !level.is_finite() || level < T::zero() {
            return Err(IoError::Format(format!(
                "level {level} at cell {cell} must be finite and >= 0"
            )));
        }
        state.set_level(cell, level);
    }
    Ok((state, warnings))
}
