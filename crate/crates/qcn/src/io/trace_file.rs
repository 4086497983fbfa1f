//! Trace documents: tab-delimited, fixed column order, full float precision.
//!
//! Layout: six header lines, then one block per step holding the step
//! marker, optional snapshot rows (`cell <id> <tag> <data>`), and the
//! step's event rows (`event <kind> <a> <b> <payload> <amount>`, unused
//! columns dashed). Snapshot rows describe the state at the start of the
//! block's step; event rows describe what that step did.

use std::str::FromStr;

use super::net_file::net_hash;
use super::IoError;
use crate::circulation::{BlockReason, EventKind, Snapshot, Trace, TraceEvent};
use crate::net::{CellId, NetTopology};
use crate::num::Scalar;
use crate::payload::Payload;
use crate::state::{CellState, Mode};

const MAGIC: &str = "qcn-trace";
const VERSION: &str = "1";
const DASH: &str = "-";

/// Serialize a trace against its net. Snapshots are written every `stride`
/// steps plus the final step (step 0 always qualifies); events are always
/// complete.
pub fn export_trace<T: Scalar>(trace: &Trace<T>, net: &NetTopology<T>, stride: u64) -> String {
    let stride = stride.max(1);
    let mut out = String::new();
    out.push_str(&format!("{MAGIC}\t{VERSION}\n"));
    out.push_str(&format!("net_hash\t{}\n", net_hash(net)));
    out.push_str(&format!("theta\t{}\n", trace.theta));
    out.push_str(&format!("mode\t{}\n", trace.mode));
    out.push_str(&format!("seed\t{}\n", trace.seed));
    out.push_str(&format!("steps\t{}\n", trace.steps));

    let mut next_event = 0usize;
    for step in 0..=trace.steps {
        out.push_str(&format!("step\t{step}\n"));
        if step.is_multiple_of(stride) || step == trace.steps {
            if let Some(snapshot) = trace.snapshot_at(step) {
                for (index, cell) in snapshot.cells.iter().enumerate() {
                    let (tag, data) = match cell {
                        CellState::NonTransitable => ("N", DASH.to_owned()),
                        CellState::Transitable(payload) => ("T", payload.to_string()),
                        CellState::Level(level) => ("L", level.to_string()),
                    };
                    out.push_str(&format!("cell\t{index}\t{tag}\t{data}\n"));
                }
            }
        }
        while next_event < trace.events.len() && trace.events[next_event].step == step {
            out.push_str(&event_row(&trace.events[next_event]));
            next_event += 1;
        }
    }
    out
}

fn event_row<T: Scalar>(event: &TraceEvent<T>) -> String {
    let payload = event
        .payload
        .as_ref()
        .map(|p| p.to_string())
        .unwrap_or_else(|| DASH.to_owned());
    let amount = event
        .amount
        .map(|a| a.to_string())
        .unwrap_or_else(|| DASH.to_owned());
    let (kind, a, b) = match &event.kind {
        EventKind::Moved { from, to } => ("moved", from.to_string(), to.to_string()),
        EventKind::Blocked { cell, reason } => ("blocked", cell.to_string(), reason.to_string()),
        EventKind::Generated { cell } => ("generated", cell.to_string(), DASH.to_owned()),
        EventKind::Absorbed { cell } => ("absorbed", cell.to_string(), DASH.to_owned()),
        EventKind::TurnstileClosed { cell } => {
            ("turnstile_closed", cell.to_string(), DASH.to_owned())
        }
        EventKind::TurnstileOpened { cell } => {
            ("turnstile_opened", cell.to_string(), DASH.to_owned())
        }
    };
    format!("event\t{kind}\t{a}\t{b}\t{payload}\t{amount}\n")
}

/// Parse a trace document and verify it was recorded against `net`.
pub fn import_trace<T: Scalar>(text: &str, net: &NetTopology<T>) -> Result<Trace<T>, IoError> {
    let mut lines = text.lines().enumerate();
    let mut header = |name: &str| -> Result<String, IoError> {
        let (number, line) = lines
            .next()
            .ok_or_else(|| IoError::Format("truncated trace header".into()))?;
        let mut parts = line.split('\t');
        let key = parts.next().unwrap_or_default();
        let value = parts.next().unwrap_or_default();
        if key != name {
            return Err(IoError::Line {
                line: number + 1,
                message: format!("expected `{name}` header, found `{key}`"),
            });
        }
        Ok(value.to_owned())
    };

    let version = header(MAGIC)?;
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported trace version {version}")));
    }
    let found_hash = header("net_hash")?;
    let expected_hash = net_hash(net);
    if found_hash != expected_hash {
        return Err(IoError::HashMismatch {
            expected: expected_hash,
            found: found_hash,
        });
    }
    let theta = parse_scalar::<T>(&header("theta")?, 3)?;
    let mode = match header("mode")?.as_str() {
        "discrete" => Mode::Discrete,
        "continuous" => Mode::Continuous,
        other => {
            return Err(IoError::Format(format!("unknown mode `{other}`")));
        }
    };
    let seed = header("seed")?
        .parse::<u64>()
        .map_err(|e| IoError::Format(format!("bad seed: {e}")))?;
    let steps = header("steps")?
        .parse::<u64>()
        .map_err(|e| IoError::Format(format!("bad step count: {e}")))?;

    let mut events: Vec<TraceEvent<T>> = Vec::new();
    let mut snapshots: Vec<Snapshot<T>> = Vec::new();
    let mut current_step: Option<u64> = None;

    for (number, line) in lines {
        let line_no = number + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |message: String| IoError::Line {
            line: line_no,
            message,
        };
        match fields[0] {
            "" => continue,
            "step" => {
                let step = field(&fields, 1, line_no)?
                    .parse::<u64>()
                    .map_err(|e| fail(format!("bad step index: {e}")))?;
                current_step = Some(step);
            }
            "cell" => {
                let step = current_step.ok_or_else(|| fail("cell row before any step".into()))?;
                let index = field(&fields, 1, line_no)?
                    .parse::<usize>()
                    .map_err(|e| fail(format!("bad cell id: {e}")))?;
                let tag = field(&fields, 2, line_no)?;
                let data = field(&fields, 3, line_no)?;
                let state = match tag {
                    "N" => CellState::NonTransitable,
                    "T" => CellState::Transitable(parse_payload(data, line_no)?),
                    "L" => CellState::Level(parse_scalar::<T>(data, line_no)?),
                    other => return Err(fail(format!("unknown state tag `{other}`"))),
                };
                if snapshots.last().map(|s| s.step) != Some(step) {
                    snapshots.push(Snapshot {
                        step,
                        cells: Vec::new(),
                    });
                }
                let snapshot = snapshots.last_mut().unwrap();
                if snapshot.cells.len() != index {
                    return Err(fail(format!(
                        "cell rows out of order: expected {}, found {index}",
                        snapshot.cells.len()
                    )));
                }
                snapshot.cells.push(state);
            }
            "event" => {
                let step = current_step.ok_or_else(|| fail("event row before any step".into()))?;
                let kind = field(&fields, 1, line_no)?;
                let a = field(&fields, 2, line_no)?;
                let b = field(&fields, 3, line_no)?;
                let payload_field = field(&fields, 4, line_no)?;
                let amount_field = field(&fields, 5, line_no)?;

                let cell_a = || -> Result<CellId, IoError> {
                    Ok(CellId(a.parse::<u32>().map_err(|e| IoError::Line {
                        line: line_no,
                        message: format!("bad cell id: {e}"),
                    })?))
                };
                let kind = match kind {
                    "moved" => EventKind::Moved {
                        from: cell_a()?,
                        to: CellId(b.parse::<u32>().map_err(|e| fail(format!("bad cell id: {e}")))?),
                    },
                    "blocked" => EventKind::Blocked {
                        cell: cell_a()?,
                        reason: BlockReason::from_str(b).map_err(&fail)?,
                    },
                    "generated" => EventKind::Generated { cell: cell_a()? },
                    "absorbed" => EventKind::Absorbed { cell: cell_a()? },
                    "turnstile_closed" => EventKind::TurnstileClosed { cell: cell_a()? },
                    "turnstile_opened" => EventKind::TurnstileOpened { cell: cell_a()? },
                    other => return Err(fail(format!("unknown event kind `{other}`"))),
                };
                let payload = if payload_field == DASH {
                    None
                } else {
                    Some(parse_payload(payload_field, line_no)?)
                };
                let amount = if amount_field == DASH {
                    None
                } else {
                    Some(parse_scalar::<T>(amount_field, line_no)?)
                };
                events.push(TraceEvent {
                    step,
                    kind,
                    payload,
                    amount,
                });
            }
            other => {
                return Err(fail(format!("unknown row tag `{other}`")));
            }
        }
    }

    Ok(Trace {
        theta,
        mode,
        seed,
        steps,
        events,
        snapshots,
    })
}

fn field<'a>(fields: &[&'a str], index: usize, line: usize) -> Result<&'a str, IoError> {
    fields.get(index).copied().ok_or(IoError::Line {
        line,
        message: format!("missing column {index}"),
    })
}

fn parse_scalar<T: Scalar>(text: &str, line: usize) -> Result<T, IoError> {
    T::from_str(text).map_err(|_| IoError::Line {
        line,
        message: format!("bad number `{text}`"),
    })
}

fn parse_payload<T: Scalar>(text: &str, line: usize) -> Result<Payload<T>, IoError> {
    if text == DASH {
        return Ok(Payload::new());
    }
    let mut payload = Payload::new();
    for pair in text.split(';') {
        let (name, value) = pair.split_once('=').ok_or(IoError::Line {
            line,
            message: format!("bad payload entry `{pair}`"),
        })?;
        payload.set(name, parse_scalar::<T>(value, line)?);
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circulation::{run, RunParams};
    use crate::net::{Cell, DirectionVector, Position};
    use crate::state::SimState;
    use std::collections::BTreeSet;

    fn chain_net(n: u32) -> NetTopology<f64> {
        let cells = (0..n)
            .map(|i| {
                let mut cell = Cell::new(CellId(i), Position::planar(2.0 * i as f64, 0.0));
                if i + 1 < n {
                    cell.directions = vec![DirectionVector::planar(2.0, 0.0, 1.0)];
                }
                cell
            })
            .collect();
        NetTopology::build(1.0, None, cells, BTreeSet::new()).unwrap()
    }

    fn run_chain(steps: u64, stride: u64) -> (NetTopology<f64>, Trace<f64>) {
        let net = chain_net(20);
        let (mut state, _) = SimState::init(&net, 1.0, Mode::Discrete);
        let mut payload = Payload::new();
        payload.set("volume", 2.5);
        state.place_token(CellId(0), payload);
        let params = RunParams::discrete(steps, 7).with_stride(stride);
        let trace = run(&net, state, 1.0, &params, &[], &mut ()).unwrap();
        (net, trace)
    }

    #[test]
    fn stride_one_writes_all_snapshots() {
        let (net, trace) = run_chain(10, 1);
        let text = export_trace(&trace, &net, 1);
        let imported = import_trace::<f64>(&text, &net).unwrap();
        assert_eq!(imported.snapshots.len(), 11);
    }

    #[test]
    fn stride_five_keeps_fenceposts_and_final() {
        let (net, trace) = run_chain(12, 1);
        let text = export_trace(&trace, &net, 5);
        let imported = import_trace::<f64>(&text, &net).unwrap();
        let steps: Vec<u64> = imported.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 12]);
    }

    #[test]
    fn round_trip_reproduces_the_trace() {
        let (net, trace) = run_chain(10, 1);
        let text = export_trace(&trace, &net, 1);
        let imported = import_trace::<f64>(&text, &net).unwrap();
        assert_eq!(imported, trace);
    }

    #[test]
    fn export_is_deterministic() {
        let (net, trace) = run_chain(10, 1);
        assert_eq!(export_trace(&trace, &net, 1), export_trace(&trace, &net, 1));
    }

    #[test]
    fn wrong_net_is_a_hash_mismatch() {
        let (net, trace) = run_chain(5, 1);
        let other = chain_net(21);
        let text = export_trace(&trace, &net, 1);
        let err = import_trace::<f64>(&text, &other).unwrap_err();
        assert!(matches!(err, IoError::HashMismatch { .. }));
    }
}
