//! Frame rendering: one frame per trace snapshot, as plain-text grids or
//! portable graymaps (P2). Cells are drawn as circles of radius R in world
//! coordinates; occupied cells fill solid, continuous levels shade
//! proportionally, turnstiles get a distinct outline.

use super::IoError;
use crate::circulation::Trace;
use crate::net::{CellKind, NetTopology};
use crate::num::Scalar;
use crate::state::CellState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Ascii,
    Pgm,
}

impl std::str::FromStr for FrameFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascii" => Ok(FrameFormat::Ascii),
            "pgm" => Ok(FrameFormat::Pgm),
            other => Err(format!("unknown frame format `{other}` (ascii|pgm)")),
        }
    }
}

/// Render every snapshot of the trace. Returns `(file name, contents)`
/// pairs; `scale` is pixels per cell diameter for PGM frames and is clamped
/// to at least 4 (ASCII grids use one character per cell radius).
pub fn render_frames<T: Scalar>(
    net: &NetTopology<T>,
    trace: &Trace<T>,
    format: FrameFormat,
    scale: u32,
) -> Result<Vec<(String, String)>, IoError> {
    if trace.snapshots.is_empty() {
        return Err(IoError::NoSnapshots);
    }
    let max_level = trace
        .snapshots
        .iter()
        .flat_map(|s| s.cells.iter())
        .filter_map(|c| c.level())
        .fold(T::zero(), T::max);

    trace
        .snapshots
        .iter()
        .map(|snapshot| {
            let (extension, content) = match format {
                FrameFormat::Ascii => ("txt", ascii_frame(net, &snapshot.cells)),
                FrameFormat::Pgm => ("pgm", pgm_frame(net, &snapshot.cells, scale.max(4), max_level)),
            };
            Ok((format!("frame_{:06}.{extension}", snapshot.step), content))
        })
        .collect()
}

fn bounds<T: Scalar>(net: &NetTopology<T>) -> (f64, f64, f64, f64) {
    let r = net.radius().to_f64().unwrap_or(1.0);
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for cell in net.cells() {
        let x = cell.position.x.to_f64().unwrap_or(0.0);
        let y = cell.position.y.to_f64().unwrap_or(0.0);
        min_x = min_x.min(x - r);
        min_y = min_y.min(y - r);
        max_x = max_x.max(x + r);
        max_y = max_y.max(y + r);
    }
    if net.is_empty() {
        (0.0, 0.0, 1.0, 1.0)
    } else {
        (min_x, min_y, max_x, max_y)
    }
}

/// Character grid at one column per cell radius. Tokens are `#`, empty
/// cells `o`, turnstiles `U` (`@` when occupied), generators `G`, outflows
/// `X`; continuous levels render as digits 0..9 of level/max.
fn ascii_frame<T: Scalar>(net: &NetTopology<T>, cells: &[CellState<T>]) -> String {
    let (min_x, min_y, max_x, max_y) = bounds(net);
    let r = net.radius().to_f64().unwrap_or(1.0);
    let columns = (((max_x - min_x) / r).ceil() as usize + 1).max(1);
    let rows = (((max_y - min_y) / r).ceil() as usize + 1).max(1);
    let mut grid = vec![vec!['.'; columns]; rows];

    let max_level = cells
        .iter()
        .filter_map(|c| c.level())
        .fold(T::zero(), T::max)
        .to_f64()
        .unwrap_or(0.0);

    for cell in net.cells() {
        let x = cell.position.x.to_f64().unwrap_or(0.0);
        let y = cell.position.y.to_f64().unwrap_or(0.0);
        let column = (((x - min_x) / r).round() as usize).min(columns - 1);
        // Raster rows grow downward; world y grows upward.
        let row = rows - 1 - (((y - min_y) / r).round() as usize).min(rows - 1);
        let glyph = match &cells[cell.id.index()] {
            CellState::Transitable(_) => match cell.kind {
                CellKind::Turnstile(_) => '@',
                _ => '#',
            },
            CellState::NonTransitable => match cell.kind {
                CellKind::Turnstile(_) => 'U',
                CellKind::Generator(_) => 'G',
                CellKind::Outflow => 'X',
                CellKind::Regular => 'o',
            },
            CellState::Level(level) => {
                let level = level.to_f64().unwrap_or(0.0);
                if max_level > 0.0 {
                    let digit = ((level / max_level) * 9.0).round().clamp(0.0, 9.0) as u32;
                    char::from_digit(digit, 10).unwrap_or('0')
                } else {
                    '0'
                }
            }
        };
        grid[row][column] = glyph;
    }

    let mut out = String::with_capacity(rows * (columns + 1));
    for row in grid {
        out.extend(row);
        out.push('\n');
    }
    out
}

/// P2 (plain text) portable graymap. White background; occupied cells are
/// solid black discs, clear cells light outlines, levels shade with
/// level/max, turnstiles carry a heavy dark ring.
fn pgm_frame<T: Scalar>(
    net: &NetTopology<T>,
    cells: &[CellState<T>],
    scale: u32,
    max_level: T,
) -> String {
    let (min_x, min_y, max_x, max_y) = bounds(net);
    let r = net.radius().to_f64().unwrap_or(1.0);
    let px_per_unit = scale as f64 / (2.0 * r);
    let width = (((max_x - min_x) * px_per_unit).ceil() as usize).max(1);
    let height = (((max_y - min_y) * px_per_unit).ceil() as usize).max(1);
    let mut raster = vec![255u8; width * height];
    let max_level = max_level.to_f64().unwrap_or(0.0);

    for cell in net.cells() {
        let x = (cell.position.x.to_f64().unwrap_or(0.0) - min_x) * px_per_unit;
        // Flip y so the frame reads like the coordinate plane.
        let y = (max_y - cell.position.y.to_f64().unwrap_or(0.0)) * px_per_unit;
        let radius_px = r * px_per_unit;
        let is_turnstile = matches!(cell.kind, CellKind::Turnstile(_));

        let fill: Option<u8> = match &cells[cell.id.index()] {
            CellState::Transitable(_) => Some(0),
            CellState::NonTransitable => None,
            CellState::Level(level) => {
                let level = level.to_f64().unwrap_or(0.0);
                if max_level > 0.0 {
                    Some((255.0 - (level / max_level) * 255.0).clamp(0.0, 255.0) as u8)
                } else {
                    Some(255)
                }
            }
        };

        let x0 = ((x - radius_px).floor() as isize).max(0) as usize;
        let x1 = (((x + radius_px).ceil() as isize).max(0) as usize).min(width - 1);
        let y0 = ((y - radius_px).floor() as isize).max(0) as usize;
        let y1 = (((y + radius_px).ceil() as isize).max(0) as usize).min(height - 1);
        let ring_width = if is_turnstile { 2.0 } else { 1.0 };
        let ring_gray = if is_turnstile { 0 } else { 160 };
        for py in y0..=y1 {
            for px in x0..=x1 {
                let dx = px as f64 + 0.5 - x;
                let dy = py as f64 + 0.5 - y;
                let distance = (dx * dx + dy * dy).sqrt();
                if distance > radius_px {
                    continue;
                }
                let target = &mut raster[py * width + px];
                if distance >= radius_px - ring_width {
                    *target = (*target).min(ring_gray);
                } else if let Some(gray) = fill {
                    *target = (*target).min(gray);
                }
            }
        }
    }

    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in raster.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circulation::{run, RunParams};
    use crate::net::{Cell, CellId, DirectionVector, NetTopology, Position};
    use crate::payload::Payload;
    use crate::state::{Mode, SimState};
    use std::collections::BTreeSet;

    fn square_ring() -> NetTopology<f64> {
        let corners = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)];
        let cells = (0..4u32)
            .map(|i| {
                let (x, y) = corners[i as usize];
                let (nx, ny) = corners[((i + 1) % 4) as usize];
                Cell::new(CellId(i), Position::planar(x, y)).with_directions(vec![
                    DirectionVector::planar(nx - x, ny - y, 1.0),
                ])
            })
            .collect();
        NetTopology::build(1.0, None, cells, BTreeSet::new()).unwrap()
    }

    #[test]
    fn ring_frames_show_the_token_advancing() {
        let net = square_ring();
        let (mut state, _) = SimState::init(&net, 1.0, Mode::Discrete);
        state.place_token(CellId(0), Payload::new());
        let trace = run(&net, state, 1.0, &RunParams::discrete(3, 0), &[], &mut ()).unwrap();
        let frames = render_frames(&net, &trace, FrameFormat::Ascii, 8).unwrap();
        assert_eq!(frames.len(), 4);
        for (name, content) in &frames {
            assert!(name.ends_with(".txt"));
            assert_eq!(content.matches('#').count(), 1, "exactly one token per frame");
        }
        // The filled position changes from frame to frame.
        assert_ne!(frames[0].1, frames[1].1);
        assert_ne!(frames[1].1, frames[2].1);
    }

    #[test]
    fn uniform_continuous_net_renders_uniformly() {
        let net = square_ring();
        let (state, _) = SimState::init(&net, 1.0, Mode::Continuous);
        let trace = run(
            &net,
            state,
            1.0,
            &RunParams::continuous(1, 0.5),
            &[],
            &mut (),
        )
        .unwrap();
        let frames = render_frames(&net, &trace, FrameFormat::Ascii, 8).unwrap();
        // All levels zero: every cell renders the same digit.
        for (_, content) in &frames {
            assert_eq!(content.matches('0').count(), 4);
        }
    }

    #[test]
    fn empty_trace_has_no_snapshots_to_render() {
        let net = square_ring();
        let trace = Trace::<f64> {
            theta: 1.0,
            mode: Mode::Discrete,
            seed: 0,
            steps: 0,
            events: Vec::new(),
            snapshots: Vec::new(),
        };
        let err = render_frames(&net, &trace, FrameFormat::Ascii, 8).unwrap_err();
        assert!(matches!(err, IoError::NoSnapshots));
    }

    #[test]
    fn pgm_frames_are_well_formed() {
        let net = square_ring();
        let (mut state, _) = SimState::init(&net, 1.0, Mode::Discrete);
        state.place_token(CellId(0), Payload::new());
        let trace = run(&net, state, 1.0, &RunParams::discrete(1, 0), &[], &mut ()).unwrap();
        let frames = render_frames(&net, &trace, FrameFormat::Pgm, 8).unwrap();
        assert_eq!(frames.len(), 2);
        let (name, content) = &frames[0];
        assert!(name.ends_with(".pgm"));
        let mut lines = content.lines();
        assert_eq!(lines.next(), Some("P2"));
        let dims: Vec<usize> = lines
            .next()
            .unwrap()
            .split(' ')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(lines.next(), Some("255"));
        let pixels: usize = lines.map(|l| l.split(' ').count()).sum();
        assert_eq!(pixels, dims[0] * dims[1]);
        assert!(content.split_ascii_whitespace().skip(4).all(|v| {
            v.parse::<u16>().map(|x| x <= 255).unwrap_or(false)
        }));
    }
}
