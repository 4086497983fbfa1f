//! qcn — quasi cellular nets: flow simulation on circle-packed structures.
//!
//! A quasi cellular net is a set of equal-radius circular cells placed in
//! 2D/3D coordinates; any pair of cells within center distance `2R` are
//! neighbors. The same structure carries both micro-level flows (discrete
//! tokens such as vehicles hopping cell to cell) and macro-level flows
//! (continuous levels diffusing along the same directed links).
//!
//! The crate is organized around that split:
//!
//! - [`net`] — the immutable structure: cells, the neighborhood predicate,
//!   adjacency, directed successors, validation.
//! - [`state`] / [`circulation`] — mutable run state and the deterministic
//!   step pipeline for both modes, including generator, outflow, and
//!   turnstile cells.
//! - [`synthesis`] — compiles a road/haul graph into a net: edge
//!   discretization, multiband lanes, separators, branch probabilities.
//! - [`quarry`] — an open-pit haulage scenario on top of the engine:
//!   excavators as turnstiles, tipper payloads, flow metrics.
//! - [`io`] — file formats (net, graph, quarry config, trace), frame
//!   rendering, and the content hash tying traces to their net.
//!
//! All numeric code is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix the default `f64` precision.

pub mod circulation;
pub mod io;
pub mod net;
pub mod num;
pub mod payload;
pub mod quarry;
pub mod state;
pub mod synthesis;

pub use circulation::{run, RunParams, Trace};
pub use net::{CellId, NetTopology};
pub use num::Scalar;
pub use payload::Payload;
pub use state::{Mode, SimState};

/// Default-precision aliases.
pub type Net64 = net::NetTopology<f64>;
pub type SimState64 = state::SimState<f64>;
pub type Trace64 = circulation::Trace<f64>;
pub type BasicGraph64 = synthesis::BasicGraph<f64>;
pub type QuarryConfig64 = quarry::QuarryConfig<f64>;

/// Single-precision net, for memory-bound structures.
pub type Net32 = net::NetTopology<f32>;
