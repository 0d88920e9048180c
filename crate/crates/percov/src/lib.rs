//! Equitable persistent coverage of non-convex environments.
//!
//! The crate splits the problem in two stages. First, the environment is
//! partitioned among the robots with a geodesic power diagram whose weights
//! (and optionally generator positions) follow distributed gradient control
//! laws until every robot holds the same capability-scaled share of the
//! workload. Second, each robot builds a sweep graph over its partition and
//! repeatedly plans open paths that maximize the accumulated coverage error
//! per visited vertex, while the coverage field decays and robot actions
//! replenish it.
//!
//! Modules follow the pipeline order:
//!
//! - [`environment`]: occupancy grids, erosion, geodesic fields, string pulling
//! - [`partition`]: power diagrams, workloads, gradients and control laws
//! - [`covdyn`]: coverage field dynamics, gain controller and metrics
//! - [`covgraph`]: sweep-graph construction over a partition
//! - [`planner`]: error-weighted open path planning on sweep graphs
//! - [`sim`]: the full closed-loop simulator
//! - [`config`]: run manifests shared by the library and the CLI
//! - [`fixtures`]: built-in desk-scale test environments

pub mod config;
pub mod covdyn;
pub mod covgraph;
pub mod environment;
pub mod fixtures;
pub mod partition;
pub mod planner;
pub mod sim;

pub use environment::{Cell, CellSet, EnvError, Environment, GeodesicField, Point, WaypointChain};
