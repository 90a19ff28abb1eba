//! Finite-element simulation of the convective Cahn–Hilliard system with
//! dynamic boundary conditions on a disk.

pub mod certify;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forms;
pub mod mesh;
pub mod model;
pub mod params;
pub mod potential;
pub mod sparse;
pub mod stationary;
pub mod stepper;
pub mod velocity;

pub use error::{Error, Result};
pub use fem::{assemble, BulkSurfaceField, Domain, FemOperators};
pub use mesh::{build_disk_mesh, BulkSurfaceMesh};
pub use params::{chi, generalized_mean, mass_functional, Coupling, DomainGeometry, MassTarget, MassValue, Regime, SystemParams};
pub use potential::{ModelPotential, SplitPotential, YosidaPotential};
pub use model::{EnergyBreakdown, Model};
pub use stepper::{ConvectionTreatment, SchemeConfig, SimState, Stepper, TrajectoryRecord};
pub use stationary::{newton_solve, separation_width, StationarySolution};
pub use config::{parse_config, Experiment, RunConfig, Scenario};
