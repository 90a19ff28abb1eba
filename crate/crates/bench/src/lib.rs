//! Shared fixtures for the benchmarks.

use bsch_core::forms::LinearBackend;
use bsch_core::*;

/// Log-potential model on the disk of radius 1 with `K = L = 1`.
pub fn model(level: u32) -> Model {
    let ops = assemble(&build_disk_mesh(1.0, level).unwrap()).unwrap();
    let params = SystemParams::new(Coupling::Finite(1.0), Coupling::Finite(1.0), 1.0, 1.0, MassTarget::Coupled(0.1), &ops.geometry()).unwrap();
    let p = ModelPotential::Direct(SplitPotential::log(1.0, 2.0));
    Model::new(ops, params, p, p, LinearBackend::Direct).unwrap()
}
