//! Trace-driven simulator and dataflow mapper for fused-layer CNN execution
//! on near-bank DRAM-PIM.
//!
//! The pipeline is: a [`CnnGraph`] and a [`FusionPlan`] are mapped onto an
//! [`ArchConfig`] ([`dataflow`]), lowered into an abstract [`program`], emitted
//! as a DRAM command [`trace`], replayed cycle by cycle ([`simcore`]) and
//! priced in energy and area ([`ppa`]). [`experiment`] sweeps whole grids.

pub mod arch;
pub mod dataflow;
pub mod error;
pub mod experiment;
pub mod ppa;
pub mod program;
pub mod simcore;
pub mod trace;
pub mod workload;

pub use arch::{named_config, parse_label, ArchConfig, PimcoreFunctions};
pub use dataflow::{analyze, DataflowMetrics, FusedKernel, FusionPlan, TileRegion};
pub use error::{Error, Result};
pub use simcore::{simulate, SimStats};
pub use trace::{emit_trace, CommandTrace, PimCommand};
pub use workload::{build_resnet18, default_fusion_plan, CnnGraph, LayerKind, LayerSpec};

/// Energy breakdown in `f64` picojoules.
pub type Energy = ppa::EnergyBreakdown<f64>;
/// Area breakdown in `f64` mm².
pub type Area = ppa::AreaBreakdown<f64>;

pub fn estimate_energy(stats: &SimStats, arch: &ArchConfig) -> Result<Energy> {
    ppa::estimate_energy::<f64>(stats, arch)
}

pub fn estimate_area(arch: &ArchConfig) -> Area {
    ppa::estimate_area::<f64>(arch)
}
