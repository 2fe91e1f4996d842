//! Yee-lattice time-domain Maxwell solver.

mod field;
mod grid;
mod monitor;
mod pml;
mod source;

pub use field::{Component, Field};
pub use grid::{component_shape, Dimensionality, GridLayout, SimulationGrid, SolverSettings};
pub use monitor::{
    advance, read_raw_f32, run, sidecar_path, write_raw_f32, write_snapshot, FieldDft, FluxBox,
    Monitor, MonitorRecords, MonitorSeries, PointProbe, SnapshotMeta, SourceWork,
};
pub use pml::PmlSpec;
pub use source::{SourceTerm, Waveform};
