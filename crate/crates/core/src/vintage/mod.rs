//! Real-time data vintages: the append-only observation log, point-in-time
//! snapshots, frequency harmonization, transformations, and design matrix
//! assembly with per-cell provenance.

mod design;
mod log;
mod recipe;
mod snapshot;
mod transform;

pub use design::{
    assemble_design, design_at, target_values, DesignMatrix, DroppedFeature, FeatureMeta,
    NowcastRow, ObsRef, Provenance, StandardizationRecord, Violation, ViolationKind,
};
pub use log::{
    ingest_csv, read_observations_csv, write_observations_csv, IngestSummary, ObservationLog,
    Reject, RejectReason, SeriesObservation,
};
pub use recipe::{
    EconomicBlock, FeatureRecipe, RaggedEdgePolicy, Recipe, StandardizeScope, TargetRecipe,
};
pub use snapshot::{PanelValue, Snapshot};
pub use transform::{
    aggregate_to_quarterly, transform, Aggregation, PartialQuarters, Transform, WindowStats,
};
