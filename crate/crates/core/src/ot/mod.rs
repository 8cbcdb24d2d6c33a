//! Knowledge-data alignment through entropic optimal transport.

pub mod cost;
pub mod sinkhorn;

pub use cost::{cost_matrix, cost_matrix_tape, CostMetric};
pub use sinkhorn::{
    extract_alignment, ot_distance, ot_distance_tape, sinkhorn, sinkhorn_tape, AlignedPair,
    Alignment, Marginals, SinkhornConfig, TransportPlan,
};
