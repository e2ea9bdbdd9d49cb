//! Overlap-aware diarization of simulated streams and DER scoring.

pub mod cluster;
pub mod der;
pub mod pipeline;

pub use cluster::{affinity_propagation, cosine_similarity_matrix, ApConfig, ApResult};
pub use der::{der_score, max_weight_assignment, DerBreakdown};
pub use pipeline::{
    cluster_turns, diarize, run_benchmark, segments_of, simulate_stream, simulated_overlap_detector, BenchmarkConfig,
    BenchmarkReport, ChangeDetector, ClusterResult, DiarizeConfig, Strategy, Stream, StreamOutcome,
};
