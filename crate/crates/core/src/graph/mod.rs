//! Graph representation, the Gaussian noise model, datasets and file I/O.

mod datasets;
mod instance;
pub mod io;
mod noise;

pub use datasets::{
    community_graph, ego_graph, erdos_renyi, generate_dataset, lobster, preferential_attachment,
    DatasetKind, DatasetSpec, EgoHost, NodeCountSampler,
};
pub use instance::{GraphInstance, Permutation};
pub use noise::{
    oracle_score, oracle_score_matrix, perturb, quantize, quantize_matrix, symmetric_normal,
    NoiseSchedule,
};
