//! Knowledge encoder: d-DNNF graphs to formula embeddings `E_F`.

pub mod gcn;
pub mod graph;
pub mod pretrain;

pub use gcn::{
    embed_knowledge_set, formula_embedding, gcn_forward, init_params, readout, weight_name,
    KnowEncoderSpec,
};
pub use graph::{ddnnf_to_graph, FormulaGraph, NodeKind, KIND_FEATURES};
pub use pretrain::{evaluate_triplets, pretrain_encoder, PretrainConfig, PretrainOutcome};
