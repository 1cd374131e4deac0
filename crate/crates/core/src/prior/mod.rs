//! Item-similarity prior built from text embeddings.

mod graph;
mod kernel;
mod knn;

pub use graph::{
    build_graph, Edge, GraphParams, KernelKind, SimilarityGraph, Symmetrize, GRAPH_MAGIC,
};
pub use kernel::{
    global_bandwidth, global_similarity, local_moments, local_similarity, shrink, Cholesky,
    LocalGaussian, LocalKernel, MIN_WEIGHT,
};
pub use knn::{build_knn, default_k, NeighborLists};
