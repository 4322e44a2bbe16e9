//! Review graph, neighbor sampling and the graph attention encoder.

mod gat;
mod hetero;

pub use gat::{
    encode_graph, gat_layer, init_node_features, node_input, EdgeRole, GatAttention, GatLayerParams, GatOutput,
    GraphEncoded, GraphEncoderConfig,
};
pub use hetero::{sample_subgraph, EdgeType, GraphStats, HeteroGraph, NodeType, Subgraph};
