//! Soft-biometric attribute vectors and nearest-neighbour identity retrieval.

mod retrieval;
mod schema;

pub use retrieval::{
    cosine_similarity, nna_identify, prm_similarity, similarity, Retrieval, Similarity, PRM_CLAMP,
    TIE_TOLERANCE,
};
pub use schema::{
    build_table, encode_subject, AttributeDef, AttributeSchema, AttributeTable, Biometric, Encoding,
};
