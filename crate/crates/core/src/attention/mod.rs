//! Dictionary-based attention for embedding local feature maps.
//!
//! A feature map F (h×w×c) is transformed by φ and compared, location by
//! location, with the entries of a learnable [`Dictionary`] using cosine
//! similarity. A softmax over the N entries turns the similarities into
//! attention weights A (N×h×w×c) that sum to one at every position, so the
//! N masked maps Aⁿ ⊙ F add back up to F. Each masked map is pooled and
//! embedded by its own head; the N unit-norm branch embeddings are
//! concatenated.
//!
//! With [`Strategy::Post`] the masks apply to ψ(F); with [`Strategy::Pre`]
//! they apply to F and each masked map is then refined by the shared ψ.

mod dictionary;
mod pipeline;
mod select;

pub use dictionary::{Dictionary, SelectionMode};
pub use pipeline::{
    baseline_forward, branch_head, post_attention_forward, pre_attention_forward, BoundDiablo, BoundHead, BranchHead,
    Diablo, DiabloConfig, DiabloOutput, StackShape, Strategy,
};
pub use select::{
    hard_assign, merge, merge_tensors, select, select_dimension_wise, select_feature_wise, similarities,
    AttentionTensor,
};
