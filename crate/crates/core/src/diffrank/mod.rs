//! Exact and differentiable top-k ranking operators.
//!
//! Exact metrics work on a [`HardPermutation`]. Their relaxed counterparts
//! replace the permutation by a temperature-smoothed, Sinkhorn-scaled
//! matrix built from predicted scores, and are recorded on a
//! [`Tape`](crate::grad::Tape) so the training loss can be differentiated.

mod exact;
mod relaxed;

pub use exact::{
    discount, exact_dcg, exact_gini, exact_ndcg, exact_rank, gain, gini_of, ideal_dcg,
    HardPermutation,
};
pub use relaxed::{
    build_relaxed, dr_gini, dr_gini_node, dr_ndcg, dr_ndcg_node, hard_perm_matrix,
    relaxed_perm_node, sinkhorn_node, sinkhorn_scale, top_k_rows, RelaxConfig,
    RelaxedPermutation, SinkhornOutcome, DEFAULT_SINKHORN_ITERS, DEFAULT_SINKHORN_TOL,
};
