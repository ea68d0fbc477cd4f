//! Linear sum assignment, Sinkhorn normalization and the Gumbel-Sinkhorn
//! soft-permutation module.

mod gs;
mod hungarian;
mod sinkhorn;

pub use gs::{
    evaluate_gs, held_out_matrices, pretrain_gs, random_cost_matrix, truncated_gumbel_noise,
    GsParams, GsPretrainConfig, GsPretrainReport, GsVars, FRAME_SIZES, GS_GROUP, GUMBEL_CLIP,
};
pub use hungarian::{hungarian, permutation_matrix};
pub use sinkhorn::{marginal_error, sinkhorn, sinkhorn_tape, SinkhornConfig, SoftPermutation};
