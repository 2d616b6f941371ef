//! Direct Q-penalization: penalty functions, the policy they induce, and
//! exact tabular versions of the two equivalent regularized iterations.

mod penalty;
mod tabular;

pub use penalty::{brac_kl_penalty, induced_policy, mmd2_penalty, support_penalty, PenaltySpec};
pub use tabular::{
    entropy, expect, induced_table, kl, kl_regularized_step, log_partition, penalized_soft_step, run_equivalence,
    theorem1_identity_check, verify_theorem1, IterationResidual, TabularMDP, Theorem1Config, Theorem1Report,
};
