//! Partial Policy Learning: offline RL as a maximin partial optimal-transport
//! problem, where the critic is the transport cost, the policy is the
//! transport map and a nonnegative potential enforces partial coverage.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod envs;
pub mod harness;
pub mod nets;
pub mod oracle;
pub mod ppl;
