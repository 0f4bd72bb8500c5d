//! Supervised subgroup discovery over exported embeddings and training dynamics.
//!
//! Typical flow: load a [`interchange::Dataset`], fit one basis per class with
//! [`decompose::fit_pls`], turn scores into pseudo-labels and a bias report
//! with [`subgroup`], check the directions against references with
//! [`evalmatch`], read captions with [`interpret`], and retrain with
//! [`mitigate`]. [`pipeline`] strings these together per class; [`synth`]
//! produces planted data to exercise all of it.

pub mod decompose;
pub mod evalmatch;
pub mod interchange;
pub mod interpret;
pub mod linalg;
pub mod mitigate;
pub mod pipeline;
pub mod rng;
pub mod subgroup;
pub mod synth;
