#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod game;
pub mod graph;
pub mod mixing;
pub mod seeker;
pub mod certify;
pub mod analysis;
pub mod experiment;
