//! Pipeline orchestration around `rsfiqa_core`: configuration, datasets,
//! training, checkpoints, evaluation, ablation, and gradient verification.

pub mod ablate;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod prepare;
pub mod train;
pub mod verify;
