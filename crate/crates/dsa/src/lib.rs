//! Curriculum-driven training-data tooling: skill-dependency graphs,
//! textbook/exercise corpus generation through a pluggable chat-completion
//! client, per-example training-dynamics statistics, and the dynamic loop
//! that rewrites the training set between windows (drop / augment / compose
//! / keep).
//!
//! Start with the runnable examples (`cargo run -p dsa --example
//! build_skill_graph`, `... --example dynamic_curation_loop`) or the `dsa`
//! binary for the file-based pipeline.

pub mod cartography;
pub mod cli;
pub mod curation;
pub mod datagen;
pub mod llm_client;
pub mod skill_graph;
pub mod synth;
pub mod toy_trainer;
pub mod util;

pub use cartography::{Baseline, CartographyStats, Category, LossTrace};
pub use curation::{Action, CurationPlan, LoopConfig};
pub use datagen::{ExerciseItem, Provenance, SolutionStep, TextbookDoc};
pub use llm_client::{
    GenerationClient, GenerationRequest, GenerationResponse, ReplayClient, StubClient,
};
pub use skill_graph::{Curriculum, Skill, SkillGraph, SkillId, SkillSource};
pub use toy_trainer::{ToyTrainer, Trainer};
