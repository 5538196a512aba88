//! Grid-world navigation simulator with panoramic object projection and a
//! goal-direction localizer.
//!
//! The crate is `no_std` with `alloc`; enable the `std` feature to get
//! `std::error::Error` impls on the error types. All trigonometry goes through
//! `libm`, so results are bit-identical across platforms with or without `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod angle;
pub mod detector;
pub mod eval;
pub mod localizer;
pub mod panocam;
pub mod policy;
pub mod rng;
pub mod scenegen;
pub mod world;

pub use detector::{detect, draw_key, Detection, NoiseModel};
pub use localizer::{GoalDirection, LocalizerModel, ModelDims, TokenSequence, TrainConfig};
pub use panocam::{
    panoramic_sweep, project_object, to_panoramic, true_direction_angles, BoundingBox2D,
    CameraIntrinsics, PanoramicAngles, ProjectionMode,
};
pub use scenegen::{generate_scene, generate_task, goal_direction, plan_expert, GenParams, Trajectory};
pub use world::{
    apply_action, check_goal_conditions, Action, ActionResult, AgentPose, Cell, ClassVocab,
    GoalCondition, Heading, Instruction, ObjectClass, Scene, SceneObject, Subgoal, SubgoalKind,
    Task, Verb, Vocabulary, WorldState,
};
