//! Hybrid learned/contingency collision avoidance for a small UAV flying a
//! 2D obstacle course from monocular camera input.
//!
//! The crate contains a deterministic course simulator with a synthetic
//! camera, three trainable networks (depth estimation, dueling noisy
//! Q-policy, collision prediction), two contingency pilots (rule-based and
//! A*-planned), the arbitration state machine that switches between them,
//! and an evaluation harness.

pub mod arbiter;
pub mod collision_net;
pub mod contingency;
pub mod depth_net;
pub mod error;
pub mod harness;
pub mod world;
pub mod nn;
pub mod observe;
pub mod par;
pub mod perception;
pub mod policy_net;
pub mod record;
pub mod seed;

pub use error::{Error, Result};
