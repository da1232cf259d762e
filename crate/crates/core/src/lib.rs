//! Open ad hoc teamwork in grid worlds.
//!
//! A learner shares a Level-Based Foraging or Wolfpack grid with scripted
//! teammates that arrive and leave during an episode. The learner factorises
//! its joint action value over a fully connected coordination graph, predicts
//! teammate actions with a message-passing agent model, and acts on the
//! action value obtained by marginalising teammate actions under that model.

pub mod envs;
pub mod gpl;
pub mod harness;
pub mod nn;
pub mod osbg;
pub mod teammates;
pub mod tensor;
pub mod world;
