//! Lidar open-vocabulary 3D detection with global-local collaborative
//! inference.
//!
//! The crate covers the model-agnostic parts of the pipeline:
//!
//! * [`geometry`]: oriented boxes, rotated IoU, frustum lifting;
//! * [`rplg`]: template-reflection filtering of 2D labels and 3D pseudo labels;
//! * [`baol`]: proposal/pseudo-label matching, objectness targets, selection;
//! * [`glci`]: the question-answer refinement session against a language model;
//! * [`evaluator`]: AP and mAP at a 3D IoU threshold;
//! * [`losses`]: the training objectives;
//! * [`pipeline`]: file formats, configuration, and stage runners;
//! * [`synthbench`]: synthetic scenes and the refinement experiment.

pub mod assignment;
pub mod baol;
pub mod evaluator;
pub mod geometry;
pub mod glci;
pub mod losses;
pub mod pipeline;
pub mod rplg;
pub mod seed;
pub mod synthbench;
