//! Per-prompt teacher routing for synthetic fine-tuning data.
//!
//! Every teacher in a pool answers a set of training prompts; each answer is
//! scored for quality and for how likely it is under the student model. A
//! linear Bradley–Terry router learns to predict the best teacher from prompt
//! text alone, and a corpus is then generated by sending each prompt only to
//! its routed teacher.
//!
//! Module map:
//!
//! - [`registry`]: teachers, student, prompts, run configuration
//! - [`reward`]: learnability and quality rewards, per-prompt scoreboards
//! - [`pairs`]: pairwise preference datasets
//! - [`router`]: hashed n-gram features and the linear router
//! - [`strategies`]: routing strategies and allocations
//! - [`orchestrator`]: HTTP fan-out to model endpoints, plus a mock server
//! - [`dataset`]: SFT record assembly and allocation reports
//! - [`simlab`]: synthetic worlds with known ground truth

pub mod dataset;
pub mod error;
pub mod io;
pub mod orchestrator;
pub mod pairs;
pub mod registry;
pub mod reward;
pub mod router;
pub mod seeding;
pub mod simlab;
pub mod strategies;

pub use error::{Error, Result};
pub use registry::{CotStyle, Prompt, RunConfig, Split, StudentModel, TeacherModel, TeacherPool};
pub use reward::{PromptScoreboard, TokenLogProbs};
