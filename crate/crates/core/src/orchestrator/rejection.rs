use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::registry::{CotStyle, TeacherModel};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KeepRule {
    /// Keep the first correct sample; with none correct, keep a random incorrect one.
    #[default]
    OneCorrectElseRandomIncorrect,
}

/// How many samples to draw per teacher and which one to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionPolicy {
    /// Samples for teachers under the large-size threshold.
    pub samples_small: u32,
    /// Samples for large teachers and Long-CoT teachers.
    pub samples_large: u32,
    pub keep_rule: KeepRule,
}

impl Default for RejectionPolicy {
    fn default() -> Self {
        Self {
            samples_small: 4,
            samples_large: 2,
            keep_rule: KeepRule::OneCorrectElseRandomIncorrect,
        }
    }
}

impl RejectionPolicy {
    pub fn samples_for(&self, teacher: &TeacherModel) -> u32 {
        if teacher.is_large() || teacher.cot_style == CotStyle::LongCoT {
            self.samples_large
        } else {
            self.samples_small
        }
    }

    /// Index of the sample to keep and whether it is verified correct.
    ///
    /// The random choice among incorrect samples is seeded by
    /// `(seed, prompt_id)`, so it does not depend on completion order.
    pub fn keep(&self, correct: &[bool], seed: u64, prompt_id: &str) -> (usize, bool) {
        assert!(!correct.is_empty(), "keep() needs at least one sample");
        match self.keep_rule {
            KeepRule::OneCorrectElseRandomIncorrect => match correct.iter().position(|&c| c) {
                Some(i) => (i, true),
                None => {
                    let mut rng = seeding::substream(seed, &format!("keep/{prompt_id}"));
                    (rng.gen_range(0..correct.len()), false)
                }
            },
        }
    }
}
