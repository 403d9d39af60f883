//! Labeled random substreams derived from one master seed.
//!
//! Each consumer owns a distinct ChaCha stream id, so adding draws to one
//! consumer never shifts the values another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    /// Class feature means.
    Classes = 1,
    /// Agent placement, kinematics, noise, misses and false positives.
    World = 2,
    /// Static detector confidences.
    StaticDetector = 3,
    /// Held-out evaluation set.
    Evaluation = 4,
    /// Static detector draws on the evaluation set.
    StaticEvaluation = 5,
    /// Human-supervised seed samples.
    Seeds = 6,
    /// Free-standing labeled streams used for offline regret studies.
    Labeled = 7,
}

pub fn substream(seed: u64, which: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
