//! Per-step random streams derived from a run seed, so results do not depend
//! on the order in which dialogues are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn step_rng(seed: u64, dialogue_id: &str, step: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dialogue_id.len() as u64).to_le_bytes());
    hasher.update(dialogue_id.as_bytes());
    hasher.update(step.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
