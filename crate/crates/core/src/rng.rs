//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, unit, equation)`. The unit is usually an individual or draw
//! index, so results do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Equation slots inside one unit's stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Initial = 0,
    InvestShock = 1,
    SkillShock = 2,
    AnchorShock = 3,
    MeasureError = 4,
    Mixture = 5,
    Counterfactual = 6,
    Misc = 7,
}

const SLOT_WORDS: u128 = 1 << 48;

#[derive(Clone, Debug)]
pub struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn get(&self, unit: u64, slot: Slot) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(unit);
        r.set_word_pos(slot as u128 * SLOT_WORDS);
        r
    }
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x2545_F491_4F6C_DD1D)))
}
