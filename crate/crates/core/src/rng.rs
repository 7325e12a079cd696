//! Keyed random substreams.
//!
//! Every random draw made by a sampler is taken from a generator derived from
//! `(seed, chain, step, lane, index)`. Two runs with the same seed therefore
//! consume identical randomness no matter how the work inside a step, or the
//! chains themselves, are scheduled across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator handed out for a single substream.
pub type StreamRng = Xoshiro256PlusPlus;

/// Purpose of a draw within one step. Distinct lanes never share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Lane {
    /// i.i.d. proposals `Y_i`, plus the Gumbel noise used to select among them.
    Proposal = 1,
    /// Shadow draws `Z_i ~ q(Y, .)`.
    Shadow = 2,
    /// Inner tuples for the forward normaliser estimate of the semi-ideal chain.
    InnerForward = 3,
    /// Inner tuples for the reverse normaliser estimate of the semi-ideal chain.
    InnerReverse = 4,
    /// The uniform used in the accept/reject decision.
    Accept = 5,
    /// The fair coin of the lazy wrapper.
    Lazy = 6,
    /// Exact draws from the target (stationary starts in diagnostics).
    Stationary = 7,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of words into a single 64-bit key.
pub fn derive_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909u64, |acc, &w| splitmix(acc ^ splitmix(w)))
}

/// Randomness for one transition of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepStream {
    pub seed: u64,
    pub chain: u64,
    pub step: u64,
}

impl StepStream {
    pub fn new(seed: u64, chain: u64, step: u64) -> Self {
        Self { seed, chain, step }
    }

    /// Generator for draw `index` of `lane` within this step.
    pub fn rng(&self, lane: Lane, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(derive_key(&[self.seed, self.chain, self.step, lane as u64, index]))
    }

    /// A sub-stream namespace, used when a step needs nested families of draws
    /// (e.g. `m`-th inner tuple of the semi-ideal estimator).
    pub fn rng2(&self, lane: Lane, outer: u64, inner: u64) -> StreamRng {
        StreamRng::seed_from_u64(derive_key(&[
            self.seed,
            self.chain,
            self.step,
            lane as u64,
            outer,
            inner,
        ]))
    }
}
