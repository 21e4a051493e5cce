//! Seed derivation.
//!
//! Every stochastic stream in a run (one per agent, one per directed network
//! pair, one per oracle symbol) is seeded by hashing the master seed together
//! with the stream's identity. A stream's seed therefore never depends on how
//! many other agents exist or how many numbers they consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::AgentId;

/// PRNG used for every stream in the simulator.
pub type SimRng = ChaCha8Rng;

const DOMAIN_AGENT: u64 = 0x6167_656e_7400_0001;
const DOMAIN_JITTER: u64 = 0x6a69_7474_6572_0002;
const DOMAIN_ORACLE: u64 = 0x6f72_6163_6c65_0003;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(GOLDEN_GAMMA, |h, &w| mix64(h.rotate_left(23) ^ mix64(w.wrapping_add(GOLDEN_GAMMA))))
}

pub fn agent_seed(master: u64, agent: AgentId) -> u64 {
    hash_words(&[DOMAIN_AGENT, master, u64::from(agent.0)])
}

pub fn jitter_seed(master: u64, from: AgentId, to: AgentId) -> u64 {
    hash_words(&[DOMAIN_JITTER, master, u64::from(from.0), u64::from(to.0)])
}

pub fn oracle_seed(master: u64, symbol: &str) -> u64 {
    let mut words = vec![DOMAIN_ORACLE, master];
    words.extend(symbol.bytes().map(u64::from));
    hash_words(&words)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Seeds for a whole population, as recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomPlan {
    pub master_seed: u64,
    pub agent_seeds: Vec<(AgentId, u64)>,
}

impl RandomPlan {
    pub fn derive(master_seed: u64, agents: &[AgentId]) -> Self {
        RandomPlan { master_seed, agent_seeds: agents.iter().map(|&a| (a, agent_seed(master_seed, a))).collect() }
    }

    pub fn seed_of(&self, agent: AgentId) -> Option<u64> {
        self.agent_seeds.iter().find(|(a, _)| *a == agent).map(|(_, s)| *s)
    }

    /// Jitter seed for a directed pair; a pure function of the master seed and the pair.
    pub fn jitter_seed(&self, from: AgentId, to: AgentId) -> u64 {
        jitter_seed(self.master_seed, from, to)
    }
}
