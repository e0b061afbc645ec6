//! Seed derivation. Every random consumer owns a `ChaCha8Rng` derived from the
//! master seed and a fixed entity id; nothing draws from a global generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Entity ids used to derive independent streams from one master seed.
pub mod entity {
    pub const SPA: u64 = 0x5350_4100;
    pub const PROSUMER_AGENT_BASE: u64 = 0x5041_0000;
    pub const PROSUMER_LOAD_BASE: u64 = 0x4c4f_0000;
    pub const PROSUMER_PV_BASE: u64 = 0x5056_0000;
    pub const CONSUMER_LOAD_BASE: u64 = 0x434f_0000;
    pub const FLEET: u64 = 0x464c_4545;
}

/// Generator for one entity: seed = master ⊕ entity id.
pub fn entity_rng(master_seed: u64, entity_id: u64) -> SimRng {
    SimRng::seed_from_u64(master_seed ^ entity_id)
}

/// Generator for one entity on one episode; episodes select disjoint ChaCha streams.
pub fn episode_rng(master_seed: u64, entity_id: u64, episode: u64) -> SimRng {
    let mut rng = entity_rng(master_seed, entity_id);
    rng.set_stream(episode);
    rng
}
