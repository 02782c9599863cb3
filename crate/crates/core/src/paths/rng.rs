//! Counter-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit seed packs the master
//! seed, the path (or draw) index, a domain tag, a noise family and a
//! component number. Two streams share state only if all five agree, so a
//! path can be regenerated in isolation on any worker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Which experiment family a draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Path,
    Limit,
    Lemma,
}

impl Domain {
    fn tag(self) -> u16 {
        match self {
            Domain::Path => 1,
            Domain::Limit => 2,
            Domain::Lemma => 3,
        }
    }
}

/// Kind of noise inside one path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Components of the driving Brownian motion `W`.
    Driver,
    /// The auxiliary `B^{pij}` of the limit construction.
    AuxB,
    /// The auxiliary `W̄^p`.
    AuxWbar,
    /// Surrogate area terms for iterated integrals of distinct motions.
    Levy,
    /// Extra independent motions used by the lemma oracles.
    Extra,
}

impl Family {
    fn tag(self) -> u16 {
        match self {
            Family::Driver => 0,
            Family::AuxB => 1,
            Family::AuxWbar => 2,
            Family::Levy => 3,
            Family::Extra => 4,
        }
    }
}

/// Identity of one path: `(master_seed, path_index)` within a domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub master_seed: u64,
    pub path_index: u64,
    pub domain: Domain,
}

const SALT: [u8; 8] = *b"milstein";

impl SeedKey {
    pub fn new(master_seed: u64, path_index: u64, domain: Domain) -> Self {
        Self {
            master_seed,
            path_index,
            domain,
        }
    }

    pub fn path(master_seed: u64, path_index: u64) -> Self {
        Self::new(master_seed, path_index, Domain::Path)
    }

    pub fn limit(master_seed: u64, draw_index: u64) -> Self {
        Self::new(master_seed, draw_index, Domain::Limit)
    }

    pub fn lemma(master_seed: u64, path_index: u64) -> Self {
        Self::new(master_seed, path_index, Domain::Lemma)
    }

    pub fn seed_bytes(&self, family: Family, component: u32) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.path_index.to_le_bytes());
        seed[16..18].copy_from_slice(&self.domain.tag().to_le_bytes());
        seed[18..20].copy_from_slice(&family.tag().to_le_bytes());
        seed[20..24].copy_from_slice(&component.to_le_bytes());
        seed[24..32].copy_from_slice(&SALT);
        seed
    }

    pub fn stream(&self, family: Family, component: u32) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes(family, component))
    }
}

/// Fills `out` with independent `N(0, scale²)` draws.
///
/// Normals are drawn in `f64` and rounded to `T`, so `f32` and `f64` runs
/// consume identical streams.
pub fn fill_normal<T: Scalar>(rng: &mut ChaCha8Rng, scale: f64, out: &mut [T]) {
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = T::lit(z * scale);
    }
}
