//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha8 stream, selected by hashing
//! a path of integers (e.g. `[grid_point, replicate]`) into the 64-bit
//! stream id of a generator keyed by the master seed. Results therefore do
//! not depend on how replicates are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5EED_u64, |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> SeedStream {
        SeedStream { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent sub-tree of streams, e.g. one per parameter set.
    pub fn child(&self, tag: u64) -> SeedStream {
        SeedStream {
            master: splitmix64(self.master ^ splitmix64(tag.wrapping_add(1))),
        }
    }

    pub fn rng(&self, path: &[u64]) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(fold(path));
        rng
    }
}

/// Runs `f(i, rng_i)` for `i in 0..n` on the rayon pool and returns the
/// results in index order.
pub fn par_replicates<T, F>(n: usize, seeds: SeedStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.rng(&[i as u64]);
            f(i, &mut rng)
        })
        .collect()
}
