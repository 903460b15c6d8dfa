//! Fixtures shared by the criterion benches.

use proxtrust::sim::DeviceNode;
use proxtrust::{DeviceId, ProfileKey, TrustModelParams, TrustStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` devices scattered over a `side` x `side` square, a fifth of them online.
pub fn scatter(n: usize, side: f64, range: f64, seed: u64) -> Vec<DeviceNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut node = DeviceNode::new(i as u64 + 1, rng.gen_range(0.0..side), rng.gen_range(0.0..side), range);
            node.has_internet = i % 5 == 0;
            node
        })
        .collect()
}

/// A store where every device has scored `fanout` random peers.
pub fn dense_store(devices: u64, fanout: usize, seed: u64) -> TrustStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = TrustStore::new(TrustModelParams::default());
    for a in 1..=devices {
        for _ in 0..fanout {
            let b = rng.gen_range(1..=devices);
            if a != b {
                store.set(DeviceId(a), DeviceId(b), ProfileKey::default(), rng.gen(), 0);
            }
        }
    }
    store
}
