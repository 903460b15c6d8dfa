use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SecurityKey;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn partition_seed(key: &SecurityKey, partition: usize) -> u64 {
    let s = splitmix64(key.seed);
    let s = splitmix64(s ^ key.key_id.0);
    splitmix64(s ^ partition as u64)
}

/// XOR `bytes` with the keystream of one partition. Applying it twice
/// restores the input.
pub fn apply_keystream(key: &SecurityKey, partition: usize, bytes: &mut [u8]) {
    let mut rng = ChaCha8Rng::seed_from_u64(partition_seed(key, partition));
    let mut stream = vec![0u8; bytes.len()];
    rng.fill_bytes(&mut stream);
    for (b, k) in bytes.iter_mut().zip(stream) {
        *b ^= k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn involution() {
        let key = SecurityKey::new(1, 2);
        let mut buf = b"slow reveal".to_vec();
        apply_keystream(&key, 0, &mut buf);
        assert_ne!(buf, b"slow reveal");
        apply_keystream(&key, 0, &mut buf);
        assert_eq!(buf, b"slow reveal");
    }

    #[test]
    fn streams_differ_per_partition_and_key() {
        let key = SecurityKey::new(1, 2);
        let mut a = vec![0u8; 16];
        let mut b = vec![0u8; 16];
        let mut c = vec![0u8; 16];
        apply_keystream(&key, 0, &mut a);
        apply_keystream(&key, 1, &mut b);
        apply_keystream(&SecurityKey::new(2, 2), 0, &mut c);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
