//! Binary envelope layout. All integers little-endian, reals as IEEE-754 f64.
//!
//! ```text
//! magic         4  b"SRV1"
//! body_len      u32  bytes that follow this field
//! sender        u64
//! receiver      u64
//! key_id        u64
//! sent_at       u64
//! tx_threshold  f64
//! rx_threshold  f64
//! mode          u8   0 = deterministic, 1 = probabilistic
//! temperature   f64  0.0 when deterministic
//! profile_len   u16, profile bytes (UTF-8)
//! count         u32
//! count x { threshold f64, len u32, ciphertext bytes }
//! ```

use thiserror::Error;

use super::{KeyId, RevealMode, SlowRevealEnvelope};
use crate::trust::{DeviceId, ProfileKey};

pub const MAGIC: &[u8; 4] = b"SRV1";

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated envelope: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("declared body length {declared} but {actual} bytes follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown reveal mode tag {0}")]
    UnknownMode(u8),
    #[error("profile is not valid UTF-8 or is empty")]
    BadProfile,
    #[error("envelope violates its invariants: {0}")]
    Invalid(String),
}

pub(super) fn encode(env: &SlowRevealEnvelope) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&env.sender.0.to_le_bytes());
    body.extend_from_slice(&env.receiver.0.to_le_bytes());
    body.extend_from_slice(&env.key_id.0.to_le_bytes());
    body.extend_from_slice(&env.sent_at.to_le_bytes());
    body.extend_from_slice(&env.tx_threshold.to_le_bytes());
    body.extend_from_slice(&env.rx_threshold.to_le_bytes());
    let (tag, temperature) = match env.reveal_mode {
        RevealMode::Deterministic => (0u8, 0.0f64),
        RevealMode::Probabilistic { temperature } => (1u8, temperature),
    };
    body.push(tag);
    body.extend_from_slice(&temperature.to_le_bytes());
    let profile = env.profile.as_str().as_bytes();
    body.extend_from_slice(&(profile.len() as u16).to_le_bytes());
    body.extend_from_slice(profile);
    body.extend_from_slice(&(env.partitions.len() as u32).to_le_bytes());
    for (part, theta) in env.partitions.iter().zip(&env.partition_thresholds) {
        body.extend_from_slice(&theta.to_le_bytes());
        body.extend_from_slice(&(part.len() as u32).to_le_bytes());
        body.extend_from_slice(part);
    }
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<SlowRevealEnvelope, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let declared = r.u32()? as usize;
    let actual = bytes.len() - r.pos;
    if declared != actual {
        return Err(WireError::LengthMismatch { declared, actual });
    }
    let sender = DeviceId(r.u64()?);
    let receiver = DeviceId(r.u64()?);
    let key_id = KeyId(r.u64()?);
    let sent_at = r.u64()?;
    let tx_threshold = r.f64()?;
    let rx_threshold = r.f64()?;
    let tag = r.take(1)?[0];
    let temperature = r.f64()?;
    let reveal_mode = match tag {
        0 => RevealMode::Deterministic,
        1 => RevealMode::Probabilistic { temperature },
        other => return Err(WireError::UnknownMode(other)),
    };
    let plen = r.u16()? as usize;
    let profile = std::str::from_utf8(r.take(plen)?)
        .ok()
        .and_then(|s| ProfileKey::new(s).ok())
        .ok_or(WireError::BadProfile)?;
    let count = r.u32()? as usize;
    let mut partitions = Vec::with_capacity(count.min(1024));
    let mut partition_thresholds = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        partition_thresholds.push(r.f64()?);
        let len = r.u32()? as usize;
        partitions.push(r.take(len)?.to_vec());
    }
    if r.pos != bytes.len() {
        return Err(WireError::LengthMismatch {
            declared,
            actual: r.pos - 8,
        });
    }
    let env = SlowRevealEnvelope {
        sender,
        receiver,
        profile,
        partitions,
        partition_thresholds,
        tx_threshold,
        rx_threshold,
        key_id,
        sent_at,
        reveal_mode,
    };
    env.validate()
        .map_err(|e| WireError::Invalid(e.to_string()))?;
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::super::{encode as seal, EnvelopeHeader, RevealPlan, SecurityKey};
    use super::*;
    use proptest::prelude::*;

    fn sample(mode: RevealMode) -> SlowRevealEnvelope {
        let plan = RevealPlan::deterministic(3, 0.25, 0.3, 0.9).with_mode(mode);
        seal(
            b"meet at the usual place",
            &plan,
            &SecurityKey::new(11, 5),
            EnvelopeHeader::new(DeviceId(4), DeviceId(9), 77).with_profile(ProfileKey::health_data()),
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample(RevealMode::Deterministic).to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, bytes.len() - 8);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 9);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 11);
        assert_eq!(u64::from_le_bytes(bytes[32..40].try_into().unwrap()), 77);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(bytes[48..56].try_into().unwrap()), 0.3);
        assert_eq!(bytes[56], 0);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(RevealMode::Deterministic).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(WireError::BadMagic));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(WireError::LengthMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[56] = 7;
        assert_eq!(decode(&bad), Err(WireError::UnknownMode(7)));
        assert!(matches!(decode(&bytes[..6]), Err(WireError::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            text in proptest::collection::vec(any::<u8>(), 1..200),
            k in 1usize..8,
            rx in 0.0f64..1.0,
            span in 0.0f64..1.0,
            temp in prop::option::of(0.001f64..2.0),
        ) {
            let theta = rx + (1.0 - rx) * span;
            let mode = temp.map_or(RevealMode::Deterministic, |t| RevealMode::Probabilistic { temperature: t });
            let plan = RevealPlan::deterministic(k, 0.1, rx, theta).with_mode(mode);
            let env = seal(&text, &plan, &SecurityKey::new(3, 4), EnvelopeHeader::new(DeviceId(1), DeviceId(2), 9)).unwrap();
            let bytes = env.to_bytes();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &env);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
