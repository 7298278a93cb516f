//! Stable seed derivation.
//!
//! Child seeds are the first eight bytes of a SHA-256 digest over the parent
//! seed and a list of labelled parts, so they are stable across platforms
//! and releases, and adding new children never perturbs existing ones.

use sha2::{Digest, Sha256};

/// One component of a derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(s: &'a str) -> Self {
        Part::Str(s)
    }
}

impl From<u64> for Part<'_> {
    fn from(v: u64) -> Self {
        Part::Int(v)
    }
}

impl From<usize> for Part<'_> {
    fn from(v: usize) -> Self {
        Part::Int(v as u64)
    }
}

pub fn derive(seed: u64, parts: &[Part<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"ergostat-seed-v1");
    h.update(seed.to_le_bytes());
    for part in parts {
        match part {
            Part::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Part::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed of one experiment trial.
pub fn trial_seed(master: u64, test: &str, n: usize, trial: usize) -> u64 {
    derive(master, &[test.into(), n.into(), trial.into()])
}
