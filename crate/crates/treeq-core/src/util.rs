//! Small shared helpers: stable hashing, tokenization, seed derivation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, 64-bit. Written out by hand so hashes are identical across
/// platforms and std versions; feature ids, seed mixing, and dedup
/// fingerprints all depend on this staying fixed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn fnv1a64_str(s: &str) -> u64 {
    fnv1a64(s.as_bytes())
}

/// FNV-1a over parts joined by the 0x1f separator, computed without
/// building the joined string. Bit-identical to
/// `fnv1a64_str(&parts.join("\x1f"))`; the feature extractor sits on a hot
/// path and must not allocate per lookup.
pub fn fnv1a64_parts(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        for &b in part.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Cheap deterministic hasher for maps keyed by u64 weight keys, which are
/// already well-mixed ids. Splitmix-style finalizer; not for adversarial
/// or string input.
#[derive(Default)]
pub struct U64KeyHasher(u64);

impl std::hash::Hasher for U64KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        }
    }
    fn write_u64(&mut self, n: u64) {
        let mut x = n.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        self.0 = x ^ (x >> 31);
    }
}

/// HashMap keyed by u64 with the cheap mixer above.
pub type U64Map<V> =
    std::collections::HashMap<u64, V, std::hash::BuildHasherDefault<U64KeyHasher>>;

/// Mixes a base seed with a label into a fresh stream seed. Used wherever
/// one configured seed has to fan out into independent per-task or
/// per-iteration streams.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    fnv1a64_str(label) ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn rng_from(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label))
}

/// Lowercase alphanumeric tokens. A trailing " *" selection marker on
/// element labels is dropped so selected and unselected options tokenize
/// identically.
pub fn tokenize(s: &str) -> Vec<String> {
    let s = s.strip_suffix(" *").unwrap_or(s);
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
