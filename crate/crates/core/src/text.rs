//! Value normalization shared by the state engine and the scorers.
//!
//! Two values are the same value when they agree after trimming, collapsing
//! internal whitespace runs to a single space, and lowercasing. The original
//! text is always kept for display; normalization only decides identity.

/// Trim and collapse whitespace, preserving case.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical identity form of a value.
pub fn normalize(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// `true` when `a` and `b` denote the same value.
pub fn same_value(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    normalize(a) == normalize(b)
}

/// If `extended` is `base` followed by one or more extra words, returns the
/// extra words (with the original casing of `extended`).
///
/// Matching is word-wise and case-insensitive, so `"7"` / `"7  am"` yields
/// `Some("am")` while `"7"` / `"70 am"` yields `None`.
pub fn word_suffix(base: &str, extended: &str) -> Option<String> {
    let base_words: Vec<&str> = base.split_whitespace().collect();
    let ext_words: Vec<&str> = extended.split_whitespace().collect();
    if base_words.is_empty() || ext_words.len() <= base_words.len() {
        return None;
    }
    let prefix_matches = base_words
        .iter()
        .zip(&ext_words)
        .all(|(a, b)| a.to_lowercase() == b.to_lowercase());
    prefix_matches.then(|| ext_words[base_words.len()..].join(" "))
}

/// Stable 64-bit FNV-1a hash, used to derive per-item seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mix a user seed with an item key into a fresh seed.
pub(crate) fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(key.as_bytes());
    fnv1a(&buf)
}
