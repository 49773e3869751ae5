//! Tokenization and stable hashing shared by the encoder and the retrieval
//! feature extractor.

/// Lowercased tokens, split on any non-alphanumeric character.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// FNV-1a 64-bit hash. Fixed constants, so bucket assignments are stable
/// across runs and platforms.
pub fn fnv1a64(token: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in token.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Bucket index for a token under a fixed bucket count.
pub fn hash_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a64(token) % buckets as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_on_punctuation_and_lowercases() {
        assert_eq!(
            tokens("Al Jardine, the rhythm-guitarist!"),
            vec!["al", "jardine", "the", "rhythm", "guitarist"]
        );
    }

    #[test]
    fn empty_and_punctuation_only_texts_have_no_tokens() {
        assert!(tokens("").is_empty());
        assert!(tokens("--- ...").is_empty());
    }

    #[test]
    fn hash_is_stable() {
        // Frozen reference value so accidental algorithm changes show up.
        assert_eq!(fnv1a64("claim"), 0xd0f4_6795_2fae_e3cf);
        assert_ne!(fnv1a64("x"), fnv1a64("z"));
    }
}
