//! Character n-grams and their bucket hashing.

use super::EmbedError;

/// All character n-grams with lengths in `[min_n, max_n]` of `<word>`,
/// ordered by start position, then length.
pub fn extract_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let len = wrapped.len();
    let mut out = Vec::new();
    if min_n == 0 || min_n > max_n {
        return out;
    }
    for start in 0..len {
        for n in min_n..=max_n {
            if start + n > len {
                break;
            }
            out.push(wrapped[start..start + n].iter().collect());
        }
    }
    out
}

/// 32-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a_32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub fn hash_ngram(ngram: &str, bucket_count: usize) -> Result<usize, EmbedError> {
    if ngram.is_empty() {
        return Err(EmbedError::Usage("cannot hash an empty n-gram".into()));
    }
    if bucket_count == 0 {
        return Err(EmbedError::Usage("bucket_count must be at least 1".into()));
    }
    Ok(fnv1a_32(ngram.as_bytes()) as usize % bucket_count)
}

/// Bucket ids of a word's n-grams, in n-gram order.
pub(crate) fn bucket_ids(word: &str, min_n: usize, max_n: usize, bucket_count: usize) -> Vec<u32> {
    extract_ngrams(word, min_n, max_n)
        .iter()
        .map(|g| (fnv1a_32(g.as_bytes()) as usize % bucket_count) as u32)
        .collect()
}
