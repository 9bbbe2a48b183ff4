//! Word/document-id key encoding for text-derived workloads.
//!
//! Layout, high to low: one zero bit, 5 bits for each of the first five
//! letters (a-z as 0-25, anything else as 0), a 15-bit hash of the whole
//! word, and the 23-bit document id. Ordering of encoded keys respects
//! dictionary order on the five-letter prefix, and same-word keys order by
//! document id.

use crate::{Error, Key, Result};

const DOC_BITS: u32 = 23;
const HASH_BITS: u32 = 15;

/// FNV-1a over the lowercased word, truncated to 15 bits.
fn word_hash15(word: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in word.bytes() {
        h ^= b.to_ascii_lowercase() as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h & ((1 << HASH_BITS) - 1)
}

fn letter_code(b: u8) -> u64 {
    if b.is_ascii_alphabetic() {
        (b.to_ascii_lowercase() - b'a') as u64
    } else {
        0
    }
}

/// Encodes `(word, doc_id)` into one key. Fails when the document id does
/// not fit in 23 bits.
pub fn encode_wiki_key(word: &str, doc_id: u64) -> Result<Key> {
    if doc_id >= (1 << DOC_BITS) {
        return Err(Error::DocIdOverflow(doc_id));
    }
    let mut letters: u64 = 0;
    let mut bytes = word.bytes();
    for _ in 0..5 {
        let code = bytes.next().map_or(0, letter_code);
        letters = (letters << 5) | code;
    }
    Ok((letters << (HASH_BITS + DOC_BITS)) | (word_hash15(word) << DOC_BITS) | doc_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_order_is_preserved() {
        assert!(encode_wiki_key("a", 0).unwrap() < encode_wiki_key("b", 0).unwrap());
        assert!(encode_wiki_key("apple", 0).unwrap() < encode_wiki_key("apply", 0).unwrap());
        assert!(encode_wiki_key("car", 5).unwrap() < encode_wiki_key("dog", 0).unwrap());
    }

    #[test]
    fn doc_id_orders_same_word() {
        let a = encode_wiki_key("ordered", 3).unwrap();
        let b = encode_wiki_key("ordered", 7).unwrap();
        assert!(a < b);
        assert_eq!(b - a, 4);
    }

    #[test]
    fn layout_of_known_word() {
        // letters o,r,d,e,r pack into the 25 bits under the zero top bit
        let key = encode_wiki_key("ordered", 1_000_000).unwrap();
        assert_eq!(key >> 63, 0);
        let letters = key >> 38;
        let expect = b"order"
            .iter()
            .fold(0u64, |acc, b| (acc << 5) | ((b - b'a') as u64));
        assert_eq!(letters, expect);
        assert_eq!(key & ((1 << 23) - 1), 1_000_000);
        assert_eq!((key >> 23) & 0x7fff, super::word_hash15("ordered"));
    }

    #[test]
    fn doc_id_overflow_is_rejected() {
        assert!(matches!(
            encode_wiki_key("x", 1 << 23),
            Err(Error::DocIdOverflow(_))
        ));
        assert!(encode_wiki_key("x", (1 << 23) - 1).is_ok());
    }

    #[test]
    fn collisions_need_shared_prefix_and_hash() {
        // on a word sample, equal encodings imply equal 5-letter prefix
        // codes and equal 15-bit hashes
        let words = [
            "the", "of", "and", "ordered", "order", "orders", "index", "indexes", "tree", "trees",
            "skip", "list", "batch", "parallel", "memory", "module", "shadow", "search", "insert",
            "delete", "scan", "range", "query", "queries", "balance",
        ];
        for (i, a) in words.iter().enumerate() {
            for b in &words[i + 1..] {
                let ka = encode_wiki_key(a, 1).unwrap();
                let kb = encode_wiki_key(b, 1).unwrap();
                if ka == kb {
                    assert_eq!(ka >> 38, kb >> 38);
                    assert_eq!(word_hash15(a), word_hash15(b));
                }
            }
        }
        // and distinct prefixes always separate
        assert_ne!(
            encode_wiki_key("alpha", 1).unwrap(),
            encode_wiki_key("beta", 1).unwrap()
        );
    }
}
