//! Edit distance, character error rate and gestalt (Ratcliff-Obershelp)
//! sequence similarity.

use std::collections::HashMap;
use std::hash::Hash;

use super::EvalError;

/// Levenshtein distance over Unicode scalar values.
///
/// Uses a single rolling row sized to the shorter input.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_seq(&a, &b)
}

/// Levenshtein distance over arbitrary sequences.
pub fn levenshtein_seq<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }

    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// Character error rate: `levenshtein(hypothesis, reference) / |reference|`.
///
/// Unbounded above; a hypothesis much longer than its reference scores > 1.
pub fn cer(hypothesis: &str, reference: &str) -> Result<f64, EvalError> {
    let ref_len = reference.chars().count();
    if ref_len == 0 {
        return Err(EvalError::EmptyReference);
    }
    Ok(levenshtein(hypothesis, reference) as f64 / ref_len as f64)
}

/// A maximal run of equal elements: `a[a_start..a_start+len] == b[b_start..b_start+len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchBlock {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

/// Longest common contiguous block of `a[alo..ahi]` and `b[blo..bhi]`.
///
/// Ties resolve to the block starting earliest in `a`, then earliest in `b`.
fn longest_block<T: Eq + Hash>(
    a: &[T],
    index: &HashMap<&T, Vec<usize>>,
    (alo, ahi): (usize, usize),
    (blo, bhi): (usize, usize),
) -> MatchBlock {
    let mut best = MatchBlock { a_start: alo, b_start: blo, len: 0 };
    // run length of a match ending at b position j, for the previous a row
    let mut prev: HashMap<usize, usize> = HashMap::new();
    for (i, item) in a.iter().enumerate().take(ahi).skip(alo) {
        let mut cur: HashMap<usize, usize> = HashMap::new();
        if let Some(positions) = index.get(item) {
            for &j in positions {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                let k = j.checked_sub(1).and_then(|p| prev.get(&p)).copied().unwrap_or(0) + 1;
                cur.insert(j, k);
                if k > best.len {
                    best = MatchBlock { a_start: i + 1 - k, b_start: j + 1 - k, len: k };
                }
            }
        }
        prev = cur;
    }
    best
}

/// Matching blocks found by recursively splitting around the longest common
/// block, in increasing order of position.
pub fn matching_blocks<T: Eq + Hash>(a: &[T], b: &[T]) -> Vec<MatchBlock> {
    let mut index: HashMap<&T, Vec<usize>> = HashMap::new();
    for (j, item) in b.iter().enumerate() {
        index.entry(item).or_default().push(j);
    }

    let mut blocks = Vec::new();
    let mut pending = vec![((0, a.len()), (0, b.len()))];
    while let Some(((alo, ahi), (blo, bhi))) = pending.pop() {
        let block = longest_block(a, &index, (alo, ahi), (blo, bhi));
        if block.len == 0 {
            continue;
        }
        if alo < block.a_start && blo < block.b_start {
            pending.push(((alo, block.a_start), (blo, block.b_start)));
        }
        let (a_end, b_end) = (block.a_start + block.len, block.b_start + block.len);
        if a_end < ahi && b_end < bhi {
            pending.push(((a_end, ahi), (b_end, bhi)));
        }
        blocks.push(block);
    }
    blocks.sort_by_key(|b| (b.a_start, b.b_start));
    blocks
}

/// Gestalt similarity `2·M / (|a| + |b|)`, where `M` is the total length of
/// the recursively found matching blocks. Two empty sequences score 1.0.
pub fn ro_ratio<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let matched: usize = matching_blocks(a, b).iter().map(|b| b.len).sum();
    2.0 * matched as f64 / total as f64
}

/// [`ro_ratio`] over the characters of two strings.
pub fn ro_ratio_str(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    ro_ratio(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("körts", "körts"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("kôrts", "körts"), 1);
    }

    #[test]
    fn cer_values() {
        let v = cer("lahbutaminne", "lahhutaminne").unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(cer("ababab", "ab").unwrap(), 2.0);
        assert_eq!(cer("same", "same").unwrap(), 0.0);
        assert!(matches!(cer("x", ""), Err(EvalError::EmptyReference)));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ro_ratio_str("abc", "abc"), 1.0);
        assert_eq!(ro_ratio_str("abcd", "bcde"), 0.75);
        assert_eq!(ro_ratio_str("aa", "bb"), 0.0);
        assert_eq!(ro_ratio_str("", ""), 1.0);
        assert_eq!(ro_ratio_str("", "x"), 0.0);
    }

    #[test]
    fn ratio_matches_known_difflib_values() {
        // SequenceMatcher(None, a, b).ratio() with autojunk irrelevant at these lengths
        let r = ro_ratio_str("pennsylvania", "pencilvaneya");
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        let r = ro_ratio_str("alexandre", "aleksander");
        assert!((r - 14.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn block_tie_break_prefers_earliest_in_a() {
        let a: Vec<char> = "abxab".chars().collect();
        let b: Vec<char> = "ab".chars().collect();
        let blocks = matching_blocks(&a, &b);
        assert_eq!(blocks, vec![MatchBlock { a_start: 0, b_start: 0, len: 2 }]);
    }
}
