//! Per-word bitset over the words of one cache block.

use std::fmt;
use std::str::FromStr;

/// Set of word offsets within a block. Blocks hold at most 64 words.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WordMask(pub u64);

impl WordMask {
    pub const EMPTY: WordMask = WordMask(0);

    pub fn single(word: u32) -> Self {
        debug_assert!(word < 64);
        WordMask(1u64 << word)
    }

    /// Mask with the low `words` bits set.
    pub fn full(words: u32) -> Self {
        if words >= 64 {
            WordMask(u64::MAX)
        } else {
            WordMask((1u64 << words) - 1)
        }
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn contains(self, word: u32) -> bool {
        word < 64 && self.0 & (1u64 << word) != 0
    }

    pub fn insert(&mut self, word: u32) {
        self.0 |= 1u64 << word;
    }

    pub fn remove(&mut self, word: u32) {
        self.0 &= !(1u64 << word);
    }

    pub fn union(self, other: WordMask) -> WordMask {
        WordMask(self.0 | other.0)
    }

    pub fn intersect(self, other: WordMask) -> WordMask {
        WordMask(self.0 & other.0)
    }

    pub fn minus(self, other: WordMask) -> WordMask {
        WordMask(self.0 & !other.0)
    }

    pub fn overlaps(self, other: WordMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset_of(self, other: WordMask) -> bool {
        self.0 & !other.0 == 0
    }

    /// Lowest set word, if any.
    pub fn first(self) -> Option<u32> {
        (self.0 != 0).then(|| self.0.trailing_zeros())
    }

    /// Highest set word, if any.
    pub fn last(self) -> Option<u32> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros())
    }

    /// Set words in ascending order.
    pub fn iter(self) -> impl Iterator<Item = u32> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let w = rest.trailing_zeros();
                rest &= rest - 1;
                Some(w)
            }
        })
    }

    /// Position of `word` among the set words (its rank), if set.
    pub fn rank(self, word: u32) -> Option<usize> {
        self.contains(word)
            .then(|| (self.0 & ((1u64 << word) - 1)).count_ones() as usize)
    }
}

impl FromIterator<u32> for WordMask {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut m = WordMask::EMPTY;
        for w in iter {
            m.insert(w);
        }
        m
    }
}

impl fmt::Debug for WordMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WordMask({:#x})", self.0)
    }
}

impl fmt::Display for WordMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

impl FromStr for WordMask {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
        u64::from_str_radix(digits, 16).map(WordMask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iter_and_rank() {
        let m: WordMask = [1u32, 4, 9].into_iter().collect();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![1, 4, 9]);
        assert_eq!(m.rank(4), Some(1));
        assert_eq!(m.rank(5), None);
        assert_eq!(m.first(), Some(1));
        assert_eq!(m.last(), Some(9));
    }

    #[test]
    fn full_and_parse() {
        assert_eq!(WordMask::full(16).bits(), 0xffff);
        assert_eq!(WordMask::full(64).bits(), u64::MAX);
        assert_eq!("0x00f0".parse::<WordMask>().unwrap(), WordMask(0xf0));
        assert_eq!(WordMask(0x3).to_string(), "0x0003");
    }
}
