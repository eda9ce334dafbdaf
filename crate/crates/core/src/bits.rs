//! Fixed-length bit vector packed into little-endian `u64` words.

/// Bit `i` lives in word `i / 64` at position `i % 64`. Pad bits past `len`
/// are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBits {
    len: usize,
    words: Vec<u64>,
}

pub fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl PackedBits {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            out.set(i, true);
        }
        out
    }

    /// Wraps raw words, rejecting a wrong word count or set pad bits.
    pub fn from_words(len: usize, words: Vec<u64>) -> Option<Self> {
        if words.len() != words_for(len) {
            return None;
        }
        let bits = Self { len, words };
        if bits.pad_mask() & bits.words.last().copied().unwrap_or(0) != 0 {
            return None;
        }
        Some(bits)
    }

    fn pad_mask(&self) -> u64 {
        match self.len % 64 {
            0 => 0,
            r => !0u64 << r,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Bytes needed to serialize `len` bits.
    pub fn byte_len(len: usize) -> usize {
        len.div_ceil(8)
    }

    /// Little-endian byte image of the words, cut to `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(Self::byte_len(self.len));
        out
    }

    /// Inverse of [`PackedBits::to_bytes`]; rejects a wrong byte count or set
    /// pad bits.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::byte_len(len) {
            return None;
        }
        let words = bytes
            .chunks(8)
            .map(|chunk| {
                let mut w = [0u8; 8];
                w[..chunk.len()].copy_from_slice(chunk);
                u64::from_le_bytes(w)
            })
            .collect();
        Self::from_words(len, words)
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    /// `popcount(self XOR other)`; lengths must match.
    #[inline]
    pub fn xor_count(&self, other: &Self) -> u32 {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// `Σ weights[i]` over the bits where the two vectors differ, added in
    /// ascending bit order.
    pub fn xor_weighted(&self, other: &Self, weights: &[f64]) -> f64 {
        debug_assert_eq!(self.len, other.len);
        let mut total = 0.0;
        for (wi, (a, b)) in self.words.iter().zip(&other.words).enumerate() {
            let mut diff = a ^ b;
            while diff != 0 {
                total += weights[wi * 64 + diff.trailing_zeros() as usize];
                diff &= diff - 1;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_and_padding() {
        let mut b = PackedBits::zeros(70);
        b.set(0, true);
        b.set(65, true);
        assert_eq!(b.words(), &[1, 2]);
        assert!(PackedBits::from_words(70, vec![0, 1 << 6]).is_none());
        assert!(PackedBits::from_words(70, vec![0]).is_none());
        assert!(PackedBits::from_words(64, vec![u64::MAX]).is_some());
        assert_eq!(b.ones().collect::<Vec<_>>(), vec![0, 65]);
        assert_eq!(b.to_bytes(), vec![1, 0, 0, 0, 0, 0, 0, 0, 2]);
        assert!(PackedBits::from_bytes(70, &[0, 0, 0, 0, 0, 0, 0, 0, 0x40]).is_none());
    }

    proptest! {
        #[test]
        fn packing_fidelity(bits in prop::collection::vec(any::<bool>(), 1..=130)) {
            let packed = PackedBits::from_bools(&bits);
            prop_assert_eq!(packed.to_bools(), bits.clone());
            prop_assert_eq!(packed.count_ones() as usize, bits.iter().filter(|&&b| b).count());
            let back = PackedBits::from_words(bits.len(), packed.words().to_vec());
            prop_assert_eq!(back.as_ref(), Some(&packed));
            let bytes = packed.to_bytes();
            prop_assert_eq!(bytes.len(), bits.len().div_ceil(8));
            prop_assert_eq!(PackedBits::from_bytes(bits.len(), &bytes), Some(packed));
        }
    }
}
