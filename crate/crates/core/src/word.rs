//! 256-bit machine word helpers.

pub use ruint::aliases::U256 as Word;

pub const WEI: u64 = 1;
pub const FINNEY: u128 = 1_000_000_000_000_000;
pub const ETHER: u128 = 1_000_000_000_000_000_000;

pub fn to_be(w: &Word) -> [u8; 32] {
    w.to_be_bytes::<32>()
}

/// Big-endian decode of up to 32 bytes; shorter slices are right-aligned.
pub fn from_be(bytes: &[u8]) -> Word {
    let mut buf = [0u8; 32];
    let n = bytes.len().min(32);
    buf[32 - n..].copy_from_slice(&bytes[bytes.len() - n..]);
    Word::from_be_bytes(buf)
}

/// Absolute difference.
pub fn abs_diff(a: Word, b: Word) -> Word {
    if a >= b {
        a - b
    } else {
        b - a
    }
}

pub fn from_bool(b: bool) -> Word {
    if b {
        Word::from(1u8)
    } else {
        Word::ZERO
    }
}

/// Minimal number of big-endian bytes needed to represent `w` (at least 1).
pub fn byte_len(w: &Word) -> usize {
    let bits = w.bit_len();
    bits.div_ceil(8).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_slices_are_right_aligned() {
        assert_eq!(from_be(&[0x01, 0x00]), Word::from(256u32));
        assert_eq!(byte_len(&Word::ZERO), 1);
        assert_eq!(byte_len(&Word::from(256u32)), 2);
        assert_eq!(byte_len(&Word::MAX), 32);
    }
}
