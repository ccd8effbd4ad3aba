//! Bitstrings and the word codec.
//!
//! Bit `i` of a [`BitString`] is stored in byte `i / 8` at bit position `i % 8`,
//! so the packed byte vector of an integer encoding is exactly its little-endian
//! byte representation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

/// A finite sequence of bits.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    /// The empty bitstring.
    pub const fn empty() -> Self {
        BitString { bytes: Vec::new(), len: 0 }
    }

    pub fn zeros(len: usize) -> Self {
        BitString { bytes: alloc::vec![0; len.div_ceil(8)], len }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut b = BitString::empty();
        for bit in bits {
            b.push(bit);
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        BitString { bytes: bytes.to_vec(), len: bytes.len() * 8 }
    }

    pub fn from_ascii(s: &str) -> Self {
        Self::from_bytes(s.as_bytes())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit at position `i`. Panics when out of range.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.bytes[i / 8] >> (i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        if bit {
            self.bytes[i / 8] |= 1 << (i % 8);
        } else {
            self.bytes[i / 8] &= !(1 << (i % 8));
        }
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Packed bytes; the last byte is zero-padded when the length is not a multiple of 8.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn is_byte_aligned(&self) -> bool {
        self.len.is_multiple_of(8)
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &BitString) -> BitString {
        if self.is_byte_aligned() {
            let mut bytes = self.bytes.clone();
            bytes.extend_from_slice(&other.bytes);
            return BitString { bytes, len: self.len + other.len };
        }
        let mut out = self.clone();
        for bit in other.bits() {
            out.push(bit);
        }
        out
    }

    /// Bits `o .. o + l`, or `None` when the range leaves the string.
    pub fn sub(&self, o: usize, l: usize) -> Option<BitString> {
        let end = o.checked_add(l)?;
        if end > self.len {
            return None;
        }
        if o.is_multiple_of(8) {
            let mut bytes = self.bytes[o / 8..(o + l).div_ceil(8)].to_vec();
            if !l.is_multiple_of(8) {
                let last = bytes.len() - 1;
                bytes[last] &= (1u8 << (l % 8)) - 1;
            }
            return Some(BitString { bytes, len: l });
        }
        Some(BitString::from_bits((o..end).map(|i| self.get(i))))
    }

    /// Unsigned value under the little-endian positional encoding; `val(ε) = 0`.
    pub fn val(&self) -> BigUint {
        BigUint::from_bytes_le(&self.bytes)
    }

    /// The value as `u64`, when it fits.
    pub fn val_u64(&self) -> Option<u64> {
        let significant = self.significant_bits();
        if significant > 64 {
            return None;
        }
        let mut v = 0u64;
        for (i, byte) in self.bytes.iter().enumerate().take(8) {
            v |= (*byte as u64) << (8 * i);
        }
        Some(v)
    }

    /// The value as `usize`, when it fits.
    pub fn val_usize(&self) -> Option<usize> {
        self.val_u64().and_then(|v| usize::try_from(v).ok())
    }

    /// Position of the highest set bit plus one.
    pub fn significant_bits(&self) -> usize {
        for (i, byte) in self.bytes.iter().enumerate().rev() {
            if *byte != 0 {
                return i * 8 + (8 - byte.leading_zeros() as usize);
            }
        }
        0
    }

    /// Compares the unsigned values of two bitstrings of arbitrary lengths.
    pub fn cmp_val(&self, other: &BitString) -> core::cmp::Ordering {
        let (a, b) = (self.significant_bits(), other.significant_bits());
        if a != b {
            return a.cmp(&b);
        }
        for i in (0..a.div_ceil(8)).rev() {
            let x = self.bytes.get(i).copied().unwrap_or(0);
            let y = other.bytes.get(i).copied().unwrap_or(0);
            if x != y {
                return x.cmp(&y);
            }
        }
        core::cmp::Ordering::Equal
    }

    /// Little-endian encoding of `n` on exactly `len` bits; `None` if it does not fit.
    pub fn from_val(n: &BigUint, len: usize) -> Option<BitString> {
        if n.bits() as usize > len {
            return None;
        }
        let mut bytes = n.to_bytes_le();
        if n.is_zero() {
            bytes.clear();
        }
        bytes.resize(len.div_ceil(8), 0);
        Some(BitString { bytes, len })
    }

    /// Hex rendering of the packed bytes, lowercase.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.bytes.len() * 2);
        for byte in &self.bytes {
            let _ = fmt::Write::write_fmt(&mut s, format_args!("{byte:02x}"));
        }
        s
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_byte_aligned() {
            write!(f, "x\"{}\"", self.to_hex())
        } else {
            f.write_str("b\"")?;
            for bit in self.bits() {
                f.write_str(if bit { "1" } else { "0" })?;
            }
            f.write_str("\"")
        }
    }
}

/// Machine word parameters: the word width `N` in bits.
///
/// The codec is little-endian in both bit and byte order. Valid addresses are
/// `1 ..= 2^N - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WordParams {
    pub width: u32,
}

impl WordParams {
    pub const fn new(width: u32) -> Self {
        assert!(width > 0);
        WordParams { width }
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    /// `N`-bit encoding of `n`; values of `2^N` or more get their minimal base-2 encoding.
    pub fn bs(&self, n: u64) -> BitString {
        self.bs_big(&BigUint::from(n))
    }

    pub fn bs_big(&self, n: &BigUint) -> BitString {
        let len = core::cmp::max(self.width(), n.bits() as usize);
        BitString::from_val(n, len).expect("length covers the value")
    }

    pub fn bs_usize(&self, n: usize) -> BitString {
        self.bs(n as u64)
    }

    /// Largest valid address, `2^N - 1`, saturating at `u64::MAX`.
    pub fn max_addr(&self) -> u64 {
        if self.width >= 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    /// Whether `n < 2^N`.
    pub fn fits(&self, n: usize) -> bool {
        self.width >= 64 || (n as u64) < (1u64 << self.width)
    }

    pub fn one(&self) -> BitString {
        self.bs(1)
    }

    pub fn zero(&self) -> BitString {
        self.bs(0)
    }
}

impl Default for WordParams {
    fn default() -> Self {
        WordParams::new(32)
    }
}

pub fn val_to_u64(n: &BigUint) -> Option<u64> {
    n.to_u64()
}

/// Error from [`parse_literal`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralError(pub String);

impl fmt::Display for LiteralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad bitstring literal: {}", self.0)
    }
}

/// Parses one bitstring literal: `x"DEADBEEF"`, `"abc"`, `b"0101"`, `i<decimal>`, `iN` or `eps`.
pub fn parse_literal(s: &str, params: &WordParams) -> Result<BitString, LiteralError> {
    let err = || LiteralError(String::from(s));
    if s == "eps" {
        return Ok(BitString::empty());
    }
    if s == "iN" {
        return Ok(params.bs(params.width as u64));
    }
    if let Some(digits) = s.strip_prefix('i') {
        if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let n = BigUint::parse_bytes(digits.as_bytes(), 10).ok_or_else(err)?;
        return Ok(params.bs_big(&n));
    }
    if let Some(body) = s.strip_prefix("x\"").and_then(|r| r.strip_suffix('"')) {
        return parse_hex(body).ok_or_else(err);
    }
    if let Some(body) = s.strip_prefix("b\"").and_then(|r| r.strip_suffix('"')) {
        let mut b = BitString::empty();
        for c in body.chars() {
            match c {
                '0' => b.push(false),
                '1' => b.push(true),
                _ => return Err(err()),
            }
        }
        return Ok(b);
    }
    if let Some(body) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
        return unescape_ascii(body).map(|v| BitString::from_bytes(&v)).ok_or_else(err);
    }
    Err(err())
}

pub fn parse_hex(body: &str) -> Option<BitString> {
    if !body.len().is_multiple_of(2) {
        return None;
    }
    let mut bytes = Vec::with_capacity(body.len() / 2);
    for pair in body.as_bytes().chunks(2) {
        let s = core::str::from_utf8(pair).ok()?;
        bytes.push(u8::from_str_radix(s, 16).ok()?);
    }
    Some(BitString::from_bytes(&bytes))
}

fn unescape_ascii(body: &str) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if !c.is_ascii() {
            return None;
        }
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push(b'\\'),
                '"' => out.push(b'"'),
                _ => return None,
            }
        } else if c == '"' {
            return None;
        } else {
            out.push(c as u8);
        }
    }
    Some(out)
}

fn is_printable_text(b: &BitString) -> bool {
    !b.is_empty()
        && b.is_byte_aligned()
        && b.as_bytes().iter().all(|c| (0x20..0x7f).contains(c))
}

/// Canonical literal text for `b`; [`parse_literal`] inverts it.
pub fn format_literal(b: &BitString, params: &WordParams) -> String {
    if b.is_empty() {
        return String::from("eps");
    }
    if is_printable_text(b) {
        let mut s = String::from("\"");
        for &c in b.as_bytes() {
            if c == b'"' || c == b'\\' {
                s.push('\\');
            }
            s.push(c as char);
        }
        s.push('"');
        return s;
    }
    if b.len() == params.width() {
        return alloc::format!("i{}", b.val());
    }
    alloc::format!("{b:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: explicit base-2 expansion, bit i carries weight 2^i.
    fn oracle_bits(n: u64, len: usize) -> Vec<bool> {
        (0..len).map(|i| i < 64 && (n >> i) & 1 == 1).collect()
    }

    fn oracle_val(bits: &[bool]) -> u64 {
        bits.iter().enumerate().map(|(i, &b)| (b as u64) << i).sum()
    }

    #[test]
    fn bs_zero_is_all_zero_bits() {
        let p = WordParams::new(8);
        let b = p.bs(0);
        assert_eq!(b.len(), 8);
        assert!(b.bits().all(|x| !x));
    }

    #[test]
    fn bs_matches_oracle_and_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for width in [8u32, 16, 32] {
            let p = WordParams::new(width);
            for _ in 0..1000 {
                let n = rng.random_range(0..(1u64 << width));
                let b = p.bs(n);
                assert_eq!(b.len(), width as usize);
                assert_eq!(b.bits().collect::<Vec<_>>(), oracle_bits(n, width as usize));
                assert_eq!(b.val_u64(), Some(n));
            }
        }
    }

    #[test]
    fn val_exhaustive_16_bits() {
        for n in 0u64..(1 << 16) {
            let bits = oracle_bits(n, 16);
            let b = BitString::from_bits(bits.iter().copied());
            assert_eq!(b.val_u64(), Some(oracle_val(&bits)));
            assert_eq!(b.val(), BigUint::from(n));
        }
    }

    #[test]
    fn val_of_empty_is_zero() {
        assert!(BitString::empty().val().is_zero());
        assert_eq!(BitString::empty().val_u64(), Some(0));
    }

    #[test]
    fn oversized_bs_is_minimal() {
        let p = WordParams::new(4);
        let b = p.bs(16);
        assert_eq!(b.len(), 5);
        assert_eq!(b.val_u64(), Some(16));
        assert_eq!(p.bs(15).len(), 4);
    }

    #[test]
    fn sub_examples() {
        let ab = BitString::from_ascii("ab");
        assert_eq!(ab.sub(8, 8), Some(BitString::from_ascii("b")));
        assert_eq!(ab.sub(0, 16), Some(ab.clone()));
        assert_eq!(ab.sub(9, 8), None);
        assert_eq!(ab.sub(16, 0), Some(BitString::empty()));
        // Direct bit indexing for an unaligned window.
        let w = ab.sub(3, 7).unwrap();
        for i in 0..7 {
            assert_eq!(w.get(i), ab.get(3 + i));
        }
    }

    #[test]
    fn concat_identities() {
        let b = BitString::from_bits([true, false, true]);
        assert_eq!(b.concat(&BitString::empty()), b);
        assert_eq!(BitString::empty().concat(&b), b);
        let c = BitString::from_ascii("xy");
        let bc = b.concat(&c);
        assert_eq!(bc.len(), 19);
        assert_eq!(bc.sub(3, 16), Some(c));
    }

    #[test]
    fn cmp_val_ignores_leading_zeros() {
        let p = WordParams::new(8);
        let a = p.bs(5);
        let b = WordParams::new(16).bs(5);
        assert_eq!(a.cmp_val(&b), core::cmp::Ordering::Equal);
        assert_eq!(p.bs(6).cmp_val(&b), core::cmp::Ordering::Greater);
        assert_eq!(BitString::empty().cmp_val(&p.bs(0)), core::cmp::Ordering::Equal);
    }

    #[test]
    fn literals() {
        let p = WordParams::new(32);
        assert_eq!(parse_literal("i20", &p).unwrap(), p.bs(20));
        assert_eq!(parse_literal("iN", &p).unwrap(), p.bs(32));
        assert_eq!(parse_literal("eps", &p).unwrap(), BitString::empty());
        assert_eq!(parse_literal("\"ab\"", &p).unwrap(), BitString::from_ascii("ab"));
        assert_eq!(parse_literal("x\"DEADBEEF\"", &p).unwrap(), BitString::from_bytes(&[0xde, 0xad, 0xbe, 0xef]));
        assert_eq!(parse_literal("b\"101\"", &p).unwrap(), BitString::from_bits([true, false, true]));
        assert!(parse_literal("x\"abc\"", &p).is_err());
        assert!(parse_literal("i", &p).is_err());
        for lit in ["i20", "eps", "\"msg1\"", "x\"00ff\"", "b\"101\"", "\"a\\\"b\""] {
            let b = parse_literal(lit, &p).unwrap();
            assert_eq!(parse_literal(&format_literal(&b, &p), &p).unwrap(), b);
        }
        assert_eq!(format_literal(&p.bs(20), &p), "i20");
    }

    proptest::proptest! {
        #[test]
        fn concat_associative(a in proptest::collection::vec(proptest::bool::ANY, 0..20),
                              b in proptest::collection::vec(proptest::bool::ANY, 0..20),
                              c in proptest::collection::vec(proptest::bool::ANY, 0..20)) {
            let (a, b, c) = (BitString::from_bits(a), BitString::from_bits(b), BitString::from_bits(c));
            proptest::prop_assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
        }

        #[test]
        fn sub_composes(bits in proptest::collection::vec(proptest::bool::ANY, 0..40),
                        o1 in 0usize..40, l1 in 0usize..40, o2 in 0usize..40, l2 in 0usize..40) {
            let b = BitString::from_bits(bits);
            if let Some(inner) = b.sub(o1, l1) {
                if let Some(lhs) = inner.sub(o2, l2) {
                    proptest::prop_assert_eq!(Some(lhs), b.sub(o1 + o2, l2));
                }
            }
            proptest::prop_assert_eq!(b.sub(o1, l1).is_some(), o1 + l1 <= b.len());
        }
    }
}
