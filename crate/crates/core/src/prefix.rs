//! Single-field header prefixes.
//!
//! A [`Prefix`] stores only its `len` significant bits (right-aligned in a
//! `u64`); the header width `L` is a property of the trie or network the
//! prefix lives in, not of the prefix itself.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported header width in bits.
pub const MAX_WIDTH: u8 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("prefix length {len} exceeds header width {width}")]
    TooLong { len: u8, width: u8 },
    #[error("malformed prefix `{0}`")]
    Malformed(String),
    #[error("bit string `{bits}` does not have length {len}")]
    LengthMismatch { bits: String, len: u8 },
    #[error("dotted-quad notation requires header width 32, not {0}")]
    DottedWidth(u8),
    #[error("host bits set in `{0}`")]
    HostBits(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prefix {
    bits: u64,
    len: u8,
}

fn low_mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl Prefix {
    /// The zero-length prefix matching every header.
    pub const ROOT: Prefix = Prefix { bits: 0, len: 0 };

    pub fn new(bits: u64, len: u8) -> Result<Self, PrefixError> {
        if len > MAX_WIDTH {
            return Err(PrefixError::TooLong { len, width: MAX_WIDTH });
        }
        if bits & !low_mask(len as u32) != 0 {
            return Err(PrefixError::Malformed(format!("{bits:#b}/{len}")));
        }
        Ok(Self { bits, len })
    }

    /// The full-length prefix for a single header value.
    pub fn host(header: u64, width: u8) -> Self {
        Self { bits: header & low_mask(width as u32), len: width }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    /// Bit `i` counted from the most significant end; `i < len`.
    pub fn bit(&self, i: u8) -> bool {
        debug_assert!(i < self.len);
        (self.bits >> (self.len - 1 - i)) & 1 == 1
    }

    pub fn child(&self, bit: bool) -> Prefix {
        debug_assert!(self.len < MAX_WIDTH);
        Prefix { bits: (self.bits << 1) | bit as u64, len: self.len + 1 }
    }

    pub fn parent(&self) -> Option<Prefix> {
        (self.len > 0).then(|| Prefix { bits: self.bits >> 1, len: self.len - 1 })
    }

    /// The first `len` bits of this prefix.
    pub fn truncate(&self, len: u8) -> Prefix {
        if len >= self.len {
            *self
        } else {
            Prefix { bits: self.bits >> (self.len - len), len }
        }
    }

    /// True if every header matched by `other` is matched by `self`.
    pub fn contains(&self, other: &Prefix) -> bool {
        other.len >= self.len && other.truncate(self.len) == *self
    }

    pub fn overlaps(&self, other: &Prefix) -> bool {
        self.contains(other) || other.contains(self)
    }

    pub fn matches(&self, header: u64, width: u8) -> bool {
        debug_assert!(self.len <= width);
        self.len == 0 || (header >> (width - self.len)) == self.bits
    }

    /// Inclusive header range `[lo, hi]` under a header width.
    pub fn range(&self, width: u8) -> (u64, u64) {
        debug_assert!(self.len <= width);
        let free = (width - self.len) as u32;
        let lo = if free >= 64 { 0 } else { self.bits << free };
        (lo, lo | low_mask(free))
    }

    /// Number of headers matched under a header width, as `u128` so that the
    /// root of a 64-bit space fits.
    pub fn size(&self, width: u8) -> u128 {
        1u128 << (width - self.len)
    }

    /// Left-aligned bit pattern, the primary key of the lexicographic order.
    fn key(&self) -> u64 {
        if self.len == 0 {
            0
        } else {
            self.bits << (64 - self.len as u32)
        }
    }

    /// Image of this prefix under a header rewrite `matched -> output` that
    /// replaces the first `output.len()` bits and keeps the rest.
    ///
    /// `self` must be contained in `matched`.
    pub fn rewrite(&self, matched: &Prefix, output: &Prefix) -> Prefix {
        debug_assert!(matched.contains(self));
        if self.len <= output.len {
            return *output;
        }
        let tail_len = self.len - output.len;
        let tail = self.bits & low_mask(tail_len as u32);
        Prefix { bits: (output.bits << tail_len) | tail, len: self.len }
    }

    /// Rewrites a single header value the same way [`Prefix::rewrite`]
    /// rewrites a prefix.
    pub fn rewrite_header(header: u64, output: &Prefix, width: u8) -> u64 {
        let keep = (width - output.len) as u32;
        let (lo, _) = output.range(width);
        lo | (header & low_mask(keep))
    }

    /// Parses `bits/len`, `*/0` or (for width 32) `a.b.c.d/len`.
    pub fn parse(text: &str, width: u8) -> Result<Prefix, PrefixError> {
        let (body, len_text) =
            text.split_once('/').ok_or_else(|| PrefixError::Malformed(text.to_string()))?;
        let len: u8 = len_text.parse().map_err(|_| PrefixError::Malformed(text.to_string()))?;
        if len > width {
            return Err(PrefixError::TooLong { len, width });
        }
        if body.contains('.') {
            if width != 32 {
                return Err(PrefixError::DottedWidth(width));
            }
            let octets: Vec<&str> = body.split('.').collect();
            if octets.len() != 4 {
                return Err(PrefixError::Malformed(text.to_string()));
            }
            let mut addr: u64 = 0;
            for o in octets {
                let v: u8 = o.parse().map_err(|_| PrefixError::Malformed(text.to_string()))?;
                addr = (addr << 8) | v as u64;
            }
            let free = 32 - len as u32;
            if addr & low_mask(free) != 0 {
                return Err(PrefixError::HostBits(text.to_string()));
            }
            let bits = if free >= 64 { 0 } else { addr >> free };
            return Prefix::new(bits, len);
        }
        if body.is_empty() || body == "*" {
            return if len == 0 {
                Ok(Prefix::ROOT)
            } else {
                Err(PrefixError::LengthMismatch { bits: body.to_string(), len })
            };
        }
        if !body.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(PrefixError::Malformed(text.to_string()));
        }
        if body.len() != len as usize {
            return Err(PrefixError::LengthMismatch { bits: body.to_string(), len });
        }
        let bits = body.bytes().fold(0u64, |acc, b| (acc << 1) | (b == b'1') as u64);
        Prefix::new(bits, len)
    }

    /// Formats in the notation preferred for a header width: dotted quad for
    /// width 32, a bit string otherwise.
    pub fn display(&self, width: u8) -> String {
        if width == 32 {
            let (lo, _) = self.range(32);
            format!(
                "{}.{}.{}.{}/{}",
                (lo >> 24) & 0xff,
                (lo >> 16) & 0xff,
                (lo >> 8) & 0xff,
                lo & 0xff,
                self.len
            )
        } else {
            self.to_string()
        }
    }
}

impl Ord for Prefix {
    /// Lexicographic by bit path; an ancestor sorts before its descendants.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key()).then(self.len.cmp(&other.len))
    }
}

impl PartialOrd for Prefix {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return f.write_str("*/0");
        }
        for i in 0..self.len {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        write!(f, "/{}", self.len)
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Prefix {
    type Err = PrefixError;

    /// Parses a bit-string prefix without a width bound (dotted quads are
    /// accepted as 32-bit).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let width = if s.contains('.') { 32 } else { MAX_WIDTH };
        Prefix::parse(s, width)
    }
}
