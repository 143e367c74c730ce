//! Byte-oriented carryless range coder with 64-bit state and 16-bit
//! frequency precision (Subbotin style: instead of propagating carries, the
//! range is clamped to the next boundary when it underflows, costing a
//! negligible fraction of a bit per event).
//!
//! Out-of-model values are supported through raw direct bits; see
//! [`RangeEncoder::encode_bits`].

use crate::error::{Error, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;

/// Emit a byte once the top byte of low is settled.
const TOP: u64 = 1 << 56;
/// Underflow bound; must stay well above FREQ_TOTAL.
const BOTTOM: u64 = 1 << 48;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    /// Encodes a symbol occupying [cum, cum + freq) of the 2^16 total.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum.checked_add(freq).map_or(false, |e| e <= FREQ_TOTAL));
        let r = self.range >> FREQ_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        self.normalize();
    }

    /// Encodes `bits` raw bits of `value`, most significant first.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.range >>= 1;
            if (value >> i) & 1 == 1 {
                self.low = self.low.wrapping_add(self.range);
            }
            self.normalize();
        }
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOTTOM {
                    break;
                }
                // Underflow: shrink the cell so it ends at the next BOTTOM
                // boundary, which settles the top byte.
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the state; the stream always ends with 8 bytes of `low`.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Corruption(format!(
                "range stream holds {} bytes, needs at least 8",
                bytes.len()
            )));
        }
        let mut code = 0u64;
        for &b in &bytes[..8] {
            code = (code << 8) | b as u64;
        }
        Ok(RangeDecoder {
            low: 0,
            range: u64::MAX,
            code,
            bytes,
            pos: 8,
        })
    }

    /// Cumulative-frequency position of the next symbol, in [0, 2^16).
    pub fn decode_target(&self) -> u32 {
        let r = self.range >> FREQ_BITS;
        let dv = self.code.wrapping_sub(self.low) / r;
        dv.min((FREQ_TOTAL - 1) as u64) as u32
    }

    /// Consumes the symbol previously located with [`Self::decode_target`].
    pub fn decode_update(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> FREQ_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        self.normalize()
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..bits {
            self.range >>= 1;
            let bit = self.code.wrapping_sub(self.low) >= self.range;
            if bit {
                self.low = self.low.wrapping_add(self.range);
            }
            value = (value << 1) | bit as u32;
            self.normalize()?;
        }
        Ok(value)
    }

    fn normalize(&mut self) -> Result<()> {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOTTOM {
                    return Ok(());
                }
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
            }
            if self.pos >= self.bytes.len() {
                return Err(Error::Corruption("range stream underrun".into()));
            }
            self.code = (self.code << 8) | self.bytes[self.pos] as u64;
            self.pos += 1;
            self.low <<= 8;
            self.range <<= 8;
        }
    }
}
