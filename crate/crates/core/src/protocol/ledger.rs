//! Key ledger and one-time-pad encryption.
//!
//! Key material generated during super-block `s` is credited at the end of
//! `s` and may only be drawn in super-block `s + 1`. Draws advance a cursor
//! that never moves back, so a bit is handed out at most once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
struct Generation {
    generated_bits: u64,
    cursor: u64,
    material: Option<Vec<u8>>,
}

/// One draw of key bits, kept for the post-run audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    /// Super-block that used the bits.
    pub consumer: usize,
    /// Super-block that generated them.
    pub source: usize,
    pub start: u64,
    pub len: u64,
}

/// Outcome of [`KeyLedger::audit`]; all counts are zero for a sound ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerAudit {
    pub draws: usize,
    /// Draws whose bit range overlaps an earlier draw from the same key.
    pub reuse_violations: usize,
    /// Draws from a key not generated in the immediately preceding super-block.
    pub causality_violations: usize,
    /// Super-blocks whose key was drawn beyond its generated length.
    pub overdraw_violations: usize,
}

impl LedgerAudit {
    pub fn is_clean(&self) -> bool {
        self.reuse_violations == 0 && self.causality_violations == 0 && self.overdraw_violations == 0
    }
}

/// Per-super-block key accounting with the actual key bits.
#[derive(Debug, Clone, Default)]
pub struct KeyLedger {
    generations: Vec<Generation>,
    draws: Vec<Draw>,
}

impl KeyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Credits the key generated in super-block `s` (1-based, in order).
    pub fn credit(&mut self, s: usize, material: Vec<u8>, bits: u64) -> Result<()> {
        if s != self.generations.len() + 1 {
            return Err(Error::Precondition(format!(
                "key for super-block {s} credited out of order (expected {})",
                self.generations.len() + 1
            )));
        }
        if (material.len() as u64) * 8 < bits {
            return Err(Error::Precondition(format!(
                "{} bytes cannot hold {bits} key bits",
                material.len()
            )));
        }
        self.generations.push(Generation { generated_bits: bits, cursor: 0, material: Some(material) });
        Ok(())
    }

    pub fn generated_bits(&self, s: usize) -> u64 {
        self.generation(s).map_or(0, |g| g.generated_bits)
    }

    pub fn consumed_bits(&self, s: usize) -> u64 {
        self.generation(s).map_or(0, |g| g.cursor)
    }

    /// Bits of super-block `s`'s key not yet drawn.
    pub fn remaining_bits(&self, s: usize) -> u64 {
        self.generation(s).map_or(0, |g| g.generated_bits - g.cursor)
    }

    pub fn super_blocks(&self) -> usize {
        self.generations.len()
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }

    fn generation(&self, s: usize) -> Option<&Generation> {
        s.checked_sub(1).and_then(|i| self.generations.get(i))
    }

    /// Draws `bits` key bits for use in super-block `s`, taken from the key
    /// generated in `s - 1`. Bits are packed MSB first; unused trailing bits
    /// of the last byte are zero.
    pub fn draw(&mut self, s: usize, bits: u64) -> Result<Vec<u8>> {
        let source = s
            .checked_sub(1)
            .filter(|&src| src >= 1)
            .ok_or_else(|| Error::Precondition(format!("super-block {s} has no preceding key")))?;
        let gen = self
            .generations
            .get_mut(source - 1)
            .ok_or_else(|| Error::Precondition(format!("key of super-block {source} not credited yet")))?;
        let available = gen.generated_bits - gen.cursor;
        if bits > available {
            return Err(Error::InsufficientKey { needed: bits, available });
        }
        let material = gen
            .material
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("key of super-block {source} was retired")))?;
        let out = extract_bits(material, gen.cursor, bits);
        self.draws.push(Draw { consumer: s, source, start: gen.cursor, len: bits });
        gen.cursor += bits;
        Ok(out)
    }

    /// Drops the key bits of super-block `s`; counters stay for auditing.
    pub fn retire(&mut self, s: usize) {
        if let Some(g) = s.checked_sub(1).and_then(|i| self.generations.get_mut(i)) {
            g.material = None;
        }
    }

    /// Replays every draw and checks non-reuse, causality and no overdraw.
    pub fn audit(&self) -> LedgerAudit {
        let mut audit = LedgerAudit { draws: self.draws.len(), ..Default::default() };
        let mut high_water = vec![0u64; self.generations.len() + 1];
        for d in &self.draws {
            if d.consumer != d.source + 1 {
                audit.causality_violations += 1;
            }
            match high_water.get_mut(d.source) {
                Some(hw) => {
                    if d.start < *hw {
                        audit.reuse_violations += 1;
                    }
                    *hw = (*hw).max(d.start + d.len);
                }
                None => audit.causality_violations += 1,
            }
        }
        for (i, g) in self.generations.iter().enumerate() {
            if g.cursor > g.generated_bits || high_water[i + 1] > g.generated_bits {
                audit.overdraw_violations += 1;
            }
        }
        audit
    }
}

/// Copies `bits` bits starting at bit `offset` (MSB first) into a new buffer.
fn extract_bits(src: &[u8], offset: u64, bits: u64) -> Vec<u8> {
    let nbytes = bits.div_ceil(8) as usize;
    let mut out = vec![0u8; nbytes];
    let byte = (offset / 8) as usize;
    let shift = (offset % 8) as u32;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = src.get(byte + i).copied().unwrap_or(0);
        *o = if shift == 0 {
            hi
        } else {
            let lo = src.get(byte + i + 1).copied().unwrap_or(0);
            (hi << shift) | (lo >> (8 - shift))
        };
    }
    if !bits.is_multiple_of(8) {
        let keep = (bits % 8) as u32;
        if let Some(last) = out.last_mut() {
            *last &= 0xffu8 << (8 - keep);
        }
    }
    out
}

/// XORs `data` with the next `data.len() * 8` key bits available to
/// super-block `s`.
pub fn otp_encrypt(data: &[u8], ledger: &mut KeyLedger, s: usize) -> Result<Vec<u8>> {
    otp_encrypt_bits(data, data.len() as u64 * 8, ledger, s)
}

/// XORs the first `bit_len` bits of `data` with fresh key bits; bits beyond
/// `bit_len` pass through unchanged.
pub fn otp_encrypt_bits(data: &[u8], bit_len: u64, ledger: &mut KeyLedger, s: usize) -> Result<Vec<u8>> {
    if bit_len > data.len() as u64 * 8 {
        return Err(Error::Precondition(format!(
            "{bit_len} bits requested from a {}-byte payload",
            data.len()
        )));
    }
    let key = ledger.draw(s, bit_len)?;
    let mut out = data.to_vec();
    for (o, k) in out.iter_mut().zip(key.iter()) {
        *o ^= k;
    }
    Ok(out)
}
