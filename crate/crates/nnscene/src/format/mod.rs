//! Little-endian binary containers.
//!
//! - `HBFS0001`: feature sets (grids plus pixel labels, one block per epoch).
//! - `HBMB0001`: memory banks, optionally followed by an `HBIX0001` index.
//! - `HBPR0001`: dense predictions.
//!
//! Readers parse the whole input before returning, so a malformed file never
//! yields a partial result. Parse errors name the byte offset.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub mod hbfs;
pub mod hbmb;
pub mod hbpr;

/// Byte reader that tracks its offset and reports format-tagged errors.
pub(crate) struct Reader<R> {
    inner: R,
    offset: u64,
    format: &'static str,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R, format: &'static str) -> Self {
        Reader {
            inner,
            offset: 0,
            format,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn error(&self, at: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            format: self.format,
            offset: at,
            message: message.into(),
        }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|e| self.error(self.offset, format!("reading {what}: {e}")))?;
        if got < n {
            return Err(self.error(
                self.offset + got as u64,
                format!("truncated {what}: expected {n} bytes, found {got}"),
            ));
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let b = self.bytes(N, what)?;
        Ok(b.try_into().expect("length checked"))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let at = self.offset;
        let got = self.array::<8>("magic")?;
        if &got != expected {
            return Err(self.error(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    /// A `u32` or `u64` count converted to `usize`.
    pub(crate) fn count(&mut self, value: u64, what: &str) -> Result<usize> {
        usize::try_from(value).map_err(|_| self.error(self.offset, format!("{what} {value} too large")))
    }

    /// Element count times element size, rejecting overflow.
    pub(crate) fn checked_len(&self, parts: &[usize], what: &str) -> Result<usize> {
        parts
            .iter()
            .try_fold(1usize, |acc, &p| acc.checked_mul(p))
            .ok_or_else(|| self.error(self.offset, format!("{what} size overflows")))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.checked_len(&[n, 4], what)?;
        let raw = self.bytes(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u16s(&mut self, n: usize, what: &str) -> Result<Vec<u16>> {
        let bytes = self.checked_len(&[n, 2], what)?;
        let raw = self.bytes(bytes, what)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let bytes = self.checked_len(&[n, 4], what)?;
        let raw = self.bytes(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// True when no bytes remain.
    pub(crate) fn at_end(&mut self) -> Result<bool> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(true),
                Ok(_) => return Err(self.error(self.offset, "unexpected trailing bytes")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(self.error(self.offset, e.to_string())),
            }
        }
    }

    /// Reads the next 8 bytes if present; `None` at a clean end of input.
    pub(crate) fn optional_magic(&mut self) -> Result<Option<[u8; 8]>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner)
            .take(8)
            .read_to_end(&mut buf)
            .map_err(|e| self.error(self.offset, e.to_string()))?;
        match got {
            0 => Ok(None),
            8 => {
                self.offset += 8;
                Ok(Some(buf.try_into().unwrap()))
            }
            _ => Err(self.error(self.offset + got as u64, "truncated section magic")),
        }
    }
}

/// Little-endian writer helpers.
pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub(crate) fn new(inner: W) -> Self {
        Writer { inner }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io("writing output", e))
    }

    pub(crate) fn raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.put(bytes)
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub(crate) fn len32(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Usage(format!("{what} {v} exceeds u32")))?;
        self.u32(v)
    }

    pub(crate) fn f32s(&mut self, values: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.put(&buf)
    }

    pub(crate) fn u16s(&mut self, values: &[u16]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 2);
        values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.put(&buf)
    }

    pub(crate) fn u32s(&mut self, values: &[u32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.put(&buf)
    }

    pub(crate) fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("flushing output", e))?;
        Ok(self.inner)
    }
}

/// Packs booleans LSB-first into bytes.
pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_round_trip() {
        let bits = [true, false, false, true, true, false, true, false, true, true];
        let packed = pack_bits(&bits);
        assert_eq!(packed, vec![0b0101_1001, 0b0000_0011]);
        assert_eq!(unpack_bits(&packed, bits.len()), bits);
    }

    #[test]
    fn truncation_names_offset() {
        let data = [1u8, 2, 3];
        let mut r = Reader::new(&data[..], "TEST");
        let err = r.u32("field").unwrap_err().to_string();
        assert!(err.contains("byte 3"), "{err}");
    }
}
