//! Little-endian cursor helpers shared by the checkpoint and trace formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.buf.len(),
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file ends at {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Verify the trailing CRC32 of a complete file of `expected_len` bytes.
pub(crate) fn check_length_and_crc(buf: &[u8], expected_len: usize) -> Result<()> {
    if buf.len() < expected_len {
        return Err(Error::parse(
            buf.len(),
            format!("truncated: header declares {expected_len} bytes, file has {}", buf.len()),
        ));
    }
    if buf.len() > expected_len {
        return Err(Error::parse(
            expected_len,
            format!("{} unexpected trailing bytes", buf.len() - expected_len),
        ));
    }
    let body = &buf[..expected_len - 4];
    let stored = u32::from_le_bytes(buf[expected_len - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::parse(
            expected_len - 4,
            format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }
    Ok(())
}

pub(crate) fn push_crc(buf: &mut Vec<u8>) {
    let crc = crc32fast::hash(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}
