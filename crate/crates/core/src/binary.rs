//! Little-endian readers/writers shared by the raw tensor and checkpoint formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn error(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Parse {
            what: self.what,
            offset,
            detail: detail.into(),
        }
    }

    pub fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(
                self.pos,
                format!("truncated {field}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let at = self.pos;
        let got = self.take(magic.len(), "magic")?;
        if got != magic {
            return Err(self.error(at, format!("bad magic {got:?}, expected {magic:?}")));
        }
        Ok(())
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.error(self.pos, "size overflow"))?, field)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// `rank: u32` followed by `rank` `u64` dims, all positive.
    pub fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64("dim")?;
            if d == 0 {
                return Err(self.error(at, "zero-sized dimension"));
            }
            dims.push(usize::try_from(d).map_err(|_| self.error(at, "dimension too large"))?);
        }
        Ok(dims)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
