//! Raw tensor files (`.gmt`).
//!
//! ```text
//! offset  size      field
//! 0       4         magic "GMTS"
//! 4       4         version (u32 LE) = 1
//! 8       4         rank r (u32 LE)
//! 12      8 * r     dims (u64 LE each)
//! ...     8 * prod  values (f64 LE, row-major)
//! ```
//!
//! Round trips are bit-exact.

use crate::binary::{put_f64s, put_shape, put_u32, Reader};
use crate::error::Result;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"GMTS";
pub const TENSOR_VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 8 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    put_u32(&mut out, TENSOR_VERSION);
    put_shape(&mut out, t.shape());
    put_f64s(&mut out, t.data());
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "tensor file");
    r.expect_magic(TENSOR_MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(r.error(at, format!("unsupported version {version}")));
    }
    let shape = r.shape()?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.error(at, "element count overflows"))?;
    let data = r.f64s(n, "values")?;
    r.finish()?;
    Tensor::new(shape, data)
}
