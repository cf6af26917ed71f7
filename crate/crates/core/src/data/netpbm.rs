//! Binary NetPBM: PGM (`P5`, grayscale) and PPM (`P6`, RGB), 8-bit only.
//!
//! Pixels decode to `[C, H, W]` tensors scaled by `1/255`, so 255 maps to
//! exactly 1.0. Encoding rounds `v * 255` and clamps to `0..=255`; 8-bit
//! quantisation is the only loss in a round trip.

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

const WHAT: &str = "netpbm";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    Pgm,
    Ppm,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Pgm => 1,
            PnmKind::Ppm => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Pgm => b"P5",
            PnmKind::Ppm => b"P6",
        }
    }
}

/// A decoded 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    /// Interleaved samples, row-major (`RGBRGB...` for PPM).
    pub samples: Vec<u8>,
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        what: WHAT,
        offset,
        detail: detail.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{field} does not fit in usize")))
    }
}

/// Decodes a `P5` or `P6` file.
pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Pgm,
        Some(b"P6") => PnmKind::Ppm,
        _ => return Err(parse_err(0, "bad magic, expected P5 or P6")),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|c| c.is_ascii_whitespace() || *c == b'#') {
        return Err(parse_err(2, "expected whitespace after magic"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = {
        h.skip_space_and_comments();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected single whitespace before raster")),
    }
    let need = width * height * kind.channels();
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated raster: need {need} bytes, found {}", raster.len()),
        ));
    }
    Ok(Pnm {
        kind,
        width,
        height,
        samples: raster[..need].to_vec(),
    })
}

pub fn encode(img: &Pnm) -> Vec<u8> {
    let mut out = format!(
        "{}\n{} {}\n255\n",
        std::str::from_utf8(img.kind.magic()).expect("ascii"),
        img.width,
        img.height
    )
    .into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

impl Pnm {
    /// `[C, H, W]` tensor with values `sample / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let c = self.kind.channels();
        let plane = self.width * self.height;
        Tensor::from_fn([c, self.height, self.width], |i| {
            let (ch, p) = (i / plane, i % plane);
            self.samples[p * c + ch] as f64 / 255.0
        })
    }

    /// Single-channel tensor; RGB is reduced with Rec. 601 luma weights.
    pub fn to_grayscale(&self) -> Tensor {
        match self.kind {
            PnmKind::Pgm => self.to_tensor(),
            PnmKind::Ppm => Tensor::from_fn([1, self.height, self.width], |p| {
                let px = &self.samples[3 * p..3 * p + 3];
                (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
            }),
        }
    }

    /// Quantises a `[1, H, W]` or `[3, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Pnm> {
        let (c, h, w) = t.dims3()?;
        let kind = match c {
            1 => PnmKind::Pgm,
            3 => PnmKind::Ppm,
            _ => {
                return Err(Error::contract(
                    "Pnm::from_tensor",
                    format!("{c} channels; PGM needs 1 and PPM needs 3"),
                ))
            }
        };
        let plane = h * w;
        let mut samples = vec![0u8; c * plane];
        for ch in 0..c {
            for p in 0..plane {
                samples[p * c + ch] = quantize(t.data()[ch * plane + p]);
            }
        }
        Ok(Pnm {
            kind,
            width: w,
            height: h,
            samples,
        })
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn read_image(bytes: &[u8]) -> Result<Tensor> {
    Ok(decode(bytes)?.to_tensor())
}

pub fn write_image(t: &Tensor) -> Result<Vec<u8>> {
    Ok(encode(&Pnm::from_tensor(t)?))
}

/// Label maps are stored as PGM with label `l` at gray level `round(255 l / (L-1))`.
pub fn write_label_map(map: &LabelMap, num_classes: usize) -> Vec<u8> {
    let step = 255.0 / (num_classes.max(2) - 1) as f64;
    encode(&Pnm {
        kind: PnmKind::Pgm,
        width: map.width(),
        height: map.height(),
        samples: map.labels().iter().map(|&l| (l as f64 * step).round() as u8).collect(),
    })
}

/// Inverse of [`write_label_map`]. For two classes this binarises at 0.5.
pub fn read_label_map(bytes: &[u8], num_classes: usize) -> Result<LabelMap> {
    let img = decode(bytes)?;
    if img.kind != PnmKind::Pgm {
        return Err(parse_err(0, "label maps must be PGM (P5)"));
    }
    let top = (num_classes.max(2) - 1) as f64;
    let labels = img
        .samples
        .iter()
        .map(|&v| {
            let x = v as f64 / 255.0;
            if num_classes <= 2 {
                u8::from(x >= 0.5)
            } else {
                (x * top).round() as u8
            }
        })
        .collect();
    LabelMap::new(img.height, img.width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let t = read_image(bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # comment\n# more\n1 1 255\n\x07";
        assert_eq!(decode(bytes).unwrap().samples, vec![7]);
    }

    #[test]
    fn corrupt_magic_fails_at_zero() {
        let err = decode(b"P2\n1 1\n255\n0").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_raster_is_reported() {
        let err = decode(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 13, .. }), "{err}");
    }

    #[test]
    fn rejects_16_bit() {
        let err = decode(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 7, .. }), "{err}");
    }

    #[test]
    fn ppm_roundtrip_is_value_exact() {
        let t = Tensor::from_fn([3, 2, 3], |i| (i * 13 % 256) as f64 / 255.0);
        let back = read_image(&write_image(&t).unwrap()).unwrap();
        assert!(back.bit_eq(&t));
        let gray = decode(&write_image(&t).unwrap()).unwrap().to_grayscale();
        assert_eq!(gray.shape(), &[1, 2, 3]);
    }

    #[test]
    fn label_map_roundtrip() {
        let m = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(read_label_map(&write_label_map(&m, 2), 2).unwrap(), m);
        let m3 = LabelMap::new(1, 3, vec![0, 1, 2]).unwrap();
        assert_eq!(read_label_map(&write_label_map(&m3, 3), 3).unwrap(), m3);
    }
}
