use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel class labels for an `H x W` image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::contract(
                "LabelMap::new",
                format!(
                    "{height}x{width} map needs {} labels, got {}",
                    height * width,
                    labels.len()
                ),
            ));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Fraction of pixels carrying `label`.
    pub fn fraction(&self, label: u8) -> f64 {
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.len() as f64
    }

    /// Per-pixel argmax over the channel axis of `[L, H, W]` scores.
    /// Ties go to the lowest label index.
    pub fn argmax(scores: &Tensor) -> Result<Self> {
        let (l, h, w) = scores.dims3()?;
        if l > u8::MAX as usize + 1 {
            return Err(Error::contract(
                "LabelMap::argmax",
                format!("{l} classes exceed the 256-label limit"),
            ));
        }
        let plane = h * w;
        let data = scores.data();
        let labels = (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..l {
                    if data[c * plane + p] > data[best * plane + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Ok(LabelMap {
            height: h,
            width: w,
            labels,
        })
    }

    pub(crate) fn expect_same_dims(&self, op: &'static str, other: &LabelMap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::contract(
                op,
                format!(
                    "label map dims {}x{} vs {}x{}",
                    self.height, self.width, other.height, other.width
                ),
            ));
        }
        Ok(())
    }
}
