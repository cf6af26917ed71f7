//! U-Net-style encoder-decoder segmentation network.
//!
//! Layout for `depth = D`, `base_channels = B`:
//!
//! | block        | layers                                                        |
//! |--------------|---------------------------------------------------------------|
//! | `enc{i}`     | 3x3 conv `c_in -> B*2^i` + ReLU, 3x3 conv `B*2^i -> B*2^i` + ReLU, then 2x2 max-pool |
//! | `mid`        | 3x3 conv `B*2^(D-1) -> B*2^D` + ReLU, 3x3 conv `B*2^D -> B*2^D` + ReLU |
//! | `dec{i}`     | 1x1 `proj` `B*2^(i+1) -> B*2^i` + ReLU, nearest x2 upsample, concat skip `enc{i}`, 3x3 conv `2*B*2^i -> B*2^i` + ReLU, 3x3 conv `B*2^i -> B*2^i` + ReLU |
//! | `head`       | 1x1 conv `B -> L`, no activation (pre-softmax logits)         |
//!
//! `c_in` is the input channel count at level 0 and `B*2^(i-1)` after that.
//! The projection runs before the upsample; a 1x1 conv commutes with nearest
//! upsampling, so this is the same map as upsample-then-project at a quarter
//! of the cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::{Graph, Padding, Var};
use crate::label::LabelMap;
use crate::optim::AdadeltaState;
use crate::params::{conv_layer, init_conv, Bound, Params};
use crate::tensor::Tensor;
use crate::train::{fit, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            depth: 3,
            base_channels: 8,
            num_classes: 2,
            input_channels: 1,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "segnet depth, base_channels and input_channels must be positive".into(),
            ));
        }
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "segnet num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Records the network on `g` and returns the `[L, H, W]` logits.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, image: Var) -> Result<Var> {
        let (c, h, w) = g.value(image).dims3()?;
        self.check_input(c, h, w)?;
        let mut x = image;
        let mut skips = Vec::with_capacity(self.depth);
        for i in 0..self.depth {
            x = conv_layer(g, bound, &format!("enc{i}.conv1"), x, Padding::Same, true)?;
            x = conv_layer(g, bound, &format!("enc{i}.conv2"), x, Padding::Same, true)?;
            skips.push(x);
            x = g.maxpool2d(x)?;
        }
        x = conv_layer(g, bound, "mid.conv1", x, Padding::Same, true)?;
        x = conv_layer(g, bound, "mid.conv2", x, Padding::Same, true)?;
        for i in (0..self.depth).rev() {
            x = conv_layer(g, bound, &format!("dec{i}.proj"), x, Padding::Valid, true)?;
            x = g.upsample_nearest(x)?;
            x = g.concat_channels(x, skips[i])?;
            x = conv_layer(g, bound, &format!("dec{i}.conv1"), x, Padding::Same, true)?;
            x = conv_layer(g, bound, &format!("dec{i}.conv2"), x, Padding::Same, true)?;
        }
        conv_layer(g, bound, "head", x, Padding::Valid, false)
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.input_channels {
            return Err(Error::contract(
                "seg_logits",
                format!("image has {c} channels, network expects {}", self.input_channels),
            ));
        }
        let m = self.size_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::contract(
                "seg_logits",
                format!("image is {h}x{w}; both sides must be multiples of {m} for depth {}", self.depth),
            ));
        }
        Ok(())
    }
}

/// Network parameters together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    pub config: SegNetConfig,
    pub params: Params,
}

/// He-initialised network, reproducible from `seed`.
pub fn build_segnet(config: SegNetConfig, seed: u64) -> Result<SegModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    let mut cin = config.input_channels;
    for i in 0..config.depth {
        let w = config.width(i);
        init_conv(&mut params, &mut rng, &format!("enc{i}.conv1"), w, cin, 3);
        init_conv(&mut params, &mut rng, &format!("enc{i}.conv2"), w, w, 3);
        cin = w;
    }
    let wm = config.width(config.depth);
    init_conv(&mut params, &mut rng, "mid.conv1", wm, cin, 3);
    init_conv(&mut params, &mut rng, "mid.conv2", wm, wm, 3);
    for i in (0..config.depth).rev() {
        let w = config.width(i);
        init_conv(&mut params, &mut rng, &format!("dec{i}.proj"), w, 2 * w, 1);
        init_conv(&mut params, &mut rng, &format!("dec{i}.conv1"), w, 2 * w, 3);
        init_conv(&mut params, &mut rng, &format!("dec{i}.conv2"), w, w, 3);
    }
    init_conv(&mut params, &mut rng, "head", config.num_classes, config.base_channels, 1);
    Ok(SegModel { config, params })
}

impl SegModel {
    /// Pre-softmax logits `f(I; theta)` as a plain tensor.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.config.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-pixel argmax label; ties go to the lower label.
    pub fn predict(&self, image: &Tensor) -> Result<LabelMap> {
        LabelMap::argmax(&self.logits(image)?)
    }
}

/// Pre-softmax logits of `model` for `image`.
pub fn seg_logits(model: &SegModel, image: &Tensor) -> Result<Tensor> {
    model.logits(image)
}

pub fn predict(model: &SegModel, image: &Tensor) -> Result<LabelMap> {
    model.predict(image)
}

/// Rejects samples whose shape or labels do not fit the network.
pub(crate) fn validate_samples(config: &SegNetConfig, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let (c, h, w) = s.image.dims3()?;
        if (h, w) != (s.mask.height(), s.mask.width()) {
            return Err(Error::Data {
                sample: s.id.clone(),
                detail: format!("image is {h}x{w} but mask is {}x{}", s.mask.height(), s.mask.width()),
            });
        }
        if s.mask.max_label() as usize >= config.num_classes {
            return Err(Error::Data {
                sample: s.id.clone(),
                detail: format!(
                    "label {} out of range for {} classes",
                    s.mask.max_label(),
                    config.num_classes
                ),
            });
        }
        config.check_input(c, h, w).map_err(|e| Error::Data {
            sample: s.id.clone(),
            detail: e.to_string(),
        })?;
    }
    Ok(())
}

/// Trains with per-pixel softmax cross-entropy and Adadelta. Returns the
/// per-epoch mean training loss; `model` is updated in place.
pub fn train_segmentation(
    model: &mut SegModel,
    samples: &[Sample],
    schedule: Schedule,
    opt: &mut AdadeltaState,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::contract("train_segmentation", "dataset is empty"));
    }
    validate_samples(&model.config, samples)?;
    let config = model.config;
    fit(&mut model.params, samples, schedule, opt, seed, |g, bound, s| {
        let x = g.constant(s.image.clone());
        let logits = config.forward(g, bound, x)?;
        g.softmax_cross_entropy(logits, &s.mask)
    })
}
