//! Dense encoder-decoder image translator.
//!
//! With `B = blocks`, `L = layers_per_block`, `g = growth_channels` and `c`
//! input channels:
//!
//! ```text
//! stem        3x3 conv c -> g, ReLU
//! down{i}     dense block (L layers of 3x3 conv -> g, ReLU, concatenated), keep as skip, 2x2 max-pool
//! bottleneck  dense block on the pooled features
//! up{i}       nearest x2 upsample of the previous block's L*g new features,
//!             concat skip{i}, dense block
//! head        1x1 conv -> c, linear; added to the input image
//! ```
//!
//! Channel counts: `e_0 = g`, `e_{i+1} = e_i + L*g` (pooled encoder outputs;
//! the skip of level `i` has `e_{i+1}` channels). The bottleneck and every
//! decoder block pass only their `L*g` new feature maps upward, except the
//! last decoder block, which feeds all of its `e_1 + 2*L*g` channels to the
//! head. A dense layer reading `k` channels has `9*g*k + g` parameters.
//!
//! The head is zero-initialised, so a fresh translator is the identity map and
//! training learns the additive correction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::graph::{Graph, Padding, Var};
use crate::losses::{ssim, translation_loss_var, TranslationLossConfig};
use crate::metrics::MetricsReport;
use crate::optim::AdadeltaState;
use crate::params::{conv_layer, init_conv, Bound, Params};
use crate::tensor::Tensor;
use crate::train::{fit, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    /// Dense blocks per side (encoder and decoder).
    pub blocks: usize,
    pub growth_channels: usize,
    pub layers_per_block: usize,
    pub input_channels: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            blocks: 2,
            growth_channels: 8,
            layers_per_block: 3,
            input_channels: 1,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0
            || self.growth_channels == 0
            || self.layers_per_block == 0
            || self.input_channels == 0
        {
            return Err(Error::Config(
                "translator blocks, growth_channels, layers_per_block and input_channels must be positive"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.blocks
    }

    fn new_features(&self) -> usize {
        self.layers_per_block * self.growth_channels
    }

    /// Channels entering encoder block `i` (`e_i` in the module docs).
    fn encoder_in(&self, i: usize) -> usize {
        self.growth_channels + i * self.new_features()
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.input_channels {
            return Err(Error::contract(
                "translate",
                format!("image has {c} channels, translator expects {}", self.input_channels),
            ));
        }
        let m = self.size_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::contract(
                "translate",
                format!("image is {h}x{w}; both sides must be multiples of {m} for {} blocks", self.blocks),
            ));
        }
        Ok(())
    }

    /// Total parameter count, from the channel formulas in the module docs.
    pub fn param_count(&self) -> usize {
        let (g, l, c) = (self.growth_channels, self.layers_per_block, self.input_channels);
        let dense = |k: usize| (0..l).map(|j| 9 * g * (k + j * g) + g).sum::<usize>();
        let mut n = 9 * c * g + g;
        for i in 0..=self.blocks {
            n += dense(self.encoder_in(i));
        }
        for i in 0..self.blocks {
            n += dense(self.new_features() + self.encoder_in(i + 1));
        }
        n + c * (self.encoder_in(1) + 2 * self.new_features()) + c
    }

    fn dense_block(&self, g: &mut Graph, bound: &Bound, name: &str, mut x: Var) -> Result<(Var, Var)> {
        let mut new = None;
        for j in 0..self.layers_per_block {
            let y = conv_layer(g, bound, &format!("{name}.layer{j}"), x, Padding::Same, true)?;
            x = g.concat_channels(x, y)?;
            new = Some(match new {
                None => y,
                Some(n) => g.concat_channels(n, y)?,
            });
        }
        Ok((x, new.expect("layers_per_block >= 1")))
    }

    /// Records the translator on `g`; returns an output shaped like `image`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, image: Var) -> Result<Var> {
        let (c, h, w) = g.value(image).dims3()?;
        self.check_input(c, h, w)?;
        let mut x = conv_layer(g, bound, "stem", image, Padding::Same, true)?;
        let mut skips = Vec::with_capacity(self.blocks);
        for i in 0..self.blocks {
            let (all, _) = self.dense_block(g, bound, &format!("down{i}"), x)?;
            skips.push(all);
            x = g.maxpool2d(all)?;
        }
        let (_, mut new) = self.dense_block(g, bound, "bottleneck", x)?;
        let mut features = new;
        for i in (0..self.blocks).rev() {
            let up = g.upsample_nearest(new)?;
            let joined = g.concat_channels(up, skips[i])?;
            let (all, n) = self.dense_block(g, bound, &format!("up{i}"), joined)?;
            new = n;
            features = all;
        }
        let correction = conv_layer(g, bound, "head", features, Padding::Valid, false)?;
        let correction = g.linear(correction);
        g.add(image, correction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    pub params: Params,
}

pub fn build_translator(config: TranslatorConfig, seed: u64) -> Result<TranslatorModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    init_conv(&mut params, &mut rng, "stem", config.growth_channels, config.input_channels, 3);
    let mut dense = |name: &str, k: usize| {
        for j in 0..config.layers_per_block {
            let g = config.growth_channels;
            init_conv(&mut params, &mut rng, &format!("{name}.layer{j}"), g, k + j * g, 3);
        }
    };
    for i in 0..config.blocks {
        dense(&format!("down{i}"), config.encoder_in(i));
    }
    dense("bottleneck", config.encoder_in(config.blocks));
    for i in (0..config.blocks).rev() {
        dense(&format!("up{i}"), config.new_features() + config.encoder_in(i + 1));
    }
    let head_in = config.encoder_in(1) + 2 * config.new_features();
    params.insert("head.weight", Tensor::zeros([config.input_channels, head_in, 1, 1]));
    params.insert("head.bias", Tensor::zeros([config.input_channels]));
    Ok(TranslatorModel { config, params })
}

impl TranslatorModel {
    pub fn translate(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.config.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }
}

pub fn translate(model: &TranslatorModel, image: &Tensor) -> Result<Tensor> {
    model.translate(image)
}

fn validate_pairs(config: &TranslatorConfig, pairs: &[Pair]) -> Result<()> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::contract("train_translator", "no training pairs"))?;
    for p in pairs {
        if p.image.shape() != first.image.shape() || p.target.shape() != p.image.shape() {
            return Err(Error::Data {
                sample: p.id.clone(),
                detail: format!(
                    "image {:?} and target {:?} must both match {:?}",
                    p.image.shape(),
                    p.target.shape(),
                    first.image.shape()
                ),
            });
        }
        let (c, h, w) = p.image.dims3()?;
        config.check_input(c, h, w).map_err(|e| Error::Data {
            sample: p.id.clone(),
            detail: e.to_string(),
        })?;
    }
    Ok(())
}

/// Trains on `(image, target)` pairs with the SSIM + L1 translation loss.
/// Returns per-epoch mean losses.
pub fn train_translator(
    model: &mut TranslatorModel,
    pairs: &[Pair],
    loss_cfg: &TranslationLossConfig,
    schedule: Schedule,
    opt: &mut AdadeltaState,
    seed: u64,
) -> Result<Vec<f64>> {
    loss_cfg.validate()?;
    validate_pairs(&model.config, pairs)?;
    let config = model.config;
    fit(&mut model.params, pairs, schedule, opt, seed, |g, bound, p| {
        let x = g.constant(p.image.clone());
        let y = config.forward(g, bound, x)?;
        let t = g.constant(p.target.clone());
        translation_loss_var(g, y, t, loss_cfg)
    })
}

/// Per-pair SSIM between `translate(image)` and the target.
pub fn reconstruction_fidelity(
    model: &TranslatorModel,
    pairs: &[Pair],
    loss_cfg: &TranslationLossConfig,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::contract("reconstruction_fidelity", "no pairs"));
    }
    let values = pairs
        .iter()
        .map(|p| ssim(&model.translate(&p.image)?, &p.target, loss_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::new(pairs.iter().map(|p| p.id.clone()).collect());
    report.push_column("ssim", values)?;
    Ok(report)
}
