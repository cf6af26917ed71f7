//! Translator and segmentation network chained and trained end to end with
//! the segmentation loss only. Used as the comparison baseline for the
//! perturbation-supervised translator.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::label::LabelMap;
use crate::optim::AdadeltaState;
use crate::segnet::{build_segnet, validate_samples, SegModel, SegNetConfig};
use crate::train::{fit, Schedule};
use crate::translator::{build_translator, TranslatorConfig, TranslatorModel};

#[derive(Clone, Debug, PartialEq)]
pub struct SerialModel {
    pub translator: TranslatorModel,
    pub segnet: SegModel,
}

pub fn build_serial(
    translator: TranslatorConfig,
    segnet: SegNetConfig,
    translator_seed: u64,
    segnet_seed: u64,
) -> Result<SerialModel> {
    Ok(SerialModel {
        translator: build_translator(translator, translator_seed)?,
        segnet: build_segnet(segnet, segnet_seed)?,
    })
}

impl SerialModel {
    pub fn param_count(&self) -> usize {
        self.translator.params.count() + self.segnet.params.count()
    }

    pub fn predict(&self, image: &crate::tensor::Tensor) -> Result<LabelMap> {
        self.segnet.predict(&self.translator.translate(image)?)
    }
}

/// Trains both halves jointly with per-pixel cross-entropy. Returns per-epoch losses.
pub fn train_serial(
    model: &mut SerialModel,
    samples: &[Sample],
    schedule: Schedule,
    opt: &mut AdadeltaState,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::contract("train_serial", "dataset is empty"));
    }
    validate_samples(&model.segnet.config, samples)?;
    let (tc, sc) = (model.translator.config, model.segnet.config);
    let mut params = model.translator.params.prefixed("trn.");
    params.extend(model.segnet.params.prefixed("seg."));
    let curve = fit(&mut params, samples, schedule, opt, seed, |g: &mut Graph, bound, s| {
        let x = g.constant(s.image.clone());
        let t = tc.forward(g, &bound.scoped("trn."), x)?;
        let logits = sc.forward(g, &bound.scoped("seg."), t)?;
        g.softmax_cross_entropy(logits, &s.mask)
    })?;
    model.translator.params = params.scoped("trn.");
    model.segnet.params = params.scoped("seg.");
    Ok(curve)
}
