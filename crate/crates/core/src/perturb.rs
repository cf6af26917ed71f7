//! Gradient-based input perturbation.
//!
//! Starting from an image `I`, each step takes the gradient `d` of
//!
//! ```text
//! G(I) = sum over pixels of [ logit(predicted label) - logit(true label) ]
//! ```
//!
//! with the predicted labels recomputed from the current image, scales it so
//! its largest magnitude is 1, and moves the image against it:
//! `I <- I - gamma * d / max|d|`. Pixels that are already right contribute
//! nothing to `G`. Pixel values are not clamped.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{tensor_io, Pair, Sample, SplitDirs};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::{Graph, Var};
use crate::label::LabelMap;
use crate::metrics::Confusion;
use crate::segnet::SegModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Step size; the largest pixel change per step.
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once agreement with the ground truth reaches this Dice.
    pub dice_tolerance: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            gamma: 1.0,
            max_iters: 100,
            dice_tolerance: 0.995,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be positive", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.dice_tolerance > 0.0 && self.dice_tolerance <= 1.0) {
            return Err(Error::Config(format!(
                "dice_tolerance {} outside (0, 1]",
                self.dice_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Agreement reached the tolerance after at least one step.
    Tolerance,
    MaxIters,
    /// The unperturbed image already met the tolerance.
    AlreadyCorrect,
    /// The gradient vanished while the prediction was still wrong.
    Stalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIters => "max_iters",
            Termination::AlreadyCorrect => "already_correct",
            Termination::Stalled => "stalled",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State of one iteration, measured before its step is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub dice: f64,
    /// Largest magnitude of the raw gradient; 0 when no step was taken.
    pub delta_linf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbResult {
    pub delta_total: Tensor,
    pub perturbed_image: Tensor,
    pub trace: Vec<TraceRecord>,
    pub terminated_by: Termination,
    pub final_dice: f64,
}

impl PerturbResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective,dice,delta_linf\n");
        for r in &self.trace {
            writeln!(out, "{},{},{},{}", r.iteration, r.objective, r.dice, r.delta_linf).unwrap();
        }
        out
    }
}

/// A differentiable map from an image to `[L, H, W]` logits.
pub trait Segmenter {
    fn num_classes(&self) -> usize;

    /// Records the logits of `image` on `g`, with parameters as constants.
    fn record_logits(&self, g: &mut Graph, image: Var) -> Result<Var>;

    fn predict_labels(&self, image: &Tensor) -> Result<LabelMap> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let y = self.record_logits(&mut g, x)?;
        LabelMap::argmax(g.value(y))
    }
}

impl Segmenter for SegModel {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn record_logits(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let bound = self.params.bind(g, false);
        self.config.forward(g, &bound, image)
    }
}

/// Dice between two label maps: the binary foreground Dice for two classes,
/// the mean over foreground classes present in either map otherwise.
pub fn agreement(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<f64> {
    if num_classes <= 2 {
        return Ok(Confusion::count(pred, gt, 1)?.dice());
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for c in 1..num_classes as u8 {
        let conf = Confusion::count(pred, gt, c)?;
        if conf.tp + conf.fp + conf.fn_ > 0 {
            total += conf.dice();
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { total / n as f64 })
}

/// +1 at the predicted label and -1 at the true label of every pixel where
/// they differ; zero elsewhere.
fn objective_weights(logits: &Tensor, pred: &LabelMap, gt: &LabelMap) -> Result<Tensor> {
    let (l, h, w) = logits.dims3()?;
    pred.expect_same_dims("objective_g", gt)?;
    if (h, w) != (gt.height(), gt.width()) {
        return Err(Error::contract(
            "objective_g",
            format!("logits are {h}x{w}, labels are {}x{}", gt.height(), gt.width()),
        ));
    }
    let max = pred.max_label().max(gt.max_label()) as usize;
    if max >= l {
        return Err(Error::contract(
            "objective_g",
            format!("label {max} out of range for {l} classes"),
        ));
    }
    let hw = h * w;
    let mut weights = vec![0.0; l * hw];
    for (p, (&s, &t)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if s != t {
            weights[s as usize * hw + p] = 1.0;
            weights[t as usize * hw + p] = -1.0;
        }
    }
    Ok(Tensor::from_parts(vec![l, h, w], weights))
}

/// Sum over pixels of `logit[pred] - logit[gt]`.
pub fn objective_g(logits: &Tensor, current_pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let w = objective_weights(logits, current_pred, gt)?;
    Ok(logits.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
}

/// Forward pass at `image`, plus the input gradient of the objective.
struct Probe {
    pred: LabelMap,
    objective: f64,
    gradient: Tensor,
}

fn probe<M: Segmenter + ?Sized>(model: &M, image: &Tensor, gt: &LabelMap, iteration: usize) -> Result<Probe> {
    let mut g = Graph::new();
    let x = g.leaf(image.clone());
    let logits = model.record_logits(&mut g, x)?;
    let value = g.value(logits);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: "segmentation logits".into(),
        });
    }
    let pred = LabelMap::argmax(value)?;
    let weights = objective_weights(value, &pred, gt)?;
    let objective = g.weighted_sum(logits, weights)?;
    let gradient = g
        .backward(objective)?
        .get(x)
        .cloned()
        .expect("image is a differentiable leaf");
    if !gradient.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: "objective gradient".into(),
        });
    }
    Ok(Probe {
        pred,
        objective: g.value(objective).data()[0],
        gradient,
    })
}

/// One normalised descent step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub image: Tensor,
    /// Gradient scaled to unit max-magnitude; all zeros when it vanished.
    pub delta_prime: Tensor,
    pub objective: f64,
    /// The gradient was zero, so the image is unchanged.
    pub converged: bool,
}

fn normalise(gradient: &Tensor) -> (Tensor, f64) {
    let linf = gradient.linf_norm();
    if linf == 0.0 {
        (Tensor::zeros(gradient.shape().to_vec()), 0.0)
    } else {
        (gradient.map(|v| v / linf), linf)
    }
}

pub fn perturbation_step<M: Segmenter + ?Sized>(model: &M, image_k: &Tensor, gt: &LabelMap, gamma: f64) -> Result<Step> {
    if !image_k.is_finite() {
        return Err(Error::contract("perturbation_step", "image has non-finite values"));
    }
    let p = probe(model, image_k, gt, 0)?;
    let (delta_prime, linf) = normalise(&p.gradient);
    let image = image_k.zip_map(&delta_prime, |x, d| x - gamma * d)?;
    Ok(Step {
        image,
        delta_prime,
        objective: p.objective,
        converged: linf == 0.0,
    })
}

/// Perturbs `image` until its segmentation agrees with `gt` or the step budget
/// runs out. The trace holds one record per evaluated iterate, so it never
/// exceeds `max_iters` entries.
pub fn compute_perturbation<M: Segmenter + ?Sized>(
    model: &M,
    image: &Tensor,
    gt: &LabelMap,
    cfg: &PerturbConfig,
) -> Result<PerturbResult> {
    cfg.validate()?;
    if !image.is_finite() {
        return Err(Error::contract("compute_perturbation", "image has non-finite values"));
    }
    let num_classes = model.num_classes();
    let mut delta_total = Tensor::zeros(image.shape().to_vec());
    let mut current = image.clone();
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut terminated_by = Termination::MaxIters;
    let mut final_dice = None;

    for k in 0..cfg.max_iters {
        let p = probe(model, &current, gt, k)?;
        let dice = agreement(&p.pred, gt, num_classes)?;
        let mut record = TraceRecord {
            iteration: k,
            objective: p.objective,
            dice,
            delta_linf: 0.0,
        };
        if dice >= cfg.dice_tolerance {
            trace.push(record);
            terminated_by = if k == 0 {
                Termination::AlreadyCorrect
            } else {
                Termination::Tolerance
            };
            final_dice = Some(dice);
            break;
        }
        let (delta_prime, linf) = normalise(&p.gradient);
        record.delta_linf = linf;
        trace.push(record);
        if linf == 0.0 {
            terminated_by = Termination::Stalled;
            final_dice = Some(dice);
            break;
        }
        delta_total = delta_total.zip_map(&delta_prime, |d, s| d - cfg.gamma * s)?;
        current = image.add(&delta_total)?;
    }

    let final_dice = match final_dice {
        Some(d) => d,
        None => agreement(&model.predict_labels(&current)?, gt, num_classes)?,
    };
    Ok(PerturbResult {
        delta_total,
        perturbed_image: current,
        trace,
        terminated_by,
        final_dice,
    })
}

/// Per-sample outcomes in input order.
#[derive(Debug, Default)]
pub struct BatchPerturbation {
    pub results: Vec<(String, PerturbResult)>,
    pub failures: Vec<(String, Error)>,
}

impl BatchPerturbation {
    /// `(I, I + delta)` pairs for the translator.
    pub fn pairs(&self, samples: &[Sample]) -> Vec<Pair> {
        self.results
            .iter()
            .filter_map(|(id, r)| {
                let s = samples.iter().find(|s| &s.id == id)?;
                Some(Pair {
                    id: id.clone(),
                    image: s.image.clone(),
                    target: r.perturbed_image.clone(),
                })
            })
            .collect()
    }

    pub fn mean_final_dice(&self) -> Option<f64> {
        if self.results.is_empty() {
            return None;
        }
        Some(self.results.iter().map(|(_, r)| r.final_dice).sum::<f64>() / self.results.len() as f64)
    }

    /// `id,iterations,terminated_by,initial_dice,final_dice,initial_objective,final_objective,delta_linf`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "id,iterations,terminated_by,initial_dice,final_dice,initial_objective,final_objective,delta_linf\n",
        );
        for (id, r) in &self.results {
            let first = r.trace.first();
            let last = r.trace.last();
            writeln!(
                out,
                "{id},{},{},{},{},{},{},{}",
                r.trace.len(),
                r.terminated_by,
                first.map_or(f64::NAN, |t| t.dice),
                r.final_dice,
                first.map_or(f64::NAN, |t| t.objective),
                last.map_or(f64::NAN, |t| t.objective),
                r.delta_total.linf_norm()
            )
            .unwrap();
        }
        out
    }
}

/// Perturbs every sample; a failing sample is recorded and the rest continue.
pub fn batch_perturb<M: Segmenter + ?Sized>(model: &M, samples: &[Sample], cfg: &PerturbConfig) -> Result<BatchPerturbation> {
    cfg.validate()?;
    let mut batch = BatchPerturbation::default();
    for s in samples {
        match compute_perturbation(model, &s.image, &s.mask, cfg) {
            Ok(r) => batch.results.push((s.id.clone(), r)),
            Err(e) => batch.failures.push((s.id.clone(), e)),
        }
    }
    Ok(batch)
}

/// Writes perturbed images, deltas and traces under `dirs`. Returns the written paths.
pub fn write_perturbations(dirs: &SplitDirs, batch: &BatchPerturbation) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (id, r) in &batch.results {
        let perturbed = dirs.perturbed().join(format!("{id}.gmt"));
        fsutil::write_atomic(&perturbed, &tensor_io::encode_tensor(&r.perturbed_image))?;
        let delta = dirs.deltas().join(format!("{id}.gmt"));
        fsutil::write_atomic(&delta, &tensor_io::encode_tensor(&r.delta_total))?;
        let trace = dirs.traces().join(format!("{id}.csv"));
        fsutil::write_atomic(&trace, r.trace_csv().as_bytes())?;
        written.extend([perturbed, delta, trace]);
    }
    Ok(written)
}
