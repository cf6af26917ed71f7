#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use gradmorph::data::Split;
use gradmorph::graph::gradcheck::{check_coords, max_rel_err};
use gradmorph::graph::{Graph, Var};
use gradmorph::perturb::Segmenter;
use gradmorph::pipeline::{Command, Experiment, ExperimentConfig};
use gradmorph::{LabelMap, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COORDS: usize = 20;
pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

pub fn random_mask(h: usize, w: usize, classes: u8, rng: &mut ChaCha8Rng) -> LabelMap {
    LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..classes)).collect()).unwrap()
}

pub fn coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..COORDS).map(|_| rng.random_range(0..n)).collect()
}

/// Finite-difference check of `op` with respect to every input. The op output
/// is reduced to a scalar with fixed random weights. Returns the worst relative
/// error over `COORDS` random coordinates per input.
pub fn check_op<F>(inputs: &[Tensor], op: F, seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = op(&mut g, &vars).unwrap();
        g.value(y).shape().to_vec()
    };
    let weights = uniform(&out_shape, -1.0, 1.0, &mut r);
    let record = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let y = op(g, vars)?;
        g.weighted_sum(y, weights.clone())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = record(&mut g, &vars).unwrap();
    let grads = g.backward(root).unwrap();

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        let f = |xi: &Tensor| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| g.constant(if j == i { xi.clone() } else { t.clone() }))
                .collect();
            let root = record(&mut g, &vars)?;
            Ok(g.value(root).data()[0])
        };
        let idx = coords(x.numel(), &mut r);
        let checks = check_coords(f, x, analytic, &idx, FD_STEP).unwrap();
        worst = worst.max(max_rel_err(&checks));
    }
    worst
}

/// Two-class segmenter on `[1, H, W]` images: logits `(-w x, w x)` per pixel,
/// so a pixel is foreground exactly when `x > 0` (ties go to background).
pub struct ThresholdSegmenter {
    pub weight: f64,
}

impl Segmenter for ThresholdSegmenter {
    fn num_classes(&self) -> usize {
        2
    }

    fn record_logits(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let bg = g.scale(image, -self.weight);
        let fg = g.scale(image, self.weight);
        g.concat_channels(bg, fg)
    }
}

/// Config for pipeline runs small enough for the test suite.
pub fn tiny_config(seed: u64) -> Vec<String> {
    [
        format!("seed={seed}"),
        "data.count=10".into(),
        "data.image_size=16".into(),
        "segnet.base_channels=4".into(),
        "seg_training.epochs=2".into(),
        "seg_training.batch_size=4".into(),
        "translator.growth_channels=4".into(),
        "translator.layers_per_block=2".into(),
        "translator_training.epochs=2".into(),
        "translator_training.batch_size=4".into(),
        "perturb.max_iters=5".into(),
    ]
    .to_vec()
}

pub fn experiment(out: &Path, sets: &[String]) -> Experiment {
    Experiment::new(ExperimentConfig::from_toml_str("", sets).unwrap(), out).unwrap()
}

/// gen-data, train-seg, perturb on train, train-translator, then infer and
/// evaluate on test.
pub fn run_pipeline(out: &Path, sets: &[String]) -> Result<()> {
    let mut exp = experiment(out, sets);
    for (cmd, split) in [
        (Command::GenData, Split::Test),
        (Command::TrainSeg, Split::Test),
        (Command::Perturb, Split::Train),
        (Command::TrainTranslator, Split::Train),
        (Command::Infer, Split::Test),
        (Command::Evaluate, Split::Test),
    ] {
        exp.config.mode.split = split;
        exp.run(cmd)?;
    }
    Ok(())
}

/// `(method, metric) -> mean` from a summary CSV.
pub fn read_summary(path: &Path) -> BTreeMap<(String, String), f64> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            ((f[0].to_string(), f[1].to_string()), f[3].parse().unwrap())
        })
        .collect()
}

/// Column `name` of a CSV with a header row.
pub fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}
