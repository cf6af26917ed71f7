//! Experiment commands over an output directory.
//!
//! ```text
//! <out>/data/{train,test}/{images,masks}          gen-data
//! <out>/data/<split>/{perturbed,deltas,traces}    perturb
//! <out>/models/{segnet,translator,serial}.ckpt    train-seg, train-translator, end2end-baseline
//! <out>/predictions/<split>/<method>/<id>.pgm     infer (orig, gpts, oracle), end2end-baseline (end2end)
//! <out>/predictions/<split>/translated/<id>.gmt   infer
//! <out>/reports/*.csv                             every command
//! <out>/configs/<command>.toml                    resolved config of the last run
//! <out>/manifest                                  run log plus sha256 of every file
//! ```
//!
//! Each command validates its config and inputs first, writes into a staging
//! directory, then moves finished outputs into place.

pub mod config;
mod manifest;

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{
    decode_segnet, decode_translator, encode_segnet, encode_serial, encode_translator,
};
use crate::data::{self, netpbm, tensor_io, Pair, Sample, Split, SplitDirs};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::label::LabelMap;
use crate::losses::ssim;
use crate::metrics::{MetricsReport, Summary};
use crate::optim::AdadeltaState;
use crate::perturb::{batch_perturb, write_perturbations};
use crate::segnet::{build_segnet, train_segmentation, SegModel};
use crate::serial::{build_serial, train_serial};
use crate::translator::{build_translator, reconstruction_fidelity, train_translator, TranslatorModel};

pub use config::ExperimentConfig;
pub use manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainSeg,
    Perturb,
    TrainTranslator,
    Infer,
    Evaluate,
    End2endBaseline,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::GenData,
        Command::TrainSeg,
        Command::Perturb,
        Command::TrainTranslator,
        Command::Infer,
        Command::Evaluate,
        Command::End2endBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainSeg => "train-seg",
            Command::Perturb => "perturb",
            Command::TrainTranslator => "train-translator",
            Command::Infer => "infer",
            Command::Evaluate => "evaluate",
            Command::End2endBaseline => "end2end-baseline",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Prediction sets written by `infer` and `end2end-baseline`, with their report names.
pub const METHODS: [(&str, &str); 4] = [
    ("orig", "ORIG"),
    ("gpts", "GP_Ts"),
    ("oracle", "ORACLE_GP"),
    ("end2end", "END2END"),
];

/// What a command produced, plus human-readable summary lines.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Output directory being assembled by one command.
struct Stage {
    root: PathBuf,
    out: PathBuf,
    owned: Vec<PathBuf>,
}

impl Stage {
    fn new(out: &Path, command: Command) -> Result<Self> {
        let root = out.join(format!(".staging-{command}"));
        if root.exists() {
            std::fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        }
        fsutil::create_dir_all(&root)?;
        Ok(Stage {
            root,
            out: out.to_path_buf(),
            owned: Vec::new(),
        })
    }

    /// Staged location for `rel`, which replaces `<out>/rel` wholesale on commit.
    fn own(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let rel = rel.as_ref().to_path_buf();
        let p = self.root.join(&rel);
        self.owned.push(rel);
        p
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let p = self.own(rel);
        fsutil::write_atomic(&p, bytes)
    }

    fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for rel in &self.owned {
            let src = self.root.join(rel);
            let dest = self.out.join(rel);
            if src.is_dir() {
                fsutil::replace_dir(&src, &dest)?;
            } else if src.exists() {
                if let Some(parent) = dest.parent() {
                    fsutil::create_dir_all(parent)?;
                }
                std::fs::rename(&src, &dest).map_err(|e| Error::io(&dest, e))?;
            } else {
                continue;
            }
            written.push(dest);
        }
        std::fs::remove_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        Ok(written)
    }
}

/// Stage identifiers for [`ExperimentConfig::stage_seed`].
mod seeds {
    pub const SEG_INIT: u64 = 1;
    pub const SEG_TRAIN: u64 = 2;
    pub const TRN_INIT: u64 = 3;
    pub const TRN_TRAIN: u64 = 4;
    pub const SERIAL_TRN_INIT: u64 = 5;
    pub const SERIAL_SEG_INIT: u64 = 6;
    pub const SERIAL_TRAIN: u64 = 7;
}

/// A configured experiment rooted at an output directory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing; {hint}")),
        ))
    }
}

fn loss_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).unwrap();
    }
    out
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Experiment {
            config,
            out: out.into(),
        })
    }

    /// Root holding the input images and masks.
    pub fn data_root(&self) -> PathBuf {
        self.config
            .paths
            .data
            .clone()
            .unwrap_or_else(|| self.out.join("data"))
    }

    fn input_dirs(&self, split: Split) -> SplitDirs {
        SplitDirs::new(&self.data_root(), split)
    }

    fn output_dirs(&self, split: Split) -> SplitDirs {
        SplitDirs::new(&self.out.join("data"), split)
    }

    pub fn segnet_path(&self) -> PathBuf {
        self.out.join("models/segnet.ckpt")
    }

    pub fn translator_path(&self) -> PathBuf {
        self.out.join("models/translator.ckpt")
    }

    pub fn predictions_dir(&self, split: Split, method: &str) -> PathBuf {
        self.out.join("predictions").join(split.as_str()).join(method)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }

    fn num_classes(&self) -> usize {
        self.config.segnet.num_classes
    }

    pub fn load_samples(&self, split: Split) -> Result<Vec<Sample>> {
        let dirs = self.input_dirs(split);
        require(&dirs.images(), "run gen-data or set paths.data")?;
        require(&dirs.masks(), "run gen-data or set paths.data")?;
        data::read_split(&dirs, self.num_classes())
    }

    pub fn load_segnet(&self) -> Result<SegModel> {
        let p = self.segnet_path();
        require(&p, "run train-seg")?;
        decode_segnet(&fsutil::read(&p)?)
    }

    pub fn load_translator(&self) -> Result<TranslatorModel> {
        let p = self.translator_path();
        require(&p, "run train-translator")?;
        decode_translator(&fsutil::read(&p)?)
    }

    /// Training pairs `(I, I + delta)` of a split.
    pub fn load_pairs(&self, split: Split) -> Result<Vec<Pair>> {
        let perturbed = self.output_dirs(split).perturbed();
        require(&perturbed, &format!("run perturb with mode.split={split}"))?;
        let mut pairs = Vec::new();
        for s in self.load_samples(split)? {
            let p = perturbed.join(format!("{}.gmt", s.id));
            if !p.exists() {
                continue;
            }
            let target = tensor_io::decode_tensor(&fsutil::read(&p)?)?;
            pairs.push(Pair {
                id: s.id,
                image: s.image,
                target,
            });
        }
        if pairs.is_empty() {
            return Err(Error::Data {
                sample: perturbed.display().to_string(),
                detail: "no perturbed images match the dataset".into(),
            });
        }
        Ok(pairs)
    }

    /// Runs `command`, then records the resolved config and refreshes the manifest.
    pub fn run(&self, command: Command) -> Result<Outcome> {
        self.config.validate()?;
        fsutil::create_dir_all(&self.out)?;
        let mut outcome = match command {
            Command::GenData => self.gen_data()?,
            Command::TrainSeg => self.train_seg()?,
            Command::Perturb => self.perturb(self.config.mode.split)?,
            Command::TrainTranslator => self.train_translator()?,
            Command::Infer => self.infer(self.config.mode.split)?,
            Command::Evaluate => self.evaluate(self.config.mode.split)?,
            Command::End2endBaseline => self.end2end_baseline()?,
        };
        let resolved = self.config.to_toml();
        let cfg_path = self.out.join("configs").join(format!("{command}.toml"));
        fsutil::write_atomic(&cfg_path, resolved.as_bytes())?;
        outcome.written.push(cfg_path);
        Manifest::update(&self.out, command, self.config.seed, &fsutil::sha256_hex(resolved.as_bytes()))?;
        Ok(outcome)
    }

    fn gen_data(&self) -> Result<Outcome> {
        let ds = data::generate_synthetic(&self.config.data)?;
        let mut stage = Stage::new(&self.out, Command::GenData)?;
        let root = stage.own("data");
        let l = self.num_classes();
        data::write_samples(&SplitDirs::new(&root, Split::Train), &ds.train, l)?;
        data::write_samples(&SplitDirs::new(&root, Split::Test), &ds.test, l)?;
        let mean_fg = |s: &[Sample]| s.iter().map(|x| x.mask.fraction(1)).sum::<f64>() / s.len().max(1) as f64;
        let lines = vec![format!(
            "generated {} train and {} test samples ({}x{}), mean foreground {:.3}",
            ds.train.len(),
            ds.test.len(),
            self.config.data.image_size,
            self.config.data.image_size,
            mean_fg(&ds.train)
        )];
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }

    fn train_seg(&self) -> Result<Outcome> {
        let samples = self.load_samples(Split::Train)?;
        let cfg = &self.config;
        let mut model = build_segnet(cfg.segnet, cfg.stage_seed(seeds::SEG_INIT))?;
        let mut opt = AdadeltaState::new(cfg.optimizer);
        let curve = train_segmentation(
            &mut model,
            &samples,
            cfg.seg_training,
            &mut opt,
            cfg.stage_seed(seeds::SEG_TRAIN),
        )?;
        let mut stage = Stage::new(&self.out, Command::TrainSeg)?;
        stage.write("models/segnet.ckpt", &encode_segnet(&model))?;
        stage.write("reports/seg_loss.csv", loss_csv(&curve).as_bytes())?;
        let lines = vec![format!(
            "trained segnet ({} parameters) on {} samples for {} epochs; final loss {}",
            model.params.count(),
            samples.len(),
            curve.len(),
            curve.last().map_or("n/a".into(), |l| format!("{l:.4}"))
        )];
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }

    fn perturb(&self, split: Split) -> Result<Outcome> {
        let model = self.load_segnet()?;
        let samples = self.load_samples(split)?;
        let batch = batch_perturb(&model, &samples, &self.config.perturb)?;
        let mut stage = Stage::new(&self.out, Command::Perturb)?;
        let rel = Path::new("data").join(split.as_str());
        for sub in ["perturbed", "deltas", "traces"] {
            let p = stage.own(rel.join(sub));
            fsutil::create_dir_all(&p)?;
        }
        write_perturbations(&SplitDirs { root: stage.root.join(&rel) }, &batch)?;
        stage.write(format!("reports/perturb_{split}.csv"), batch.summary_csv().as_bytes())?;
        let mut lines = vec![format!(
            "perturbed {} {split} samples; mean final Dice {}",
            batch.results.len(),
            batch.mean_final_dice().map_or("n/a".into(), |d| format!("{d:.4}"))
        )];
        let written = stage.commit()?;
        if !batch.failures.is_empty() {
            for (id, e) in &batch.failures {
                lines.push(format!("failed {id}: {e}"));
            }
            return Err(Error::Data {
                sample: batch
                    .failures
                    .iter()
                    .map(|(id, _)| id.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
                detail: format!("{} samples failed to perturb: {}", batch.failures.len(), lines[1..].join("; ")),
            });
        }
        Ok(Outcome { written, lines })
    }

    fn train_translator(&self) -> Result<Outcome> {
        let pairs = self.load_pairs(Split::Train)?;
        let cfg = &self.config;
        let mut model = build_translator(cfg.translator, cfg.stage_seed(seeds::TRN_INIT))?;
        let mut opt = AdadeltaState::new(cfg.optimizer);
        let curve = train_translator(
            &mut model,
            &pairs,
            &cfg.loss,
            cfg.translator_training,
            &mut opt,
            cfg.stage_seed(seeds::TRN_TRAIN),
        )?;
        let fidelity = reconstruction_fidelity(&model, &pairs, &cfg.loss)?;
        let mut stage = Stage::new(&self.out, Command::TrainTranslator)?;
        stage.write("models/translator.ckpt", &encode_translator(&model))?;
        stage.write("reports/translator_loss.csv", loss_csv(&curve).as_bytes())?;
        stage.write("reports/reconstruction_train.csv", fidelity.samples_csv().as_bytes())?;
        let s = fidelity.summary("ssim").expect("non-empty pairs");
        let lines = vec![format!(
            "trained translator ({} parameters) on {} pairs; final loss {}; train SSIM {:.4} +- {:.4}",
            model.params.count(),
            pairs.len(),
            curve.last().map_or("n/a".into(), |l| format!("{l:.4}")),
            s.mean,
            s.std_err
        )];
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }

    fn infer(&self, split: Split) -> Result<Outcome> {
        let segnet = self.load_segnet()?;
        let translator = self.load_translator()?;
        let samples = self.load_samples(split)?;
        let perturbed_dir = self.output_dirs(split).perturbed();
        let l = self.num_classes();
        let mut stage = Stage::new(&self.out, Command::Infer)?;
        let base = Path::new("predictions").join(split.as_str());
        let dir = |stage: &mut Stage, m: &str| stage.own(base.join(m));
        let (orig, gpts, translated) = (dir(&mut stage, "orig"), dir(&mut stage, "gpts"), dir(&mut stage, "translated"));
        let oracle = perturbed_dir.is_dir().then(|| dir(&mut stage, "oracle"));
        let mut n_oracle = 0;
        for s in &samples {
            let name = format!("{}.pgm", s.id);
            fsutil::write_atomic(&orig.join(&name), &netpbm::write_label_map(&segnet.predict(&s.image)?, l))?;
            let t = translator.translate(&s.image)?;
            fsutil::write_atomic(&gpts.join(&name), &netpbm::write_label_map(&segnet.predict(&t)?, l))?;
            fsutil::write_atomic(&translated.join(format!("{}.gmt", s.id)), &tensor_io::encode_tensor(&t))?;
            if let Some(oracle) = &oracle {
                let p = perturbed_dir.join(format!("{}.gmt", s.id));
                if p.exists() {
                    let img = tensor_io::decode_tensor(&fsutil::read(&p)?)?;
                    fsutil::write_atomic(&oracle.join(&name), &netpbm::write_label_map(&segnet.predict(&img)?, l))?;
                    n_oracle += 1;
                }
            }
        }
        let mut lines = vec![format!("segmented {} {split} samples (orig, gpts)", samples.len())];
        if n_oracle > 0 {
            lines.push(format!("segmented {n_oracle} perturbed {split} samples (oracle)"));
        }
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }

    fn read_predictions(&self, split: Split, method: &str, gts: &[Sample]) -> Result<Vec<LabelMap>> {
        let dir = self.predictions_dir(split, method);
        gts.iter()
            .map(|s| netpbm::read_label_map(&fsutil::read(&dir.join(format!("{}.pgm", s.id)))?, self.num_classes()))
            .collect()
    }

    /// Metrics for every prediction set on disk; never runs a model.
    fn evaluate(&self, split: Split) -> Result<Outcome> {
        let gts = self.load_samples(split)?;
        require(&self.predictions_dir(split, "orig"), &format!("run infer with mode.split={split}"))?;
        let ids: Vec<String> = gts.iter().map(|s| s.id.clone()).collect();
        let masks: Vec<LabelMap> = gts.iter().map(|s| s.mask.clone()).collect();
        let mut stage = Stage::new(&self.out, Command::Evaluate)?;
        let mut summary = String::from("method,metric,n,mean,std_err\n");
        let mut lines = Vec::new();
        for (dir, name) in METHODS {
            if !self.predictions_dir(split, dir).is_dir() {
                continue;
            }
            let preds = self.read_predictions(split, dir, &gts)?;
            let report = MetricsReport::segmentation(ids.clone(), &preds, &masks)?;
            stage.write(format!("reports/metrics_{split}_{dir}.csv"), report.samples_csv().as_bytes())?;
            stage.write(format!("reports/kde_{split}_{dir}.csv"), report.kde_csv(name).as_bytes())?;
            summary.push_str(report.summary_csv(name).lines().skip(1).map(|l| format!("{l}\n")).collect::<String>().as_str());
            let d = report.summary("dice").expect("non-empty");
            let fnr = report.summary("fnr").expect("non-empty");
            let fpr = report.summary("fpr").expect("non-empty");
            lines.push(format!(
                "{name:>9}: Dice {:.4} +- {:.4}  FPR {:.4} +- {:.4}  FNR {:.4} +- {:.4}",
                d.mean, d.std_err, fpr.mean, fpr.std_err, fnr.mean, fnr.std_err
            ));
        }
        stage.write(format!("reports/summary_{split}.csv"), summary.as_bytes())?;

        let translated = self.predictions_dir(split, "translated");
        let perturbed = self.output_dirs(split).perturbed();
        if translated.is_dir() && perturbed.is_dir() {
            let mut rows = Vec::new();
            for id in &ids {
                let (t, p) = (translated.join(format!("{id}.gmt")), perturbed.join(format!("{id}.gmt")));
                if t.exists() && p.exists() {
                    let t = tensor_io::decode_tensor(&fsutil::read(&t)?)?;
                    let p = tensor_io::decode_tensor(&fsutil::read(&p)?)?;
                    rows.push((id.clone(), ssim(&t, &p, &self.config.loss)?));
                }
            }
            if !rows.is_empty() {
                let (rids, vals): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
                let mut r = MetricsReport::new(rids);
                r.push_column("ssim", vals)?;
                let s = r.summary("ssim").expect("non-empty");
                lines.push(format!("translated vs perturbed SSIM {:.4} +- {:.4}", s.mean, s.std_err));
                stage.write(format!("reports/reconstruction_{split}.csv"), r.samples_csv().as_bytes())?;
            }
        }
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }

    /// Compares the perturbation-supervised pipeline with a translator and
    /// segmentation network trained jointly on the segmentation loss. Missing
    /// stages of the first arm are run here.
    fn end2end_baseline(&self) -> Result<Outcome> {
        let split = Split::Test;
        let train = self.load_samples(Split::Train)?;
        let test = self.load_samples(split)?;
        let mut lines = Vec::new();
        if !self.segnet_path().exists() {
            lines.extend(self.train_seg()?.lines);
        }
        if !self.output_dirs(Split::Train).perturbed().is_dir() {
            lines.extend(self.perturb(Split::Train)?.lines);
        }
        if !self.translator_path().exists() {
            lines.extend(self.train_translator()?.lines);
        }
        if !self.predictions_dir(split, "gpts").is_dir() {
            lines.extend(self.infer(split)?.lines);
        }
        let gpts_preds = self.read_predictions(split, "gpts", &test)?;

        let cfg = &self.config;
        let mut model = build_serial(
            cfg.translator,
            cfg.segnet,
            cfg.stage_seed(seeds::SERIAL_TRN_INIT),
            cfg.stage_seed(seeds::SERIAL_SEG_INIT),
        )?;
        let mut opt = AdadeltaState::new(cfg.optimizer);
        let curve = train_serial(&mut model, &train, cfg.seg_training, &mut opt, cfg.stage_seed(seeds::SERIAL_TRAIN))?;

        let mut stage = Stage::new(&self.out, Command::End2endBaseline)?;
        let pred_dir = stage.own(Path::new("predictions").join(split.as_str()).join("end2end"));
        fsutil::create_dir_all(&pred_dir)?;
        let mut serial_preds = Vec::with_capacity(test.len());
        for s in &test {
            let p = model.predict(&s.image)?;
            fsutil::write_atomic(&pred_dir.join(format!("{}.pgm", s.id)), &netpbm::write_label_map(&p, self.num_classes()))?;
            serial_preds.push(p);
        }
        let ids: Vec<String> = test.iter().map(|s| s.id.clone()).collect();
        let masks: Vec<LabelMap> = test.iter().map(|s| s.mask.clone()).collect();
        let gpts = MetricsReport::segmentation(ids.clone(), &gpts_preds, &masks)?;
        let serial = MetricsReport::segmentation(ids.clone(), &serial_preds, &masks)?;

        let mut per_sample = String::from("id,gpts_dice,end2end_dice\n");
        let (gd, sd) = (gpts.column("dice").expect("dice"), serial.column("dice").expect("dice"));
        for (i, id) in ids.iter().enumerate() {
            writeln!(per_sample, "{id},{},{}", gd[i], sd[i]).unwrap();
        }
        let budget = self.load_segnet()?.params.count() + self.load_translator()?.params.count();
        let mut summary = String::from("method,n,dice_mean,dice_std_err,parameters\n");
        for (name, r, params) in [("GP_Ts", &gpts, budget), ("END2END", &serial, model.param_count())] {
            let s: Summary = r.summary("dice").expect("non-empty");
            writeln!(summary, "{name},{},{},{},{params}", s.n, s.mean, s.std_err).unwrap();
            lines.push(format!("{name:>8}: Dice {:.4} +- {:.4} ({params} parameters)", s.mean, s.std_err));
        }
        stage.write("models/serial.ckpt", &encode_serial(&model))?;
        stage.write("reports/end2end_loss.csv", loss_csv(&curve).as_bytes())?;
        stage.write("reports/end2end_comparison.csv", per_sample.as_bytes())?;
        stage.write("reports/end2end_summary.csv", summary.as_bytes())?;
        Ok(Outcome {
            written: stage.commit()?,
            lines,
        })
    }
}
