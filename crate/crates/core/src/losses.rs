//! SSIM, L1 and the SSIM + L1 translation loss, all recorded on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationLossConfig {
    /// Weight of the L1 term.
    pub lambda: f64,
    /// Side of the uniform SSIM window.
    pub ssim_window: usize,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub dynamic_range: f64,
}

impl Default for TranslationLossConfig {
    fn default() -> Self {
        TranslationLossConfig {
            lambda: 1.0,
            ssim_window: 8,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl TranslationLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.ssim_window < 2 {
            return Err(Error::Config(format!("ssim_window {} is below 2", self.ssim_window)));
        }
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::Config(format!("dynamic_range {} must be positive", self.dynamic_range)));
        }
        if !(self.ssim_k1 > 0.0 && self.ssim_k2 > 0.0) {
            return Err(Error::Config("ssim_k1 and ssim_k2 must be positive".into()));
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        (self.ssim_k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.ssim_k2 * self.dynamic_range).powi(2)
    }
}

/// Mean SSIM over every stride-1 window position of every channel.
/// Window statistics use population (1/N) moments.
pub fn ssim_var(g: &mut Graph, a: Var, b: Var, cfg: &TranslationLossConfig) -> Result<Var> {
    cfg.validate()?;
    g.value(a).expect_same_shape("ssim", g.value(b))?;
    let win = cfg.ssim_window;
    let (_, h, w) = g.value(a).dims3()?;
    if h < win || w < win {
        return Err(Error::contract(
            "ssim",
            format!("{h}x{w} image is smaller than the {win}x{win} window"),
        ));
    }
    let mu_a = g.box_mean(a, win)?;
    let mu_b = g.box_mean(b, win)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.box_mean(aa, win)?;
    let e_bb = g.box_mean(bb, win)?;
    let e_ab = g.box_mean(ab, win)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let lum_num = g.scale(mu_ab, 2.0);
    let lum_num = g.add_scalar(lum_num, cfg.c1());
    let cs_num = g.scale(cov, 2.0);
    let cs_num = g.add_scalar(cs_num, cfg.c2());
    let num = g.mul(lum_num, cs_num)?;

    let lum_den = g.add(mu_aa, mu_bb)?;
    let lum_den = g.add_scalar(lum_den, cfg.c1());
    let cs_den = g.add(var_a, var_b)?;
    let cs_den = g.add_scalar(cs_den, cfg.c2());
    let den = g.mul(lum_den, cs_den)?;

    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

pub fn ssim(a: &Tensor, b: &Tensor, cfg: &TranslationLossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let s = ssim_var(&mut g, a, b, cfg)?;
    Ok(g.value(s).data()[0])
}

pub fn l1_mean_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

pub fn l1_mean(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape("l1_mean", b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64)
}

/// `(1 - ssim(output, target)) + lambda * l1_mean(output, target)`.
pub fn translation_loss_var(
    g: &mut Graph,
    output: Var,
    target: Var,
    cfg: &TranslationLossConfig,
) -> Result<Var> {
    let s = ssim_var(g, output, target, cfg)?;
    let dissim = g.scale(s, -1.0);
    let dissim = g.add_scalar(dissim, 1.0);
    if cfg.lambda == 0.0 {
        return Ok(dissim);
    }
    let l1 = l1_mean_var(g, output, target)?;
    let l1 = g.scale(l1, cfg.lambda);
    g.add(dissim, l1)
}

pub fn translation_loss(output: &Tensor, target: &Tensor, cfg: &TranslationLossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (o, t) = (g.constant(output.clone()), g.constant(target.clone()));
    let l = translation_loss_var(&mut g, o, t, cfg)?;
    Ok(g.value(l).data()[0])
}
