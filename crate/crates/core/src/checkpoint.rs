//! Binary model checkpoints (`.ckpt`).
//!
//! ```text
//! magic "GMCK" | version u32 = 1 | kind u32 | n_config u32 | n_config x u64
//! n_params u32 | per parameter, in name order:
//!     name_len u32 | name (UTF-8) | rank u32 | rank x u64 dims | f64 values
//! ```
//!
//! Everything is little-endian; round trips are bit-exact. Kinds: 1 segmentation
//! network, 2 translator, 3 translator followed by segmentation network (the
//! serially trained baseline, parameters prefixed `trn.` and `seg.`).

use crate::binary::{put_f64s, put_shape, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::segnet::{build_segnet, SegModel, SegNetConfig};
use crate::serial::SerialModel;
use crate::tensor::Tensor;
use crate::translator::{build_translator, TranslatorConfig, TranslatorModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SegNet = 1,
    Translator = 2,
    Serial = 3,
}

impl ModelKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(ModelKind::SegNet),
            2 => Some(ModelKind::Translator),
            3 => Some(ModelKind::Serial),
            _ => None,
        }
    }
}

fn seg_fields(c: &SegNetConfig) -> [u64; 4] {
    [c.depth, c.base_channels, c.num_classes, c.input_channels].map(|v| v as u64)
}

fn seg_config(f: &[u64]) -> SegNetConfig {
    SegNetConfig {
        depth: f[0] as usize,
        base_channels: f[1] as usize,
        num_classes: f[2] as usize,
        input_channels: f[3] as usize,
    }
}

fn trn_fields(c: &TranslatorConfig) -> [u64; 4] {
    [c.blocks, c.growth_channels, c.layers_per_block, c.input_channels].map(|v| v as u64)
}

fn trn_config(f: &[u64]) -> TranslatorConfig {
    TranslatorConfig {
        blocks: f[0] as usize,
        growth_channels: f[1] as usize,
        layers_per_block: f[2] as usize,
        input_channels: f[3] as usize,
    }
}

fn encode(kind: ModelKind, config: &[u64], params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, kind as u32);
    put_u32(&mut out, config.len() as u32);
    for &f in config {
        put_u64(&mut out, f);
    }
    put_u32(&mut out, params.len() as u32);
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_shape(&mut out, t.shape());
        put_f64s(&mut out, t.data());
    }
    out
}

struct Raw {
    kind: ModelKind,
    config: Vec<u64>,
    params: Params,
}

fn decode(bytes: &[u8]) -> Result<Raw> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(at, format!("unsupported version {version}")));
    }
    let at = r.pos();
    let kind = r.u32("kind")?;
    let kind = ModelKind::from_u32(kind).ok_or_else(|| r.error(at, format!("unknown model kind {kind}")))?;
    let n_config = r.u32("config length")? as usize;
    let config = (0..n_config).map(|_| r.u64("config field")).collect::<Result<Vec<_>>>()?;
    let n_params = r.u32("parameter count")? as usize;
    let mut params = Params::new();
    for _ in 0..n_params {
        let len = r.u32("name length")? as usize;
        let at = r.pos();
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.error(at, "parameter name is not UTF-8"))?
            .to_string();
        let shape = r.shape()?;
        let at = r.pos();
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error(at, "element count overflows"))?;
        let values = r.f64s(n, "values")?;
        if params.get(&name).is_some() {
            return Err(r.error(at, format!("duplicate parameter `{name}`")));
        }
        params.insert(name, Tensor::new(shape, values)?);
    }
    r.finish()?;
    let expected = match kind {
        ModelKind::SegNet | ModelKind::Translator => 4,
        ModelKind::Serial => 8,
    };
    if config.len() != expected {
        return Err(r.error(12, format!("{kind:?} needs {expected} config fields, found {}", config.len())));
    }
    Ok(Raw { kind, config, params })
}

fn expect_kind(raw: &Raw, kind: ModelKind) -> Result<()> {
    if raw.kind != kind {
        return Err(Error::Parse {
            what: "checkpoint",
            offset: 8,
            detail: format!("holds a {:?} model, expected {kind:?}", raw.kind),
        });
    }
    if !raw.params.is_finite() {
        return Err(Error::Data {
            sample: "checkpoint".into(),
            detail: "parameters are not finite".into(),
        });
    }
    Ok(())
}

pub fn encode_segnet(model: &SegModel) -> Vec<u8> {
    encode(ModelKind::SegNet, &seg_fields(&model.config), &model.params)
}

pub fn decode_segnet(bytes: &[u8]) -> Result<SegModel> {
    let raw = decode(bytes)?;
    expect_kind(&raw, ModelKind::SegNet)?;
    let config = seg_config(&raw.config);
    raw.params.expect_layout(&build_segnet(config, 0)?.params)?;
    Ok(SegModel {
        config,
        params: raw.params,
    })
}

pub fn encode_translator(model: &TranslatorModel) -> Vec<u8> {
    encode(ModelKind::Translator, &trn_fields(&model.config), &model.params)
}

pub fn decode_translator(bytes: &[u8]) -> Result<TranslatorModel> {
    let raw = decode(bytes)?;
    expect_kind(&raw, ModelKind::Translator)?;
    let config = trn_config(&raw.config);
    raw.params.expect_layout(&build_translator(config, 0)?.params)?;
    Ok(TranslatorModel {
        config,
        params: raw.params,
    })
}

pub fn encode_serial(model: &SerialModel) -> Vec<u8> {
    let mut fields = trn_fields(&model.translator.config).to_vec();
    fields.extend(seg_fields(&model.segnet.config));
    let mut params = model.translator.params.prefixed("trn.");
    params.extend(model.segnet.params.prefixed("seg."));
    encode(ModelKind::Serial, &fields, &params)
}

pub fn decode_serial(bytes: &[u8]) -> Result<SerialModel> {
    let raw = decode(bytes)?;
    expect_kind(&raw, ModelKind::Serial)?;
    let tc = trn_config(&raw.config[..4]);
    let sc = seg_config(&raw.config[4..]);
    let translator = TranslatorModel {
        config: tc,
        params: raw.params.scoped("trn."),
    };
    let segnet = SegModel {
        config: sc,
        params: raw.params.scoped("seg."),
    };
    translator.params.expect_layout(&build_translator(tc, 0)?.params)?;
    segnet.params.expect_layout(&build_segnet(sc, 0)?.params)?;
    Ok(SerialModel { translator, segnet })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segnet_roundtrip_is_bit_exact() {
        let m = build_segnet(SegNetConfig::default(), 3).unwrap();
        let back = decode_segnet(&encode_segnet(&m)).unwrap();
        assert_eq!(back.config, m.config);
        assert!(back.params.bit_eq(&m.params));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let m = build_segnet(SegNetConfig::default(), 3).unwrap();
        let err = decode_translator(&encode_segnet(&m)).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 8, .. }), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let m = build_translator(TranslatorConfig::default(), 1).unwrap();
        let bytes = encode_translator(&m);
        let err = decode_translator(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn bad_magic_at_zero() {
        let err = decode_segnet(b"NOPE").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }
}
