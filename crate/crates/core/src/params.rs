//! Named parameter collections shared by both networks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Parameters keyed by name. Iteration order is the sorted name order, which
/// fixes the on-disk layout and the optimizer's traversal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn bit_eq(&self, other: &Params) -> bool {
        self.map.len() == other.map.len()
            && self
                .map
                .iter()
                .zip(&other.map)
                .all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
    }

    /// Puts every parameter on `g`, as differentiable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.leaf(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Checks names and shapes against a reference layout (e.g. a freshly built model).
    pub fn expect_layout(&self, reference: &Params) -> Result<()> {
        for (name, t) in &reference.map {
            match self.map.get(name) {
                None => {
                    return Err(Error::contract(
                        "Params::expect_layout",
                        format!("missing parameter `{name}`"),
                    ))
                }
                Some(v) if v.shape() != t.shape() => {
                    return Err(Error::contract(
                        "Params::expect_layout",
                        format!("`{name}` has shape {:?}, expected {:?}", v.shape(), t.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.map.keys().find(|k| !reference.map.contains_key(*k)) {
            return Err(Error::contract(
                "Params::expect_layout",
                format!("unexpected parameter `{extra}`"),
            ));
        }
        Ok(())
    }

    /// Copy with every name prefixed.
    pub fn prefixed(&self, prefix: &str) -> Params {
        Params {
            map: self
                .map
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        }
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn scoped(&self, prefix: &str) -> Params {
        Params {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: Params) {
        self.map.extend(other.map);
    }

    pub(crate) fn get_mut_map(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.map
    }
}

/// Parameters as they appear on one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| {
            Error::contract("Bound::var", format!("no parameter named `{name}`"))
        })
    }

    /// Collects the gradient of every bound parameter, in name order.
    pub fn gradients(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads {
            map: self
                .vars
                .iter()
                .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.to_vec())))
                .collect(),
        }
    }

    /// The sub-binding under `prefix`, with the prefix removed from names.
    pub fn scoped(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v)))
                .collect(),
        }
    }
}

/// Flat gradients per parameter name.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    pub(crate) map: BTreeMap<String, Vec<f64>>,
}

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(Vec::as_slice)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<f64>) {
        self.map.insert(name.into(), grad);
    }

    /// `self += other`, adding missing entries.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (k, g) in &other.map {
            match self.map.get_mut(k) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// He-normal convolution weights (`std = sqrt(2 / fan_in)`) with zero bias.
pub(crate) fn init_conv<R: Rng>(
    params: &mut Params,
    rng: &mut R,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) {
    let fan_in = (cin * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let weight = Tensor::from_fn([cout, cin, k, k], |_| normal.sample(rng));
    params.insert(format!("{name}.weight"), weight);
    params.insert(format!("{name}.bias"), Tensor::zeros([cout]));
}

/// Records `conv -> (relu)` for the parameters stored under `name`.
pub(crate) fn conv_layer(
    g: &mut Graph,
    bound: &Bound,
    name: &str,
    input: Var,
    padding: crate::graph::Padding,
    relu: bool,
) -> Result<Var> {
    let w = bound.var(&format!("{name}.weight"))?;
    let b = bound.var(&format!("{name}.bias"))?;
    let y = g.conv2d(input, w, b, padding)?;
    Ok(if relu { g.relu(y) } else { y })
}
