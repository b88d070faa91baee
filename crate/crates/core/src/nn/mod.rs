//! Small feed-forward networks: input standardization, affine layers with
//! PReLU activations, a softplus or linear scalar head, reverse-mode
//! gradients and an Adam optimizer.
//!
//! Parameters live in one flat vector (per layer: weights row-major
//! `out × in`, bias, then PReLU slopes for hidden layers), so optimizers and
//! gradient checks can treat a network as a single parameter tensor.

mod adam;

pub use adam::{Adam, AdamConfig};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{mean_std, sigmoid, softplus, Scalar};
use crate::text::KeyValues;

/// Hidden widths used when none are configured (three affine layers).
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 512];

/// Initial negative-side slope of every PReLU channel.
pub const PRELU_INIT: f64 = 0.25;

/// Lower bound on standardizer deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `ln(1 + e^z)`: strictly positive output.
    Softplus,
    Linear,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Softplus => "softplus",
            Head::Linear => "linear",
        })
    }
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Head::Softplus),
            "linear" => Ok(Head::Linear),
            _ => Err(Error::malformed("head", format!("unknown head {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: &[usize], head: Head) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("network layer widths must be positive"));
        }
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            head,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
    slopes: Option<usize>,
    end: usize,
}

fn layout(arch: &Architecture) -> Vec<LayerLayout> {
    let mut out = Vec::with_capacity(arch.hidden.len() + 1);
    let mut offset = 0;
    let mut fan_in = arch.input_dim;
    for l in 0..=arch.hidden.len() {
        let hidden = l < arch.hidden.len();
        let fan_out = if hidden { arch.hidden[l] } else { 1 };
        let weights = offset;
        let bias = weights + fan_out * fan_in;
        let slopes = hidden.then_some(bias + fan_out);
        let end = bias + fan_out + if hidden { fan_out } else { 0 };
        out.push(LayerLayout {
            fan_in,
            fan_out,
            weights,
            bias,
            slopes,
            end,
        });
        offset = end;
        fan_in = fan_out;
    }
    out
}

/// Read-only view of one affine layer and its activation.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a, T> {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in`.
    pub weights: &'a [T],
    pub bias: &'a [T],
    /// PReLU slopes; `None` for the output layer.
    pub slopes: Option<&'a [T]>,
}

/// Per-dimension affine input normalization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T = f64> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    pub fn from_parts(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::invalid("standardizer mean/std length mismatch"));
        }
        if std.iter().any(|&s| !(s >= T::lit(STD_FLOOR)) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("standardizer statistics must be finite with std >= 1e-8"));
        }
        Ok(Self { mean, std })
    }

    /// Population mean and standard deviation per dimension.
    pub fn fit(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot fit a standardizer on zero rows"))?;
        let mut mean = Vec::with_capacity(dim);
        let mut std = Vec::with_capacity(dim);
        let mut column = Vec::with_capacity(rows.len());
        for j in 0..dim {
            column.clear();
            for r in rows {
                if r.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: r.len(),
                        context: "standardizer rows".into(),
                    });
                }
                column.push(r[j]);
            }
            let (m, s) = mean_std(&column);
            mean.push(m);
            std.push(s.max(T::lit(STD_FLOOR)));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    out_pre: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f64> {
    arch: Architecture,
    layout: Vec<LayerLayout>,
    params: Vec<T>,
    standardizer: Standardizer<T>,
}

impl<T: Scalar> Network<T> {
    /// All weights, biases and slopes zero; identity standardizer.
    pub fn zeros(arch: Architecture) -> Self {
        let layout = layout(&arch);
        let n = layout.last().map_or(0, |l| l.end);
        Self {
            standardizer: Standardizer::identity(arch.input_dim),
            arch,
            layout,
            params: vec![T::zero(); n],
        }
    }

    /// Weights uniform in `±1/√fan_in`, zero biases, PReLU slopes 0.25.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(arch);
        for l in net.layout.clone() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut net.params[l.weights..l.bias] {
                *w = T::lit(rng.random_range(-bound..bound));
            }
            if let Some(s) = l.slopes {
                for a in &mut net.params[s..l.end] {
                    *a = T::lit(PRELU_INIT);
                }
            }
        }
        net
    }

    pub fn init_seeded(arch: Architecture, seed: u64) -> Self {
        Self::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layout.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Flat index ranges of each layer's `(weights, bias, slopes)` tensors.
    pub fn tensor_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layout.iter().enumerate() {
            out.push((format!("layer{i}.weights"), l.weights..l.bias));
            out.push((format!("layer{i}.bias"), l.bias..l.bias + l.fan_out));
            if let Some(s) = l.slopes {
                out.push((format!("layer{i}.prelu"), s..l.end));
            }
        }
        out
    }

    pub fn layer(&self, i: usize) -> LayerView<'_, T> {
        let l = &self.layout[i];
        LayerView {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            weights: &self.params[l.weights..l.bias],
            bias: &self.params[l.bias..l.bias + l.fan_out],
            slopes: l.slopes.map(|s| &self.params[s..l.end]),
        }
    }

    pub fn standardizer(&self) -> &Standardizer<T> {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer<T>) -> Result<()> {
        if s.dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                found: s.dim(),
                context: "standardizer".into(),
            });
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                found: x.len(),
                context: "network input".into(),
            });
        }
        Ok(())
    }

    /// Scalar output for `x` together with the trace needed by
    /// [`Network::backward`].
    pub fn forward(&self, x: &[T]) -> Result<(T, ForwardTrace<T>)> {
        self.check_input(x)?;
        let input = self.standardizer.apply(x);
        let hidden = self.layout.len() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut post: Vec<Vec<T>> = Vec::with_capacity(hidden);
        let mut out_pre = T::zero();
        for (i, l) in self.layout.iter().enumerate() {
            let a = if i == 0 { &input } else { &post[i - 1] };
            let w = &self.params[l.weights..l.bias];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            let z: Vec<T> = (0..l.fan_out)
                .map(|o| {
                    let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                    row.iter().zip(a).fold(b[o], |acc, (&wi, &ai)| acc + wi * ai)
                })
                .collect();
            match l.slopes {
                Some(s) => {
                    let slopes = &self.params[s..l.end];
                    let act = z
                        .iter()
                        .zip(slopes)
                        .map(|(&z, &k)| if z > T::zero() { z } else { k * z })
                        .collect();
                    pre.push(z);
                    post.push(act);
                }
                None => out_pre = z[0],
            }
        }
        let y = match self.arch.head {
            Head::Softplus => softplus(out_pre),
            Head::Linear => out_pre,
        };
        Ok((
            y,
            ForwardTrace {
                input,
                pre,
                post,
                out_pre,
            },
        ))
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Accumulates `upstream · ∂output/∂θ` into `grads` for every parameter.
    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: T, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape mismatch");
        let head_grad = match self.arch.head {
            Head::Softplus => sigmoid(trace.out_pre),
            Head::Linear => T::one(),
        };
        let mut dz = vec![upstream * head_grad];
        for i in (0..self.layout.len()).rev() {
            let l = &self.layout[i];
            let a_in = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            for o in 0..l.fan_out {
                let d = dz[o];
                let row = &mut grads[l.weights + o * l.fan_in..l.weights + (o + 1) * l.fan_in];
                for (g, &a) in row.iter_mut().zip(a_in) {
                    *g += d * a;
                }
                grads[l.bias + o] += d;
            }
            if i == 0 {
                break;
            }
            let w = &self.params[l.weights..l.bias];
            let mut da = vec![T::zero(); l.fan_in];
            for o in 0..l.fan_out {
                let d = dz[o];
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                for (acc, &wi) in da.iter_mut().zip(row) {
                    *acc += wi * d;
                }
            }
            let prev = &self.layout[i - 1];
            let s = prev.slopes.expect("hidden layers carry PReLU slopes");
            let z = &trace.pre[i - 1];
            dz = Vec::with_capacity(prev.fan_out);
            for j in 0..prev.fan_out {
                if z[j] > T::zero() {
                    dz.push(da[j]);
                } else {
                    grads[s + j] += da[j] * z[j];
                    dz.push(da[j] * self.params[s + j]);
                }
            }
        }
    }

    pub(crate) fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(format!("{prefix}input_dim"), self.arch.input_dim);
        kv.set(format!("{prefix}head"), self.arch.head);
        kv.set(format!("{prefix}layers"), self.layout.len());
        for (i, l) in self.layout.iter().enumerate() {
            let p = format!("{prefix}layer.{i}.");
            kv.set(format!("{p}shape"), format!("{}x{}", l.fan_out, l.fan_in));
            kv.set_hex_list(format!("{p}weights"), &self.params[l.weights..l.bias]);
            kv.set_hex_list(format!("{p}bias"), &self.params[l.bias..l.bias + l.fan_out]);
            if let Some(s) = l.slopes {
                kv.set_hex_list(format!("{p}prelu"), &self.params[s..l.end]);
            }
        }
        kv.set_hex_list(format!("{prefix}standardizer.mean"), self.standardizer.mean());
        kv.set_hex_list(format!("{prefix}standardizer.std"), self.standardizer.std());
    }

    pub(crate) fn read_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let input_dim: usize = kv.parse_value(&format!("{prefix}input_dim"))?;
        let head: Head = kv.parse_value(&format!("{prefix}head"))?;
        let n_layers: usize = kv.parse_value(&format!("{prefix}layers"))?;
        if n_layers == 0 {
            return Err(Error::malformed(format!("{prefix}layers"), "network needs at least one layer"));
        }
        let mut hidden = Vec::new();
        let mut fan_in = input_dim;
        for i in 0..n_layers {
            let key = format!("{prefix}layer.{i}.shape");
            let shape = kv.require(&key)?;
            let (o, n) = shape
                .split_once('x')
                .and_then(|(o, n)| Some((o.parse::<usize>().ok()?, n.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::malformed(&key, format!("bad shape {shape:?}")))?;
            if n != fan_in || (i + 1 == n_layers && o != 1) {
                return Err(Error::malformed(&key, format!("inconsistent shape {shape}")));
            }
            if i + 1 < n_layers {
                hidden.push(o);
            }
            fan_in = o;
        }
        let arch = Architecture::new(input_dim, &hidden, head)?;
        let mut net = Self::zeros(arch);
        for (i, l) in net.layout.clone().into_iter().enumerate() {
            let p = format!("{prefix}layer.{i}.");
            let w = kv.hex_list::<T>(&format!("{p}weights"), l.fan_out * l.fan_in)?;
            net.params[l.weights..l.bias].copy_from_slice(&w);
            let b = kv.hex_list::<T>(&format!("{p}bias"), l.fan_out)?;
            net.params[l.bias..l.bias + l.fan_out].copy_from_slice(&b);
            if let Some(s) = l.slopes {
                let a = kv.hex_list::<T>(&format!("{p}prelu"), l.fan_out)?;
                net.params[s..l.end].copy_from_slice(&a);
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::malformed(prefix, "non-finite network parameter"));
        }
        let mean = kv.hex_list(&format!("{prefix}standardizer.mean"), input_dim)?;
        let std = kv.hex_list(&format!("{prefix}standardizer.std"), input_dim)?;
        net.standardizer = Standardizer::from_parts(mean, std)?;
        Ok(net)
    }
}
