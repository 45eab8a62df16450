//! Layered models with an explicit encoder/decoder split.
//!
//! A network is a list of blocks followed by a fully-connected output head.
//! Boundary `0` is the raw input and boundary `k` the representation after
//! block `k`, so for any boundary `l` the model factors as
//! `forward(x) == forward_from(l, forward_to(l, x))`.
//!
//! Architectures are written as whitespace-separated tokens:
//!
//! ```text
//! in:2 fc:128 relu fc:128 relu fc:2
//! in:1x16x16 conv:8:3:1:1:2 conv:16:3:1:1:2 flatten fc:64 relu fc:7
//! ```
//!
//! `conv:F:K:S:P:Q` is a convolution block with `F` filters of size `K×K`,
//! stride `S`, zero padding `P`, a rectifier, and `Q×Q` max pooling (`Q = 1`
//! disables pooling). Each `fc` or `conv` token opens a new block;
//! activations join the block before them and `flatten` joins the block
//! after it.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{conv_output_size, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"MIXSEMI1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    FullyConnected {
        units: usize,
    },
    ConvBlock {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: usize,
    },
    Activation(Activation),
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::FullyConnected { units } => write!(f, "fc:{units}"),
            LayerSpec::ConvBlock {
                filters,
                kernel,
                stride,
                padding,
                pool,
            } => write!(f, "conv:{filters}:{kernel}:{stride}:{padding}:{pool}"),
            LayerSpec::Activation(Activation::Relu) => f.write_str("relu"),
            LayerSpec::Activation(Activation::Sigmoid) => f.write_str("sigmoid"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

/// Input shape (per example) plus the layer list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

fn positive(tok: &str, v: &str) -> Result<usize> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Format(format!("bad number {v:?} in layer token {tok:?}"))),
    }
}

impl Architecture {
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let first = tokens
            .next()
            .ok_or_else(|| Error::Format("empty architecture".into()))?;
        let dims = first
            .strip_prefix("in:")
            .ok_or_else(|| Error::Format(format!("architecture must start with in:<shape>, got {first:?}")))?;
        let input = dims
            .split('x')
            .map(|d| positive(first, d))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::new();
        for tok in tokens {
            let layer = match tok {
                "relu" => LayerSpec::Activation(Activation::Relu),
                "sigmoid" => LayerSpec::Activation(Activation::Sigmoid),
                "flatten" => LayerSpec::Flatten,
                _ => {
                    if let Some(u) = tok.strip_prefix("fc:") {
                        LayerSpec::FullyConnected {
                            units: positive(tok, u)?,
                        }
                    } else if let Some(rest) = tok.strip_prefix("conv:") {
                        let parts: Vec<&str> = rest.split(':').collect();
                        if parts.len() != 5 {
                            return Err(Error::Format(format!(
                                "conv block needs conv:F:K:S:P:Q, got {tok:?}"
                            )));
                        }
                        let padding = parts[3]
                            .parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad padding in {tok:?}")))?;
                        LayerSpec::ConvBlock {
                            filters: positive(tok, parts[0])?,
                            kernel: positive(tok, parts[1])?,
                            stride: positive(tok, parts[2])?,
                            padding,
                            pool: positive(tok, parts[4])?,
                        }
                    } else {
                        return Err(Error::Format(format!("unknown layer token {tok:?}")));
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Architecture { input, layers })
    }

    /// Plain MLP `inputs → hidden… → outputs` with rectifiers.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::FullyConnected { units: h });
            layers.push(LayerSpec::Activation(Activation::Relu));
        }
        layers.push(LayerSpec::FullyConnected { units: outputs });
        Architecture {
            input: vec![inputs],
            layers,
        }
    }

    /// Default for 2-D point data.
    pub fn two_moons_default() -> Self {
        Architecture::mlp(2, &[128, 128, 128], 2)
    }

    /// Default for single-channel `side×side` images.
    pub fn image_default(side: usize, classes: usize) -> Self {
        let conv = |filters| LayerSpec::ConvBlock {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: 2,
        };
        Architecture {
            input: vec![1, side, side],
            layers: vec![
                conv(8),
                conv(16),
                conv(32),
                LayerSpec::Flatten,
                LayerSpec::FullyConnected { units: 64 },
                LayerSpec::Activation(Activation::Relu),
                LayerSpec::FullyConnected { units: classes },
            ],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.input.iter().map(usize::to_string).collect();
        write!(f, "in:{}", dims.join("x"))?;
        for l in &self.layers {
            write!(f, " {l}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    spec: LayerSpec,
    /// (weight, bias) indices in the parameter store.
    params: Option<(usize, usize)>,
}

/// A built network: architecture, parameters and block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredNetwork {
    arch: Architecture,
    layers: Vec<Layer>,
    /// Layer index ranges, one per block; the last entry is the output head.
    blocks: Vec<std::ops::Range<usize>>,
    /// Per-example shape at each boundary, plus the logits shape last.
    shapes: Vec<Vec<usize>>,
    params: ParamStore,
}

fn layer_output_shape(spec: &LayerSpec, input: &[usize], boundary: usize) -> Result<Vec<usize>> {
    let build_err = |reason: String| Error::Build { boundary, reason };
    match spec {
        LayerSpec::FullyConnected { units } => {
            if input.len() != 1 {
                return Err(build_err(format!(
                    "fc:{units} needs a flat input, got shape {input:?} (add flatten)"
                )));
            }
            Ok(vec![*units])
        }
        LayerSpec::ConvBlock {
            filters,
            kernel,
            stride,
            padding,
            pool,
        } => {
            if input.len() != 3 {
                return Err(build_err(format!("conv block needs c×h×w input, got {input:?}")));
            }
            let oh = conv_output_size(input[1], *kernel, *stride, *padding);
            let ow = conv_output_size(input[2], *kernel, *stride, *padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) if oh >= *pool && ow >= *pool => Ok(vec![*filters, oh / pool, ow / pool]),
                _ => Err(build_err(format!("{spec} does not fit input {input:?}"))),
            }
        }
        LayerSpec::Activation(_) => Ok(input.to_vec()),
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
    }
}

impl LayeredNetwork {
    /// Build with parameters drawn uniformly from `±1/√fan_in`.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut net = LayeredNetwork::layout(arch)?;
        let mut rng = rng::seeded(seed);
        for i in 0..net.params.len() {
            let fan_in = net.fan_in(i);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in net.params.get_mut(i).data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Validate the architecture and allocate zeroed parameters.
    fn layout(arch: &Architecture) -> Result<Self> {
        if arch.input.is_empty() || arch.input.contains(&0) {
            return Err(Error::Build {
                boundary: 0,
                reason: format!("invalid input shape {:?}", arch.input),
            });
        }
        // group layers into blocks
        let mut blocks: Vec<std::ops::Range<usize>> = Vec::new();
        let mut pending_start: Option<usize> = None;
        for (i, spec) in arch.layers.iter().enumerate() {
            match spec {
                LayerSpec::FullyConnected { .. } | LayerSpec::ConvBlock { .. } => {
                    let start = pending_start.take().unwrap_or(i);
                    blocks.push(start..i + 1);
                }
                LayerSpec::Flatten => {
                    pending_start.get_or_insert(i);
                }
                LayerSpec::Activation(_) => {
                    if pending_start.is_some() {
                        return Err(Error::Build {
                            boundary: blocks.len(),
                            reason: "activation directly after flatten".into(),
                        });
                    }
                    match blocks.last_mut() {
                        Some(b) => b.end = i + 1,
                        None => {
                            return Err(Error::Build {
                                boundary: 0,
                                reason: "activation before any layer".into(),
                            })
                        }
                    }
                }
            }
        }
        let head_ok = matches!(
            (pending_start, blocks.last()),
            (None, Some(b)) if b.len() == 1 && matches!(arch.layers[b.start], LayerSpec::FullyConnected { .. })
        );
        if !head_ok {
            return Err(Error::Build {
                boundary: blocks.len().saturating_sub(1),
                reason: "network must end with a bare fully-connected output layer".into(),
            });
        }

        let mut shapes = vec![arch.input.clone()];
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut shape = arch.input.clone();
        for (b, range) in blocks.iter().enumerate() {
            for i in range.clone() {
                let spec = &arch.layers[i];
                let next = layer_output_shape(spec, &shape, b)?;
                let p = match spec {
                    LayerSpec::FullyConnected { units } => {
                        let w = params.add(format!("layer{i}.weight"), Tensor::zeros(&[shape[0], *units]));
                        let bias = params.add(format!("layer{i}.bias"), Tensor::zeros(&[*units]));
                        Some((w, bias))
                    }
                    LayerSpec::ConvBlock { filters, kernel, .. } => {
                        let w = params.add(
                            format!("layer{i}.weight"),
                            Tensor::zeros(&[*filters, shape[0], *kernel, *kernel]),
                        );
                        let bias = params.add(format!("layer{i}.bias"), Tensor::zeros(&[*filters]));
                        Some((w, bias))
                    }
                    _ => None,
                };
                layers.push(Layer {
                    spec: spec.clone(),
                    params: p,
                });
                shape = next;
            }
            shapes.push(shape.clone());
        }
        Ok(LayeredNetwork {
            arch: arch.clone(),
            layers,
            blocks,
            shapes,
            params,
        })
    }

    fn fan_in(&self, param: usize) -> usize {
        let (w, _) = self
            .layers
            .iter()
            .filter_map(|l| l.params)
            .find(|&(w, b)| w == param || b == param)
            .expect("every parameter belongs to a layer");
        let s = self.params.get(w).shape();
        match s.len() {
            2 => s[0],
            _ => s[1..].iter().product(),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_values()
    }

    /// Number of blocks before the output head; valid boundaries are
    /// `0..=num_boundaries()`.
    pub fn num_boundaries(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Per-example shape of the representation at boundary `l`.
    pub fn boundary_shape(&self, l: usize) -> Result<&[usize]> {
        self.check_boundary(l)?;
        Ok(&self.shapes[l])
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn num_outputs(&self) -> usize {
        self.shapes.last().expect("logits shape")[0]
    }

    /// Parameter-store indices owned by block `b` (the head is the last block).
    pub fn block_params(&self, b: usize) -> Vec<usize> {
        self.blocks
            .get(b)
            .map(|r| {
                self.layers[r.clone()]
                    .iter()
                    .filter_map(|l| l.params)
                    .flat_map(|(w, bias)| [w, bias])
                    .collect()
            })
            .unwrap_or_default()
    }

    fn check_boundary(&self, l: usize) -> Result<()> {
        if l > self.num_boundaries() {
            return Err(Error::LayerIndex {
                index: l,
                max: self.num_boundaries(),
            });
        }
        Ok(())
    }

    fn check_input(&self, tape: &Tape, x: Var, l: usize) -> Result<()> {
        let t = tape.value(x);
        if &t.shape()[1..] != self.shapes[l].as_slice() {
            let mut want = vec![t.rows()];
            want.extend_from_slice(&self.shapes[l]);
            return Err(Error::Dimension {
                op: "network boundary",
                lhs: want,
                rhs: t.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn run_blocks(&self, tape: &mut Tape, mut h: Var, blocks: std::ops::Range<usize>) -> Result<Var> {
        for b in blocks {
            for layer in &self.layers[self.blocks[b].clone()] {
                h = self.apply(tape, layer, h)?;
            }
        }
        Ok(h)
    }

    fn apply(&self, tape: &mut Tape, layer: &Layer, h: Var) -> Result<Var> {
        match &layer.spec {
            LayerSpec::FullyConnected { .. } => {
                let (w, b) = layer.params.expect("fc layer has params");
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                let z = tape.matmul(h, w)?;
                tape.add_row_bias(z, b)
            }
            LayerSpec::ConvBlock {
                stride,
                padding,
                pool,
                ..
            } => {
                let (w, b) = layer.params.expect("conv layer has params");
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                let z = tape.conv2d(h, w, *stride, *padding)?;
                let z = tape.add_channel_bias(z, b)?;
                let a = tape.relu(z);
                if *pool > 1 {
                    tape.max_pool(a, *pool)
                } else {
                    Ok(a)
                }
            }
            LayerSpec::Activation(Activation::Relu) => Ok(tape.relu(h)),
            LayerSpec::Activation(Activation::Sigmoid) => Ok(tape.sigmoid(h)),
            LayerSpec::Flatten => tape.flatten(h),
        }
    }

    /// Encoder: representation of `x` after block `l` (`l = 0` is `x` itself).
    pub fn forward_to(&self, tape: &mut Tape, l: usize, x: Var) -> Result<Var> {
        self.check_boundary(l)?;
        self.check_input(tape, x, 0)?;
        self.run_blocks(tape, x, 0..l)
    }

    /// Decoder: logits from a representation at boundary `l`.
    pub fn forward_from(&self, tape: &mut Tape, l: usize, h: Var) -> Result<Var> {
        self.check_boundary(l)?;
        self.check_input(tape, h, l)?;
        self.run_blocks(tape, h, l..self.blocks.len())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward_from(tape, 0, x)
    }

    /// Logits for a batch, without keeping the tape. Large batches are
    /// processed in chunks; rows are independent so the result is the same.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let n = x.rows();
        let mut parts = Vec::new();
        for start in (0..n).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
            let chunk = if n <= CHUNK { x.clone() } else { x.select_rows(&idx)? };
            let mut tape = Tape::new();
            let v = tape.constant(chunk);
            let out = self.forward(&mut tape, v)?;
            parts.push(tape.value(out).clone());
        }
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let values = self.params.flatten();
        let mut buf = Vec::with_capacity(32 + 8 * values.len());
        buf.extend_from_slice(MAGIC);
        buf.push(b'\n');
        writeln!(buf, "{}", self.arch).expect("writing to a Vec cannot fail");
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        LayeredNetwork::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or(Error::BadMagic)?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing architecture line".into()))?;
        let arch_text = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("architecture line is not UTF-8".into()))?;
        let arch = Architecture::parse(arch_text)?;
        let mut net = LayeredNetwork::layout(&arch)?;
        let payload = &rest[nl + 1..];
        if payload.len() < 8 {
            return Err(Error::Truncated {
                expected: 8,
                found: payload.len(),
            });
        }
        let count = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes")) as usize;
        let expected = net.param_count();
        if count != expected {
            return Err(Error::ParamCount { expected, found: count });
        }
        let body = &payload[8..];
        if body.len() < 8 * count {
            return Err(Error::Truncated {
                expected: 8 * count,
                found: body.len(),
            });
        }
        if body.len() > 8 * count {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameters",
                body.len() - 8 * count
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        net.params.assign_flat(&values)?;
        Ok(net)
    }
}
