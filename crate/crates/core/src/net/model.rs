//! Compact dense fully-convolutional segmentation network. Each scale has a
//! dense block; every scale is upsampled back to full resolution and fused
//! by a 1x1x1 classifier with logistic output.

use serde::{Deserialize, Serialize};

use super::loss::soft_dice;
use super::ops::{conv_backward, conv_forward, upsample, upsample_backward, ConvShape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub dense_block_layers: usize,
    pub scales: usize,
    pub growth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 1,
            base_channels: 8,
            dense_block_layers: 2,
            scales: 3,
            growth: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub shape: ConvShape,
    pub offset: usize,
}

/// Indices into the layer list.
struct Plan {
    stem: usize,
    down: Vec<Option<usize>>,
    layers: Vec<Vec<usize>>,
    fin: usize,
}

impl NetConfig {
    /// Two scales and two channels, for tests and smoke runs.
    pub fn tiny() -> Self {
        NetConfig {
            in_channels: 1,
            base_channels: 2,
            dense_block_layers: 2,
            scales: 2,
            growth: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.in_channels == 0 || self.base_channels == 0 || self.growth == 0 {
            return Err(Error::Config("scales and channel counts must be >= 1".into()));
        }
        if self.scales > 8 {
            return Err(Error::Config(format!("{} scales is more than supported", self.scales)));
        }
        if self.in_channels.max(self.base_channels).max(self.growth) > 4096 || self.dense_block_layers > 64 {
            return Err(Error::Config("channel counts above 4096 or more than 64 dense layers".into()));
        }
        Ok(())
    }

    /// Channels leaving each dense block.
    pub fn block_channels(&self) -> usize {
        self.base_channels + self.dense_block_layers * self.growth
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn layout(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, cin, cout, kernel, stride| {
            let shape = ConvShape { cin, cout, kernel, stride };
            out.push(LayerSpec { name, shape, offset });
            offset += shape.params();
        };
        push("stem".into(), self.in_channels, self.base_channels, 3, 1);
        for s in 0..self.scales {
            if s > 0 {
                push(format!("scale{s}.down"), self.block_channels(), self.base_channels, 3, 2);
            }
            for l in 0..self.dense_block_layers {
                push(format!("scale{s}.dense{l}"), self.base_channels + l * self.growth, self.growth, 3, 1);
            }
        }
        push("classifier".into(), self.scales * self.block_channels(), 1, 1, 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|l| l.shape.params()).sum()
    }

    fn plan(&self) -> Plan {
        let mut next = 1;
        let mut down = Vec::new();
        let mut layers = Vec::new();
        for s in 0..self.scales {
            if s > 0 {
                down.push(Some(next));
                next += 1;
            } else {
                down.push(None);
            }
            layers.push((next..next + self.dense_block_layers).collect());
            next += self.dense_block_layers;
        }
        Plan {
            stem: 0,
            down,
            layers,
            fin: next,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let d = self.divisor();
        if x.dims.iter().any(|&n| n == 0 || n % d != 0) {
            return Err(Error::ShapeMismatch(format!(
                "input dims {:?} must be positive multiples of {d}",
                x.dims
            )));
        }
        Ok(())
    }
}

/// Parameters are held as f32 (the checkpoint format) and widened to f64
/// for every computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetConfig,
    layout: Vec<LayerSpec>,
    params: Vec<f32>,
}

impl Network {
    /// He-scaled normal weights keyed by `(seed, index)`, zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in &net.layout {
            let fan_in = (layer.shape.kernel.pow(3) * layer.shape.cin) as f64;
            let std = (2.0 / fan_in).sqrt();
            for i in layer.offset..layer.offset + layer.shape.weights() {
                net.params[i] = (std * rng::normal(&[seed, stream::INIT, i as u64])) as f32;
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let n = layout.iter().map(|l| l.shape.params()).sum();
        Ok(Network {
            config,
            layout,
            params: vec![0.0; n],
        })
    }

    pub fn from_parts(config: NetConfig, params: Vec<f32>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        forward(&self.config, &self.params_f64(), x)
    }

    pub fn loss_and_gradient(&self, x: &Tensor, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        loss_and_gradient(&self.config, &self.params_f64(), x, target)
    }
}

struct ScaleCache {
    /// Input of the downsampling conv (previous block output) lives in the
    /// previous scale's `block`.
    h: Tensor,
    inputs: Vec<Tensor>,
    ys: Vec<Tensor>,
    block: Tensor,
}

struct Cache {
    scales: Vec<ScaleCache>,
    fused: Tensor,
    probs: Tensor,
}

fn run(cfg: &NetConfig, params: &[f64], x: &Tensor) -> Result<Cache> {
    cfg.check_input(x)?;
    let layout = cfg.layout();
    let total: usize = layout.iter().map(|l| l.shape.params()).sum();
    if params.len() != total {
        return Err(Error::ShapeMismatch(format!("{} parameters for a layout of {total}", params.len())));
    }
    let plan = cfg.plan();
    let p = |i: usize| (&layout[i].shape, &params[layout[i].offset..layout[i].offset + layout[i].shape.params()]);
    let conv_relu = |i: usize, input: &Tensor| {
        let (shape, w) = p(i);
        let mut y = conv_forward(shape, w, input);
        y.relu_in_place();
        y
    };
    let mut scales: Vec<ScaleCache> = Vec::with_capacity(cfg.scales);
    for s in 0..cfg.scales {
        let h = match plan.down[s] {
            None => conv_relu(plan.stem, x),
            Some(d) => conv_relu(d, &scales[s - 1].block),
        };
        let mut inputs = Vec::new();
        let mut ys: Vec<Tensor> = Vec::new();
        for &l in &plan.layers[s] {
            let parts: Vec<&Tensor> = std::iter::once(&h).chain(ys.iter()).collect();
            let input = Tensor::concat(&parts);
            ys.push(conv_relu(l, &input));
            inputs.push(input);
        }
        let parts: Vec<&Tensor> = std::iter::once(&h).chain(ys.iter()).collect();
        let block = Tensor::concat(&parts);
        scales.push(ScaleCache { h, inputs, ys, block });
    }
    let ups: Vec<Tensor> = scales.iter().map(|sc| upsample(&sc.block, x.dims)).collect();
    let fused = Tensor::concat(&ups.iter().collect::<Vec<_>>());
    let (shape, w) = p(plan.fin);
    let mut probs = conv_forward(shape, w, &fused);
    for v in &mut probs.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    Ok(Cache { scales, fused, probs })
}

/// Foreground probability map `[1, X, Y, Z]`.
pub fn forward(cfg: &NetConfig, params: &[f64], x: &Tensor) -> Result<Tensor> {
    Ok(run(cfg, params, x)?.probs)
}

/// Soft Dice loss of the forward pass against `target` and its gradient
/// with respect to every parameter.
pub fn loss_and_gradient(cfg: &NetConfig, params: &[f64], x: &Tensor, target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cache = run(cfg, params, x)?;
    let (loss, gp) = soft_dice(&cache.probs.data, target)?;
    let layout = cfg.layout();
    let plan = cfg.plan();
    let mut grad = vec![0.0; params.len()];
    let p = |i: usize| (&layout[i].shape, &params[layout[i].offset..layout[i].offset + layout[i].shape.params()]);
    let mut grad_of = |i: usize, input: &Tensor, gout: &Tensor, need: bool| {
        let (shape, w) = p(i);
        let g = &mut grad[layout[i].offset..layout[i].offset + shape.params()];
        conv_backward(shape, w, input, gout, g, need)
    };

    // logistic
    let gz: Vec<f64> = gp
        .iter()
        .zip(&cache.probs.data)
        .map(|(g, &pr)| g * pr * (1.0 - pr))
        .collect();
    let gz = Tensor::from_data(1, x.dims, gz)?;
    let gfused = grad_of(plan.fin, &cache.fused, &gz, true).unwrap();
    let cb = cfg.block_channels();
    let mut gblocks: Vec<Tensor> = gfused
        .split(&vec![cb; cfg.scales])
        .into_iter()
        .zip(&cache.scales)
        .map(|(g, sc)| upsample_backward(&g, sc.block.dims))
        .collect();

    for s in (0..cfg.scales).rev() {
        let sc = &cache.scales[s];
        let mut sizes = vec![cfg.base_channels];
        sizes.extend(std::iter::repeat_n(cfg.growth, cfg.dense_block_layers));
        let mut parts = gblocks[s].split(&sizes);
        for l in (0..cfg.dense_block_layers).rev() {
            let mut gy = parts[l + 1].clone();
            gy.relu_backward(&sc.ys[l]);
            let gin = grad_of(plan.layers[s][l], &sc.inputs[l], &gy, true).unwrap();
            let split = gin.split(&sizes[..l + 1]);
            for (dst, g) in parts.iter_mut().zip(split) {
                dst.add_assign(&g);
            }
        }
        let mut gh = parts.swap_remove(0);
        gh.relu_backward(&sc.h);
        match plan.down[s] {
            None => {
                grad_of(plan.stem, x, &gh, false);
            }
            Some(d) => {
                let gprev = grad_of(d, &cache.scales[s - 1].block, &gh, true).unwrap();
                gblocks[s - 1].add_assign(&gprev);
            }
        }
    }
    Ok((loss, grad))
}
