use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation {other}"))),
        }
    }
}

/// Square stride-1 convolution layer with `kernel × kernel` taps.
///
/// `weight` is laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {kernel} must be odd")));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weight.len() != expected {
            return Err(Error::shape(format!("{expected} weights"), weight.len()));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!("{out_channels} biases"), bias.len()));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Multiply–accumulates per output location.
    pub fn macs_per_location(&self) -> u64 {
        (self.kernel * self.kernel * self.in_channels * self.out_channels) as u64
    }

    /// Evaluates every output channel at one location.
    ///
    /// `fetch(ic, dy, dx)` returns the input at the tap offset relative to the
    /// output location. Summation order is fixed: for each output channel,
    /// accumulate from zero over input channels, then kernel rows, then kernel
    /// columns, and add the bias last. Every caller (dense or gated) goes
    /// through this function, so results are bit-identical across paths.
    #[inline]
    pub fn eval_point<F: Fn(usize, isize, isize) -> f32>(&self, fetch: F, out: &mut [f32]) {
        let k = self.kernel;
        let r = (k / 2) as isize;
        let taps = k * k;
        for (oc, slot) in out.iter_mut().enumerate().take(self.out_channels) {
            let w_oc = &self.weight[oc * self.in_channels * taps..(oc + 1) * self.in_channels * taps];
            let mut acc = 0.0f32;
            for ic in 0..self.in_channels {
                let w_ic = &w_oc[ic * taps..(ic + 1) * taps];
                for ky in 0..k {
                    for kx in 0..k {
                        acc += w_ic[ky * k + kx] * fetch(ic, ky as isize - r, kx as isize - r);
                    }
                }
            }
            *slot = acc + self.bias[oc];
        }
    }

    /// Evaluates on a single input vector (1×1 kernels only).
    pub fn eval_vector(&self, input: &[f32], out: &mut [f32]) {
        debug_assert_eq!(self.kernel, 1);
        self.eval_point(|ic, _, _| input[ic], out);
    }
}

/// Stride-1 cross-correlation with zero padding `pad` on every side.
pub fn conv2d(input: &FeatureMap, layer: &Conv2d, pad: usize) -> Result<FeatureMap> {
    if input.channels != layer.in_channels {
        return Err(Error::shape(
            format!("{} input channels", layer.in_channels),
            input.channels,
        ));
    }
    let half = layer.kernel / 2;
    if pad > half {
        return Err(Error::invalid(format!(
            "padding {pad} larger than kernel half-width {half}"
        )));
    }
    let shrink = 2 * (half - pad);
    if input.height < shrink + 1 || input.width < shrink + 1 {
        return Err(Error::invalid("input smaller than the kernel footprint"));
    }
    let (oh, ow) = (input.height - shrink, input.width - shrink);
    let offset = (half - pad) as isize;
    let mut out = FeatureMap::zeros(layer.out_channels, oh, ow);
    let mut buf = vec![0.0f32; layer.out_channels];
    for row in 0..oh {
        for col in 0..ow {
            let (cr, cc) = (row as isize + offset, col as isize + offset);
            layer.eval_point(|ic, dy, dx| input.get_padded(ic, cr + dy, cc + dx), &mut buf);
            for (oc, v) in buf.iter().enumerate() {
                let idx = out.index(oc, row, col);
                out.data[idx] = *v;
            }
        }
    }
    Ok(out)
}

pub fn activate(map: &mut FeatureMap, act: Activation) {
    for v in map.data.iter_mut() {
        *v = act.apply(*v);
    }
}
