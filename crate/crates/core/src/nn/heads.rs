use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{activate, conv2d, Activation, Conv2d};
use super::tensor::FeatureMap;
use crate::dataio::container::{Tensor, TensorContainer};
use crate::error::{Error, Result};

/// Hidden width of every head; equals the distilled depth-feature width.
pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification,
    Offset2d,
    Size2d,
    Offset3d,
    Size3d,
    Depth,
    DepthUncertainty,
    MultiBin,
    So3,
}

impl HeadKind {
    /// Output channels; the classification head has one per class.
    pub fn out_channels(&self, num_classes: usize) -> usize {
        match self {
            HeadKind::Classification => num_classes,
            HeadKind::Offset2d | HeadKind::Size2d | HeadKind::Offset3d => 2,
            HeadKind::Size3d => 3,
            HeadKind::Depth | HeadKind::DepthUncertainty => 1,
            HeadKind::MultiBin => 24,
            HeadKind::So3 => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Classification => "cls",
            HeadKind::Offset2d => "offset2d",
            HeadKind::Size2d => "size2d",
            HeadKind::Offset3d => "offset3d",
            HeadKind::Size3d => "size3d",
            HeadKind::Depth => "depth",
            HeadKind::DepthUncertainty => "uncertainty",
            HeadKind::MultiBin => "multibin",
            HeadKind::So3 => "so3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    #[default]
    MultiBin,
    So3,
}

impl OrientationMode {
    pub fn head_kind(&self) -> HeadKind {
        match self {
            OrientationMode::MultiBin => HeadKind::MultiBin,
            OrientationMode::So3 => HeadKind::So3,
        }
    }
}

/// One 3×3 conv (C→64, pad 1) followed by two 1×1 convs (64→64, 64→out).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub conv3x3: Conv2d,
    pub conv1x1_a: Conv2d,
    pub conv1x1_b: Conv2d,
}

impl HeadParams {
    pub fn new(kind: HeadKind, conv3x3: Conv2d, conv1x1_a: Conv2d, conv1x1_b: Conv2d, num_classes: usize) -> Result<Self> {
        let out = kind.out_channels(num_classes);
        let ok = conv3x3.kernel == 3
            && conv3x3.out_channels == HIDDEN
            && conv1x1_a.kernel == 1
            && conv1x1_a.in_channels == HIDDEN
            && conv1x1_a.out_channels == HIDDEN
            && conv1x1_b.kernel == 1
            && conv1x1_b.in_channels == HIDDEN
            && conv1x1_b.out_channels == out;
        if !ok {
            return Err(Error::invalid(format!(
                "{} head layers do not form C→{HIDDEN}→{HIDDEN}→{out}",
                kind.name()
            )));
        }
        Ok(HeadParams {
            kind,
            conv3x3,
            conv1x1_a,
            conv1x1_b,
        })
    }

    pub fn zeros(kind: HeadKind, in_channels: usize, num_classes: usize) -> Self {
        HeadParams {
            kind,
            conv3x3: Conv2d::zeros(in_channels, HIDDEN, 3),
            conv1x1_a: Conv2d::zeros(HIDDEN, HIDDEN, 1),
            conv1x1_b: Conv2d::zeros(HIDDEN, kind.out_channels(num_classes), 1),
        }
    }

    pub fn random(kind: HeadKind, in_channels: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = |ic: usize, oc: usize, k: usize| {
            let bound = 1.0 / ((ic * k * k) as f32).sqrt();
            let weight = (0..oc * ic * k * k).map(|_| rng.random_range(-bound..bound)).collect();
            let bias = (0..oc).map(|_| rng.random_range(-bound..bound)).collect();
            Conv2d { in_channels: ic, out_channels: oc, kernel: k, weight, bias }
        };
        let conv3x3 = layer(in_channels, HIDDEN, 3);
        let conv1x1_a = layer(HIDDEN, HIDDEN, 1);
        let mut conv1x1_b = layer(HIDDEN, kind.out_channels(num_classes), 1);
        // output priors: rare positives, depths in a plausible range
        match kind {
            HeadKind::Classification => conv1x1_b.bias.iter_mut().for_each(|b| *b -= 2.0),
            HeadKind::Depth => conv1x1_b.bias[0] += 25.0,
            _ => {}
        }
        HeadParams { kind, conv3x3, conv1x1_a, conv1x1_b }
    }

    pub fn in_channels(&self) -> usize {
        self.conv3x3.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv1x1_b.out_channels
    }

    pub fn macs_per_location(&self) -> u64 {
        self.conv3x3.macs_per_location()
            + self.conv1x1_a.macs_per_location()
            + self.conv1x1_b.macs_per_location()
    }

    /// Evaluates the head at the center of a 3×3 neighborhood.
    ///
    /// `fetch(ic, dy, dx)` supplies the input around the location. Returns the
    /// 64-channel tapped activation (input to the last 1×1 conv) and the output.
    pub fn eval_point<F: Fn(usize, isize, isize) -> f32>(&self, fetch: F, act: Activation) -> (Vec<f32>, Vec<f32>) {
        let mut hidden = vec![0.0f32; HIDDEN];
        self.conv3x3.eval_point(fetch, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = act.apply(*v));
        let mut tap = vec![0.0f32; HIDDEN];
        self.conv1x1_a.eval_vector(&hidden, &mut tap);
        tap.iter_mut().for_each(|v| *v = act.apply(*v));
        let mut out = vec![0.0f32; self.out_channels()];
        self.conv1x1_b.eval_vector(&tap, &mut out);
        (tap, out)
    }
}

/// Dense head evaluation: conv3×3 → act → conv1×1 → act → conv1×1.
pub fn head_forward(features: &FeatureMap, params: &HeadParams, act: Activation) -> Result<FeatureMap> {
    Ok(head_forward_tapped(features, params, act)?.1)
}

/// Dense evaluation returning `(tapped 64-channel activation, output)`.
pub fn head_forward_tapped(
    features: &FeatureMap,
    params: &HeadParams,
    act: Activation,
) -> Result<(FeatureMap, FeatureMap)> {
    let mut hidden = conv2d(features, &params.conv3x3, 1)?;
    activate(&mut hidden, act);
    let mut tap = conv2d(&hidden, &params.conv1x1_a, 0)?;
    activate(&mut tap, act);
    let out = conv2d(&tap, &params.conv1x1_b, 0)?;
    Ok((tap, out))
}

/// All prediction heads of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorHeads {
    pub in_channels: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub orientation_mode: OrientationMode,
    pub cls: HeadParams,
    pub offset2d: HeadParams,
    pub size2d: HeadParams,
    pub offset3d: HeadParams,
    pub size3d: HeadParams,
    pub depth: HeadParams,
    pub uncertainty: HeadParams,
    pub orientation: HeadParams,
}

impl DetectorHeads {
    pub fn random(in_channels: usize, num_classes: usize, mode: OrientationMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |k: HeadKind| HeadParams::random(k, in_channels, num_classes, &mut rng);
        DetectorHeads {
            in_channels,
            num_classes,
            activation: Activation::Silu,
            orientation_mode: mode,
            cls: make(HeadKind::Classification),
            offset2d: make(HeadKind::Offset2d),
            size2d: make(HeadKind::Size2d),
            offset3d: make(HeadKind::Offset3d),
            size3d: make(HeadKind::Size3d),
            depth: make(HeadKind::Depth),
            uncertainty: make(HeadKind::DepthUncertainty),
            orientation: make(mode.head_kind()),
        }
    }

    /// The 2D/3D regression heads, in a fixed order.
    pub fn regression_heads(&self) -> [&HeadParams; 7] {
        [
            &self.offset2d,
            &self.size2d,
            &self.offset3d,
            &self.size3d,
            &self.depth,
            &self.uncertainty,
            &self.orientation,
        ]
    }

    fn all_heads(&self) -> [&HeadParams; 8] {
        let r = self.regression_heads();
        [&self.cls, r[0], r[1], r[2], r[3], r[4], r[5], r[6]]
    }

    pub fn validate(&self) -> Result<()> {
        for h in self.all_heads() {
            if h.in_channels() != self.in_channels {
                return Err(Error::invalid(format!(
                    "{} head expects {} input channels, detector has {}",
                    h.kind.name(),
                    h.in_channels(),
                    self.in_channels
                )));
            }
            HeadParams::new(h.kind, h.conv3x3.clone(), h.conv1x1_a.clone(), h.conv1x1_b.clone(), self.num_classes)?;
        }
        if self.orientation.kind != self.orientation_mode.head_kind() {
            return Err(Error::invalid("orientation head does not match orientation mode"));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.meta.insert("kind".into(), "detector_heads".into());
        c.meta.insert("in_channels".into(), self.in_channels.into());
        c.meta.insert("num_classes".into(), self.num_classes.into());
        c.meta.insert("activation".into(), self.activation.name().into());
        c.meta.insert(
            "orientation".into(),
            serde_json::to_value(self.orientation_mode)?,
        );
        for h in self.all_heads() {
            for (layer_name, layer) in [("conv3x3", &h.conv3x3), ("conv1x1_a", &h.conv1x1_a), ("conv1x1_b", &h.conv1x1_b)] {
                let prefix = format!("{}.{layer_name}", h.kind.name());
                c.push(Tensor::new(
                    format!("{prefix}.weight"),
                    vec![layer.out_channels, layer.in_channels, layer.kernel, layer.kernel],
                    layer.weight.clone(),
                )?)?;
                c.push(Tensor::new(format!("{prefix}.bias"), vec![layer.out_channels], layer.bias.clone())?)?;
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        if c.meta_str("kind")? != "detector_heads" {
            return Err(Error::Container("container does not hold detector heads".into()));
        }
        let in_channels = c.meta_usize("in_channels")?;
        let num_classes = c.meta_usize("num_classes")?;
        let activation = Activation::from_name(c.meta_str("activation")?)?;
        let mode: OrientationMode = serde_json::from_value(
            c.meta
                .get("orientation")
                .cloned()
                .ok_or_else(|| Error::Container("missing meta field orientation".into()))?,
        )
        .map_err(|e| Error::Container(format!("orientation: {e}")))?;
        let load = |kind: HeadKind| -> Result<HeadParams> {
            let layer = |name: &str, ic: usize, oc: usize, k: usize| -> Result<Conv2d> {
                let prefix = format!("{}.{name}", kind.name());
                let w = c.expect(&format!("{prefix}.weight"), &[oc, ic, k, k])?;
                let b = c.expect(&format!("{prefix}.bias"), &[oc])?;
                Conv2d::new(ic, oc, k, w.data.clone(), b.data.clone())
            };
            HeadParams::new(
                kind,
                layer("conv3x3", in_channels, HIDDEN, 3)?,
                layer("conv1x1_a", HIDDEN, HIDDEN, 1)?,
                layer("conv1x1_b", HIDDEN, kind.out_channels(num_classes), 1)?,
                num_classes,
            )
        };
        Ok(DetectorHeads {
            in_channels,
            num_classes,
            activation,
            orientation_mode: mode,
            cls: load(HeadKind::Classification)?,
            offset2d: load(HeadKind::Offset2d)?,
            size2d: load(HeadKind::Size2d)?,
            offset3d: load(HeadKind::Offset3d)?,
            size3d: load(HeadKind::Size3d)?,
            depth: load(HeadKind::Depth)?,
            uncertainty: load(HeadKind::DepthUncertainty)?,
            orientation: load(mode.head_kind())?,
        })
    }
}
