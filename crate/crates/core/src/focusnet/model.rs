use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Ablation, FocusNetConfig};
use crate::autograd::{ConvSpec, Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::supervision::DensityMap;

#[derive(Clone, Copy, Debug)]
enum Kind {
    Conv { k: usize, spec: ConvSpec },
    Deconv,
    Dense,
}

#[derive(Clone, Debug)]
struct Layer {
    name: &'static str,
    in_ch: usize,
    out_ch: usize,
    kind: Kind,
    affine: bool,
}

const DOWN: ConvSpec = ConvSpec::new(2, 1, 1);
const SAME: ConvSpec = ConvSpec::same(3, 1);
const DILATED: ConvSpec = ConvSpec::same(3, 2);
const POINTWISE: ConvSpec = ConvSpec::new(1, 0, 1);
const DECONV_KERNEL: usize = 4;

fn layers(cfg: &FocusNetConfig) -> Vec<Layer> {
    let c = cfg.base_channels;
    let conv = |name, in_ch, out_ch, k, spec, affine| Layer {
        name,
        in_ch,
        out_ch,
        kind: Kind::Conv { k, spec },
        affine,
    };
    let deconv = |name| Layer {
        name,
        in_ch: c,
        out_ch: c,
        kind: Kind::Deconv,
        affine: true,
    };
    let dense = |name, out_ch| Layer {
        name,
        in_ch: c,
        out_ch,
        kind: Kind::Dense,
        affine: false,
    };
    vec![
        conv("enc1", 1, c, 3, DOWN, true),
        conv("enc2", c, c, 3, DOWN, true),
        conv("enc3", c, c, 3, DOWN, true),
        conv("dil1", c, c, 3, DILATED, true),
        conv("dil2", c, c, 3, DILATED, true),
        conv("dist1", 2 * c, c, 3, SAME, true),
        conv("dist2", c, c, 3, SAME, true),
        deconv("up1"),
        conv("dec1a", c, c, 3, SAME, true),
        conv("dec1b", c, c, 3, SAME, true),
        deconv("up2"),
        conv("dec2a", c, c, 3, SAME, true),
        conv("dec2b", c, c, 3, SAME, true),
        deconv("up3"),
        conv("dec3a", c, c, 3, SAME, true),
        conv("dec3b", c, c, 3, SAME, true),
        conv("seg", c, 2, 1, POINTWISE, false),
        dense("cls", cfg.num_levels + 1),
        dense("focus", c),
        conv("out", c, 1, 1, POINTWISE, false),
    ]
}

fn weight_shape(layer: &Layer) -> Vec<usize> {
    match layer.kind {
        Kind::Conv { k, .. } => vec![layer.out_ch, layer.in_ch, k, k],
        Kind::Deconv => vec![layer.in_ch, layer.out_ch, DECONV_KERNEL, DECONV_KERNEL],
        Kind::Dense => vec![layer.in_ch, layer.out_ch],
    }
}

/// He-normal fan-in: inputs feeding one output value.
fn fan_in(layer: &Layer) -> usize {
    match layer.kind {
        Kind::Conv { k, .. } => layer.in_ch * k * k,
        // stride 2 with a 4x4 kernel: each output sees 2x2 taps per input channel
        Kind::Deconv => layer.in_ch * 4,
        Kind::Dense => layer.in_ch,
    }
}

/// Forward-pass handles on a graph.
pub(super) struct Forward {
    pub params: Vec<Var>,
    /// Density head output, in units of `density_scale`.
    pub scaled_density: Var,
    pub density: Var,
    pub seg_probs: Var,
    pub level_probs: Var,
    pub focus_seg: Option<Var>,
    pub focus_density: Option<Var>,
}

/// What multiplies the base features in the fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Fusion {
    /// Branches as selected by the ablation.
    Branches,
    /// Both focus tensors replaced by all-ones tensors.
    Ones,
}

pub(super) fn forward_graph<T: Scalar>(
    cfg: &FocusNetConfig,
    ablation: Ablation,
    params: &ParamStore<T>,
    image: &[f32],
    fusion: Fusion,
    g: &mut Graph<T>,
) -> Result<Forward> {
    let size = cfg.input_size;
    if image.len() != size * size {
        return Err(Error::shape(format!(
            "image with {} pixels for a {size}x{size} network",
            image.len()
        )));
    }
    let c = cfg.base_channels;
    let vars = params.bind(g);
    let p = |name: &str| -> Var {
        vars[params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    };
    let all = layers(cfg);
    let layer = |name: &str| all.iter().find(|l| l.name == name).expect("known layer");

    let block = |g: &mut Graph<T>, x: Var, name: &str| -> Result<Var> {
        let l = layer(name);
        let w = p(&format!("{name}.w"));
        let b = Some(p(&format!("{name}.b")));
        let y = match l.kind {
            Kind::Conv { spec, .. } => g.conv2d(x, w, b, spec)?,
            Kind::Deconv => g.conv_transpose2d(x, w, b, 2, 1)?,
            Kind::Dense => unreachable!("dense layers are applied directly"),
        };
        if !l.affine {
            return Ok(y);
        }
        let y = g.relu(y);
        let y = g.mul_axis(y, p(&format!("{name}.scale")), 1)?;
        g.add_axis(y, p(&format!("{name}.shift")), 1)
    };

    let input = g.constant(Tensor::new(
        &[1, 1, size, size],
        image.iter().map(|&v| T::of(v as f64)).collect(),
    )?);

    // encoder
    let e1 = block(g, input, "enc1")?;
    let e2 = block(g, e1, "enc2")?;
    let e3 = block(g, e2, "enc3")?;
    let d1 = block(g, e3, "dil1")?;
    let d2 = block(g, d1, "dil2")?;
    // distiller: fuse the deepest strided level with the last dilated level;
    // the intermediate dilated features are left out
    let skip = g.concat(&[e3, d2], 1)?;
    let mut x = block(g, skip, "dist1")?;
    x = block(g, x, "dist2")?;
    // decoder
    for stage in 1..=3 {
        x = block(g, x, ["up1", "up2", "up3"][stage - 1])?;
        x = block(g, x, ["dec1a", "dec2a", "dec3a"][stage - 1])?;
        x = block(g, x, ["dec1b", "dec2b", "dec3b"][stage - 1])?;
    }
    let base = x;

    // segmentation focus
    let seg_logits = block(g, base, "seg")?;
    let seg_probs = g.softmax(seg_logits, 1)?;
    let fg = g.slice(seg_probs, 1, 1, 1)?;
    let v_s = g.tile(fg, 1, c)?;

    // global-density focus
    let pooled = g.outer_product_pool(base)?;
    let pooled = g.l2_normalize(pooled)?;
    let feat = g.signed_sqrt(pooled);
    let cls = g.matmul(feat, p("cls.w"))?;
    let cls = g.add_axis(cls, p("cls.b"), 1)?;
    let level_probs = g.softmax(cls, 1)?;
    let focus = g.matmul(feat, p("focus.w"))?;
    let focus = g.add_axis(focus, p("focus.b"), 1)?;
    let focus = g.sigmoid(focus);
    let focus = g.reshape(focus, &[1, c, 1, 1])?;
    let focus = g.tile(focus, 2, size)?;
    let v_d = g.tile(focus, 3, size)?;

    let mut fused = base;
    match fusion {
        Fusion::Branches => {
            if ablation.uses_seg() {
                fused = g.mul(fused, v_s)?;
            }
            if ablation.uses_density() {
                fused = g.mul(fused, v_d)?;
            }
        }
        Fusion::Ones => {
            let ones = g.constant(Tensor::full(&[1, c, size, size], T::one()));
            fused = g.mul(fused, ones)?;
            fused = g.mul(fused, ones)?;
        }
    }
    let scaled_density = block(g, fused, "out")?;
    let density = g.scale(scaled_density, T::one() / T::of(cfg.density_scale));

    Ok(Forward {
        params: vars,
        scaled_density,
        density,
        seg_probs,
        level_probs,
        focus_seg: (fusion == Fusion::Branches && ablation.uses_seg()).then_some(v_s),
        focus_density: (fusion == Fusion::Branches && ablation.uses_density()).then_some(v_d),
    })
}

/// Channel-major `2 x H x W` probabilities to pixel-major `H x W x 2`.
pub(super) fn to_pixel_major(channel_major: &[f64]) -> Vec<f64> {
    let n = channel_major.len() / 2;
    let mut out = vec![0.0; channel_major.len()];
    for i in 0..n {
        out[2 * i] = channel_major[i];
        out[2 * i + 1] = channel_major[n + i];
    }
    out
}

pub(super) fn to_channel_major(pixel_major: &[f64]) -> Vec<f64> {
    let n = pixel_major.len() / 2;
    let mut out = vec![0.0; pixel_major.len()];
    for i in 0..n {
        out[i] = pixel_major[2 * i];
        out[n + i] = pixel_major[2 * i + 1];
    }
    out
}

/// Everything the network computes for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusNetOutput {
    /// Predicted density map at input resolution.
    pub density: DensityMap,
    /// `H x W x 2` pixel-major background / foreground probabilities.
    pub seg_probs: Vec<f64>,
    /// Probabilities over the `M + 1` density levels.
    pub level_probs: Vec<f64>,
    /// `C x H x W` segmentation focus; all ones when the branch is off.
    pub focus_seg: Vec<f64>,
    /// `C x H x W` global-density focus; all ones when the branch is off.
    pub focus_density: Vec<f64>,
}

/// A focus network with `f32` parameters.
#[derive(Clone, Debug)]
pub struct FocusNet {
    config: FocusNetConfig,
    ablation: Ablation,
    params: ParamStore<f32>,
}

impl FocusNet {
    /// Builds the network with seeded He-normal weights, zero biases and
    /// identity affines. The initialization depends on the config seed only,
    /// so every ablation arm starts from the same weights.
    pub fn new(config: FocusNetConfig, ablation: Ablation) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for l in layers(&config) {
            let shape = weight_shape(&l);
            let std = (2.0 / fan_in(&l) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            let w = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            params.insert(format!("{}.w", l.name), Tensor::new(&shape, w)?)?;
            params.insert(format!("{}.b", l.name), Tensor::zeros(&[l.out_ch]))?;
            if l.affine {
                params.insert(format!("{}.scale", l.name), Tensor::full(&[l.out_ch], 1.0))?;
                params.insert(format!("{}.shift", l.name), Tensor::zeros(&[l.out_ch]))?;
            }
        }
        Ok(FocusNet {
            config,
            ablation,
            params,
        })
    }

    /// Wraps existing parameters, e.g. from a checkpoint. Names and shapes
    /// must match what [`FocusNet::new`] builds for `config`.
    pub fn from_params(config: FocusNetConfig, ablation: Ablation, params: ParamStore<f32>) -> Result<Self> {
        let template = FocusNet::new(config.clone(), ablation)?;
        let same_layout = template.params.len() == params.len()
            && template
                .params
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !same_layout {
            return Err(Error::shape("parameters do not match the network layout"));
        }
        Ok(FocusNet {
            config,
            ablation,
            params,
        })
    }

    pub fn config(&self) -> &FocusNetConfig {
        &self.config
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn forward(&self, image: &[f32]) -> Result<FocusNetOutput> {
        self.run(image, Fusion::Branches)
    }

    /// Forward pass with both focus tensors replaced by ones.
    pub fn forward_without_focus(&self, image: &[f32]) -> Result<FocusNetOutput> {
        self.run(image, Fusion::Ones)
    }

    fn run(&self, image: &[f32], fusion: Fusion) -> Result<FocusNetOutput> {
        let mut g = Graph::new();
        let f = forward_graph(&self.config, self.ablation, &self.params, image, fusion, &mut g)?;
        let size = self.config.input_size;
        let plane = self.config.base_channels * size * size;
        let read = |v: Option<Var>| match v {
            Some(v) => g.value(v).to_f64_vec(),
            None => vec![1.0; plane],
        };
        Ok(FocusNetOutput {
            density: DensityMap::from_values(size, size, g.value(f.density).to_f64_vec())?,
            seg_probs: to_pixel_major(&g.value(f.seg_probs).to_f64_vec()),
            level_probs: g.value(f.level_probs).to_f64_vec(),
            focus_seg: read(f.focus_seg),
            focus_density: read(f.focus_density),
        })
    }

    pub fn predict_density(&self, image: &[f32]) -> Result<DensityMap> {
        Ok(self.forward(image)?.density)
    }

    /// Raw sum of the predicted density map.
    pub fn predict_count(&self, image: &[f32]) -> Result<f64> {
        Ok(self.predict_density(image)?.sum())
    }
}
