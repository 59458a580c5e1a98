//! Browser bindings for the counting toolkit.
//!
//! Three operations back the demo page: generating a synthetic scene,
//! turning its annotations into a density map and segmentation mask with a
//! chosen kernel, and comparing the kernel estimators against the box
//! reference. Each has a plain Rust form that returns `Result<_, String>`
//! and is tested natively; the exported wrappers only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ffcount::geometry::{parse_dataset, sigma_error, sigma_from_boxes, KernelChoice, PointSet};
use ffcount::supervision::{rasterize_density, rasterize_segmentation};
use ffcount::synth::{generate, SceneSpec};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn first_image(annotations: &str) -> Result<PointSet, String> {
    let anns = parse_dataset(annotations).map_err(err)?;
    anns.first()
        .ok_or_else(|| "annotation file holds no images".to_string())?
        .to_point_set()
        .map_err(err)
}

/// `fixed:SIGMA`, `gak`, `nonuniform` or `boxes` with the default
/// neighbor settings.
pub fn parse_kernel(name: &str) -> Result<KernelChoice, String> {
    match name {
        "gak" => Ok(KernelChoice::gak()),
        "nonuniform" => Ok(KernelChoice::nonuniform()),
        "boxes" => Ok(KernelChoice::Boxes),
        other => other
            .strip_prefix("fixed:")
            .and_then(|v| v.parse().ok())
            .filter(|s: &f64| *s > 0.0 && s.is_finite())
            .map(|sigma| KernelChoice::Fixed { sigma })
            .ok_or_else(|| format!("unknown kernel {other:?}")),
    }
}

/// A generated scene: grayscale pixels plus its annotation file.
#[derive(Debug)]
pub struct SceneOut {
    pub size: usize,
    pub pixels: Vec<u8>,
    pub annotations: String,
}

pub fn scene(spec: &str, index: u32) -> Result<SceneOut, String> {
    let spec: SceneSpec = spec.parse().map_err(err)?;
    let s = generate(&spec, index as u64).map_err(err)?;
    let ann = s.to_annotation(format!("scene_{index}"));
    Ok(SceneOut {
        size: s.size,
        pixels: s.image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        annotations: serde_json::to_string(&[ann]).map_err(err)?,
    })
}

/// Density and segmentation of the first image in an annotation file.
#[derive(Debug)]
pub struct SupervisionOut {
    pub width: usize,
    pub height: usize,
    pub count: f64,
    pub density: Vec<f32>,
    pub mask: Vec<u8>,
    pub sigmas: Vec<f64>,
}

pub fn supervision(annotations: &str, kernel: &str) -> Result<SupervisionOut, String> {
    let ps = first_image(annotations)?;
    let sigmas = parse_kernel(kernel)?.assign(&ps).map_err(err)?;
    let density = rasterize_density(&ps, &sigmas).map_err(err)?;
    let mask = rasterize_segmentation(&ps, &sigmas).map_err(err)?;
    Ok(SupervisionOut {
        width: ps.width(),
        height: ps.height(),
        count: density.sum(),
        density: density.values().iter().map(|&v| v as f32).collect(),
        mask: mask.values().to_vec(),
        sigmas: sigmas.sigmas().to_vec(),
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct EstimatorRow {
    pub kernel: String,
    pub mean_sigma: f64,
    /// Mean absolute difference to the box-derived sigma.
    pub error: f64,
}

/// Mean sigma and error against the box reference for each estimator.
pub fn compare(annotations: &str) -> Result<Vec<EstimatorRow>, String> {
    let ps = first_image(annotations)?;
    let reference = sigma_from_boxes(&ps).map_err(err)?;
    let mut rows = Vec::new();
    for name in ["gak", "nonuniform", "fixed:5", "boxes"] {
        let s = parse_kernel(name)?.assign(&ps).map_err(err)?;
        let n = s.len().max(1) as f64;
        rows.push(EstimatorRow {
            kernel: name.to_string(),
            mean_sigma: s.sigmas().iter().sum::<f64>() / n,
            error: sigma_error(&s, &reference).map_err(err)?,
        });
    }
    Ok(rows)
}

/// Maps values in `[0, max]` onto a dark-to-yellow ramp, RGBA.
pub fn heatmap(values: &[f32]) -> Vec<u8> {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    let inv = if max > 0.0 { 1.0 / max } else { 0.0 };
    values
        .iter()
        .flat_map(|&v| {
            let t = (v * inv).clamp(0.0, 1.0);
            let r = (255.0 * (1.5 * t).min(1.0)) as u8;
            let g = (255.0 * t * t) as u8;
            let b = (255.0 * (0.4 * (1.0 - t))) as u8;
            [r, g, b, 255]
        })
        .collect()
}

// ------------------------------------------------------------ JS exports

#[wasm_bindgen]
pub struct Scene {
    inner: SceneOut,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.inner.size
    }

    /// RGBA pixels for an `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.inner.pixels.iter().flat_map(|&p| [p, p, p, 255]).collect()
    }

    #[wasm_bindgen(getter)]
    pub fn annotations(&self) -> String {
        self.inner.annotations.clone()
    }
}

/// Generates scene `index` of a spec such as `clustered,size=128,count=60`.
#[wasm_bindgen(js_name = generateScene)]
pub fn generate_scene(spec: &str, index: u32) -> Result<Scene, JsError> {
    scene(spec, index)
        .map(|inner| Scene { inner })
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Supervision {
    inner: SupervisionOut,
}

#[wasm_bindgen]
impl Supervision {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.inner.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.inner.height
    }

    /// Integral of the density map.
    #[wasm_bindgen(getter)]
    pub fn count(&self) -> f64 {
        self.inner.count
    }

    pub fn density(&self) -> Vec<f32> {
        self.inner.density.clone()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.inner.sigmas.clone()
    }

    #[wasm_bindgen(js_name = densityRgba)]
    pub fn density_rgba(&self) -> Vec<u8> {
        heatmap(&self.inner.density)
    }

    #[wasm_bindgen(js_name = maskRgba)]
    pub fn mask_rgba(&self) -> Vec<u8> {
        self.inner
            .mask
            .iter()
            .flat_map(|&m| if m == 1 { [255, 255, 255, 255] } else { [0, 0, 0, 255] })
            .collect()
    }
}

/// Density map and segmentation mask for the first image of an annotation
/// file, with kernel `fixed:SIGMA`, `gak`, `nonuniform` or `boxes`.
#[wasm_bindgen(js_name = computeSupervision)]
pub fn compute_supervision(annotations: &str, kernel: &str) -> Result<Supervision, JsError> {
    supervision(annotations, kernel)
        .map(|inner| Supervision { inner })
        .map_err(|e| JsError::new(&e))
}

/// JSON array of `{kernel, mean_sigma, error}` rows.
#[wasm_bindgen(js_name = compareEstimators)]
pub fn compare_estimators(annotations: &str) -> Result<String, JsError> {
    compare(annotations)
        .and_then(|rows| serde_json::to_string(&rows).map_err(err))
        .map_err(|e| JsError::new(&e))
}
