use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::KernelChoice;
use crate::supervision::{
    compute_step_size, density_label, rasterize_density, rasterize_segmentation, GlobalDensitySpec,
};
use crate::synth::Scene;

/// Supervision for a set of scenes: density and segmentation maps from
/// `kernel`, and whole-image density levels with a step size fitted to
/// these scenes.
pub fn samples_from_scenes(
    scenes: &[Scene],
    kernel: &KernelChoice,
    num_levels: usize,
) -> Result<(Vec<Sample>, GlobalDensitySpec)> {
    if scenes.is_empty() {
        return Err(Error::NoData("no scenes".into()));
    }
    let pairs: Vec<_> = scenes
        .iter()
        .map(|s| (s.annotation.clone(), s.annotation.pixel_count()))
        .collect();
    let spec = compute_step_size(&pairs, num_levels)?;
    let samples = scenes
        .iter()
        .map(|s| {
            let sigmas = kernel.assign(&s.annotation)?;
            Ok(Sample {
                image: s.image.clone(),
                density: rasterize_density(&s.annotation, &sigmas)?,
                segmentation: rasterize_segmentation(&s.annotation, &sigmas)?,
                label: density_label(&s.annotation, &spec),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, spec))
}
