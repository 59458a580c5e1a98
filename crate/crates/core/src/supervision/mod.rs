//! Supervision signals derived from point annotations: density maps,
//! binary segmentation maps and quantized global-density labels.

mod density;
mod global_density;
pub mod io;
mod segmentation;

pub use density::{rasterize_density, DensityMap, TRUNCATION_RADIUS};
pub use global_density::{
    compute_step_size, density_label, level_for_count, GlobalDensityLabel, GlobalDensitySpec,
};
pub use segmentation::{rasterize_segmentation, SegmentationMap};
