use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{ArgGroup, Args};
use rayon::prelude::*;
use serde_json::json;

use ffcount::geometry::{load_dataset, Annotation, PointSet, SigmaAssignment};
use ffcount::supervision::io::{save_ffdm, save_segmentation_png};
use ffcount::supervision::{
    compute_step_size, density_label, rasterize_density, rasterize_segmentation, DensityMap,
    SegmentationMap,
};
use ffcount::synth::{generate, Scene};

use super::{scene_spec, worker_pool, KernelArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::Global;

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["annotations", "synth"])))]
pub struct SynthGtArgs {
    /// JSON annotation file: one object or an array of objects.
    #[arg(long)]
    pub annotations: Option<PathBuf>,

    /// Generate scenes instead, e.g. `clustered,size=128,count=50-200`.
    #[arg(long)]
    pub synth: Option<String>,

    /// Number of scenes to generate with --synth.
    #[arg(long, default_value_t = 1)]
    pub images: usize,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Number of density levels; labels range over 0..=M.
    #[arg(long = "M", default_value_t = 4)]
    pub levels: usize,

    /// Side of the square patches that receive a density level.
    #[arg(long, default_value_t = 128)]
    pub patch: usize,
}

struct Item {
    id: String,
    points: PointSet,
    scene: Option<Scene>,
}

struct Supervision {
    sigmas: SigmaAssignment,
    density: DensityMap,
    segmentation: SegmentationMap,
}

fn check_id(id: &str) -> CliResult<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\']);
    if ok {
        Ok(())
    } else {
        Err(CliError::input(format!("image id {id:?} cannot be used as a file name")))
    }
}

fn load_items(global: &Global, args: &SynthGtArgs) -> CliResult<(Vec<Item>, serde_json::Value)> {
    if let Some(path) = &args.annotations {
        let anns = load_dataset(path).map_err(|e| CliError::context(path.display(), e))?;
        let mut seen = BTreeSet::new();
        let mut items = Vec::with_capacity(anns.len());
        for a in anns {
            check_id(&a.image)?;
            if !seen.insert(a.image.clone()) {
                return Err(CliError::input(format!("duplicate image id {:?}", a.image)));
            }
            let points = a.to_point_set().map_err(|e| CliError::context(path.display(), e))?;
            items.push(Item {
                id: a.image,
                points,
                scene: None,
            });
        }
        if items.is_empty() {
            return Err(CliError::input(format!("{}: no images", path.display())));
        }
        Ok((items, json!({ "annotations": path.display().to_string() })))
    } else {
        let text = args.synth.as_deref().expect("clap enforces one source");
        let spec = scene_spec(text, global.seed)?;
        if args.images == 0 {
            return Err(CliError::input("--images must be at least 1"));
        }
        let items = (0..args.images)
            .map(|i| {
                let scene = generate(&spec, i as u64)?;
                Ok(Item {
                    id: format!("scene_{i:04}"),
                    points: scene.annotation.clone(),
                    scene: Some(scene),
                })
            })
            .collect::<Result<Vec<_>, ffcount::Error>>()?;
        Ok((items, json!({ "synth": spec.to_string(), "images": args.images })))
    }
}

pub fn run(global: &Global, args: SynthGtArgs) -> CliResult<()> {
    let kernel = args.kernel.resolve()?;
    if args.levels == 0 || args.patch == 0 {
        return Err(CliError::input("--M and --patch must be at least 1"));
    }
    let (items, source) = load_items(global, &args)?;

    let pool = worker_pool(global.threads)?;
    let supervision: Vec<Supervision> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let sigmas = kernel
                    .assign(&item.points)
                    .map_err(|e| CliError::context(&item.id, e))?;
                let density = rasterize_density(&item.points, &sigmas)?;
                let segmentation = rasterize_segmentation(&item.points, &sigmas)?;
                Ok(Supervision {
                    sigmas,
                    density,
                    segmentation,
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    // Patches larger than an image shrink to the image.
    let patch_dims = |ps: &PointSet| (args.patch.min(ps.width()), args.patch.min(ps.height()));
    let pairs: Vec<(PointSet, usize)> = items
        .iter()
        .map(|it| {
            let (w, h) = patch_dims(&it.points);
            (it.points.clone(), w * h)
        })
        .collect();
    let level_spec = compute_step_size(&pairs, args.levels)?;

    let out = &global.out_dir;
    let mut outputs = Vec::new();
    let mut labels = String::from("image,patch_x,patch_y,patch_w,patch_h,count,level\n");
    let mut sigmas = String::from("image,index,x,y,sigma\n");
    let mut annotations = Vec::new();
    for (item, sup) in items.iter().zip(&supervision) {
        let mass = sup.density.sum();
        if (mass - item.points.len() as f64).abs() > 1e-6 {
            return Err(CliError::Internal(format!(
                "{}: density sums to {mass}, expected {}",
                item.id,
                item.points.len()
            )));
        }
        let density_file = format!("{}.ffdm", item.id);
        let seg_file = format!("{}_seg.png", item.id);
        save_ffdm(&sup.density, out.join(&density_file))?;
        save_segmentation_png(&sup.segmentation, out.join(&seg_file))?;
        outputs.push(density_file);
        outputs.push(seg_file);
        if let Some(scene) = &item.scene {
            let image_file = format!("{}.png", item.id);
            scene.save_png(out.join(&image_file))?;
            outputs.push(image_file);
            annotations.push(Annotation::from_point_set(&item.id, &item.points));
        }

        let (pw, ph) = patch_dims(&item.points);
        let (w, h) = (item.points.width(), item.points.height());
        for y in (0..h).step_by(ph) {
            for x in (0..w).step_by(pw) {
                let (cw, ch) = (pw.min(w - x), ph.min(h - y));
                let patch = item.points.crop(x, y, cw, ch)?;
                let level = density_label(&patch, &level_spec).level();
                writeln!(labels, "{},{x},{y},{cw},{ch},{},{level}", item.id, patch.len())
                    .expect("writing to a string");
            }
        }
        for (i, (p, s)) in item.points.points().iter().zip(sup.sigmas.sigmas()).enumerate() {
            writeln!(sigmas, "{},{i},{},{},{s}", item.id, p.x, p.y).expect("writing to a string");
        }
    }
    std::fs::write(out.join("labels.csv"), labels)?;
    std::fs::write(out.join("sigmas.csv"), sigmas)?;
    outputs.extend(["labels.csv".to_string(), "sigmas.csv".to_string()]);
    if !annotations.is_empty() {
        let mut text = serde_json::to_string_pretty(&annotations)?;
        text.push('\n');
        std::fs::write(out.join("annotations.json"), text)?;
        outputs.push("annotations.json".into());
    }

    let mut manifest = Manifest::new(
        "synth-gt",
        global.seed,
        global.threads,
        json!({
            "source": source,
            "kernel": kernel,
            "levels": args.levels,
            "patch": args.patch,
            "step_size": level_spec.step_size,
        }),
    );
    manifest.outputs = outputs;
    manifest.write(out)?;
    println!(
        "wrote ground truth for {} image(s) to {} (step size {})",
        items.len(),
        out.display(),
        level_spec.step_size
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_like_ids_rejected() {
        assert!(check_id("img_01").is_ok());
        for bad in ["", "..", "a/b", "c\\d"] {
            assert!(check_id(bad).is_err(), "{bad}");
        }
    }
}
