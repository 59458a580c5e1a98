use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use ffcount::geometry::{load_dataset, PointSet};
use ffcount::metrics::{image_metrics, stratify, MetricReport, StratifyMode, GAME_MAX_LEVEL};
use ffcount::supervision::io::load_ffdm;

use super::worker_pool;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StratifyArg {
    None,
    Scale,
    Crowding,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of ground-truth `.ffdm` maps.
    #[arg(long)]
    pub truth: PathBuf,

    /// Directory of predicted `.ffdm` maps, paired with truth by file name.
    #[arg(long)]
    pub pred: PathBuf,

    /// Highest GAME level reported.
    #[arg(long = "game-max", default_value_t = 4)]
    pub game_max: u32,

    /// Also report errors per third of the images.
    #[arg(long, value_enum, default_value_t = StratifyArg::None)]
    pub stratify: StratifyArg,

    /// Annotations with boxes, required by --stratify.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

/// `.ffdm` files of a directory keyed by file stem.
fn list_maps(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut maps = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ffdm") && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                maps.insert(stem.to_owned(), path.clone());
            }
        }
    }
    Ok(maps)
}

/// Pairs truth and prediction files, or lists every file lacking a partner.
fn pair_maps(
    truth: &BTreeMap<String, PathBuf>,
    pred: &BTreeMap<String, PathBuf>,
) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let mut orphans: Vec<String> = truth
        .iter()
        .filter(|(k, _)| !pred.contains_key(*k))
        .map(|(_, p)| format!("truth only: {}", p.display()))
        .collect();
    orphans.extend(
        pred.iter()
            .filter(|(k, _)| !truth.contains_key(*k))
            .map(|(_, p)| format!("prediction only: {}", p.display())),
    );
    if !orphans.is_empty() {
        return Err(CliError::Pairing(orphans));
    }
    Ok(truth
        .iter()
        .map(|(k, t)| (k.clone(), t.clone(), pred[k].clone()))
        .collect())
}

pub fn run(global: &Global, args: EvaluateArgs) -> CliResult<()> {
    if args.game_max > GAME_MAX_LEVEL {
        return Err(CliError::input(format!("--game-max is capped at {GAME_MAX_LEVEL}")));
    }
    let mode = match args.stratify {
        StratifyArg::None => None,
        StratifyArg::Scale => Some(StratifyMode::Scale),
        StratifyArg::Crowding => Some(StratifyMode::Crowding),
    };
    if mode.is_some() && args.annotations.is_none() {
        return Err(CliError::input("--stratify needs --annotations"));
    }

    let pairs = pair_maps(&list_maps(&args.truth)?, &list_maps(&args.pred)?)?;
    if pairs.is_empty() {
        return Err(CliError::input(format!("no .ffdm files in {}", args.truth.display())));
    }

    let pool = worker_pool(global.threads)?;
    let per_image = pool.install(|| {
        pairs
            .par_iter()
            .map(|(id, t, p)| {
                let truth = load_ffdm(t).map_err(|e| CliError::context(t.display(), e))?;
                let pred = load_ffdm(p).map_err(|e| CliError::context(p.display(), e))?;
                image_metrics(id.as_str(), &truth, &pred, args.game_max)
                    .map_err(|e| CliError::context(id, e))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut report = MetricReport::new(per_image)?;

    // GAME at level 0 is the absolute count error by construction.
    let gap = (report.aggregate.game[0] - report.aggregate.mae).abs();
    if gap > 1e-9 {
        return Err(CliError::Internal(format!("GAME(0) differs from MAE by {gap}")));
    }

    if let (Some(mode), Some(path)) = (mode, &args.annotations) {
        let anns = load_dataset(path).map_err(|e| CliError::context(path.display(), e))?;
        let mut sets: BTreeMap<String, PointSet> = BTreeMap::new();
        for a in &anns {
            sets.insert(
                a.image.clone(),
                a.to_point_set().map_err(|e| CliError::context(path.display(), e))?,
            );
        }
        let mut input = Vec::with_capacity(pairs.len());
        for (id, _, _) in &pairs {
            let ps = sets
                .get(id)
                .ok_or_else(|| CliError::input(format!("{}: no annotation for {id:?}", path.display())))?;
            input.push((id.as_str(), ps));
        }
        let strata = stratify(&input, mode)?;
        report = report.with_strata(&strata)?;
    }

    let out = &global.out_dir;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    let mut text = report.to_json()?;
    text.push('\n');
    std::fs::write(out.join("report.json"), text)?;

    let stratify_name = match args.stratify {
        StratifyArg::None => "none",
        StratifyArg::Scale => "scale",
        StratifyArg::Crowding => "crowding",
    };
    let mut manifest = Manifest::new(
        "evaluate",
        global.seed,
        global.threads,
        json!({
            "truth": args.truth.display().to_string(),
            "pred": args.pred.display().to_string(),
            "game_max": args.game_max,
            "stratify": stratify_name,
            "annotations": args.annotations.as_ref().map(|p| p.display().to_string()),
            "images": pairs.len(),
        }),
    );
    manifest.outputs = vec!["report.csv".into(), "report.json".into()];
    manifest.write(out)?;

    let a = &report.aggregate;
    println!("images {}  MAE {:.4}  RMSE {:.4}  NMAE {:.4}", a.images, a.mae, a.rmse, a.nmae);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[&str]) -> BTreeMap<String, PathBuf> {
        names.iter().map(|n| (n.to_string(), PathBuf::from(format!("{n}.ffdm")))).collect()
    }

    #[test]
    fn pairing_by_stem() {
        let pairs = pair_maps(&set(&["a", "b"]), &set(&["b", "a"])).unwrap();
        assert_eq!(pairs.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn orphans_listed_from_both_sides() {
        match pair_maps(&set(&["a", "b"]), &set(&["b", "c"])) {
            Err(CliError::Pairing(o)) => {
                assert_eq!(o.len(), 2);
                assert!(o[0].contains("a.ffdm") && o[1].contains("c.ffdm"));
            }
            other => panic!("expected pairing error, got {other:?}"),
        }
    }
}
