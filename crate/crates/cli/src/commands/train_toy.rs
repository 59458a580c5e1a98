use std::fmt::Write as _;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use ffcount::autograd::{checkpoint, AdamConfig};
use ffcount::focusnet::{
    samples_from_scenes, train, Ablation, FocusNet, FocusNetConfig, TrainConfig, TrainLog,
};
use ffcount::synth::generate;

use super::{scene_spec, worker_pool, KernelArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::Global;

/// Fewer scenes leave too small a validation split to compare arms.
pub const MIN_SCENES: usize = 20;

pub const DEFAULT_SCENES_SPEC: &str = "bimodal,size=64,count=1-30,radius=1-4";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateArg {
    None,
    NoSeg,
    NoDensity,
    BaseOnly,
    /// Every arm, in the order above.
    All,
}

impl AblateArg {
    fn arms(self) -> Vec<Ablation> {
        match self {
            AblateArg::None => vec![Ablation::None],
            AblateArg::NoSeg => vec![Ablation::NoSeg],
            AblateArg::NoDensity => vec![Ablation::NoDensity],
            AblateArg::BaseOnly => vec![Ablation::BaseOnly],
            AblateArg::All => Ablation::ALL.to_vec(),
        }
    }
}

/// Synthetic scenes carry boxes, so the default kernel takes sigma from them.
#[derive(Debug, Args)]
#[command(mut_arg("kernel", |a| a.default_value("boxes")))]
pub struct TrainToyArgs {
    /// Number of synthetic scenes, split into training and validation.
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,

    #[arg(long, default_value_t = 150)]
    pub epochs: usize,

    /// Focus branches switched off.
    #[arg(long, value_enum, default_value_t = AblateArg::None)]
    pub ablate: AblateArg,

    /// Scene generator spec; its size is the network input size.
    #[arg(long, default_value = DEFAULT_SCENES_SPEC)]
    pub synth: String,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Number of density levels.
    #[arg(long = "M", default_value_t = 4)]
    pub levels: usize,

    /// Feature channels per layer.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long = "batch-size", default_value_t = 4)]
    pub batch_size: usize,

    /// Share of scenes held out for validation.
    #[arg(long = "val-frac", default_value_t = 0.2)]
    pub val_frac: f64,

    /// Factor between the density head output and objects per pixel.
    #[arg(long = "density-scale", default_value_t = 100.0)]
    pub density_scale: f64,
}

fn log_name(arm: Ablation) -> String {
    format!("{}/train_log.csv", arm.name())
}

fn checkpoint_name(arm: Ablation) -> String {
    format!("{}/checkpoint.ffck", arm.name())
}

pub fn run(global: &Global, args: TrainToyArgs) -> CliResult<()> {
    if args.scenes < MIN_SCENES {
        return Err(CliError::input(format!("--scenes must be at least {MIN_SCENES}")));
    }
    if args.batch_size == 0 {
        return Err(CliError::input("--batch-size must be at least 1"));
    }
    if !(args.val_frac > 0.0 && args.val_frac < 1.0) {
        return Err(CliError::input("--val-frac must lie in (0, 1)"));
    }
    if !(args.lr >= 0.0 && args.lr.is_finite()) {
        return Err(CliError::input("--lr must be finite and non-negative"));
    }
    let kernel = args.kernel.resolve()?;
    let spec = scene_spec(&args.synth, global.seed)?;
    let net_cfg = FocusNetConfig {
        input_size: spec.size,
        base_channels: args.channels,
        num_levels: args.levels,
        density_scale: args.density_scale,
        seed: global.seed,
        ..FocusNetConfig::default()
    };
    net_cfg.validate().map_err(|e| CliError::context("network", e))?;
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        val_fraction: args.val_frac,
    };

    let scenes = (0..args.scenes as u64)
        .map(|i| generate(&spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    let (samples, level_spec) = samples_from_scenes(&scenes, &kernel, args.levels)?;

    // Each arm trains single-threaded; separate arms may run side by side.
    let arms = args.ablate.arms();
    let pool = worker_pool(global.threads)?;
    let results: Vec<(Ablation, FocusNet, TrainLog)> = pool.install(|| {
        arms.par_iter()
            .map(|&arm| {
                let mut model = FocusNet::new(net_cfg.clone(), arm)?;
                let log = train(&mut model, &samples, &train_cfg)?;
                Ok((arm, model, log))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let out = &global.out_dir;
    let mut outputs = Vec::new();
    let mut summary = String::from("arm,initial_val_mae,final_val_mae\n");
    for (arm, model, log) in &results {
        std::fs::create_dir_all(out.join(arm.name()))?;
        checkpoint::save(model.params(), &out.join(checkpoint_name(*arm)))?;
        std::fs::write(out.join(log_name(*arm)), log.to_csv())?;
        outputs.push(checkpoint_name(*arm));
        outputs.push(log_name(*arm));
        writeln!(summary, "{},{},{}", arm.name(), log.initial_val_mae(), log.final_val_mae())
            .expect("writing to a string");
        println!(
            "{:<10} val MAE {:.4} -> {:.4}",
            arm.name(),
            log.initial_val_mae(),
            log.final_val_mae()
        );
    }
    std::fs::write(out.join("summary.csv"), summary)?;
    outputs.push("summary.csv".into());

    let mut manifest = Manifest::new(
        "train-toy",
        global.seed,
        global.threads,
        json!({
            "scenes": args.scenes,
            "synth": spec.to_string(),
            "kernel": kernel,
            "arms": arms.iter().map(|a| a.name()).collect::<Vec<_>>(),
            "network": net_cfg,
            "training": train_cfg,
            "step_size": level_spec.step_size,
            "parameters": results.first().map(|r| r.1.parameter_count()),
        }),
    );
    manifest.outputs = outputs;
    manifest.write(out)
}
