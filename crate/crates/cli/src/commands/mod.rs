pub mod evaluate;
pub mod synth_gt;
pub mod train_toy;

use clap::Args;
use ffcount::geometry::{KernelChoice, DEFAULT_REGION_FRACTION};
use ffcount::synth::SceneSpec;

use crate::error::{CliError, CliResult};

/// Kernel selection flags shared by `synth-gt` and `train-toy`.
#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// `fixed:SIGMA`, `gak`, `nonuniform` or `boxes`.
    #[arg(long, default_value = "gak")]
    pub kernel: String,

    /// Scale from mean neighbor distance to sigma.
    #[arg(long, default_value_t = KernelChoice::DEFAULT_BETA)]
    pub beta: f64,

    /// Neighbors per point.
    #[arg(long, default_value_t = KernelChoice::DEFAULT_K)]
    pub k: usize,

    /// Side of the local averaging window as a fraction of the image side.
    #[arg(long = "region-frac", default_value_t = DEFAULT_REGION_FRACTION)]
    pub region_frac: f64,
}

impl KernelArgs {
    pub fn resolve(&self) -> CliResult<KernelChoice> {
        let choice = match self.kernel.as_str() {
            "gak" => KernelChoice::Gak {
                k: self.k,
                beta: self.beta,
            },
            "nonuniform" => KernelChoice::Nonuniform {
                k: self.k,
                beta: self.beta,
                region_fraction: self.region_frac,
            },
            "boxes" => KernelChoice::Boxes,
            other => match other.strip_prefix("fixed:") {
                Some(v) => KernelChoice::Fixed {
                    sigma: v
                        .parse()
                        .map_err(|_| CliError::input(format!("bad fixed sigma {v:?}")))?,
                },
                None => {
                    return Err(CliError::input(format!(
                        "unknown kernel {other:?}; expected fixed:SIGMA, gak, nonuniform or boxes"
                    )))
                }
            },
        };
        if let KernelChoice::Fixed { sigma } = choice {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(CliError::input(format!("fixed sigma must be positive, got {sigma}")));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) || self.k == 0 {
            return Err(CliError::input("--beta must be positive and --k at least 1"));
        }
        if !(self.region_frac > 0.0 && self.region_frac <= 1.0) {
            return Err(CliError::input("--region-frac must lie in (0, 1]"));
        }
        Ok(choice)
    }
}

/// Parses a scene spec; the global seed applies unless the spec sets one.
pub fn scene_spec(text: &str, seed: u64) -> CliResult<SceneSpec> {
    let mut spec: SceneSpec = text.parse().map_err(|e| CliError::context("--synth", e))?;
    let has_seed = text.split(',').any(|p| p.trim().starts_with("seed="));
    if !has_seed {
        spec.seed = seed;
    }
    Ok(spec)
}

pub fn worker_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(kernel: &str) -> KernelArgs {
        KernelArgs {
            kernel: kernel.into(),
            beta: 0.3,
            k: 5,
            region_frac: 0.125,
        }
    }

    #[test]
    fn kernel_flags() {
        assert_eq!(args("fixed:5").resolve().unwrap(), KernelChoice::Fixed { sigma: 5.0 });
        assert_eq!(args("gak").resolve().unwrap(), KernelChoice::gak());
        assert_eq!(args("nonuniform").resolve().unwrap(), KernelChoice::nonuniform());
        assert_eq!(args("boxes").resolve().unwrap(), KernelChoice::Boxes);
        for bad in ["fixed:", "fixed:-1", "fixed", "gaussian"] {
            assert_eq!(args(bad).resolve().unwrap_err().code(), 2, "{bad}");
        }
    }

    #[test]
    fn seed_defaults_to_global() {
        assert_eq!(scene_spec("uniform,count=3", 9).unwrap().seed, 9);
        assert_eq!(scene_spec("uniform,count=3,seed=4", 9).unwrap().seed, 4);
        assert_eq!(scene_spec("triangles", 0).unwrap_err().code(), 2);
    }
}
