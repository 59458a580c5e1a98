use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_graph, to_channel_major, to_pixel_major, Fusion};
use super::{Ablation, FocusNet, FocusNetConfig};
use crate::autograd::{Adam, AdamConfig, Graph, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::losses::{density_regression_loss, global_density_loss, seg_focal_loss};
use crate::supervision::{DensityMap, GlobalDensityLabel, SegmentationMap};

/// One training example: an image with its three supervision signals.
/// The target count is the sum of `density`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Vec<f32>,
    pub density: DensityMap,
    pub segmentation: SegmentationMap,
    pub label: GlobalDensityLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Share of samples held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 4,
            adam: AdamConfig::default(),
            val_fraction: 0.2,
        }
    }
}

/// Mean per-sample loss terms and validation error after one epoch.
/// Epoch 0 describes the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_r: f64,
    pub loss_s: f64,
    pub loss_c: f64,
    pub total: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn initial_val_mae(&self) -> f64 {
        self.epochs[0].val_mae
    }

    pub fn final_val_mae(&self) -> f64 {
        self.epochs.last().expect("epoch 0 is always logged").val_mae
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_r,loss_s,loss_c,total,val_mae\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.loss_r, e.loss_s, e.loss_c, e.total, e.val_mae
            )
            .expect("writing to a string");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(super) struct LossTerms {
    pub r: f64,
    pub s: f64,
    pub c: f64,
    pub total: f64,
}

fn check_sample(cfg: &FocusNetConfig, s: &Sample) -> Result<()> {
    let n = cfg.input_size;
    let dims_ok = s.density.width() == n
        && s.density.height() == n
        && s.segmentation.width() == n
        && s.segmentation.height() == n;
    if !dims_ok {
        return Err(Error::shape(format!(
            "supervision maps {}x{} / {}x{} for a {n}x{n} network",
            s.density.width(),
            s.density.height(),
            s.segmentation.width(),
            s.segmentation.height()
        )));
    }
    Ok(())
}

/// Loss terms for one sample; with `backward`, also the gradient of the
/// weighted total with respect to every parameter, in store order.
pub(super) fn sample_terms<T: Scalar>(
    cfg: &FocusNetConfig,
    ablation: Ablation,
    params: &ParamStore<T>,
    sample: &Sample,
    backward: bool,
) -> Result<(LossTerms, Option<Vec<Option<Vec<T>>>>)> {
    check_sample(cfg, sample)?;
    let mut g = Graph::new();
    let f = forward_graph(cfg, ablation, params, &sample.image, Fusion::Branches, &mut g)?;

    let pred = g.value(f.scaled_density).to_f64_vec();
    let scaled_target = DensityMap::from_values(
        sample.density.width(),
        sample.density.height(),
        sample.density.values().iter().map(|v| v * cfg.density_scale).collect(),
    )?;
    let lr = density_regression_loss(&pred, &scaled_target)?;
    let probs = to_pixel_major(&g.value(f.seg_probs).to_f64_vec());
    let ls = seg_focal_loss(&probs, &sample.segmentation, cfg.gamma_s)?;
    let lc = global_density_loss(&g.value(f.level_probs).to_f64_vec(), sample.label, cfg.gamma_c)?;

    let w = cfg.weights;
    let mut terms = LossTerms {
        r: lr.value,
        s: ls.value,
        c: lc.value,
        total: w.lambda_r * lr.value,
    };
    if ablation.uses_seg() {
        terms.total += w.lambda_s * ls.value;
    }
    if ablation.uses_density() {
        terms.total += w.lambda_c * lc.value;
    }
    if !backward {
        return Ok((terms, None));
    }

    let cast = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    let er = g.external_loss(f.scaled_density, T::of(lr.value), cast(&lr.gradient))?;
    let mut total = g.scale(er, T::of(w.lambda_r));
    if ablation.uses_seg() {
        let grad = cast(&to_channel_major(&ls.gradient));
        let es = g.external_loss(f.seg_probs, T::of(ls.value), grad)?;
        let es = g.scale(es, T::of(w.lambda_s));
        total = g.add(total, es)?;
    }
    if ablation.uses_density() {
        let ec = g.external_loss(f.level_probs, T::of(lc.value), cast(&lc.gradient))?;
        let ec = g.scale(ec, T::of(w.lambda_c));
        total = g.add(total, ec)?;
    }
    g.backward(total)?;
    let grads = f.params.iter().map(|&v| g.grad(v).map(<[T]>::to_vec)).collect();
    Ok((terms, Some(grads)))
}

/// Weighted total loss of one sample at `params`. With `with_gradient`, also
/// its gradient for every parameter in store order; parameters the loss does
/// not reach get zeros. Evaluating in `f64` gives a reference for gradient
/// checks.
pub fn sample_loss<T: Scalar>(
    cfg: &FocusNetConfig,
    ablation: Ablation,
    params: &ParamStore<T>,
    sample: &Sample,
    with_gradient: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    cfg.validate()?;
    let (terms, grads) = sample_terms(cfg, ablation, params, sample, with_gradient)?;
    let grads = grads.map(|gs| {
        gs.into_iter()
            .zip(params.tensors())
            .map(|(g, t)| match g {
                Some(g) => g.iter().map(|v| v.to_f64_lossy()).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    });
    Ok((terms.total, grads))
}

/// Mean absolute count error of `model` over `samples[indices]`.
pub fn mean_abs_count_error(model: &FocusNet, samples: &[Sample], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::NoData("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for &i in indices {
        let s = &samples[i];
        check_sample(model.config(), s)?;
        total += (model.predict_count(&s.image)? - s.density.sum()).abs();
    }
    Ok(total / indices.len() as f64)
}

fn mean_terms(terms: &[LossTerms], indices: &[usize]) -> LossTerms {
    let n = indices.len() as f64;
    let mut m = LossTerms::default();
    for &i in indices {
        m.r += terms[i].r;
        m.s += terms[i].s;
        m.c += terms[i].c;
        m.total += terms[i].total;
    }
    LossTerms {
        r: m.r / n,
        s: m.s / n,
        c: m.c / n,
        total: m.total / n,
    }
}

/// Seeded split of `n` samples into sorted (train, validation) indices.
/// A single sample is used for both.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    if n < 2 {
        return (order.clone(), order);
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains `model` in place with Adam on the weighted multi-branch loss.
///
/// Deterministic for a given model seed: the split, the per-epoch batch
/// order and all arithmetic run on one thread. Per-sample gradients are
/// averaged over each batch.
pub fn train(model: &mut FocusNet, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(Error::NoData("training needs at least one sample".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::InvalidConfig(
            "batch size must be positive and the validation share in [0, 1)".into(),
        ));
    }
    let net_cfg = model.config().clone();
    for s in samples {
        check_sample(&net_cfg, s)?;
    }
    let ablation = model.ablation();
    let (train_idx, val_idx) = split_indices(samples.len(), cfg.val_fraction, net_cfg.seed);
    let mut terms = vec![LossTerms::default(); samples.len()];

    for &i in &train_idx {
        terms[i] = sample_terms(&net_cfg, ablation, model.params(), &samples[i], false)?.0;
    }
    let log_epoch = |epoch: usize, model: &FocusNet, terms: &[LossTerms]| -> Result<EpochLog> {
        let m = mean_terms(terms, &train_idx);
        Ok(EpochLog {
            epoch,
            loss_r: m.r,
            loss_s: m.s,
            loss_c: m.c,
            total: m.total,
            val_mae: mean_abs_count_error(model, samples, &val_idx)?,
        })
    };
    let mut epochs = vec![log_epoch(0, model, &terms)?];

    let mut opt = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(net_cfg.seed);
    rng.set_stream(2);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grad();
            for &i in batch {
                let (t, grads) = sample_terms(&net_cfg, ablation, model.params(), &samples[i], true)?;
                terms[i] = t;
                for (tensor, g) in model.params_mut().tensors_mut().iter_mut().zip(grads.unwrap()) {
                    if let Some(g) = g {
                        tensor.accumulate_grad(&g);
                    }
                }
            }
            opt.step(model.params_mut(), 1.0 / batch.len() as f64);
        }
        epochs.push(log_epoch(epoch, model, &terms)?);
    }
    model.params_mut().zero_grad();
    Ok(TrainLog {
        train_indices: train_idx,
        val_indices: val_idx,
        epochs,
    })
}
