//! Neural world models.
//!
//! One small arctan network per state variable predicts that variable's
//! change over one step; a further network predicts the reward from
//! `(s, a, s')`. All networks work in normalized units with statistics taken
//! from the training split only.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::dynamics::{wrap_angle, BenchmarkId, BenchmarkSpec};
use crate::error::{Error, Result};
use crate::rl_eval::Environment;
use crate::seed::derive_seed;
use crate::state::{State, MAX_DIM};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Widest layer supported by the allocation-free forward pass.
pub const MAX_WIDTH: usize = 32;
pub const HIDDEN_WIDTH: usize = 10;
const MAX_LAYERS: usize = 6;

/// Arctangent accurate to about one ulp. Branch-free, so it vectorizes
/// inside batched layers, and several times faster than the libm call.
#[inline(always)]
pub fn arctan(x: f64) -> f64 {
    const TAN_3PI_8: f64 = 2.414_213_562_373_095;
    const TAN_PI_8: f64 = 0.414_213_562_373_095_1;
    const P: [f64; 5] = [
        -8.750_608_600_031_904e-1,
        -1.615_753_718_733_365_2e1,
        -7.500_855_792_314_705e1,
        -1.228_866_684_490_136_1e2,
        -6.485_021_904_942_025e1,
    ];
    const Q: [f64; 5] = [
        2.485_846_490_142_306_3e1,
        1.650_270_098_316_988_5e2,
        4.328_810_604_912_903e2,
        4.853_903_996_359_137e2,
        1.945_506_571_482_614e2,
    ];
    let ax = x.abs();
    let big = ax > TAN_3PI_8;
    let mid = ax > TAN_PI_8;
    let num = if big { -1.0 } else if mid { ax - 1.0 } else { ax };
    let den = if big { ax } else if mid { ax + 1.0 } else { 1.0 };
    let base = if big {
        std::f64::consts::FRAC_PI_2
    } else if mid {
        std::f64::consts::FRAC_PI_4
    } else {
        0.0
    };
    let t = num / den;
    let z = t * t;
    let p = (((P[0] * z + P[1]) * z + P[2]) * z + P[3]) * z + P[4];
    let q = ((((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3]) * z + Q[4];
    (base + (t * z * p / q + t)).copysign(x)
}

/// Feedforward network with arctan hidden units and one linear output.
///
/// Parameters are stored flat, layer by layer: the weight matrix row-major
/// (`out × in`) followed by the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.len() > MAX_LAYERS + 1 {
            return Err(Error::Config(format!("unsupported layer layout {sizes:?}")));
        }
        if sizes.iter().any(|&n| n == 0 || n > MAX_WIDTH) || *sizes.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "layer widths must be in 1..={MAX_WIDTH} with a single output, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        if params.len() != Self::param_count_for(sizes) {
            return Err(Error::Contract(format!(
                "{} parameters given for layout {sizes:?}",
                params.len()
            )));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (nin, nout) = (w[0], w[1]);
            let bound = 1.0 / (nin as f64).sqrt();
            for p in &mut net.params[off..off + nin * nout] {
                *p = rng.gen_range(-bound..bound);
            }
            off += nin * nout + nout;
        }
        Ok(net)
    }

    /// Input, `depth` hidden layers of width 10, one output.
    pub fn layout(inputs: usize, depth: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        sizes.extend(std::iter::repeat_n(HIDDEN_WIDTH, depth));
        sizes.push(1);
        sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn depth(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                found: input.len(),
            });
        }
        Ok(self.forward_unchecked(input))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> f64 {
        let mut a = [0.0f64; MAX_WIDTH];
        let mut b = [0.0f64; MAX_WIDTH];
        a[..input.len()].copy_from_slice(input);
        let layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let bias = &self.params[off + nin * nout..off + nin * nout + nout];
            for o in 0..nout {
                let row = &w[o * nin..(o + 1) * nin];
                let mut z = bias[o];
                for i in 0..nin {
                    z += row[i] * a[i];
                }
                b[o] = if l + 1 < layers { arctan(z) } else { z };
            }
            std::mem::swap(&mut a, &mut b);
            off += nin * nout + nout;
        }
        a[0]
    }

    /// Forward pass over `n` inputs stored feature-major (`inputs[i·n + k]`
    /// is feature `i` of sample `k`). Bitwise equal to [`Mlp::forward`] per
    /// sample.
    pub fn forward_batch(&self, inputs: &[f64], n: usize, out: &mut [f64]) {
        debug_assert_eq!(inputs.len(), self.inputs() * n);
        let layers = self.sizes.len() - 1;
        let mut cur = inputs.to_vec();
        let mut next = Vec::with_capacity(MAX_WIDTH * n);
        let mut off = 0;
        for l in 0..layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let bias = &self.params[off + nin * nout..off + nin * nout + nout];
            next.clear();
            next.resize(nout * n, 0.0);
            for o in 0..nout {
                let row = &mut next[o * n..(o + 1) * n];
                row.fill(bias[o]);
                for i in 0..nin {
                    let wi = w[o * nin + i];
                    for (z, x) in row.iter_mut().zip(&cur[i * n..(i + 1) * n]) {
                        *z += wi * x;
                    }
                }
                if l + 1 < layers {
                    row.iter_mut().for_each(|z| *z = arctan(*z));
                }
            }
            std::mem::swap(&mut cur, &mut next);
            off += nin * nout + nout;
        }
        out[..n].copy_from_slice(&cur[..n]);
    }

    /// Adds `scale · ∂output/∂params` at `input` into `grad` and returns the
    /// output.
    pub fn accumulate_gradient(&self, input: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let layers = self.sizes.len() - 1;
        let mut acts = [[0.0f64; MAX_WIDTH]; MAX_LAYERS + 1];
        let mut pre = [[0.0f64; MAX_WIDTH]; MAX_LAYERS + 1];
        acts[0][..input.len()].copy_from_slice(input);
        let mut offsets = [0usize; MAX_LAYERS];
        let mut off = 0;
        for l in 0..layers {
            offsets[l] = off;
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let bias = &self.params[off + nin * nout..off + nin * nout + nout];
            let (prev, next) = acts.split_at_mut(l + 1);
            for o in 0..nout {
                let row = &w[o * nin..(o + 1) * nin];
                let mut z = bias[o];
                for i in 0..nin {
                    z += row[i] * prev[l][i];
                }
                pre[l + 1][o] = z;
                next[0][o] = if l + 1 < layers { arctan(z) } else { z };
            }
            off += nin * nout + nout;
        }
        let output = acts[layers][0];

        let mut delta = [0.0f64; MAX_WIDTH];
        let mut delta_prev = [0.0f64; MAX_WIDTH];
        delta[0] = scale;
        for l in (0..layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let w = &self.params[off..off + nin * nout];
            let a_in = &acts[l];
            for o in 0..nout {
                let d = delta[o];
                let g = &mut grad[off + o * nin..off + (o + 1) * nin];
                for i in 0..nin {
                    g[i] += d * a_in[i];
                }
                grad[off + nin * nout + o] += d;
            }
            if l > 0 {
                for i in 0..nin {
                    let mut s = 0.0;
                    for o in 0..nout {
                        s += w[o * nin + i] * delta[o];
                    }
                    let z = pre[l][i];
                    delta_prev[i] = s / (1.0 + z * z);
                }
                delta[..nin].copy_from_slice(&delta_prev[..nin]);
            }
        }
        output
    }

    /// Gradient of the output with respect to every parameter.
    pub fn param_gradient(&self, input: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(input, 1.0, &mut grad);
        grad
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Standard deviations below this are treated as constant features.
    pub const MIN_STD: f64 = 1e-12;

    /// Statistics over the rows of a row-major `n × width` table.
    pub fn fit(rows: &[f64], width: usize) -> Self {
        let n = (rows.len() / width).max(1) as f64;
        let mut mean = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < Self::MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.std[j];
        }
    }

    #[inline]
    pub fn denormalize_one(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, v)| self.denormalize_one(j, *v)).collect()
    }
}

/// Supervised regression data: row-major inputs and one scalar target per
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(width: usize) -> Self {
        Dataset {
            width,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: f64) {
        debug_assert_eq!(input.len(), self.width);
        self.inputs.extend_from_slice(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }
}

/// Mean squared error of `net` on `data`; 0 for empty data.
pub fn mse(net: &Mlp, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let sum: f64 = (0..data.len())
        .map(|i| {
            let e = net.forward_unchecked(data.row(i)) - data.targets[i];
            e * e
        })
        .sum();
    sum / data.len() as f64
}

/// Index sets of an 80/10/10 split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub generalization: Vec<usize>,
}

/// Minimum number of groups for splitting by group instead of by sample.
pub const MIN_SPLIT_GROUPS: usize = 10;

/// Shuffles `n` items into training, validation and generalization sets of
/// 80/10/10 percent (validation and generalization rounded down).
///
/// With `groups` (e.g. trajectory ids) and at least ten distinct groups,
/// whole groups are assigned so no trajectory straddles two sets.
pub fn split_dataset(n: usize, groups: Option<&[u64]>, seed: u64) -> Result<Split> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 samples to split, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(groups) = groups {
        if groups.len() != n {
            return Err(Error::Contract("one group id per sample is required".into()));
        }
        let mut ids: Vec<u64> = groups.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() >= MIN_SPLIT_GROUPS {
            ids.shuffle(&mut rng);
            let (n_val, n_gen) = (ids.len() / 10, ids.len() / 10);
            let val: std::collections::HashSet<u64> = ids[..n_val].iter().copied().collect();
            let gen: std::collections::HashSet<u64> = ids[n_val..n_val + n_gen].iter().copied().collect();
            let mut split = Split {
                train: Vec::new(),
                validation: Vec::new(),
                generalization: Vec::new(),
            };
            for (i, g) in groups.iter().enumerate() {
                if val.contains(g) {
                    split.validation.push(i);
                } else if gen.contains(g) {
                    split.generalization.push(i);
                } else {
                    split.train.push(i);
                }
            }
            return Ok(split);
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (n_val, n_gen) = (n / 10, n / 10);
    Ok(Split {
        validation: idx[..n_val].to_vec(),
        generalization: idx[n_val..n_val + n_gen].to_vec(),
        train: idx[n_val + n_gen..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Upper bound on training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step-size multiplier applied after `patience` epochs without a new
    /// best validation error.
    pub decay: f64,
    pub patience: usize,
    /// Training stops once the step size falls below this.
    pub min_learning_rate: f64,
    /// Samples per epoch are capped at this many; larger training sets are
    /// walked in consecutive slices of a reshuffled order.
    pub epoch_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            batch_size: 64,
            learning_rate: 1e-2,
            decay: 0.5,
            patience: 200,
            min_learning_rate: 1e-5,
            epoch_samples: 6400,
            seed: 0,
        }
    }
}

/// Mean squared errors of one network on the three splits (normalized
/// units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: f64,
    pub validation: f64,
    pub generalization: f64,
}

/// Training outcome, including the epoch of the retained snapshot and the
/// validation error of the final epoch's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub report: SplitReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_validation: f64,
}

const RMS_DECAY: f64 = 0.9;
const RMS_EPS: f64 = 1e-8;

/// Mini-batch gradient descent on squared error with RMS-scaled steps.
/// Keeps the parameters with the lowest validation error.
pub fn train_mlp(
    net: Mlp,
    train: &Dataset,
    validation: &Dataset,
    generalization: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train.width != net.inputs() || validation.width != net.inputs() || generalization.width != net.inputs() {
        return Err(Error::Dimension {
            expected: net.inputs(),
            found: train.width,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = net;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let per_epoch = n.min(config.epoch_samples.max(1));
    let batch = config.batch_size.max(1);
    let mut grad = vec![0.0; net.params.len()];
    let mut rms = vec![0.0; net.params.len()];
    let mut lr = config.learning_rate;

    let score = |net: &Mlp| if validation.is_empty() { mse(net, train) } else { mse(net, validation) };
    let mut best_params = net.params.clone();
    let mut best_val = score(&net);
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut final_validation = best_val;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        let mut seen = 0;
        let mut epoch_loss = 0.0;
        while seen < per_epoch {
            let take = batch.min(per_epoch - seen);
            grad.iter_mut().for_each(|g| *g = 0.0);
            for _ in 0..take {
                if cursor == n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let i = order[cursor];
                cursor += 1;
                let x = train.row(i);
                let err = net.forward_unchecked(x) - train.targets[i];
                epoch_loss += err * err;
                net.accumulate_gradient(x, 2.0 * err / take as f64, &mut grad);
            }
            for ((p, g), r) in net.params.iter_mut().zip(&grad).zip(rms.iter_mut()) {
                *r = RMS_DECAY * *r + (1.0 - RMS_DECAY) * g * g;
                *p -= lr * g / (r.sqrt() + RMS_EPS);
            }
            seen += take;
        }
        epochs_run = epoch;
        if !epoch_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss in epoch {epoch} (step size {lr:e}, best validation {best_val:e} at epoch {best_epoch})"
            )));
        }
        let val = score(&net);
        final_validation = val;
        if val < best_val {
            best_val = val;
            best_params.clone_from(&net.params);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            lr *= config.decay;
            since_best = 0;
            if lr < config.min_learning_rate {
                break;
            }
        }
    }
    net.params = best_params;
    let report = SplitReport {
        train: mse(&net, train),
        validation: best_val,
        generalization: mse(&net, generalization),
    };
    Ok(TrainOutcome {
        net,
        report,
        best_epoch,
        epochs_run,
        final_validation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub passed: bool,
    pub max_relative_error: f64,
    /// Parameter index with the largest discrepancy.
    pub worst_param: usize,
}

/// Finite-difference step for gradient checks.
const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
const FD_FLOOR: f64 = 1e-4;

/// Compares analytic and numeric gradient vectors.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradientCheckReport {
    let mut worst = 0;
    let mut max_err = 0.0;
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
        if err > max_err {
            max_err = err;
            worst = k;
        }
    }
    GradientCheckReport {
        passed: max_err <= tolerance,
        max_relative_error: max_err,
        worst_param: worst,
    }
}

/// Central-difference gradient of the output with respect to the parameters.
pub fn numeric_gradient(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.params.len())
        .map(|k| {
            let p = net.params[k];
            probe.params[k] = p + FD_STEP;
            let up = probe.forward_unchecked(input);
            probe.params[k] = p - FD_STEP;
            let down = probe.forward_unchecked(input);
            probe.params[k] = p;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Backpropagated parameter gradients against central finite differences,
/// over every input. Reports the worst parameter.
pub fn gradient_check(net: &Mlp, inputs: &[Vec<f64>], tolerance: f64) -> Result<GradientCheckReport> {
    let mut worst = GradientCheckReport {
        passed: true,
        max_relative_error: 0.0,
        worst_param: 0,
    };
    for x in inputs {
        if x.len() != net.inputs() {
            return Err(Error::Dimension {
                expected: net.inputs(),
                found: x.len(),
            });
        }
        let report = compare_gradients(&net.param_gradient(x), &numeric_gradient(net, x), tolerance);
        if report.max_relative_error >= worst.max_relative_error {
            worst = report;
        }
    }
    worst.passed = worst.max_relative_error <= tolerance;
    Ok(worst)
}

/// Errors of every trained depth for one predicted quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub name: String,
    /// `(hidden layers, errors)` for every depth tried.
    pub depths: Vec<(usize, SplitReport)>,
    /// Depth with the lowest generalization error.
    pub best_depth: usize,
}

impl VariableReport {
    pub fn best(&self) -> SplitReport {
        self.depths
            .iter()
            .find(|(d, _)| *d == self.best_depth)
            .map(|(_, r)| *r)
            .expect("best depth is among the trained depths")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub batch_size: usize,
    /// One entry per state variable, then the reward.
    pub variables: Vec<VariableReport>,
}

impl ModelReport {
    /// Per-depth generalization errors laid out as rows per variable; the
    /// selected depth is marked with `*`.
    pub fn table(&self) -> String {
        let depths: Vec<usize> = self
            .variables
            .first()
            .map(|v| v.depths.iter().map(|(d, _)| *d).collect())
            .unwrap_or_default();
        let mut out = format!("{:<18}", "variable");
        for d in &depths {
            out.push_str(&format!("{:>14}", format!("{d} layer{}", if *d == 1 { "" } else { "s" })));
        }
        out.push('\n');
        for v in &self.variables {
            out.push_str(&format!("{:<18}", v.name));
            for (d, r) in &v.depths {
                let mark = if *d == v.best_depth { "*" } else { " " };
                out.push_str(&format!("{:>14}", format!("{:.2e}{mark}", r.generalization)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub format_version: u32,
    pub benchmark: BenchmarkId,
    /// Statistics of `(s, a)`.
    pub input_norm: Normalizer,
    /// One network per state variable, predicting the normalized change.
    pub delta_nets: Vec<Mlp>,
    pub delta_norm: Normalizer,
    /// Statistics of `(s, a, s')`.
    pub reward_input_norm: Normalizer,
    pub reward_net: Mlp,
    pub reward_norm: Normalizer,
    pub angular: Vec<bool>,
    pub report: ModelReport,
}

/// Change of each state variable over a transition; angle changes take the
/// short way around.
pub fn state_delta(s: &State, next: &State, angular: &[bool]) -> State {
    let mut d = State::zeros(s.dim());
    for j in 0..s.dim() {
        let raw = next[j] - s[j];
        d[j] = if angular[j] { wrap_angle(raw) } else { raw };
    }
    d
}

impl WorldModel {
    pub fn dim(&self) -> usize {
        self.delta_nets.len()
    }

    /// Predicted `(s', r)`: each delta network adds its change to `s`, then
    /// the reward network scores `(s, a, s')` with the predicted `s'`.
    pub fn model_step(&self, s: &State, a: f64) -> Result<(State, f64)> {
        let d = self.dim();
        if s.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                found: s.dim(),
            });
        }
        let mut raw = [0.0f64; 2 * MAX_DIM + 1];
        let mut x = [0.0f64; 2 * MAX_DIM + 1];
        raw[..d].copy_from_slice(s.as_slice());
        raw[d] = a;
        self.input_norm.normalize_into(&raw[..d + 1], &mut x[..d + 1]);
        let mut next = *s;
        for (j, net) in self.delta_nets.iter().enumerate() {
            let delta = self.delta_norm.denormalize_one(j, net.forward_unchecked(&x[..d + 1]));
            next[j] = s[j] + delta;
            if self.angular[j] {
                next[j] = wrap_angle(next[j]);
            }
        }
        raw[d + 1..2 * d + 1].copy_from_slice(next.as_slice());
        self.reward_input_norm.normalize_into(&raw[..2 * d + 1], &mut x[..2 * d + 1]);
        let r = self.reward_norm.denormalize_one(0, self.reward_net.forward_unchecked(&x[..2 * d + 1]));
        if !next.is_finite() || !r.is_finite() {
            return Err(Error::Model(format!(
                "non-finite prediction from state {:?}, action {a}",
                s.as_slice()
            )));
        }
        Ok((next, r))
    }

    /// [`WorldModel::model_step`] for many states at once, with identical
    /// results.
    pub fn step_many(&self, states: &[State], actions: &[f64], next: &mut [State], rewards: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let n = states.len();
        if let Some(bad) = states.iter().find(|s| s.dim() != d) {
            return Err(Error::Dimension {
                expected: d,
                found: bad.dim(),
            });
        }
        let mut x = vec![0.0; (2 * d + 1) * n];
        for (k, (s, a)) in states.iter().zip(actions).enumerate() {
            for j in 0..d {
                x[j * n + k] = (s[j] - self.input_norm.mean[j]) / self.input_norm.std[j];
            }
            x[d * n + k] = (a - self.input_norm.mean[d]) / self.input_norm.std[d];
        }
        let mut out = vec![0.0; n];
        next[..n].copy_from_slice(states);
        for (j, net) in self.delta_nets.iter().enumerate() {
            net.forward_batch(&x[..(d + 1) * n], n, &mut out);
            for k in 0..n {
                let v = states[k][j] + self.delta_norm.denormalize_one(j, out[k]);
                next[k][j] = if self.angular[j] { wrap_angle(v) } else { v };
            }
        }
        let norm = &self.reward_input_norm;
        for k in 0..n {
            for j in 0..d {
                x[j * n + k] = (states[k][j] - norm.mean[j]) / norm.std[j];
                x[(d + 1 + j) * n + k] = (next[k][j] - norm.mean[d + 1 + j]) / norm.std[d + 1 + j];
            }
            x[d * n + k] = (actions[k] - norm.mean[d]) / norm.std[d];
        }
        self.reward_net.forward_batch(&x, n, &mut out);
        for k in 0..n {
            rewards[k] = self.reward_norm.denormalize_one(0, out[k]);
            if !next[k].is_finite() || !rewards[k].is_finite() {
                return Err(Error::Model(format!(
                    "non-finite prediction from state {:?}, action {}",
                    states[k].as_slice(),
                    actions[k]
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads a model and checks it against its benchmark's dimensions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let model: WorldModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                expected: MODEL_FORMAT_VERSION,
                found: model.format_version,
            });
        }
        model.validate(&model.benchmark.spec())?;
        Ok(model)
    }

    pub fn validate(&self, spec: &BenchmarkSpec) -> Result<()> {
        let d = spec.dim;
        let bad = |what: &str| Error::Contract(format!("model {what} does not match {} (D={d})", spec.id));
        if self.delta_nets.len() != d || self.angular.len() != d {
            return Err(bad("variable count"));
        }
        if self.input_norm.width() != d + 1 || self.delta_norm.width() != d {
            return Err(bad("normalizer width"));
        }
        if self.reward_input_norm.width() != 2 * d + 1 || self.reward_norm.width() != 1 {
            return Err(bad("reward normalizer width"));
        }
        if self.delta_nets.iter().any(|n| n.inputs() != d + 1) || self.reward_net.inputs() != 2 * d + 1 {
            return Err(bad("network input width"));
        }
        for net in self.delta_nets.iter().chain(std::iter::once(&self.reward_net)) {
            Mlp::from_params(&net.sizes, net.params.clone()).map_err(|_| bad("network parameter count"))?;
        }
        Ok(())
    }
}

impl Environment for WorldModel {
    fn dim(&self) -> usize {
        WorldModel::dim(self)
    }

    fn step(&self, s: &State, a: f64) -> Result<(State, f64)> {
        self.model_step(s, a)
    }

    fn step_many(&self, states: &[State], actions: &[f64], next: &mut [State], rewards: &mut [f64]) -> Result<()> {
        WorldModel::step_many(self, states, actions, next, rewards)
    }
}

/// Training data for every network of a world model, already normalized.
struct ModelData {
    input_norm: Normalizer,
    delta_norm: Normalizer,
    reward_input_norm: Normalizer,
    reward_norm: Normalizer,
    /// Index `j < D`: delta of variable `j`; index `D`: reward.
    sets: Vec<[Dataset; 3]>,
}

fn build_model_data(batch: &Batch, spec: &BenchmarkSpec, split: &Split) -> ModelData {
    let d = spec.dim;
    let rows = |idx: &[usize]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut sa = Vec::with_capacity(idx.len() * (d + 1));
        let mut delta = Vec::with_capacity(idx.len() * d);
        let mut sas = Vec::with_capacity(idx.len() * (2 * d + 1));
        let mut r = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = &batch.transitions[i];
            sa.extend_from_slice(t.s.as_slice());
            sa.push(t.a);
            delta.extend_from_slice(state_delta(&t.s, &t.s_next, &spec.angular).as_slice());
            sas.extend_from_slice(t.s.as_slice());
            sas.push(t.a);
            sas.extend_from_slice(t.s_next.as_slice());
            r.push(t.r);
        }
        (sa, delta, sas, r)
    };
    let parts = [
        rows(&split.train),
        rows(&split.validation),
        rows(&split.generalization),
    ];
    let input_norm = Normalizer::fit(&parts[0].0, d + 1);
    let delta_norm = Normalizer::fit(&parts[0].1, d);
    let reward_input_norm = Normalizer::fit(&parts[0].2, 2 * d + 1);
    let reward_norm = Normalizer::fit(&parts[0].3, 1);

    let mut sets: Vec<[Dataset; 3]> = (0..=d)
        .map(|j| {
            let width = if j < d { d + 1 } else { 2 * d + 1 };
            [Dataset::new(width), Dataset::new(width), Dataset::new(width)]
        })
        .collect();
    let mut x = vec![0.0; 2 * d + 1];
    for (k, (sa, delta, sas, r)) in parts.iter().enumerate() {
        for i in 0..r.len() {
            input_norm.normalize_into(&sa[i * (d + 1)..(i + 1) * (d + 1)], &mut x[..d + 1]);
            for j in 0..d {
                let target = (delta[i * d + j] - delta_norm.mean[j]) / delta_norm.std[j];
                sets[j][k].push(&x[..d + 1], target);
            }
            reward_input_norm.normalize_into(&sas[i * (2 * d + 1)..(i + 1) * (2 * d + 1)], &mut x);
            sets[d][k].push(&x, (r[i] - reward_norm.mean[0]) / reward_norm.std[0]);
        }
    }
    ModelData {
        input_norm,
        delta_norm,
        reward_input_norm,
        reward_norm,
        sets,
    }
}

/// Variable names used in reports: state dimension labels plus `reward`.
pub fn variable_names(spec: &BenchmarkSpec) -> Vec<String> {
    spec.labels
        .iter()
        .map(|l| format!("d {}", l.name))
        .chain(std::iter::once("reward".to_string()))
        .collect()
}

/// Trains every candidate depth for every network on an 80/10/10 split of
/// the batch and keeps, per network, the depth with the lowest
/// generalization error.
pub fn train_world_model(
    batch: &Batch,
    spec: &BenchmarkSpec,
    depths: &[usize],
    config: &TrainConfig,
) -> Result<WorldModel> {
    if batch.benchmark != spec.id {
        return Err(Error::Contract(format!(
            "batch is for {}, benchmark is {}",
            batch.benchmark, spec.id
        )));
    }
    if depths.is_empty() {
        return Err(Error::Config("at least one network depth is required".into()));
    }
    let groups: Vec<u64> = batch.transitions.iter().map(|t| t.traj).collect();
    let split = split_dataset(batch.len(), Some(&groups), derive_seed(config.seed, &[u64::MAX]))?;
    let data = build_model_data(batch, spec, &split);
    let d = spec.dim;

    let jobs: Vec<(usize, usize)> = (0..=d).flat_map(|v| depths.iter().map(move |&k| (v, k))).collect();
    let outcomes: Vec<Result<TrainOutcome>> = jobs
        .par_iter()
        .map(|&(v, depth)| {
            let [train, val, gen] = &data.sets[v];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[v as u64, depth as u64, 0]));
            let net = Mlp::random(&Mlp::layout(train.width, depth), &mut rng)?;
            let cfg = TrainConfig {
                seed: derive_seed(config.seed, &[v as u64, depth as u64, 1]),
                ..config.clone()
            };
            train_mlp(net, train, val, gen, &cfg)
        })
        .collect();

    let names = variable_names(spec);
    let mut nets: Vec<Option<Mlp>> = vec![None; d + 1];
    let mut variables = Vec::with_capacity(d + 1);
    let mut outcomes = outcomes.into_iter();
    for (v, name) in names.into_iter().enumerate() {
        let mut rows = Vec::with_capacity(depths.len());
        let mut best: Option<(usize, f64, Mlp)> = None;
        for &depth in depths {
            let outcome = outcomes.next().expect("one outcome per job")?;
            rows.push((depth, outcome.report));
            let g = outcome.report.generalization;
            if best.as_ref().is_none_or(|(_, bg, _)| g < *bg) {
                best = Some((depth, g, outcome.net));
            }
        }
        let (best_depth, _, net) = best.expect("depths is nonempty");
        nets[v] = Some(net);
        variables.push(VariableReport {
            name,
            depths: rows,
            best_depth,
        });
    }
    let mut nets: Vec<Mlp> = nets.into_iter().map(|n| n.expect("trained")).collect();
    let reward_net = nets.pop().expect("reward network");
    Ok(WorldModel {
        format_version: MODEL_FORMAT_VERSION,
        benchmark: spec.id,
        input_norm: data.input_norm,
        delta_nets: nets,
        delta_norm: data.delta_norm,
        reward_input_norm: data.reward_input_norm,
        reward_net,
        reward_norm: data.reward_norm,
        angular: spec.angular.clone(),
        report: ModelReport {
            batch_size: batch.len(),
            variables,
        },
    })
}
