//! Reference implementations and random-instance generators for tests.
//!
//! Everything here is deliberately naive and shares no code path with the
//! implementation it checks: losses are recomputed longhand, AUC is counted
//! pair by pair, split invariants are verified from raw index lists.

use crate::catalog::PredictorCatalog;
use crate::dataset::{encode, parse_csv, Dataset};
use crate::hyper::{Activation, HyperparameterSetting, Optimizer, WeightInit};
use crate::network::{Batch, DenseLayer, NetworkWeights};
use crate::rng::SplitMix64;
use crate::split::SplitPlan;
use crate::vault::ModelArtifact;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_ABS_FLOOR: f64 = 1e-8;

/// Mean binary cross-entropy plus (l2/2)·Σw², written out longhand.
pub fn reference_loss(w: &NetworkWeights, xs: &[Vec<f64>], ys: &[f64], act: Activation, l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let mut a = x.clone();
        for (l, layer) in w.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut s = layer.bias[j];
                for (i, ai) in a.iter().enumerate() {
                    s += layer.weights[j * layer.inputs + i] * ai;
                }
                *zj = s;
            }
            let last = l + 1 == w.layers.len();
            a = z
                .iter()
                .map(|&v| {
                    if last {
                        1.0 / (1.0 + (-v).exp())
                    } else {
                        match act {
                            Activation::Relu => v.max(0.0),
                            Activation::Tanh => v.tanh(),
                            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                        }
                    }
                })
                .collect();
        }
        let p = a[0].clamp(1e-12, 1.0 - 1e-12);
        total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    let sq: f64 = w.layers.iter().flat_map(|l| l.weights.iter()).map(|v| v * v).sum();
    total / xs.len() as f64 + 0.5 * l2 * sq
}

#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub weights: NetworkWeights,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub activation: Activation,
    pub l2: f64,
}

/// A small random network (2-4 inputs, 1-2 hidden layers of 2-5 units)
/// with a batch of 1-6 continuous inputs.
pub fn random_gradient_instance(seed: u64) -> GradientInstance {
    let mut rng = SplitMix64::new(seed);
    let input = 2 + rng.below(3) as usize;
    let hidden_layers = 1 + rng.below(2) as usize;
    let units = 2 + rng.below(4) as usize;
    let mut widths = vec![input];
    widths.extend(std::iter::repeat_n(units, hidden_layers));
    widths.push(1);
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer {
            inputs: w[0],
            outputs: w[1],
            weights: (0..w[0] * w[1]).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            bias: (0..w[1]).map(|_| rng.uniform(-0.5, 0.5)).collect(),
        })
        .collect();
    let n = 1 + rng.below(6) as usize;
    let xs = (0..n)
        .map(|_| (0..input).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.below(2) as f64).collect();
    let activation = [Activation::Relu, Activation::Tanh, Activation::Sigmoid][rng.below(3) as usize];
    let l2 = if rng.below(2) == 0 { 0.0 } else { rng.uniform(0.0, 0.1) };
    GradientInstance {
        weights: NetworkWeights { layers },
        xs,
        ys,
        activation,
        l2,
    }
}

fn param(w: &NetworkWeights, l: usize, p: usize) -> f64 {
    let layer = &w.layers[l];
    layer.weights.get(p).copied().unwrap_or_else(|| layer.bias[p - layer.weights.len()])
}

fn param_mut(w: &mut NetworkWeights, l: usize, p: usize) -> &mut f64 {
    let layer = &mut w.layers[l];
    let n_w = layer.weights.len();
    if p < n_w {
        &mut layer.weights[p]
    } else {
        &mut layer.bias[p - n_w]
    }
}

/// Compare analytic gradients with central differences of
/// [`reference_loss`]. Returns the largest relative error, or a description
/// of the first parameter outside tolerance.
pub fn gradient_check(inst: &GradientInstance) -> Result<f64, String> {
    let flat: Vec<f64> = inst.xs.iter().flatten().copied().collect();
    let grads = inst
        .weights
        .gradients(Batch::new(&flat, &inst.ys), inst.activation, inst.l2)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut w = inst.weights.clone();
    for l in 0..w.layers.len() {
        let n_params = w.layers[l].weights.len() + w.layers[l].bias.len();
        for p in 0..n_params {
            let original = *param_mut(&mut w, l, p);
            *param_mut(&mut w, l, p) = original + FD_STEP;
            let plus = reference_loss(&w, &inst.xs, &inst.ys, inst.activation, inst.l2);
            *param_mut(&mut w, l, p) = original - FD_STEP;
            let minus = reference_loss(&w, &inst.xs, &inst.ys, inst.activation, inst.l2);
            *param_mut(&mut w, l, p) = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = param(&grads, l, p);

            let diff = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            if diff > GRAD_ABS_FLOOR && diff > GRAD_REL_TOL * scale {
                return Err(format!(
                    "layer {l} param {p}: analytic {analytic:e} vs numeric {numeric:e} ({:?})",
                    inst.activation
                ));
            }
            if scale > GRAD_ABS_FLOOR {
                worst = worst.max(diff / scale);
            }
        }
    }
    Ok(worst)
}

/// AUC by counting every positive/negative pair, ties counted half.
pub fn pair_count_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0.0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

/// Random scores (with deliberate ties) and labels containing both classes.
pub fn random_scored_labels(seed: u64, max_n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = SplitMix64::new(seed);
    let n = 2 + rng.below(max_n as u64 - 1) as usize;
    let levels = 1 + rng.below(n as u64 + 3);
    let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
    let mut labels: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
    labels[0] = 1.0;
    labels[1] = 0.0;
    (scores, labels)
}

/// Check every split invariant from the raw index lists.
pub fn check_split(labels: &[u8], plan: &SplitPlan, n_folds: usize) -> Result<(), String> {
    let n = labels.len();
    let mut where_ = vec![0u8; n];
    for &i in &plan.train_indices {
        where_[i] += 1;
    }
    for &i in &plan.validation_indices {
        where_[i] += 2;
    }
    if let Some(i) = where_.iter().position(|&w| w != 1 && w != 2) {
        return Err(format!("row {i} is not in exactly one of train/validation"));
    }
    if plan.folds.len() != n_folds {
        return Err(format!("{} folds", plan.folds.len()));
    }
    let mut fold_of = vec![usize::MAX; n];
    for (k, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            if where_[i] != 1 {
                return Err(format!("fold {k} holds non-training row {i}"));
            }
            if fold_of[i] != usize::MAX {
                return Err(format!("row {i} in folds {} and {k}", fold_of[i]));
            }
            fold_of[i] = k;
        }
    }
    if plan.train_indices.iter().any(|&i| fold_of[i] == usize::MAX) {
        return Err("a training row is in no fold".into());
    }
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if hi - lo > 1 {
        return Err(format!("fold sizes {sizes:?}"));
    }

    let total_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let ratio_pos = total_pos / n as f64;
    let mut subsets: Vec<(&str, &[usize])> = vec![("train", &plan.train_indices), ("validation", &plan.validation_indices)];
    for f in &plan.folds {
        subsets.push(("fold", f));
    }
    for (name, subset) in subsets {
        let size = subset.len() as f64;
        let pos = subset.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let neg = size - pos;
        let dev_pos = (pos - size * ratio_pos).abs();
        let dev_neg = (neg - size * (1.0 - ratio_pos)).abs();
        if dev_pos > 1.0 + 1e-9 || dev_neg > 1.0 + 1e-9 {
            return Err(format!(
                "{name}: {pos} positive / {neg} negative deviates from ratio {ratio_pos:.4} by more than one sample"
            ));
        }
    }
    let expected_train = {
        let mut counts = [0usize; 2];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        counts
            .iter()
            .map(|&c| c - (0.2 * c as f64 + 0.5).floor() as usize)
            .sum::<usize>()
    };
    if plan.train_indices.len() != expected_train {
        return Err(format!(
            "train size {} != per-class rounded {expected_train}",
            plan.train_indices.len()
        ));
    }
    Ok(())
}

/// A random all-categorical dataset with `n` rows, 1-5 feature columns and
/// at least 2 rows per class.
pub fn random_dataset(seed: u64, n: usize) -> Dataset {
    assert!(n >= 4);
    let mut rng = SplitMix64::new(seed);
    let n_cols = 1 + rng.below(5) as usize;
    let sizes: Vec<u64> = (0..n_cols).map(|_| 1 + rng.below(5)).collect();
    let pos_rate = rng.uniform(0.05, 0.95);
    let mut csv = String::new();
    for c in 0..n_cols {
        csv.push_str(&format!("f{c},"));
    }
    csv.push_str("label\n");
    for r in 0..n {
        for &s in &sizes {
            csv.push_str(&format!("v{},", rng.below(s)));
        }
        let y = match r {
            0 | 1 => 1,
            2 | 3 => 0,
            _ => u8::from(rng.next_f64() < pos_rate),
        };
        csv.push_str(if y == 1 { "pos\n" } else { "neg\n" });
    }
    parse_csv(csv.as_bytes(), "label").expect("generated dataset is valid")
}

/// A random valid model artifact.
pub fn random_artifact(seed: u64) -> ModelArtifact {
    let mut rng = SplitMix64::new(seed ^ 0xA5A5);
    let d = random_dataset(seed, 8 + rng.below(20) as usize);
    let (_, encoder) = encode(&d);
    let setting = HyperparameterSetting {
        hidden_layer_count: 1 + rng.below(3) as usize,
        hidden_units: 1 + rng.below(6) as usize,
        hidden_activation: [Activation::Relu, Activation::Tanh, Activation::Sigmoid][rng.below(3) as usize],
        learning_rate: rng.uniform(1e-4, 0.5),
        lr_decay: rng.uniform(0.0, 0.1),
        epochs: 1 + rng.below(200) as usize,
        batch_size: 1 + rng.below(64) as usize,
        optimizer: [Optimizer::Sgd, Optimizer::SgdMomentum, Optimizer::Adam][rng.below(3) as usize],
        momentum: rng.uniform(0.0, 0.99),
        dropout_rate: rng.uniform(0.0, 0.6),
        l2_lambda: rng.uniform(0.0, 0.01),
        weight_init: [WeightInit::XavierUniform, WeightInit::HeUniform][rng.below(2) as usize],
        early_stop_patience: rng.below(5) as usize,
    };
    let widths = setting.layer_widths(encoder.width);
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer {
            inputs: w[0],
            outputs: w[1],
            weights: (0..w[0] * w[1]).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            bias: (0..w[1]).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        })
        .collect();
    let horizon = [None, Some(5), Some(10), Some(15)][rng.below(4) as usize];
    let catalog = PredictorCatalog::from_encoder(&encoder);
    ModelArtifact::new(
        horizon,
        setting,
        encoder,
        catalog,
        NetworkWeights { layers },
        format!("random artifact {seed} \u{2013} ünïcode ok"),
    )
}
