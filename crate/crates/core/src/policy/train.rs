//! Behavior-cloning trainer.
//!
//! Minibatch Adam on the mean loss against smoothed labels. Per-sample
//! gradients are summed in 32.32 fixed point, so a batch gradient does not
//! depend on the order of its samples and training is reproducible from the
//! seed alone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledSample;
use super::loss::{loss_grad_logits, loss_terms_raw};
use super::net::{backward, forward, load_input, probs_from_logits, Architecture, PolicyModel, Scratch};
use super::{smooth_label, ClassDistribution, PolicyError, Result, NUM_CLASSES};

const FIXED_SCALE: f64 = (1u64 << 32) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch: 32, seed: 0, lambda: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Loss and accuracy of a model over a sample set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub samples: usize,
    pub loss: f64,
    /// Exact-class accuracy, `[yaw, pitch]`.
    pub exact: [f64; 2],
    /// Accuracy within one class, `[yaw, pitch]`.
    pub within_one: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train: EvalStats,
    pub validation: Option<EvalStats>,
    pub model_digest: String,
}

fn targets(s: &LabeledSample) -> Result<[[f64; NUM_CLASSES]; 2]> {
    Ok([smooth_label(s.c_yaw)?.0, smooth_label(s.c_pitch)?.0])
}

/// Mean loss and accuracies of `model` on `samples`.
pub fn evaluate(model: &PolicyModel, samples: &[LabeledSample]) -> Result<EvalStats> {
    let mut s = Scratch::new(model.architecture());
    let mut st = EvalStats { samples: samples.len(), ..Default::default() };
    if samples.is_empty() {
        return Ok(st);
    }
    for smp in samples {
        let pred = model.predict_with(&smp.image, &mut s)?;
        let t = targets(smp)?;
        st.loss += loss_terms_raw([&pred.yaw.0, &pred.pitch.0], [&t[0], &t[1]], model.lambda).total;
        for (h, (got, want)) in [(pred.action.c_yaw, smp.c_yaw), (pred.action.c_pitch, smp.c_pitch)].into_iter().enumerate() {
            if got == want {
                st.exact[h] += 1.0;
            }
            if got.abs_diff(want) <= 1 {
                st.within_one[h] += 1.0;
            }
        }
    }
    let n = samples.len() as f64;
    st.loss /= n;
    for h in 0..2 {
        st.exact[h] /= n;
        st.within_one[h] /= n;
    }
    Ok(st)
}

/// Trains a fresh model of architecture `arch` on `train`, reporting on
/// `validation` when non-empty.
pub fn train_bc(
    arch: Architecture,
    train: &[LabeledSample],
    validation: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(PolicyModel, TrainReport)> {
    if train.is_empty() {
        return Err(PolicyError::Dataset("empty training set".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(PolicyError::Dataset(format!("invalid trainer settings {cfg:?}")));
    }
    for smp in train.iter().chain(validation) {
        let (w, h) = smp.image.dimensions();
        if (w as usize, h as usize) != (arch.input_w, arch.input_h) {
            return Err(PolicyError::DimensionMismatch {
                expected: (arch.input_w as u32, arch.input_h as u32),
                found: (w, h),
            });
        }
    }
    let all_targets: Vec<_> = train.iter().map(targets).collect::<Result<_>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut model = PolicyModel::init(arch, cfg.lambda, &mut init_rng)?;

    let n_params = arch.parameter_count();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut acc = vec![0i64; n_params];
    let mut g = vec![0.0f32; n_params];
    let mut s = Scratch::new(&arch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t_step = 0i32;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            acc.fill(0);
            for &i in batch {
                load_input(&arch, &train[i].image, &mut s)?;
                forward(&arch, model.params(), &mut s);
                let p = [probs_from_logits(&s.logits[0]), probs_from_logits(&s.logits[1])];
                let t = &all_targets[i];
                epoch_loss += loss_terms_raw([&p[0], &p[1]], [&t[0], &t[1]], cfg.lambda).total;
                let dl = [0, 1].map(|h| loss_grad_logits(&t[h], &p[h]).map(|x| x as f32));
                backward(&arch, model.params(), &mut s, dl, &mut g);
                for (a, &gi) in acc.iter_mut().zip(&g) {
                    *a += (gi as f64 * FIXED_SCALE).round() as i64;
                }
            }
            t_step += 1;
            let inv_n = 1.0 / (batch.len() as f64 * FIXED_SCALE);
            let bc1 = 1.0 - cfg.beta1.powi(t_step);
            let bc2 = 1.0 - cfg.beta2.powi(t_step);
            for (k, w) in model.params_mut().iter_mut().enumerate() {
                let grad = acc[k] as f64 * inv_n;
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
                let step = cfg.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.eps);
                *w = (*w as f64 - step) as f32;
            }
        }
        epochs.push(EpochStats { epoch, train_loss: epoch_loss / train.len() as f64 });
    }

    let train_stats = evaluate(&model, train)?;
    let validation = if validation.is_empty() { None } else { Some(evaluate(&model, validation)?) };
    let report = TrainReport { epochs, train: train_stats, validation, model_digest: model.digest() };
    Ok((model, report))
}

/// Mean entropy of the smoothed targets of `samples`, summed over heads.
pub fn mean_target_entropy(samples: &[LabeledSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let t = targets(s)?;
        total += super::entropy(&t[0]) + super::entropy(&t[1]);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Smoothed target distributions for one sample.
pub fn sample_targets(s: &LabeledSample) -> Result<(ClassDistribution, ClassDistribution)> {
    let t = targets(s)?;
    Ok((ClassDistribution(t[0]), ClassDistribution(t[1])))
}
