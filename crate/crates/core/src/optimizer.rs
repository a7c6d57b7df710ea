//! Adam, the mini-batch training loop and test-set evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, ClassificationMetrics};
use crate::network::{init_params, Network, NetworkSpec, Workspace};
use crate::ucr_data::Dataset;

/// Which parameter snapshot a run reports as its primary result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    BestValidation,
    FinalEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub reg_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 500,
            batch_size: 16,
            seed: 0,
            reg_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            selection: Selection::BestValidation,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted so that an untrained model can be pushed through
    /// the same pipeline.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("Adam epsilon must be positive");
        }
        if !(self.reg_factor >= 0.0 && self.reg_factor.is_finite()) {
            return bad("regularization factor must be finite and non-negative");
        }
        Ok(())
    }
}

/// First and second moments mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = params.param_slices().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched when any
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut Network,
    grads: &Network,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.param_slices();
    if g.len() != state.m.len() {
        return Err(Error::Dimension {
            context: "adam tensors",
            expected: state.m.len(),
            got: g.len(),
        });
    }
    for (gt, mt) in g.iter().zip(&state.m) {
        if gt.len() != mt.len() {
            return Err(Error::Dimension {
                context: "adam tensor length",
                expected: mt.len(),
                got: gt.len(),
            });
        }
        if gt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("gradient".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .param_slices_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    /// Forward, backward and update time; evaluation excluded.
    pub seconds: f64,
}

pub fn write_epoch_csv<W: std::io::Write>(writer: W, logs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for l in logs {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io("epoch csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub final_params: Network,
    /// Snapshot at the highest validation macro-F1 (earliest on ties);
    /// the initialization if no epoch completed.
    pub best_params: Network,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub diverged: Option<Divergence>,
    pub train_seconds: f64,
}

impl TrainOutcome {
    pub fn selected(&self, selection: Selection) -> &Network {
        match selection {
            Selection::BestValidation => &self.best_params,
            Selection::FinalEpoch => &self.final_params,
        }
    }
}

fn check_dataset(spec: &NetworkSpec, ds: &Dataset, what: &'static str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.series_len() != spec.input_len() {
        return Err(Error::Dimension {
            context: what,
            expected: spec.input_len(),
            got: ds.series_len(),
        });
    }
    if let Some(&bad) = ds.labels().iter().find(|&&y| y >= spec.class_count()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: spec.class_count(),
        });
    }
    Ok(())
}

/// Shuffled row order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Trains from `init_params(spec, cfg.seed)`.
pub fn train(spec: &NetworkSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = init_params(spec, cfg.seed)?;
    train_from(init, train, val, cfg)
}

/// Trains starting from the given parameters.
pub fn train_from(init: Network, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = init.spec.clone();
    check_dataset(&spec, train, "training series length")?;
    check_dataset(&spec, val, "validation series length")?;

    let t = spec.input_len();
    let n = train.len();
    let mut params = init;
    let mut grads = params.zeros_like();
    let mut ws = Workspace::default();
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;
    let mut train_seconds = 0.0;
    let mut xs = Vec::with_capacity(cfg.batch_size * t);
    let mut ys = Vec::with_capacity(cfg.batch_size);

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(n, cfg.seed, epoch);
        let snapshot = params.clone();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            xs.clear();
            ys.clear();
            for &i in chunk {
                xs.extend_from_slice(train.row(i));
                ys.push(train.labels()[i]);
            }
            let step = params
                .accumulate_gradients(&xs, &ys, cfg.reg_factor, &mut grads, &mut ws)
                .and_then(|loss| {
                    adam_step(&mut params, &grads, &mut adam, cfg)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss.total * chunk.len() as f64,
                Err(Error::Numeric(reason)) => {
                    log::warn!("diverged in epoch {epoch}: non-finite {reason}");
                    params = snapshot;
                    diverged = Some(Divergence { epoch, reason });
                    train_seconds += started.elapsed().as_secs_f64();
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let seconds = started.elapsed().as_secs_f64();
        train_seconds += seconds;

        let val_eval = params
            .loss(val.values(), val.labels(), cfg.reg_factor)
            .and_then(|l| Ok((l, evaluate(&params, val)?)));
        let (val_loss, val_metrics) = match val_eval {
            Ok(v) if v.0.total.is_finite() => v,
            Ok(_) | Err(Error::Numeric(_)) => {
                let reason = "validation loss".to_string();
                log::warn!("diverged in epoch {epoch}: non-finite {reason}");
                diverged = Some(Divergence { epoch, reason });
                break;
            }
            Err(e) => return Err(e),
        };
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() {
            diverged = Some(Divergence {
                epoch,
                reason: "training loss".into(),
            });
            params = snapshot;
            break;
        }
        let val_f1 = val_metrics.macro_f1;
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best.clone_from(&params);
        }
        log::debug!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} f1 {val_f1:.4}",
            val_loss = val_loss.total
        );
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss: val_loss.total,
            val_f1,
            seconds,
        });
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params: best,
        best_epoch,
        logs,
        diverged,
        train_seconds,
    })
}

/// Argmax predictions on `test` scored with macro and weighted averages.
pub fn evaluate(params: &Network, test: &Dataset) -> Result<ClassificationMetrics> {
    check_dataset(&params.spec, test, "test series length")?;
    let preds = params.predict(test.values(), test.len())?;
    metrics::score(&preds, test.labels(), params.spec.class_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Layer, Variant};
    use approx::assert_abs_diff_eq;

    fn toy(n_per_class: usize, shift: f64) -> Dataset {
        // two linearly separable classes in 4 dimensions
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            let j = i as f64 / n_per_class as f64 - 0.5;
            rows.push(vec![0.5 + shift + j * 0.2, -0.5 + j * 0.1, 0.3, j]);
            labels.push(0);
            rows.push(vec![-0.5 + shift + j * 0.2, 0.5 - j * 0.1, -0.3, -j]);
            labels.push(1);
        }
        Dataset::from_rows("toy", &rows, labels, 2).unwrap()
    }

    fn one_param_net(value: f64) -> Network {
        let mut net = init_params(&NetworkSpec::mlp(vec![1, 1]), 0).unwrap();
        let Layer::Mlp(l) = &mut net.layers[0] else {
            unreachable!()
        };
        l.weights = vec![value];
        l.bias = vec![0.0];
        net
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig {
            learning_rate: 0.001,
            ..TrainConfig::default()
        };
        let mut p = one_param_net(0.3);
        let mut g = p.zeros_like();
        let Layer::Mlp(gl) = &mut g.layers[0] else {
            unreachable!()
        };
        gl.weights = vec![0.5];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let Layer::Mlp(l) = &p.layers[0] else {
            unreachable!()
        };
        assert_abs_diff_eq!(l.weights[0] - 0.3, -0.001, epsilon = 1e-6);
        assert_eq!(l.bias[0], 0.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_and_determinism() {
        let cfg = TrainConfig::default();
        let mut p = one_param_net(0.3);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);

        let mut g2 = p.zeros_like();
        g2.fill(0.25);
        let (mut a, mut sa) = (p.clone(), st.clone());
        let (mut b, mut sb) = (p.clone(), st.clone());
        adam_step(&mut a, &g2, &mut sa, &cfg).unwrap();
        adam_step(&mut b, &g2, &mut sb, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);

        g2.fill(f64::NAN);
        assert!(matches!(
            adam_step(&mut a, &g2, &mut sa, &cfg),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let spec = NetworkSpec::kan(Variant::KanEfficient, vec![4, 3, 2], 5);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let ds = toy(6, 0.0);
        let out = train(&spec, &ds, &ds, &cfg).unwrap();
        assert_eq!(out.final_params, init_params(&spec, 0).unwrap());
        assert_eq!(out.logs.len(), 3);
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        for spec in [
            NetworkSpec::kan(Variant::KanOriginal, vec![4, 3, 2], 5),
            NetworkSpec::kan(Variant::KanEfficient, vec![4, 3, 2], 5),
            NetworkSpec::mlp(vec![4, 8, 2]),
        ] {
            let cfg = TrainConfig {
                learning_rate: 1e-4,
                epochs: 50,
                batch_size: 4,
                seed: 3,
                reg_factor: if spec.variant == Variant::Mlp { 0.0 } else { 0.1 },
                ..TrainConfig::default()
            };
            let train_ds = toy(10, 0.0);
            let val_ds = toy(4, 0.05);
            let a = train(&spec, &train_ds, &val_ds, &cfg).unwrap();
            let b = train(&spec, &train_ds, &val_ds, &cfg).unwrap();
            let strip = |l: &[EpochLog]| {
                l.iter()
                    .map(|e| {
                        (
                            e.epoch,
                            e.train_loss.to_bits(),
                            e.val_loss.to_bits(),
                            e.val_f1.to_bits(),
                        )
                    })
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&a.logs), strip(&b.logs));
            assert_eq!(a.final_params, b.final_params);
            assert!(a.logs[49].train_loss < a.logs[0].train_loss, "{:?}", spec.variant);
            let best = evaluate(&a.best_params, &val_ds).unwrap().macro_f1;
            let fin = evaluate(&a.final_params, &val_ds).unwrap().macro_f1;
            assert!(best >= fin);
            assert!(a.diverged.is_none());
        }
    }

    #[test]
    fn epoch_order_is_a_permutation_per_epoch() {
        let a = epoch_order(37, 5, 1);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..37).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(37, 5, 1));
        assert_ne!(a, epoch_order(37, 5, 2));
        assert_ne!(a, epoch_order(37, 6, 1));
        // short final batch: chunks cover every row once
        let consumed: usize = a.chunks(16).map(|c| c.len()).sum();
        assert_eq!(consumed, 37);
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let spec = NetworkSpec::mlp(vec![4, 8, 2]);
        let mut init = init_params(&spec, 0).unwrap();
        init.fill(1e300);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let ds = toy(4, 0.0);
        let out = train_from(init.clone(), &ds, &ds, &cfg).unwrap();
        assert_eq!(out.diverged.as_ref().unwrap().epoch, 1);
        assert!(out.logs.is_empty());
        assert_eq!(out.best_params, init);
    }

    #[test]
    fn evaluate_examples() {
        let spec = NetworkSpec::mlp(vec![4, 2]);
        let mut net = init_params(&spec, 0).unwrap();
        net.fill(0.0);
        let ds = toy(3, 0.0);
        let m = evaluate(&net, &ds).unwrap();
        // everything predicted as class 0
        assert_eq!(m.recall[0], 1.0);
        assert_eq!(m.recall[1], 0.0);

        let Layer::Mlp(l) = &mut net.layers[0] else {
            unreachable!()
        };
        l.weights = vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0];
        assert_eq!(evaluate(&net, &ds).unwrap().macro_f1, 1.0);

        let wrong = Dataset::from_rows("w", &[vec![0.0; 3]], vec![0], 2).unwrap();
        assert!(evaluate(&net, &wrong).is_err());
    }

    #[test]
    fn epoch_csv_header() {
        let mut out = Vec::new();
        write_epoch_csv(
            &mut out,
            &[EpochLog {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.6,
                val_f1: 0.7,
                seconds: 0.01,
            }],
        )
        .unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("epoch,train_loss,val_loss,val_f1,seconds\n"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta1: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epsilon: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
