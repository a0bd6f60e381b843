//! Squared-error training with Adam, dev-set model selection and metrics.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Scaler, WindowSample};
use crate::error::{Error, Result};
use crate::model::{forward_tape, multi_step_tape, ModelParams, Seq2Graph};
use crate::params::{with_leaves, ParamTree};
use crate::scalar::Scalar;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grad_clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            early_stop_patience: 10,
            seed: 0,
            grad_clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if matches!(self.grad_clip_norm, Some(c) if !(c > 0.0)) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

/// `Σ_d (y_d − ŷ_d)²`.
pub fn mse_loss<T: Scalar>(y_hat: &[T], y_true: &[T]) -> Result<T> {
    if y_hat.len() != y_true.len() {
        return Err(Error::contract(format!(
            "prediction length {} vs target length {}",
            y_hat.len(),
            y_true.len()
        )));
    }
    Ok(y_hat.iter().zip(y_true).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

/// [`mse_loss`] recorded on a tape against a constant target.
pub fn mse_loss_tape<T: Scalar>(tape: &mut Tape<T>, y_hat: Var, y_true: &[T]) -> Result<Var> {
    if tape.value(y_hat).len() != y_true.len() {
        return Err(Error::contract(format!(
            "prediction length {} vs target length {}",
            tape.value(y_hat).len(),
            y_true.len()
        )));
    }
    let y = tape.constant(Tensor::vector(y_true.to_vec()));
    let diff = tape.sub(y_hat, y)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

/// Bias-corrected Adam with moments stored in parameter leaf order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[&Tensor<T>], lr: T, beta1: T, beta2: T, epsilon: T) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn for_tree<A: ParamTree<Leaf = Tensor<T>>>(params: &A, cfg: &TrainConfig) -> Self {
        Self::new(
            &params.leaves(),
            T::lit(cfg.lr),
            T::lit(cfg.beta1),
            T::lit(cfg.beta2),
            T::lit(cfg.epsilon),
        )
    }

    fn check(&self, params: &[&Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "Adam holds {} moments, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Validates, checks finiteness and advances the step counter; returns
    /// the bias corrections, or `None` when the step must be skipped.
    fn begin(&mut self, params: &[&Tensor<T>], grads: &[&Tensor<T>]) -> Result<Option<(T, T)>> {
        self.check(params, grads)?;
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient; Adam step {} skipped", self.step_count + 1);
            return Ok(None);
        }
        self.step_count += 1;
        let k = self.step_count as i32;
        Ok(Some((T::one() - self.beta1.powi(k), T::one() - self.beta2.powi(k))))
    }

    fn update(&mut self, i: usize, p: &mut Tensor<T>, g: &Tensor<T>, (c1, c2): (T, T)) {
        let one = T::one();
        let m = self.first_moment[i].data_mut();
        let v = self.second_moment[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = self.beta1 * m[j] + (one - self.beta1) * gj;
            v[j] = self.beta2 * v[j] + (one - self.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }

    /// One update. A non-finite gradient skips the whole step (nothing
    /// changes) and returns `Ok(false)`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<bool> {
        let view: Vec<&Tensor<T>> = params.iter().map(|p| &**p).collect();
        let Some(c) = self.begin(&view, grads)? else {
            return Ok(false);
        };
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g, c);
        }
        Ok(true)
    }

    /// [`AdamState::step`] over matching parameter and gradient trees.
    pub fn step_tree<A>(&mut self, params: &mut A, grads: &A) -> Result<bool>
    where
        A: ParamTree<Leaf = Tensor<T>>,
    {
        let g = grads.leaves();
        let Some(c) = self.begin(&params.leaves(), &g)? else {
            return Ok(false);
        };
        let mut i = 0;
        params.visit_mut(&mut |p| {
            self.update(i, p, g[i], c);
            i += 1;
        });
        Ok(true)
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(k));
    }
    norm
}

/// What a window's target means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Target holds the next row of all `D` series.
    NextStep,
    /// Target holds the next `horizon` values of one series.
    Horizon { target_series: usize, horizon: usize },
}

fn window_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Seq2Graph<T>,
    params: &ModelParams<Var>,
    window: &WindowSample<T>,
    objective: Objective,
) -> Result<Var> {
    match objective {
        Objective::NextStep => {
            let tr = forward_tape(tape, &model.config, params, &window.inputs)?;
            mse_loss_tape(tape, tr.y_hat, &window.target)
        }
        Objective::Horizon {
            target_series,
            horizon,
        } => {
            let (ys, _) = multi_step_tape(tape, &model.config, params, &window.inputs, target_series, horizon)?;
            let y = tape.concat(&ys)?;
            mse_loss_tape(tape, y, &window.target)
        }
    }
}

/// Loss and parameter gradients (leaf order) of one window.
pub fn window_gradients<T: Scalar>(
    model: &Seq2Graph<T>,
    window: &WindowSample<T>,
    objective: Objective,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::with_capacity(4096);
    let leaves: Vec<Var> = model.params.leaves().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let params = with_leaves(&model.params, &leaves);
    let loss = window_loss(&mut tape, model, &params, window, objective)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let g = leaves
        .iter()
        .map(|&v| grads.take(v).expect("leaf gradient"))
        .collect();
    Ok((value, g))
}

/// Mean per-window loss without recording gradients.
pub fn mean_loss<T: Scalar>(model: &Seq2Graph<T>, windows: &[WindowSample<T>], objective: Objective) -> Result<T> {
    if windows.is_empty() {
        return Err(Error::contract("mean loss of an empty window set"));
    }
    let mut total = T::zero();
    for w in windows {
        let mut tape = Tape::with_capacity(4096);
        let p = model.params.bind_constant(&mut tape);
        let l = window_loss(&mut tape, model, &p, w, objective)?;
        total += tape.value(l).item();
    }
    Ok(total / T::lit(windows.len() as f64))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub best_dev_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    EarlyStopped,
    /// The loss became non-finite; the model holds the last good parameters.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the retained parameters; 0 if none completed.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub status: TrainStatus,
}

/// Optimizes `model` on `train` windows, keeping the parameters with the
/// lowest mean dev loss.
///
/// Each mini-batch minimizes the mean of per-window losses. When `log` is
/// given, one JSON record per epoch is written to it.
pub fn train<T: Scalar>(
    model: &mut Seq2Graph<T>,
    train_windows: &[WindowSample<T>],
    dev_windows: &[WindowSample<T>],
    cfg: &TrainConfig,
    objective: Objective,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_windows.is_empty() || dev_windows.is_empty() {
        return Err(Error::contract("training and dev splits must be non-empty"));
    }
    let mut adam = AdamState::for_tree(&model.params, cfg);
    let mut rng = rng_for(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let start = Instant::now();

    let mut best = model.params.clone();
    let mut best_dev = mean_loss(model, dev_windows, objective)?.as_f64();
    if !best_dev.is_finite() {
        best_dev = f64::INFINITY;
    }
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: 0,
        best_dev_loss: best_dev,
        status: TrainStatus::Completed,
    };
    let mut stale = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor<T>>> = None;
            let mut batch_loss = T::zero();
            for &i in batch {
                let (l, g) = window_gradients(model, &train_windows[i], objective)?;
                batch_loss += l;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            if !batch_loss.is_finite() {
                log::warn!("training loss became non-finite in epoch {epoch}");
                report.status = TrainStatus::Diverged;
                break 'epochs;
            }
            epoch_loss += batch_loss.as_f64();
            let mut grads = acc.expect("non-empty batch");
            let inv = T::one() / T::lit(batch.len() as f64);
            grads.iter_mut().for_each(|g| g.scale_in_place(inv));
            if let Some(c) = cfg.grad_clip_norm {
                clip_gradients(&mut grads, T::lit(c));
            }
            let grad_tree = with_leaves(&model.params, &grads);
            adam.step_tree(&mut model.params, &grad_tree)?;
        }

        let dev = mean_loss(model, dev_windows, objective)?.as_f64();
        if !dev.is_finite() {
            log::warn!("dev loss became non-finite in epoch {epoch}");
            report.status = TrainStatus::Diverged;
            break;
        }
        if dev < best_dev {
            best_dev = dev;
            best = model.params.clone();
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_windows.len() as f64,
            dev_loss: dev,
            best_dev_loss: best_dev,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.6e} dev {:.6e} best {:.6e}",
            rec.train_loss,
            rec.dev_loss,
            rec.best_dev_loss
        );
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        report.history.push(rec);
        if stale >= cfg.early_stop_patience {
            report.status = TrainStatus::EarlyStopped;
            break;
        }
    }
    model.params = best;
    report.best_dev_loss = best_dev;
    Ok(report)
}

/// Next-step predictions for every window, normalized scale.
pub fn predict<T: Scalar>(model: &Seq2Graph<T>, windows: &[WindowSample<T>]) -> Result<Vec<Vec<T>>> {
    windows
        .iter()
        .map(|w| model.forward(&w.inputs).map(|t| t.y_hat))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub series: String,
    pub rmse: f64,
    pub mae: f64,
}

/// Per-series RMSE and MAE of normalized predictions, reported in original
/// units via `scaler`.
pub fn error_metrics(
    names: &[String],
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    scaler: Option<&Scaler>,
) -> Result<Vec<SeriesMetrics>> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let d = names.len();
    if predictions.iter().chain(targets).any(|r| r.len() != d) {
        return Err(Error::contract(format!("every row must have {d} values")));
    }
    let n = predictions.len() as f64;
    Ok((0..d)
        .map(|k| {
            let scale = scaler.map_or(1.0, |s| s.range(k));
            let (mut se, mut ae) = (0.0, 0.0);
            for (p, t) in predictions.iter().zip(targets) {
                let e = (p[k] - t[k]) * scale;
                se += e * e;
                ae += e.abs();
            }
            SeriesMetrics {
                series: names[k].clone(),
                rmse: (se / n).sqrt(),
                mae: ae / n,
            }
        })
        .collect())
}

/// Next-step RMSE/MAE of `model` on `windows`, denormalized by `scaler`.
pub fn evaluate<T: Scalar>(
    model: &Seq2Graph<T>,
    windows: &[WindowSample<T>],
    names: &[String],
    scaler: Option<&Scaler>,
) -> Result<Vec<SeriesMetrics>> {
    if windows.is_empty() {
        return Err(Error::contract("evaluation needs at least one window"));
    }
    let to_f64 = |r: &Vec<T>| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    let preds: Vec<Vec<f64>> = predict(model, windows)?.iter().map(to_f64).collect();
    let targets: Vec<Vec<f64>> = windows.iter().map(|w| to_f64(&w.target)).collect();
    error_metrics(names, &preds, &targets, scaler)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(mse_loss(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        let y = [0.1, 0.2, 0.3, 0.4];
        let yh: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!((mse_loss(&yh, &y).unwrap() - 0.04).abs() < 1e-15);
        assert!(mse_loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    fn adam(lr: f64) -> AdamState<f64> {
        AdamState::new(&[&Tensor::vector(vec![0.0, 0.0])], lr, 0.9, 0.999, 1e-8)
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut s = adam(0.01);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::vector(vec![3.0, -0.5]);
        assert!(s.step(&mut [&mut p], &[&g]).unwrap());
        assert!((p.data()[0] - 0.99).abs() < 1e-8);
        assert!((p.data()[1] + 1.99).abs() < 1e-8);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = adam(0.01);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        s.step(&mut [&mut p], &[&Tensor::vector(vec![1.0, 1.0])]).unwrap();
        let before = p.clone();
        let m_before = s.first_moment[0].clone();
        s.step(&mut [&mut p], &[&Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_ne!(s.first_moment[0], m_before);
        // the decayed first moment is still nonzero, so only a fresh state
        // shows the invariance exactly
        let mut fresh = adam(0.01);
        let mut q = before.clone();
        fresh.step(&mut [&mut q], &[&Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = adam(0.01);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let ok = s.step(&mut [&mut p], &[&Tensor::vector(vec![f64::NAN, 0.0])]).unwrap();
        assert!(!ok);
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn clipping_scales_but_keeps_direction() {
        let mut g: Vec<Tensor<f64>> = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![4.0])];
        let n = clip_gradients(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }

    #[test]
    fn metrics_of_constant_offset() {
        let names = vec!["a".to_string()];
        let p = vec![vec![0.6], vec![0.2]];
        let t = vec![vec![0.5], vec![0.1]];
        let m = error_metrics(&names, &p, &t, None).unwrap();
        assert!((m[0].rmse - 0.1).abs() < 1e-12 && (m[0].mae - 0.1).abs() < 1e-12);
        let m = error_metrics(&names, &t, &t, None).unwrap();
        assert_eq!((m[0].rmse, m[0].mae), (0.0, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
