//! Task-specific training for the three models: BCE fault classifier with
//! the trajectory-level model-saving rules, CE lead-time interval classifier,
//! MSE lead-time regressor, plus probability-threshold calibration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowedData;
use crate::error::{Error, Result};
use crate::nn::{
    optimize_step, sigmoid, AdamParams, AdamState, LossKind, LossTarget, Network, NetworkSpec,
    OutputActivation,
};
use crate::num::{real, Real};

/// Convolution/dense sizes shared by all three models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetHyper {
    pub filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    pub hidden_width: usize,
}

impl Default for NetHyper {
    fn default() -> Self {
        NetHyper {
            filters: 8,
            kernel_width: 5,
            pool_width: 2,
            hidden_width: 32,
        }
    }
}

impl NetHyper {
    pub fn spec(
        &self,
        m: usize,
        d: usize,
        output_width: usize,
        activation: OutputActivation,
    ) -> NetworkSpec {
        NetworkSpec {
            input_steps: m,
            input_features: d,
            filters: self.filters,
            kernel_width: self.kernel_width,
            conv_stride: 1,
            pool_width: self.pool_width,
            hidden_width: self.hidden_width,
            output_width,
            output_activation: activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams<T>,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 64,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

/// Model-saving policy for the fault classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaveCriteria<T> {
    /// Maximum acceptable trajectory-level FPR for saving rule 3.
    pub max_fpr: T,
}

impl<T: Real> Default for SaveCriteria<T> {
    fn default() -> Self {
        SaveCriteria { max_fpr: T::zero() }
    }
}

/// Which saving rule fired for an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveRule {
    /// Validation trajectory FPR decreased.
    ValFprReduced,
    /// Validation FPR unchanged, validation lead time increased, and
    /// training FPR decreased.
    LeadImprovedTrainFprReduced,
    /// Both FPRs at or below the configured maximum.
    BothUnderMax,
}

/// Per-epoch metrics the saving rules look at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochObservation<T> {
    pub val_fpr: T,
    /// Mean validation lead over detected unsafe trajectories; `None` when
    /// nothing is detected (treated as the worst possible lead).
    pub val_lead: Option<T>,
    pub train_fpr: T,
}

fn lead_gt<T: Real>(a: Option<T>, b: Option<T>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x > y,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Saving decision for every epoch of a metric history. The first epoch is
/// the comparison baseline and can only be saved through rule 3; afterwards
/// each epoch is compared against the snapshot of the last saved epoch.
pub fn save_decisions<T: Real>(
    history: &[EpochObservation<T>],
    criteria: &SaveCriteria<T>,
) -> Vec<Option<SaveRule>> {
    let mut out = Vec::with_capacity(history.len());
    let mut best: Option<EpochObservation<T>> = None;
    for obs in history {
        let rule = match &best {
            None => {
                if obs.val_fpr <= criteria.max_fpr && obs.train_fpr <= criteria.max_fpr {
                    Some(SaveRule::BothUnderMax)
                } else {
                    None
                }
            }
            Some(b) => {
                if obs.val_fpr < b.val_fpr {
                    Some(SaveRule::ValFprReduced)
                } else if obs.val_fpr == b.val_fpr
                    && lead_gt(obs.val_lead, b.val_lead)
                    && obs.train_fpr < b.train_fpr
                {
                    Some(SaveRule::LeadImprovedTrainFprReduced)
                } else if obs.val_fpr <= criteria.max_fpr && obs.train_fpr <= criteria.max_fpr {
                    Some(SaveRule::BothUnderMax)
                } else {
                    None
                }
            }
        };
        match (&mut best, rule) {
            (b @ None, _) => *b = Some(*obs),
            (Some(b), Some(_)) => *b = *obs,
            _ => {}
        }
        out.push(rule);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FaultClassifier,
    LeadIntervalClassifier,
    LeadRegressor,
}

/// One training-log row; unused metric columns stay empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog<T> {
    pub epoch: usize,
    pub mean_loss: T,
    pub train_fpr: Option<T>,
    pub val_fpr: Option<T>,
    pub val_lead: Option<T>,
    pub val_macro_accuracy: Option<T>,
    pub val_mae: Option<T>,
    pub saved: bool,
    pub rule: Option<SaveRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub task: TaskKind,
    pub network: Network<T>,
    /// Probability threshold p*; 0.5 until calibrated. Fault classifier only.
    pub threshold: T,
    pub log: Vec<EpochLog<T>>,
    /// Epoch whose snapshot was kept; `None` means no epoch satisfied any
    /// saving criterion and the final epoch was returned with a warning.
    pub saved_epoch: Option<usize>,
}

/// Trajectory-level detection summary of a fault classifier at threshold `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSummary<T> {
    /// Fraction of safe trajectories with at least one flagged window.
    pub traj_fpr: T,
    /// Mean lead over unsafe trajectories that were detected.
    pub mean_lead: Option<T>,
    /// First flagged window index per trajectory.
    pub detections: Vec<Option<usize>>,
    pub n_safe: usize,
    pub n_unsafe: usize,
    pub n_detected_unsafe: usize,
}

/// Fraction of fault-free windows flagged at threshold `p` (window-level FPR).
pub fn window_fpr<T: Real>(net: &Network<T>, data: &WindowedData<T>, p: T) -> Result<T> {
    let mut buf = Vec::new();
    let mut negatives = 0usize;
    let mut flagged = 0usize;
    for tw in &data.trajs {
        for w in &tw.windows {
            if w.label.fault {
                continue;
            }
            negatives += 1;
            tw.fill_input(w, &mut buf);
            let z = net.forward(&buf)?[0];
            if sigmoid(z) > p {
                flagged += 1;
            }
        }
    }
    if negatives == 0 {
        return Ok(T::zero());
    }
    Ok(real::<T>(flagged as f64) / real(negatives as f64))
}

/// First flagged window per trajectory plus the aggregate FPR/lead metrics.
pub fn detection_summary<T: Real>(
    net: &Network<T>,
    data: &WindowedData<T>,
    p: T,
) -> Result<DetectionSummary<T>> {
    let mut buf = Vec::new();
    let mut detections = Vec::with_capacity(data.trajs.len());
    let mut n_safe = 0;
    let mut n_fp = 0;
    let mut n_unsafe = 0;
    let mut lead_sum = T::zero();
    let mut n_detected_unsafe = 0;
    for tw in &data.trajs {
        let mut hit = None;
        for (wi, w) in tw.windows.iter().enumerate() {
            tw.fill_input(w, &mut buf);
            let z = net.forward(&buf)?[0];
            if sigmoid(z) > p {
                hit = Some(wi);
                break;
            }
        }
        if tw.is_unsafe {
            n_unsafe += 1;
            if let Some(wi) = hit {
                if let Some(t_fall) = tw.t_fall {
                    lead_sum += t_fall - tw.windows[wi].end_time;
                    n_detected_unsafe += 1;
                }
            }
        } else {
            n_safe += 1;
            if hit.is_some() {
                n_fp += 1;
            }
        }
        detections.push(hit);
    }
    let traj_fpr = if n_safe == 0 {
        T::zero()
    } else {
        real::<T>(n_fp as f64) / real(n_safe as f64)
    };
    let mean_lead = if n_detected_unsafe > 0 {
        Some(lead_sum / real(n_detected_unsafe as f64))
    } else {
        None
    };
    Ok(DetectionSummary {
        traj_fpr,
        mean_lead,
        detections,
        n_safe,
        n_unsafe,
        n_detected_unsafe,
    })
}

struct MiniBatcher<T: Real> {
    indices: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    batch_size: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> MiniBatcher<T> {
    fn new(indices: Vec<(usize, usize)>, seed: u64, batch_size: usize) -> Self {
        MiniBatcher {
            indices,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_size,
            _marker: std::marker::PhantomData,
        }
    }

    /// Run one epoch: shuffle, accumulate mean-gradient batches, step Adam.
    /// Returns the mean sample loss.
    fn run_epoch<F>(
        &mut self,
        net: &mut Network<T>,
        adam: &mut AdamState<T>,
        hyper: &AdamParams<T>,
        data: &WindowedData<T>,
        mut sample: F,
    ) -> Result<T>
    where
        F: FnMut(&Network<T>, &WindowedData<T>, (usize, usize), &mut Vec<T>) -> Result<(T, Vec<T>)>,
    {
        let layout = net.spec.layout();
        self.indices.shuffle(&mut self.rng);
        let mut buf = Vec::new();
        let mut loss_sum = T::zero();
        let mut grad_acc = vec![T::zero(); net.params.len()];
        for chunk in self.indices.chunks(self.batch_size) {
            for g in &mut grad_acc {
                *g = T::zero();
            }
            let scale = T::one() / real(chunk.len() as f64);
            for &idx in chunk {
                let (l, g) = sample(net, data, idx, &mut buf)?;
                loss_sum += l;
                for (acc, gi) in grad_acc.iter_mut().zip(&g) {
                    *acc += *gi * scale;
                }
            }
            optimize_step(&mut net.params, &grad_acc, adam, hyper, &layout)?;
        }
        Ok(loss_sum / real(self.indices.len().max(1) as f64))
    }
}

/// Train the critical fault classifier with BCE on base-feature windows.
/// Each epoch is kept only when one of the saving rules fires; if none ever
/// fires the final epoch is returned with `saved_epoch = None`.
pub fn train_fault_classifier<T: Real>(
    train: &WindowedData<T>,
    val: &WindowedData<T>,
    hyper: &NetHyper,
    cfg: &TrainConfig<T>,
    criteria: &SaveCriteria<T>,
) -> Result<TrainedModel<T>> {
    let indices = train.all_window_indices();
    if indices.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = train.variant.dim();
    let spec = hyper.spec(train.m, d, 1, OutputActivation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::init_random(spec, &mut rng)?;
    let mut adam = AdamState::new(net.params.len());
    let mut batcher = MiniBatcher::new(indices, cfg.seed ^ 0x5eed_0001, cfg.batch_size);

    let half = real::<T>(0.5);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut history: Vec<EpochObservation<T>> = Vec::with_capacity(cfg.epochs);
    let mut best_params: Option<(usize, Vec<T>)> = None;

    for epoch in 1..=cfg.epochs {
        let mean_loss = batcher.run_epoch(
            &mut net,
            &mut adam,
            &cfg.adam,
            train,
            |net, data, (ti, wi), buf| {
                let tw = &data.trajs[ti];
                let w = &tw.windows[wi];
                tw.fill_input(w, buf);
                net.backward_loss(buf, &LossTarget::Binary(w.label.fault), LossKind::Bce)
            },
        )?;

        let train_sum = detection_summary(&net, train, half)?;
        let val_sum = detection_summary(&net, val, half)?;
        history.push(EpochObservation {
            val_fpr: val_sum.traj_fpr,
            val_lead: val_sum.mean_lead,
            train_fpr: train_sum.traj_fpr,
        });
        let rule = save_decisions(&history, criteria)[epoch - 1];
        if rule.is_some() {
            best_params = Some((epoch, net.params.clone()));
        }
        log.push(EpochLog {
            epoch,
            mean_loss,
            train_fpr: Some(train_sum.traj_fpr),
            val_fpr: Some(val_sum.traj_fpr),
            val_lead: val_sum.mean_lead,
            val_macro_accuracy: None,
            val_mae: None,
            saved: rule.is_some(),
            rule,
        });
    }

    let (saved_epoch, params) = match best_params {
        Some((e, p)) => (Some(e), p),
        None => (None, net.params.clone()),
    };
    net.params = params;
    Ok(TrainedModel {
        task: TaskKind::FaultClassifier,
        network: net,
        threshold: half,
        log,
        saved_epoch,
    })
}

fn macro_accuracy<T: Real>(net: &Network<T>, data: &WindowedData<T>) -> Result<Option<T>> {
    let mut buf = Vec::new();
    let mut correct = [0usize; 3];
    let mut total = [0usize; 3];
    for tw in &data.trajs {
        for w in &tw.windows {
            let Some(class) = w.label.interval else { continue };
            tw.fill_input(w, &mut buf);
            let logits = net.forward(&buf)?;
            total[class as usize] += 1;
            if argmax(&logits) == class as usize {
                correct[class as usize] += 1;
            }
        }
    }
    let mut acc_sum = T::zero();
    let mut present = 0;
    for c in 0..3 {
        if total[c] > 0 {
            acc_sum += real::<T>(correct[c] as f64 / total[c] as f64);
            present += 1;
        }
    }
    if present == 0 {
        return Ok(None);
    }
    Ok(Some(acc_sum / real(present as f64)))
}

pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Train the three-class lead-time interval classifier with CE on
/// fault-positive extended-feature windows; the best validation macro
/// accuracy is kept. `require_all_classes` guards against degenerate
/// training sets.
pub fn train_lead_classifier<T: Real>(
    train: &WindowedData<T>,
    val: &WindowedData<T>,
    hyper: &NetHyper,
    cfg: &TrainConfig<T>,
    require_all_classes: bool,
) -> Result<TrainedModel<T>> {
    let indices = train.fault_window_indices();
    if indices.is_empty() {
        return Err(Error::EmptySet);
    }
    if require_all_classes {
        let mut seen = [false; 3];
        for &(ti, wi) in &indices {
            if let Some(c) = train.trajs[ti].windows[wi].label.interval {
                seen[c as usize] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::ClassMissing { class: missing });
        }
    }

    let d = train.variant.dim();
    let spec = hyper.spec(train.m, d, 3, OutputActivation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::init_random(spec, &mut rng)?;
    let mut adam = AdamState::new(net.params.len());
    let mut batcher = MiniBatcher::new(indices, cfg.seed ^ 0x5eed_0002, cfg.batch_size);

    let mut log = Vec::new();
    let mut best: Option<(usize, T, Vec<T>)> = None;
    for epoch in 1..=cfg.epochs {
        let mean_loss = batcher.run_epoch(
            &mut net,
            &mut adam,
            &cfg.adam,
            train,
            |net, data, (ti, wi), buf| {
                let tw = &data.trajs[ti];
                let w = &tw.windows[wi];
                tw.fill_input(w, buf);
                let class = w.label.interval.expect("fault window has a class") as usize;
                net.backward_loss(buf, &LossTarget::Class(class), LossKind::Ce)
            },
        )?;
        let acc = macro_accuracy(&net, val)?.unwrap_or_else(T::zero);
        let improved = best.as_ref().map_or(true, |(_, b, _)| acc > *b);
        if improved {
            best = Some((epoch, acc, net.params.clone()));
        }
        log.push(EpochLog {
            epoch,
            mean_loss,
            train_fpr: None,
            val_fpr: None,
            val_lead: None,
            val_macro_accuracy: Some(acc),
            val_mae: None,
            saved: improved,
            rule: None,
        });
    }
    let (saved_epoch, _, params) = best.expect("at least one epoch");
    net.params = params;
    Ok(TrainedModel {
        task: TaskKind::LeadIntervalClassifier,
        network: net,
        threshold: real(0.5),
        log,
        saved_epoch: Some(saved_epoch),
    })
}

fn regressor_indices<T: Real>(data: &WindowedData<T>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ti, tw) in data.trajs.iter().enumerate() {
        for (wi, w) in tw.windows.iter().enumerate() {
            if let Some(lead) = w.label.lead {
                if lead < T::one() {
                    out.push((ti, wi));
                }
            }
        }
    }
    out
}

fn regressor_mae<T: Real>(net: &Network<T>, data: &WindowedData<T>) -> Result<Option<T>> {
    let idx = regressor_indices(data);
    if idx.is_empty() {
        return Ok(None);
    }
    let mut buf = Vec::new();
    let mut sum = T::zero();
    for &(ti, wi) in &idx {
        let tw = &data.trajs[ti];
        let w = &tw.windows[wi];
        tw.fill_input(w, &mut buf);
        let pred = net.forward(&buf)?[0];
        sum += (pred - w.label.lead.unwrap()).abs();
    }
    Ok(Some(sum / real(idx.len() as f64)))
}

/// Train the lead-time regressor with MSE on fault windows whose lead lies
/// in [0, 1); the sigmoid output keeps predictions inside that range
/// structurally. The best validation MAE is kept.
pub fn train_lead_regressor<T: Real>(
    train: &WindowedData<T>,
    val: &WindowedData<T>,
    hyper: &NetHyper,
    cfg: &TrainConfig<T>,
) -> Result<TrainedModel<T>> {
    let indices = regressor_indices(train);
    if indices.is_empty() {
        return Err(Error::EmptyTargetRange);
    }
    let d = train.variant.dim();
    let spec = hyper.spec(train.m, d, 1, OutputActivation::Sigmoid);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::init_random(spec, &mut rng)?;
    let mut adam = AdamState::new(net.params.len());
    let mut batcher = MiniBatcher::new(indices, cfg.seed ^ 0x5eed_0003, cfg.batch_size);

    let mut log = Vec::new();
    let mut best: Option<(usize, T, Vec<T>)> = None;
    for epoch in 1..=cfg.epochs {
        let mean_loss = batcher.run_epoch(
            &mut net,
            &mut adam,
            &cfg.adam,
            train,
            |net, data, (ti, wi), buf| {
                let tw = &data.trajs[ti];
                let w = &tw.windows[wi];
                tw.fill_input(w, buf);
                let target = w.label.lead.expect("regressor window has a lead");
                net.backward_loss(buf, &LossTarget::Value(target), LossKind::Mse)
            },
        )?;
        let mae = regressor_mae(&net, val)?.unwrap_or_else(|| real(f64::MAX));
        let improved = best.as_ref().map_or(true, |(_, b, _)| mae < *b);
        if improved {
            best = Some((epoch, mae, net.params.clone()));
        }
        log.push(EpochLog {
            epoch,
            mean_loss,
            train_fpr: None,
            val_fpr: None,
            val_lead: None,
            val_macro_accuracy: None,
            val_mae: Some(mae),
            saved: improved,
            rule: None,
        });
    }
    let (saved_epoch, _, params) = best.expect("at least one epoch");
    net.params = params;
    Ok(TrainedModel {
        task: TaskKind::LeadRegressor,
        network: net,
        threshold: real(0.5),
        log,
        saved_epoch: Some(saved_epoch),
    })
}

/// Result of the probability-threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration<T> {
    pub p_star: T,
    pub val_fpr: T,
    /// Mean validation lead at p*.
    pub val_lead: Option<T>,
    /// Mean validation lead at the default 0.5 threshold, for the trade-off
    /// record.
    pub val_lead_at_half: Option<T>,
}

/// Smallest p* on the 0.01 grid whose trajectory-level validation FPR meets
/// the target; errors with the best achievable FPR when even 0.99 fails.
pub fn calibrate_threshold<T: Real>(
    model: &TrainedModel<T>,
    val: &WindowedData<T>,
    target_fpr: T,
) -> Result<ThresholdCalibration<T>> {
    let lead_at_half = detection_summary(&model.network, val, real(0.5))?.mean_lead;
    let mut best_fpr = T::infinity();
    let mut best_p = T::zero();
    for step in 1..=99u32 {
        let p = real::<T>(step as f64 / 100.0);
        let sum = detection_summary(&model.network, val, p)?;
        if sum.traj_fpr <= target_fpr {
            return Ok(ThresholdCalibration {
                p_star: p,
                val_fpr: sum.traj_fpr,
                val_lead: sum.mean_lead,
                val_lead_at_half: lead_at_half,
            });
        }
        if sum.traj_fpr < best_fpr {
            best_fpr = sum.traj_fpr;
            best_p = p;
        }
    }
    Err(Error::ThresholdUnattainable {
        target: target_fpr.to_f64_lossy(),
        best_fpr: best_fpr.to_f64_lossy(),
        best_p: best_p.to_f64_lossy(),
    })
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<T> {
    pub p: T,
    pub window_fpr: T,
    pub traj_fpr: T,
    pub mean_lead: Option<T>,
    pub n_detected_unsafe: usize,
}

/// Sweep the probability threshold over a grid, reporting window-level FPR
/// and detection metrics at each point.
pub fn threshold_sweep<T: Real>(
    model: &TrainedModel<T>,
    data: &WindowedData<T>,
    grid: &[T],
) -> Result<Vec<SweepPoint<T>>> {
    let mut out = Vec::with_capacity(grid.len());
    for &p in grid {
        let wf = window_fpr(&model.network, data, p)?;
        let sum = detection_summary(&model.network, data, p)?;
        out.push(SweepPoint {
            p,
            window_fpr: wf,
            traj_fpr: sum.traj_fpr,
            mean_lead: sum.mean_lead,
            n_detected_unsafe: sum.n_detected_unsafe,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSeries, FeatureVariant, TrajectoryWindows, Window, WindowLabel};
    use crate::forces::ProfileKind;

    // Synthetic windowed data: safe trajectories carry low-magnitude
    // features, unsafe ones ramp up after their fault time.
    fn toy_windowed(
        n_safe: usize,
        n_unsafe: usize,
        variant: FeatureVariant,
        seed: u64,
    ) -> WindowedData<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 10;
        let ts = 0.1;
        let horizon = 4.0;
        let d = variant.dim();
        let n = 60;
        let mut trajs = Vec::new();
        for i in 0..n_safe + n_unsafe {
            let is_unsafe = i >= n_safe;
            let t_ft = 2.0;
            let t_fall = 5.0;
            let mut rows = Vec::with_capacity(n * d);
            let mut times = Vec::with_capacity(n);
            for j in 0..n {
                let t = j as f64 * ts;
                times.push(t);
                let active = is_unsafe && t >= t_ft;
                for c in 0..d {
                    let noise = rng.gen::<f64>() * 0.05;
                    let v = if active {
                        1.0 + (t - t_ft) * 0.5 + noise
                    } else {
                        noise
                    };
                    rows.push(if c % 2 == 0 { v } else { -v });
                }
            }
            let series = FeatureSeries { dim: d, times: times.clone(), rows };
            let mut windows = Vec::new();
            for start in 0..=(n - m) {
                let end = start + m - 1;
                let end_time = times[end];
                let fault = is_unsafe && end_time >= t_ft;
                let label = if fault {
                    let lead = (t_fall - end_time).clamp(0.0, horizon);
                    WindowLabel {
                        fault: true,
                        lead: Some(lead),
                        interval: Some(crate::dataset::interval_class(lead)),
                    }
                } else {
                    WindowLabel { fault: false, lead: None, interval: None }
                };
                windows.push(Window { start, end, end_time, label });
            }
            trajs.push(TrajectoryWindows {
                id: format!("toy_{i:02}"),
                kind: ProfileKind::Abrupt,
                is_unsafe,
                t_ft: Some(t_ft),
                t_fall: is_unsafe.then_some(t_fall),
                ft_index: Some((t_ft / ts) as i64),
                fall_index: is_unsafe.then_some((t_fall / ts) as usize),
                sample_period: ts,
                variant,
                m,
                stride: 1,
                horizon,
                series,
                windows,
                too_short: false,
            });
        }
        WindowedData { trajs, variant, m, stride: 1, horizon }
    }

    #[test]
    fn save_rules_match_the_hand_trace() {
        let history = [
            EpochObservation { val_fpr: 0.1, val_lead: Some(1.0), train_fpr: 0.1 },
            EpochObservation { val_fpr: 0.05, val_lead: Some(1.0), train_fpr: 0.08 },
            EpochObservation { val_fpr: 0.05, val_lead: Some(1.2), train_fpr: 0.06 },
            EpochObservation { val_fpr: 0.07, val_lead: Some(1.5), train_fpr: 0.06 },
        ];
        let decisions = save_decisions(&history, &SaveCriteria { max_fpr: 0.0 });
        assert_eq!(
            decisions,
            vec![
                None,
                Some(SaveRule::ValFprReduced),
                Some(SaveRule::LeadImprovedTrainFprReduced),
                None,
            ]
        );
    }

    #[test]
    fn save_rules_agree_with_an_exhaustive_hand_oracle() {
        // Independent oracle: literal transcription of the three rules with
        // an explicit best-so-far snapshot.
        fn oracle(h: &[EpochObservation<f64>], max_fpr: f64) -> Vec<bool> {
            let mut saved = Vec::new();
            let mut best: Option<EpochObservation<f64>> = None;
            for (i, cur) in h.iter().enumerate() {
                let mut s = false;
                if i == 0 {
                    if cur.val_fpr <= max_fpr && cur.train_fpr <= max_fpr {
                        s = true;
                    }
                    best = Some(*cur);
                } else {
                    let b = best.unwrap();
                    let rule1 = cur.val_fpr < b.val_fpr;
                    let lead_up = match (cur.val_lead, b.val_lead) {
                        (Some(x), Some(y)) => x > y,
                        (Some(_), None) => true,
                        _ => false,
                    };
                    let rule2 = cur.val_fpr == b.val_fpr && lead_up && cur.train_fpr < b.train_fpr;
                    let rule3 = cur.val_fpr <= max_fpr && cur.train_fpr <= max_fpr;
                    s = rule1 || rule2 || rule3;
                    if s {
                        best = Some(*cur);
                    }
                }
                saved.push(s);
            }
            saved
        }

        let fprs = [0.0, 0.05, 0.1];
        let leads = [None, Some(1.0), Some(1.2)];
        let mut total = 0;
        // Enumerate 4-epoch histories over a compact metric lattice.
        for a in 0..fprs.len() * leads.len() * fprs.len() {
            for b in 0..fprs.len() * leads.len() * fprs.len() {
                let decode = |x: usize| {
                    let vf = fprs[x % 3];
                    let vl = leads[(x / 3) % 3];
                    let tf = fprs[(x / 9) % 3];
                    EpochObservation { val_fpr: vf, val_lead: vl, train_fpr: tf }
                };
                let history = [decode(a), decode(b), decode(a ^ b % 27), decode((a + b) % 27)];
                for max_fpr in [0.0, 0.05, 1.0] {
                    let want = oracle(&history, max_fpr);
                    let got: Vec<bool> = save_decisions(&history, &SaveCriteria { max_fpr })
                        .iter()
                        .map(|r| r.is_some())
                        .collect();
                    assert_eq!(got, want, "history {history:?} max_fpr {max_fpr}");
                    total += 1;
                }
            }
        }
        assert!(total > 1000);
    }

    #[test]
    fn vacuous_threshold_saves_every_epoch() {
        let history = [
            EpochObservation { val_fpr: 0.9, val_lead: None, train_fpr: 0.9 },
            EpochObservation { val_fpr: 0.95, val_lead: None, train_fpr: 0.99 },
            EpochObservation { val_fpr: 1.0, val_lead: None, train_fpr: 1.0 },
        ];
        let decisions = save_decisions(&history, &SaveCriteria { max_fpr: 1.0 });
        assert!(decisions.iter().all(|d| d == &Some(SaveRule::BothUnderMax)));
    }

    #[test]
    fn fault_classifier_separates_the_toy_set() {
        let train = toy_windowed(6, 6, FeatureVariant::Base, 1);
        let val = toy_windowed(4, 4, FeatureVariant::Base, 2);
        let cfg = TrainConfig { epochs: 6, batch_size: 32, ..Default::default() };
        let model = train_fault_classifier(
            &train,
            &val,
            &NetHyper::default(),
            &cfg,
            &SaveCriteria::default(),
        )
        .unwrap();
        assert!(model.saved_epoch.is_some());
        let sum = detection_summary(&model.network, &val, 0.5).unwrap();
        assert_eq!(sum.traj_fpr, 0.0);
        assert_eq!(sum.n_detected_unsafe, sum.n_unsafe);
    }

    #[test]
    fn fault_training_is_reproducible() {
        let train = toy_windowed(4, 4, FeatureVariant::Base, 3);
        let val = toy_windowed(2, 2, FeatureVariant::Base, 4);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, ..Default::default() };
        let run = || {
            train_fault_classifier(&train, &val, &NetHyper::default(), &cfg, &SaveCriteria::default())
                .unwrap()
                .network
                .params
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn lead_classifier_requires_every_class() {
        let mut train = toy_windowed(2, 4, FeatureVariant::Extended, 5);
        // Relabel every fault window into class 0: classes 1 and 2 vanish.
        for tw in &mut train.trajs {
            for w in &mut tw.windows {
                if w.label.fault {
                    w.label.interval = Some(0);
                }
            }
        }
        let val = train.clone();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        match train_lead_classifier(&train, &val, &NetHyper::default(), &cfg, true) {
            Err(Error::ClassMissing { class: 1 }) => {}
            other => panic!("expected ClassMissing, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_single_class_reaches_perfect_accuracy() {
        let mut train = toy_windowed(2, 4, FeatureVariant::Extended, 6);
        for tw in &mut train.trajs {
            for w in &mut tw.windows {
                if w.label.fault {
                    w.label.interval = Some(1);
                }
            }
        }
        let val = train.clone();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let model =
            train_lead_classifier(&train, &val, &NetHyper::default(), &cfg, false).unwrap();
        let acc = macro_accuracy(&model.network, &val).unwrap().unwrap();
        assert_eq!(acc, 1.0);
        // Predictions always land in {0, 1, 2}.
        let mut buf = Vec::new();
        for tw in &val.trajs {
            for w in &tw.windows {
                tw.fill_input(w, &mut buf);
                let c = argmax(&model.network.forward(&buf).unwrap());
                assert!(c < 3);
            }
        }
    }

    #[test]
    fn regressor_converges_to_a_constant_target() {
        // Constant targets over fixed inputs: the MSE optimum is the
        // constant itself.
        let mut train = toy_windowed(0, 4, FeatureVariant::Extended, 7);
        for tw in &mut train.trajs {
            for (i, v) in tw.series.rows.iter_mut().enumerate() {
                *v = ((i % 7) as f64 - 3.0) / 10.0;
            }
            for w in &mut tw.windows {
                if w.label.fault {
                    w.label.lead = Some(0.4);
                    w.label.interval = Some(0);
                }
            }
        }
        let val = train.clone();
        let cfg = TrainConfig { epochs: 40, batch_size: 32, ..Default::default() };
        let model = train_lead_regressor(&train, &val, &NetHyper::default(), &cfg).unwrap();
        let mut buf = Vec::new();
        for tw in &val.trajs {
            for w in &tw.windows {
                if w.label.lead.is_some() {
                    tw.fill_input(w, &mut buf);
                    let pred = model.network.forward(&buf).unwrap()[0];
                    assert!((pred - 0.4).abs() < 1e-3, "prediction {pred}");
                    assert!(pred >= 0.0 && pred < 1.0);
                }
            }
        }
    }

    #[test]
    fn regressor_rejects_an_empty_target_range() {
        let train = toy_windowed(3, 0, FeatureVariant::Extended, 8);
        let val = train.clone();
        let cfg = TrainConfig::default();
        match train_lead_regressor(&train, &val, &NetHyper::default(), &cfg) {
            Err(Error::EmptyTargetRange) => {}
            other => panic!("expected EmptyTargetRange, got {other:?}"),
        }
    }

    #[test]
    fn threshold_grid_starts_at_the_smallest_value_for_a_vacuous_target() {
        let train = toy_windowed(4, 4, FeatureVariant::Base, 9);
        let val = toy_windowed(3, 3, FeatureVariant::Base, 10);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let model = train_fault_classifier(
            &train,
            &val,
            &NetHyper::default(),
            &cfg,
            &SaveCriteria::default(),
        )
        .unwrap();
        let cal = calibrate_threshold(&model, &val, 1.0).unwrap();
        assert_eq!(cal.p_star, 0.01);
    }

    #[test]
    fn unattainable_target_reports_the_best_achievable() {
        // A network with a huge positive bias fires on every window.
        let val = toy_windowed(3, 3, FeatureVariant::Base, 11);
        let spec = NetHyper::default().spec(val.m, val.variant.dim(), 1, OutputActivation::Identity);
        let mut net = Network::<f64>::zeroed(spec).unwrap();
        let bias = spec.layout().range("fc2_b").start;
        net.params[bias] = 50.0;
        let model = TrainedModel {
            task: TaskKind::FaultClassifier,
            network: net,
            threshold: 0.5,
            log: vec![],
            saved_epoch: Some(1),
        };
        match calibrate_threshold(&model, &val, 0.0) {
            Err(Error::ThresholdUnattainable { best_fpr, .. }) => assert_eq!(best_fpr, 1.0),
            other => panic!("expected ThresholdUnattainable, got {other:?}"),
        }
    }

    #[test]
    fn raising_the_threshold_never_raises_window_positives() {
        let train = toy_windowed(4, 4, FeatureVariant::Base, 12);
        let val = toy_windowed(3, 3, FeatureVariant::Base, 13);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let model = train_fault_classifier(
            &train,
            &val,
            &NetHyper::default(),
            &cfg,
            &SaveCriteria::default(),
        )
        .unwrap();
        let grid: Vec<f64> = (50..=95).step_by(5).map(|s| s as f64 / 100.0).collect();
        let sweep = threshold_sweep(&model, &val, &grid).unwrap();
        for pair in sweep.windows(2) {
            assert!(pair[1].window_fpr <= pair[0].window_fpr);
        }
    }
}
