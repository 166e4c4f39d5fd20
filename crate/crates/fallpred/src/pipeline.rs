//! The composed fall predictor: the critical fault classifier gates the
//! lead-time classifier, which gates the lead-time regressor. Interval
//! classes 1 and 2 report their interval's minimum lead; class 0 defers to
//! the regressor for the exact value.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dataset::{extract_features, FeatureVariant, ScalerParams};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, OutputActivation};
use crate::num::{real, Real};
use crate::sim::{RobotState, Trajectory};
use crate::train::{argmax, TrainedModel};

/// Output of the pipeline for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub fault: bool,
    /// Fault probability from the first stage.
    pub probability: T,
    /// Lead-time interval class, present only on fault-positive windows.
    pub interval: Option<u8>,
    /// Lead estimate in seconds, present only on fault-positive windows.
    pub lead: Option<T>,
}

/// Anything that turns an m-state window into a [`Prediction`]; implemented
/// by [`PipelineBundle`] and by test oracles.
pub trait Predictor<T: Real> {
    fn window_len(&self) -> usize;
    fn predict_states(&self, states: &[RobotState<T>]) -> Result<Prediction<T>>;
}

/// Invocation counters used to verify the gating contract.
#[derive(Debug, Default)]
pub struct PipelineStats {
    pub fault_calls: AtomicU64,
    pub interval_calls: AtomicU64,
    pub regressor_calls: AtomicU64,
}

impl PipelineStats {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.fault_calls.load(Ordering::Relaxed),
            self.interval_calls.load(Ordering::Relaxed),
            self.regressor_calls.load(Ordering::Relaxed),
        )
    }
}

/// The three trained networks, their scalers, and the pipeline geometry.
#[derive(Debug)]
pub struct PipelineBundle<T> {
    pub fault_model: TrainedModel<T>,
    pub interval_model: TrainedModel<T>,
    pub regressor_model: TrainedModel<T>,
    pub scaler_base: ScalerParams<T>,
    pub scaler_extended: ScalerParams<T>,
    /// Window length m.
    pub window_len: usize,
    /// Maximum prediction horizon H (s).
    pub horizon: T,
    pub stats: PipelineStats,
}

impl<T: Real> Clone for PipelineBundle<T> {
    fn clone(&self) -> Self {
        PipelineBundle {
            fault_model: self.fault_model.clone(),
            interval_model: self.interval_model.clone(),
            regressor_model: self.regressor_model.clone(),
            scaler_base: self.scaler_base.clone(),
            scaler_extended: self.scaler_extended.clone(),
            window_len: self.window_len,
            horizon: self.horizon,
            stats: PipelineStats::default(),
        }
    }
}

impl<T: Real> PipelineBundle<T> {
    pub fn new(
        fault_model: TrainedModel<T>,
        interval_model: TrainedModel<T>,
        regressor_model: TrainedModel<T>,
        scaler_base: ScalerParams<T>,
        scaler_extended: ScalerParams<T>,
        window_len: usize,
        horizon: T,
    ) -> Result<Self> {
        if horizon <= real(2.0) {
            return Err(Error::InvalidParams(format!(
                "horizon must exceed 2 s, got {horizon}"
            )));
        }
        let b = PipelineBundle {
            fault_model,
            interval_model,
            regressor_model,
            scaler_base,
            scaler_extended,
            window_len,
            horizon,
            stats: PipelineStats::default(),
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let m = self.window_len;
        let base_d = FeatureVariant::Base.dim();
        let ext_d = FeatureVariant::Extended.dim();
        let checks = [
            ("fault", &self.fault_model, base_d, self.scaler_base.min.len(), 1),
            ("interval", &self.interval_model, ext_d, self.scaler_extended.min.len(), 3),
            ("regressor", &self.regressor_model, ext_d, self.scaler_extended.min.len(), 1),
        ];
        for (name, model, d, scaler_d, out) in checks {
            let spec = &model.network.spec;
            if spec.input_steps != m || spec.input_features != d || spec.output_width != out {
                return Err(Error::ShapeMismatch {
                    layer: format!("{name} model"),
                    expected: format!("{m} x {d} input, {out} outputs"),
                    got: format!(
                        "{} x {} input, {} outputs",
                        spec.input_steps, spec.input_features, spec.output_width
                    ),
                });
            }
            if scaler_d != d {
                return Err(Error::ShapeMismatch {
                    layer: format!("{name} scaler"),
                    expected: format!("{d} features"),
                    got: format!("{scaler_d} features"),
                });
            }
        }
        if self.regressor_model.network.spec.output_activation != OutputActivation::Sigmoid {
            return Err(Error::InvalidParams(
                "regressor must use a sigmoid output".into(),
            ));
        }
        Ok(())
    }

    fn scaled_input(
        &self,
        states: &[RobotState<T>],
        variant: FeatureVariant,
        scaler: &ScalerParams<T>,
    ) -> Result<Vec<T>> {
        let d = variant.dim();
        let mut buf = Vec::with_capacity(states.len() * d);
        for s in states {
            let mut row = extract_features(s, variant)?;
            scaler.transform_row(&mut row);
            buf.extend(row);
        }
        if variant == FeatureVariant::Extended {
            // Window-averaged contact point, applied after scaling (the two
            // commute; the scaler is affine).
            let c = d - 1;
            let mut mean = T::zero();
            for r in 0..states.len() {
                mean += buf[r * d + c];
            }
            mean /= real(states.len() as f64);
            for r in 0..states.len() {
                buf[r * d + c] = mean;
            }
        }
        Ok(buf)
    }

    /// One gated prediction over a raw m-state window.
    pub fn predict(&self, states: &[RobotState<T>]) -> Result<Prediction<T>> {
        if states.len() != self.window_len {
            return Err(Error::ShapeMismatch {
                layer: "pipeline input".into(),
                expected: format!("{} states", self.window_len),
                got: format!("{} states", states.len()),
            });
        }
        let base = self.scaled_input(states, FeatureVariant::Base, &self.scaler_base)?;
        self.stats.fault_calls.fetch_add(1, Ordering::Relaxed);
        let logit = self.fault_model.network.forward(&base)?[0];
        let probability = sigmoid(logit);
        if !(probability > self.fault_model.threshold) {
            return Ok(Prediction {
                fault: false,
                probability,
                interval: None,
                lead: None,
            });
        }

        let ext = self.scaled_input(states, FeatureVariant::Extended, &self.scaler_extended)?;
        self.stats.interval_calls.fetch_add(1, Ordering::Relaxed);
        let class = argmax(&self.interval_model.network.forward(&ext)?) as u8;
        let lead = match class {
            0 => {
                self.stats.regressor_calls.fetch_add(1, Ordering::Relaxed);
                self.regressor_model.network.forward(&ext)?[0]
            }
            1 => T::one(),
            _ => real(2.0),
        };
        Ok(Prediction {
            fault: true,
            probability,
            interval: Some(class),
            lead: Some(lead),
        })
    }
}

impl<T: Real> Predictor<T> for PipelineBundle<T> {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn predict_states(&self, states: &[RobotState<T>]) -> Result<Prediction<T>> {
        self.predict(states)
    }
}

/// Streaming output over one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult<T> {
    /// One prediction per window, in time order (stride 1).
    pub predictions: Vec<Prediction<T>>,
    /// Sample index (into the trajectory) of the first flagged window's end.
    pub first_detection_index: Option<usize>,
    pub first_detection_time: Option<T>,
}

/// Slide the predictor over a trajectory at stride 1. Only the first flag
/// determines the detection time; later flags never change it.
pub fn predict_stream<T: Real, P: Predictor<T>>(
    predictor: &P,
    traj: &Trajectory<T>,
) -> Result<StreamResult<T>> {
    let m = predictor.window_len();
    if traj.len() < m {
        return Ok(StreamResult {
            predictions: Vec::new(),
            first_detection_index: None,
            first_detection_time: None,
        });
    }
    let mut predictions = Vec::with_capacity(traj.len() - m + 1);
    let mut first_detection_index = None;
    let mut first_detection_time = None;
    for end in (m - 1)..traj.len() {
        let states = &traj.samples[end + 1 - m..=end];
        let p = predictor.predict_states(states)?;
        if p.fault && first_detection_index.is_none() {
            first_detection_index = Some(end);
            first_detection_time = Some(traj.samples[end].t);
        }
        predictions.push(p);
    }
    Ok(StreamResult {
        predictions,
        first_detection_index,
        first_detection_time,
    })
}
