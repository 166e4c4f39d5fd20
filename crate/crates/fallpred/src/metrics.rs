//! Trajectory-level evaluation: false positive/negative rates, lead and
//! response times, interval-classifier accuracy, regressor error, and
//! lead-time histogram emission.

use serde::{Deserialize, Serialize};

use crate::dataset::{make_windows, FeatureVariant, WindowedData};
use crate::error::{Error, Result};
use crate::forces::ProfileKind;
use crate::num::{real, Real};
use crate::pipeline::{predict_stream, PipelineBundle, Predictor};
use crate::sim::Trajectory;
use crate::train::argmax;

/// Reference results published for the Digit robot (lead/response in
/// seconds); kept for documentation, the planar robot reports its own.
pub const DIGIT_SIM_INTERMITTENT_LEAD_S: f64 = 1.64;
pub const DIGIT_SIM_ABRUPT_INCIPIENT_LEAD_S: f64 = 1.61;
pub const DIGIT_SIM_ABRUPT_INCIPIENT_RESPONSE_S: f64 = 0.39;
pub const DIGIT_HARDWARE_RESPONSE_S: f64 = 0.4;
pub const DIGIT_SIM_PREDICTED_LEAD_S: f64 = 1.48;
pub const DIGIT_SIM_TRIMMED_PREDICTED_LEAD_S: f64 = 1.41;
pub const DIGIT_INTERVAL_ACCURACIES: [f64; 3] = [0.97, 0.92, 0.58];
pub const DIGIT_REGRESSOR_ERRORS_S: (f64, f64, f64) = (0.13, 0.01, 0.01); // max, mean, median

/// Per-trajectory detection outcome. Times derive from sample indices so
/// that `response + lead == t_fall - t_ft` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryVerdict<T> {
    pub id: String,
    pub kind: ProfileKind,
    pub is_unsafe: bool,
    /// Sample index of the first flagged window's end.
    pub detection_index: Option<usize>,
    pub detection_time: Option<T>,
    /// Pipeline lead estimate at the detection window.
    pub predicted_lead: Option<T>,
    /// t_fall - detection time (detected unsafe trajectories only).
    pub actual_lead: Option<T>,
    /// detection time - t_ft; absent for intermittent faults.
    pub response: Option<T>,
    /// Grid-exact sample counts behind the two derived times.
    pub lead_samples: Option<i64>,
    pub response_samples: Option<i64>,
}

/// Evaluate one trajectory with any predictor.
pub fn trajectory_verdict<T: Real, P: Predictor<T>>(
    predictor: &P,
    traj: &Trajectory<T>,
) -> Result<TrajectoryVerdict<T>> {
    let stream = predict_stream(predictor, traj)?;
    let meta = &traj.meta;
    let mut v = TrajectoryVerdict {
        id: meta.id.clone(),
        kind: meta.kind,
        is_unsafe: meta.unsafe_label,
        detection_index: stream.first_detection_index,
        detection_time: stream.first_detection_time,
        predicted_lead: None,
        actual_lead: None,
        response: None,
        lead_samples: None,
        response_samples: None,
    };
    let Some(det_idx) = stream.first_detection_index else {
        return Ok(v);
    };
    let m = predictor.window_len();
    v.predicted_lead = stream.predictions[det_idx - (m - 1)].lead;
    if meta.unsafe_label {
        if let Some(fall_idx) = meta.fall_index {
            let lead_samples = fall_idx as i64 - det_idx as i64;
            v.lead_samples = Some(lead_samples);
            v.actual_lead = Some(real::<T>(lead_samples as f64) * meta.sample_period);
        }
        if meta.kind != ProfileKind::Intermittent {
            if let Some(ft_idx) = meta.ft_index {
                let response_samples = det_idx as i64 - ft_idx;
                v.response_samples = Some(response_samples);
                v.response = Some(real::<T>(response_samples as f64) * meta.sample_period);
            }
        }
    }
    Ok(v)
}

/// Aggregated metrics for one fault-type group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultTypeReport<T> {
    /// Fault-type tag, or "all" for the aggregate row.
    pub group: String,
    pub n_safe: usize,
    pub n_unsafe: usize,
    /// Fraction of safe trajectories with any detection.
    pub fpr: T,
    /// Fraction of unsafe trajectories never detected.
    pub fnr: T,
    pub mean_lead: Option<T>,
    pub min_lead: Option<T>,
    pub mean_response: Option<T>,
    pub mean_predicted_lead: Option<T>,
    /// |mean predicted lead at detection - mean actual lead|.
    pub predicted_lead_gap: Option<T>,
    /// Per-class interval accuracy over ground-truth fault windows.
    pub interval_accuracy: [Option<T>; 3],
    pub regressor_max_error: Option<T>,
    pub regressor_mean_error: Option<T>,
    pub regressor_median_error: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub rows: Vec<FaultTypeReport<T>>,
}

fn mean<T: Real>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let mut s = T::zero();
    for x in xs {
        s += *x;
    }
    Some(s / real(xs.len() as f64))
}

fn median<T: Real>(xs: &mut [T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(xs[xs.len() / 2])
}

fn group_report<T: Real>(
    group: &str,
    verdicts: &[&TrajectoryVerdict<T>],
    stage_windows: Option<&StageWindowMetrics<T>>,
) -> FaultTypeReport<T> {
    let n_safe = verdicts.iter().filter(|v| !v.is_unsafe).count();
    let n_unsafe = verdicts.len() - n_safe;
    let n_fp = verdicts
        .iter()
        .filter(|v| !v.is_unsafe && v.detection_index.is_some())
        .count();
    let n_fn = verdicts
        .iter()
        .filter(|v| v.is_unsafe && v.detection_index.is_none())
        .count();
    let leads: Vec<T> = verdicts.iter().filter_map(|v| v.actual_lead).collect();
    let responses: Vec<T> = verdicts.iter().filter_map(|v| v.response).collect();
    let predicted: Vec<T> = verdicts
        .iter()
        .filter(|v| v.is_unsafe && v.actual_lead.is_some())
        .filter_map(|v| v.predicted_lead)
        .collect();
    let mean_lead = mean(&leads);
    let mean_predicted_lead = mean(&predicted);
    let predicted_lead_gap = match (mean_predicted_lead, mean_lead) {
        (Some(p), Some(a)) => Some((p - a).abs()),
        _ => None,
    };
    let min_lead = leads
        .iter()
        .copied()
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.min(x))));
    FaultTypeReport {
        group: group.to_string(),
        n_safe,
        n_unsafe,
        fpr: if n_safe == 0 {
            T::zero()
        } else {
            real::<T>(n_fp as f64) / real(n_safe as f64)
        },
        fnr: if n_unsafe == 0 {
            T::zero()
        } else {
            real::<T>(n_fn as f64) / real(n_unsafe as f64)
        },
        mean_lead,
        min_lead,
        mean_response: mean(&responses),
        mean_predicted_lead,
        predicted_lead_gap,
        interval_accuracy: stage_windows.map_or([None, None, None], |s| s.interval_accuracy()),
        regressor_max_error: stage_windows.and_then(|s| s.regressor_max()),
        regressor_mean_error: stage_windows.and_then(|s| mean(&s.regressor_errors)),
        regressor_median_error: stage_windows.and_then(|s| {
            let mut xs = s.regressor_errors.clone();
            median(&mut xs)
        }),
    }
}

/// Window-level metrics of the second and third stage, computed directly on
/// ground-truth fault windows (not gated by the first stage).
struct StageWindowMetrics<T> {
    interval_correct: [usize; 3],
    interval_total: [usize; 3],
    regressor_errors: Vec<T>,
}

impl<T: Real> StageWindowMetrics<T> {
    fn new() -> Self {
        StageWindowMetrics {
            interval_correct: [0; 3],
            interval_total: [0; 3],
            regressor_errors: Vec::new(),
        }
    }

    fn interval_accuracy(&self) -> [Option<T>; 3] {
        let mut out = [None, None, None];
        for c in 0..3 {
            if self.interval_total[c] > 0 {
                out[c] = Some(real::<T>(
                    self.interval_correct[c] as f64 / self.interval_total[c] as f64,
                ));
            }
        }
        out
    }

    fn regressor_max(&self) -> Option<T> {
        self.regressor_errors
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
    }

    fn merge(&mut self, other: &StageWindowMetrics<T>) {
        for c in 0..3 {
            self.interval_correct[c] += other.interval_correct[c];
            self.interval_total[c] += other.interval_total[c];
        }
        self.regressor_errors
            .extend(other.regressor_errors.iter().copied());
    }
}

fn stage_metrics<T: Real>(
    bundle: &PipelineBundle<T>,
    traj: &Trajectory<T>,
) -> Result<StageWindowMetrics<T>> {
    let mut out = StageWindowMetrics::new();
    if !traj.meta.unsafe_label {
        return Ok(out);
    }
    let mut tw = make_windows(traj, FeatureVariant::Extended, bundle.window_len, 1, bundle.horizon)?;
    bundle.scaler_extended.transform_series(&mut tw.series);
    let mut buf = Vec::new();
    for w in &tw.windows {
        let Some(class) = w.label.interval else { continue };
        tw.fill_input(w, &mut buf);
        let predicted = argmax(&bundle.interval_model.network.forward(&buf)?);
        out.interval_total[class as usize] += 1;
        if predicted == class as usize {
            out.interval_correct[class as usize] += 1;
        }
        let lead = w.label.lead.unwrap();
        if lead < T::one() {
            let est = bundle.regressor_model.network.forward(&buf)?[0];
            out.regressor_errors.push((est - lead).abs());
        }
    }
    Ok(out)
}

/// Evaluate the full pipeline on a trajectory set: detection verdicts per
/// trajectory plus direct window-level metrics of the lead-time stages,
/// grouped per fault type with an aggregate "all" row.
pub fn evaluate<T: Real>(
    bundle: &PipelineBundle<T>,
    trajs: &[Trajectory<T>],
) -> Result<EvalReport<T>> {
    if trajs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut verdicts = Vec::with_capacity(trajs.len());
    let mut stages = Vec::with_capacity(trajs.len());
    for traj in trajs {
        verdicts.push(trajectory_verdict(bundle, traj)?);
        stages.push(stage_metrics(bundle, traj)?);
    }

    let mut kinds: Vec<ProfileKind> = trajs.iter().map(|t| t.meta.kind).collect();
    kinds.sort_by_key(|k| k.as_str());
    kinds.dedup();

    let mut rows = Vec::new();
    for kind in kinds {
        let group: Vec<&TrajectoryVerdict<T>> = verdicts
            .iter()
            .zip(trajs)
            .filter(|(_, t)| t.meta.kind == kind)
            .map(|(v, _)| v)
            .collect();
        let mut stage = StageWindowMetrics::new();
        for (s, t) in stages.iter().zip(trajs) {
            if t.meta.kind == kind {
                stage.merge(s);
            }
        }
        rows.push(group_report(kind.as_str(), &group, Some(&stage)));
    }
    let all: Vec<&TrajectoryVerdict<T>> = verdicts.iter().collect();
    let mut stage_all = StageWindowMetrics::new();
    for s in &stages {
        stage_all.merge(s);
    }
    rows.push(group_report("all", &all, Some(&stage_all)));
    Ok(EvalReport { rows })
}

/// Detection verdicts for any predictor (used by tests and sweeps).
pub fn detection_verdicts<T: Real, P: Predictor<T>>(
    predictor: &P,
    trajs: &[Trajectory<T>],
) -> Result<Vec<TrajectoryVerdict<T>>> {
    trajs
        .iter()
        .map(|t| trajectory_verdict(predictor, t))
        .collect()
}

/// Truncate a trajectory at the first crossing of `trim_height` (the
/// crossing sample is kept); metadata stays untouched so ground-truth lead
/// metrics remain available.
pub fn trim_trajectory<T: Real>(traj: &Trajectory<T>, trim_height: T) -> Trajectory<T> {
    let mut out = traj.clone();
    if let Some(pos) = traj
        .samples
        .iter()
        .position(|s| s.com_position[1] < trim_height)
    {
        out.samples.truncate(pos + 1);
    }
    out
}

/// Evaluate on trajectories truncated at the given CoM height, mimicking
/// data collection that stops before the ground is reached.
pub fn trimmed_evaluate<T: Real>(
    bundle: &PipelineBundle<T>,
    trajs: &[Trajectory<T>],
    trim_height: T,
) -> Result<EvalReport<T>> {
    let trimmed: Vec<Trajectory<T>> = trajs
        .iter()
        .map(|t| trim_trajectory(t, trim_height))
        .collect();
    evaluate(bundle, &trimmed)
}

/// Histogram of finite window leads with the given bin width, as
/// (bin start, count) in bin order.
pub fn lead_histogram<T: Real>(data: &WindowedData<T>, bin_width: T) -> Result<Vec<(T, u64)>> {
    if !(bin_width > T::zero()) {
        return Err(Error::InvalidParams("bin width must be positive".into()));
    }
    let mut counts: Vec<u64> = Vec::new();
    // Leads sit on the sensor grid and often exactly on bin edges; the
    // epsilon keeps ulp-level rounding from flipping them into the bin below.
    let eps = real::<T>(1e-9);
    for tw in &data.trajs {
        for w in &tw.windows {
            if let Some(lead) = w.label.lead {
                let bin = (lead / bin_width + eps).floor().to_f64_lossy() as usize;
                if counts.len() <= bin {
                    counts.resize(bin + 1, 0);
                }
                counts[bin] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (real::<T>(i as f64) * bin_width, c))
        .collect())
}

fn fmt_opt<T: Real>(v: &Option<T>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

fn parse_opt<T: Real>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(|v| Some(T::from_f64_lossy(v)))
        .map_err(|e| Error::Data(format!("bad float `{s}`: {e}")))
}

pub const REPORT_CSV_HEADER: &str = "group,n_safe,n_unsafe,fpr,fnr,mean_lead,min_lead,mean_response,mean_predicted_lead,predicted_lead_gap,interval_acc_0,interval_acc_1,interval_acc_2,regressor_max_error,regressor_mean_error,regressor_median_error";

impl<T: Real> EvalReport<T> {
    /// Machine-readable CSV; floats print in shortest round-trip form so the
    /// encoding is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.group,
                r.n_safe,
                r.n_unsafe,
                r.fpr,
                r.fnr,
                fmt_opt(&r.mean_lead),
                fmt_opt(&r.min_lead),
                fmt_opt(&r.mean_response),
                fmt_opt(&r.mean_predicted_lead),
                fmt_opt(&r.predicted_lead_gap),
                fmt_opt(&r.interval_accuracy[0]),
                fmt_opt(&r.interval_accuracy[1]),
                fmt_opt(&r.interval_accuracy[2]),
                fmt_opt(&r.regressor_max_error),
                fmt_opt(&r.regressor_mean_error),
                fmt_opt(&r.regressor_median_error),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty report".into()))?;
        if header != REPORT_CSV_HEADER {
            return Err(Error::Data("unexpected report header".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 16 {
                return Err(Error::Data(format!("bad report row: {line}")));
            }
            rows.push(FaultTypeReport {
                group: cols[0].to_string(),
                n_safe: cols[1].parse().map_err(|e| Error::Data(format!("{e}")))?,
                n_unsafe: cols[2].parse().map_err(|e| Error::Data(format!("{e}")))?,
                fpr: parse_opt(cols[3])?.ok_or_else(|| Error::Data("missing fpr".into()))?,
                fnr: parse_opt(cols[4])?.ok_or_else(|| Error::Data("missing fnr".into()))?,
                mean_lead: parse_opt(cols[5])?,
                min_lead: parse_opt(cols[6])?,
                mean_response: parse_opt(cols[7])?,
                mean_predicted_lead: parse_opt(cols[8])?,
                predicted_lead_gap: parse_opt(cols[9])?,
                interval_accuracy: [
                    parse_opt(cols[10])?,
                    parse_opt(cols[11])?,
                    parse_opt(cols[12])?,
                ],
                regressor_max_error: parse_opt(cols[13])?,
                regressor_mean_error: parse_opt(cols[14])?,
                regressor_median_error: parse_opt(cols[15])?,
            });
        }
        Ok(EvalReport { rows })
    }

    /// Human-readable table in the style of the published result tables.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>6} {:>8} {:>7} {:>7} {:>10} {:>10} {:>10} {:>11}\n",
            "fault type", "safe", "unsafe", "FPR", "FNR", "lead (s)", "resp (s)", "pred (s)", "gap (s)"
        ));
        for r in &self.rows {
            let f = |v: &Option<T>| match v {
                Some(x) => format!("{:.3}", x.to_f64_lossy()),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{:<14} {:>6} {:>8} {:>7.3} {:>7.3} {:>10} {:>10} {:>10} {:>11}\n",
                r.group,
                r.n_safe,
                r.n_unsafe,
                r.fpr.to_f64_lossy(),
                r.fnr.to_f64_lossy(),
                f(&r.mean_lead),
                f(&r.mean_response),
                f(&r.mean_predicted_lead),
                f(&r.predicted_lead_gap),
            ));
        }
        out.push_str("\ninterval classifier accuracy / regressor |error| (fault windows):\n");
        for r in &self.rows {
            let f = |v: &Option<T>| match v {
                Some(x) => format!("{:.3}", x.to_f64_lossy()),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{:<14} [0,1): {:>6}  [1,2): {:>6}  [2,H]: {:>6}  max: {:>6}  mean: {:>6}  median: {:>6}\n",
                r.group,
                f(&r.interval_accuracy[0]),
                f(&r.interval_accuracy[1]),
                f(&r.interval_accuracy[2]),
                f(&r.regressor_max_error),
                f(&r.regressor_mean_error),
                f(&r.regressor_median_error),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Prediction;
    use crate::sim::RobotState;
    use crate::testutil::synthetic_trajectory;

    /// Oracle that reproduces the ground-truth labels from the state stream.
    struct OraclePredictor {
        m: usize,
        t_ft: Option<f64>,
        is_unsafe: bool,
    }

    impl Predictor<f64> for OraclePredictor {
        fn window_len(&self) -> usize {
            self.m
        }

        fn predict_states(&self, states: &[RobotState<f64>]) -> Result<Prediction<f64>> {
            let t = states.last().unwrap().t;
            let fault = self.is_unsafe && self.t_ft.map_or(false, |ft| t >= ft);
            Ok(Prediction {
                fault,
                probability: if fault { 0.99 } else { 0.01 },
                interval: fault.then_some(1),
                lead: fault.then_some(1.0),
            })
        }
    }

    struct ConstantPredictor {
        m: usize,
        fault: bool,
    }

    impl Predictor<f64> for ConstantPredictor {
        fn window_len(&self) -> usize {
            self.m
        }

        fn predict_states(&self, _states: &[RobotState<f64>]) -> Result<Prediction<f64>> {
            Ok(Prediction {
                fault: self.fault,
                probability: if self.fault { 0.99 } else { 0.01 },
                interval: self.fault.then_some(1),
                lead: self.fault.then_some(1.0),
            })
        }
    }

    fn mixed_set() -> Vec<Trajectory<f64>> {
        vec![
            synthetic_trajectory(300, 0.01, 1.0, Some(2.0), None, 1),
            synthetic_trajectory(300, 0.01, 1.0, Some(2.0), Some(3.6), 2),
            synthetic_trajectory(300, 0.01, 1.0, Some(2.2), None, 3),
            synthetic_trajectory(300, 0.01, 1.0, Some(2.4), Some(3.9), 4),
        ]
    }

    #[test]
    fn oracle_perfect_detection_gives_zero_fpr_and_full_lead() {
        let trajs = mixed_set();
        for traj in &trajs {
            let oracle = OraclePredictor {
                m: 30,
                t_ft: traj.meta.t_ft,
                is_unsafe: traj.meta.unsafe_label,
            };
            let v = trajectory_verdict(&oracle, traj).unwrap();
            if traj.meta.unsafe_label {
                // First detection at the first window past t_ft.
                assert_eq!(v.detection_time, traj.meta.t_ft);
                let full = traj.meta.t_fall.unwrap() - traj.meta.t_ft.unwrap();
                assert!((v.actual_lead.unwrap() - full).abs() < 1e-9);
            } else {
                assert_eq!(v.detection_index, None);
            }
        }
    }

    #[test]
    fn always_positive_predictor_has_unit_fpr() {
        let trajs = mixed_set();
        let p = ConstantPredictor { m: 30, fault: true };
        let verdicts = detection_verdicts(&p, &trajs).unwrap();
        let report = group_report("all", &verdicts.iter().collect::<Vec<_>>(), None);
        assert_eq!(report.fpr, 1.0);
        assert_eq!(report.fnr, 0.0);
    }

    #[test]
    fn single_window_false_positive_counts_the_whole_trajectory() {
        // Fires on exactly one window of exactly one safe trajectory,
        // marked with a sentinel in one sample.
        struct OneShot;
        impl Predictor<f64> for OneShot {
            fn window_len(&self) -> usize {
                30
            }
            fn predict_states(&self, states: &[RobotState<f64>]) -> Result<Prediction<f64>> {
                let fault = states.last().unwrap().midfoot[0] == 42.0;
                Ok(Prediction {
                    fault,
                    probability: 0.5,
                    interval: None,
                    lead: fault.then_some(1.0),
                })
            }
        }
        let mut trajs = vec![
            synthetic_trajectory(300, 0.01, 1.0, Some(2.0), None, 1),
            synthetic_trajectory(300, 0.01, 1.0, Some(2.0), None, 40),
            synthetic_trajectory(300, 0.01, 1.0, Some(2.0), None, 80),
        ];
        trajs[1].samples[150].midfoot[0] = 42.0;
        let verdicts = detection_verdicts(&OneShot, &trajs).unwrap();
        let fired: Vec<bool> = verdicts.iter().map(|v| v.detection_index.is_some()).collect();
        let n_fired = fired.iter().filter(|f| **f).count();
        assert_eq!(n_fired, 1, "expected exactly one trajectory to fire: {fired:?}");
        let report = group_report("all", &verdicts.iter().collect::<Vec<_>>(), None);
        assert!((report.fpr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn response_plus_lead_is_exactly_the_fault_to_fall_interval() {
        let traj = synthetic_trajectory(300, 0.01, 1.0, Some(2.2), Some(3.9), 7);
        let oracle = OraclePredictor {
            m: 30,
            t_ft: traj.meta.t_ft,
            is_unsafe: true,
        };
        let v = trajectory_verdict(&oracle, &traj).unwrap();
        let lead_s = v.lead_samples.unwrap();
        let resp_s = v.response_samples.unwrap();
        let total = traj.meta.fall_index.unwrap() as i64 - traj.meta.ft_index.unwrap();
        assert_eq!(lead_s + resp_s, total);
    }

    #[test]
    fn trimming_preserves_or_shortens_and_is_identity_at_fall_height() {
        let traj = synthetic_trajectory(300, 0.01, 1.0, Some(2.0), Some(3.6), 8);
        // Fall height below every sample: nothing crosses, trim is identity.
        let same = trim_trajectory(&traj, 0.0);
        assert_eq!(same.samples.len(), traj.samples.len());
        // Aggressive trim shortens.
        let cut = trim_trajectory(&traj, 0.879);
        assert!(cut.samples.len() <= traj.samples.len());
        assert!(!cut.samples.is_empty());
        if cut.samples.len() < traj.samples.len() {
            let k = cut.samples.len() - 1;
            assert!(cut.samples[k].com_position[1] < 0.879);
            for s in &cut.samples[..k] {
                assert!(s.com_position[1] >= 0.879);
            }
        }
        assert_eq!(cut.meta, traj.meta);
    }

    #[test]
    fn histogram_bins_and_counts() {
        use crate::dataset::{FeatureVariant, WindowedData};
        let trajs = [synthetic_trajectory(300, 0.01, 1.0, Some(2.0), Some(3.6), 9)];
        let refs: Vec<&Trajectory<f64>> = trajs.iter().collect();
        let data = WindowedData::build(&refs, FeatureVariant::Base, 30, 1, 4.0).unwrap();
        let hist = lead_histogram(&data, 0.1).unwrap();
        let total: u64 = hist.iter().map(|(_, c)| c).sum();
        let finite = data.trajs[0]
            .windows
            .iter()
            .filter(|w| w.label.lead.is_some())
            .count() as u64;
        assert_eq!(total, finite);
        // Empty set: empty histogram.
        let empty = WindowedData::<f64> {
            trajs: vec![],
            variant: FeatureVariant::Base,
            m: 30,
            stride: 1,
            horizon: 4.0,
        };
        assert!(lead_histogram(&empty, 0.1).unwrap().is_empty());
    }

    #[test]
    fn report_csv_round_trips_losslessly() {
        let report = EvalReport::<f64> {
            rows: vec![FaultTypeReport {
                group: "abrupt".into(),
                n_safe: 21,
                n_unsafe: 19,
                fpr: 1.0 / 3.0,
                fnr: 0.0,
                mean_lead: Some(1.6180339887498949),
                min_lead: Some(0.2),
                mean_response: None,
                mean_predicted_lead: Some(1.23),
                predicted_lead_gap: Some(0.38803398874989487),
                interval_accuracy: [Some(0.97), None, Some(0.58)],
                regressor_max_error: Some(0.13),
                regressor_mean_error: Some(0.01),
                regressor_median_error: None,
            }],
        };
        let csv = report.to_csv();
        let back = EvalReport::<f64>::from_csv(&csv).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_trajectory_set_is_an_error() {
        let bundle = crate::testutil::random_bundle(30, 4.0, 1);
        assert!(matches!(
            evaluate(&bundle, &[]),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn digit_reference_constants_are_recorded() {
        assert_eq!(DIGIT_SIM_INTERMITTENT_LEAD_S, 1.64);
        assert_eq!(DIGIT_SIM_ABRUPT_INCIPIENT_LEAD_S, 1.61);
        assert_eq!(DIGIT_SIM_ABRUPT_INCIPIENT_RESPONSE_S, 0.39);
        assert_eq!(DIGIT_SIM_PREDICTED_LEAD_S, 1.48);
        assert_eq!(DIGIT_SIM_TRIMMED_PREDICTED_LEAD_S, 1.41);
        assert_eq!(DIGIT_INTERVAL_ACCURACIES, [0.97, 0.92, 0.58]);
    }
}
