//! Trajectories to labeled sliding-window datasets: feature extraction,
//! fault/lead-time labeling, min-max scaling, stratified splitting, and
//! drift correction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ProfileKind;
use crate::num::{real, Real};
use crate::sim::{RobotState, Trajectory};

/// Feature set fed to the networks. The base set drives the critical fault
/// classifier; the extended set adds joint torques and the window-averaged
/// contact point for the lead-time models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    Base,
    Extended,
}

pub const BASE_FEATURE_NAMES: [&str; 8] = [
    "com_minus_midfoot_x",
    "com_minus_midfoot_z",
    "vcom_x",
    "vcom_z",
    "ankle_pitch",
    "hip_pitch",
    "ankle_rate",
    "hip_rate",
];

pub const EXTENDED_EXTRA_NAMES: [&str; 3] = ["ankle_torque", "hip_torque", "contact_mean"];

impl FeatureVariant {
    pub fn dim(self) -> usize {
        match self {
            FeatureVariant::Base => BASE_FEATURE_NAMES.len(),
            FeatureVariant::Extended => BASE_FEATURE_NAMES.len() + EXTENDED_EXTRA_NAMES.len(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureVariant::Base => "base",
            FeatureVariant::Extended => "extended",
        }
    }
}

/// Per-state feature vector. The extended variant's final slot holds the raw
/// contact point; windowing replaces it with the window mean.
pub fn extract_features<T: Real>(state: &RobotState<T>, variant: FeatureVariant) -> Result<Vec<T>> {
    if !state.is_finite() {
        return Err(Error::NonFinite {
            context: format!("robot state at t = {}", state.t),
        });
    }
    let mut f = Vec::with_capacity(variant.dim());
    f.push(state.com_position[0] - state.midfoot[0]);
    f.push(state.com_position[1] - state.midfoot[1]);
    f.push(state.com_velocity[0]);
    f.push(state.com_velocity[1]);
    f.push(state.joint_angles[0]);
    f.push(state.joint_angles[1]);
    f.push(state.joint_velocities[0]);
    f.push(state.joint_velocities[1]);
    if variant == FeatureVariant::Extended {
        f.push(state.joint_torques[0]);
        f.push(state.joint_torques[1]);
        f.push(state.contact_x);
    }
    Ok(f)
}

/// Row-major feature matrix for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries<T> {
    pub dim: usize,
    pub times: Vec<T>,
    pub rows: Vec<T>,
}

impl<T: Real> FeatureSeries<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn feature_series<T: Real>(
    traj: &Trajectory<T>,
    variant: FeatureVariant,
) -> Result<FeatureSeries<T>> {
    let dim = variant.dim();
    let mut rows = Vec::with_capacity(traj.len() * dim);
    let mut times = Vec::with_capacity(traj.len());
    for s in &traj.samples {
        rows.extend(extract_features(s, variant)?);
        times.push(s.t);
    }
    Ok(FeatureSeries { dim, times, rows })
}

/// Lead-time interval classes: 0 for [0,1), 1 for [1,2), 2 for [2,H].
pub fn interval_class<T: Real>(lead: T) -> u8 {
    if lead < T::one() {
        0
    } else if lead < real(2.0) {
        1
    } else {
        2
    }
}

/// Fault and lead-time labels of one window. `lead` is `None` for the
/// infinite lead assigned to fault-free windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel<T> {
    pub fault: bool,
    pub lead: Option<T>,
    pub interval: Option<u8>,
}

/// One sliding window over a trajectory's feature series, referencing rows
/// `[start, start + m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window<T> {
    pub start: usize,
    /// Index of the window's final row.
    pub end: usize,
    /// Time of the final row (the paper-style decision time t_i).
    pub end_time: T,
    pub label: WindowLabel<T>,
}

/// Windowed view of one trajectory plus everything evaluation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindows<T> {
    pub id: String,
    pub kind: ProfileKind,
    pub is_unsafe: bool,
    pub t_ft: Option<T>,
    pub t_fall: Option<T>,
    pub ft_index: Option<i64>,
    pub fall_index: Option<usize>,
    pub sample_period: T,
    pub variant: FeatureVariant,
    pub m: usize,
    pub stride: usize,
    pub horizon: T,
    pub series: FeatureSeries<T>,
    pub windows: Vec<Window<T>>,
    /// Set when the trajectory was shorter than one window.
    pub too_short: bool,
}

impl<T: Real> TrajectoryWindows<T> {
    /// Materialize a window's m x d input. For the extended variant the
    /// contact column is replaced by its window mean in every row.
    pub fn fill_input(&self, w: &Window<T>, buf: &mut Vec<T>) {
        let d = self.series.dim;
        buf.clear();
        buf.extend_from_slice(&self.series.rows[w.start * d..(w.end + 1) * d]);
        if self.variant == FeatureVariant::Extended {
            let c = d - 1;
            let mut mean = T::zero();
            for r in 0..self.m {
                mean += buf[r * d + c];
            }
            mean /= real(self.m as f64);
            for r in 0..self.m {
                buf[r * d + c] = mean;
            }
        }
    }
}

/// Slide windows of `m` steps at the given stride and label each one: a
/// window is a fault window iff the trajectory is unsafe and its end time is
/// at or past the fault introduction; its lead time is the time to the fall,
/// clipped to `[0, horizon]`, and infinite otherwise.
pub fn make_windows<T: Real>(
    traj: &Trajectory<T>,
    variant: FeatureVariant,
    m: usize,
    stride: usize,
    horizon: T,
) -> Result<TrajectoryWindows<T>> {
    if m == 0 || stride == 0 {
        return Err(Error::InvalidParams("window length and stride must be positive".into()));
    }
    if traj.meta.unsafe_label && (traj.meta.t_ft.is_none() || traj.meta.t_fall.is_none()) {
        return Err(Error::Data(format!(
            "unsafe trajectory {} lacks fault or fall time",
            traj.meta.id
        )));
    }
    let series = feature_series(traj, variant)?;
    let n = series.len();
    let too_short = n < m;
    let mut windows = Vec::new();
    if !too_short {
        let mut start = 0;
        while start + m <= n {
            let end = start + m - 1;
            let end_time = series.times[end];
            let fault = traj.meta.unsafe_label
                && traj.meta.t_ft.map_or(false, |t_ft| end_time >= t_ft);
            let label = if fault {
                let raw = traj.meta.t_fall.unwrap() - end_time;
                let lead = raw.max(T::zero()).min(horizon);
                WindowLabel {
                    fault: true,
                    lead: Some(lead),
                    interval: Some(interval_class(lead)),
                }
            } else {
                WindowLabel {
                    fault: false,
                    lead: None,
                    interval: None,
                }
            };
            windows.push(Window {
                start,
                end,
                end_time,
                label,
            });
            start += stride;
        }
    }
    Ok(TrajectoryWindows {
        id: traj.meta.id.clone(),
        kind: traj.meta.kind,
        is_unsafe: traj.meta.unsafe_label,
        t_ft: traj.meta.t_ft,
        t_fall: traj.meta.t_fall,
        ft_index: traj.meta.ft_index,
        fall_index: traj.meta.fall_index,
        sample_period: traj.meta.sample_period,
        variant,
        m,
        stride,
        horizon,
        series,
        windows,
        too_short,
    })
}

/// Per-feature min-max scaler fitted on training data and applied unchanged
/// everywhere else; off-training values may leave [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
    /// Features whose training column was constant; they map to zero.
    pub constant: Vec<usize>,
}

impl<T: Real> ScalerParams<T> {
    pub fn fit<'a, I>(series_list: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureSeries<T>>,
        T: 'a,
    {
        let mut min: Vec<T> = Vec::new();
        let mut max: Vec<T> = Vec::new();
        let mut any = false;
        for s in series_list {
            if min.is_empty() {
                min = vec![T::infinity(); s.dim];
                max = vec![T::neg_infinity(); s.dim];
            } else if s.dim != min.len() {
                return Err(Error::Data("feature dimension mismatch across series".into()));
            }
            for i in 0..s.len() {
                any = true;
                for (j, v) in s.row(i).iter().enumerate() {
                    if *v < min[j] {
                        min[j] = *v;
                    }
                    if *v > max[j] {
                        max[j] = *v;
                    }
                }
            }
        }
        if !any {
            return Err(Error::EmptySet);
        }
        let constant = (0..min.len()).filter(|&j| max[j] == min[j]).collect();
        Ok(ScalerParams { min, max, constant })
    }

    fn scale_of(&self, j: usize) -> T {
        let span = self.max[j] - self.min[j];
        if span > T::zero() {
            T::one() / span
        } else {
            T::zero()
        }
    }

    pub fn transform_row(&self, row: &mut [T]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - self.min[j]) * self.scale_of(j);
        }
    }

    pub fn invert_row(&self, row: &mut [T]) {
        for (j, v) in row.iter_mut().enumerate() {
            let span = self.max[j] - self.min[j];
            *v = self.min[j] + *v * span;
        }
    }

    pub fn transform_series(&self, series: &mut FeatureSeries<T>) {
        let d = series.dim;
        for chunk in series.rows.chunks_mut(d) {
            self.transform_row(chunk);
        }
    }
}

/// Stratified trajectory-level split specification. Splitting never happens
/// at window granularity, so no trajectory leaks across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Number of trajectories reserved for testing before the train/val cut.
    pub test_reserve: usize,
    /// Fraction of the non-test remainder used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_reserve: 200,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Largest-remainder allocation of `total` over stratum weights; preserves
/// proportions within one trajectory per stratum.
fn allocate(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut used = 0;
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as f64 * w as f64 / sum as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        used += floor;
        remainders.push((i, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(total - used) {
        counts[i] += 1;
    }
    counts
}

/// Split trajectories into train/val/test, stratified on the safe/unsafe
/// label, reserving `test_reserve` trajectories for testing and dividing the
/// remainder by `train_fraction`.
pub fn stratified_split<T: Real>(trajs: &[Trajectory<T>], spec: &SplitSpec) -> Result<SplitIds> {
    if trajs.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if spec.test_reserve >= trajs.len() {
        return Err(Error::InvalidParams(format!(
            "test_reserve {} leaves no data from {} trajectories",
            spec.test_reserve,
            trajs.len()
        )));
    }

    let mut strata: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for t in trajs {
        strata[t.meta.unsafe_label as usize].push(&t.meta.id);
    }
    let names = ["safe", "unsafe"];
    let active_splits = 2 + usize::from(spec.test_reserve > 0);
    for (ids, name) in strata.iter().zip(names) {
        if !ids.is_empty() && ids.len() < active_splits {
            return Err(Error::StratumTooSmall {
                stratum: name.into(),
                count: ids.len(),
                needed: active_splits,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sizes = [strata[0].len(), strata[1].len()];
    let test_quota = allocate(spec.test_reserve, &sizes);
    let remaining = [sizes[0] - test_quota[0], sizes[1] - test_quota[1]];
    let train_total = ((remaining[0] + remaining[1]) as f64 * spec.train_fraction).round() as usize;
    let train_quota = allocate(train_total, &remaining);

    let mut out = SplitIds {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (s, ids) in strata.iter().enumerate() {
        let mut shuffled: Vec<&str> = ids.clone();
        shuffled.shuffle(&mut rng);
        let (test, rest) = shuffled.split_at(test_quota[s]);
        let (train, val) = rest.split_at(train_quota[s]);
        out.test.extend(test.iter().map(|s| s.to_string()));
        out.train.extend(train.iter().map(|s| s.to_string()));
        out.val.extend(val.iter().map(|s| s.to_string()));
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    Ok(out)
}

/// Subtract the first retained sample's values from every sample, removing
/// sensor offset drift. Time and the fallen flag are untouched; applying the
/// correction twice is a no-op.
pub fn drift_correct<T: Real>(traj: &Trajectory<T>) -> Trajectory<T> {
    let mut out = traj.clone();
    let Some(first) = traj.samples.first().copied() else {
        return out;
    };
    for s in &mut out.samples {
        for j in 0..2 {
            s.joint_angles[j] -= first.joint_angles[j];
            s.joint_velocities[j] -= first.joint_velocities[j];
            s.joint_torques[j] -= first.joint_torques[j];
            s.com_position[j] -= first.com_position[j];
            s.com_velocity[j] -= first.com_velocity[j];
            s.midfoot[j] -= first.midfoot[j];
        }
        s.contact_x -= first.contact_x;
    }
    out
}

/// One split of windowed trajectories sharing feature variant and window
/// geometry, ready for training or evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedData<T> {
    pub trajs: Vec<TrajectoryWindows<T>>,
    pub variant: FeatureVariant,
    pub m: usize,
    pub stride: usize,
    pub horizon: T,
}

impl<T: Real> WindowedData<T> {
    pub fn build(
        trajs: &[&Trajectory<T>],
        variant: FeatureVariant,
        m: usize,
        stride: usize,
        horizon: T,
    ) -> Result<Self> {
        let windowed = trajs
            .iter()
            .map(|t| make_windows(t, variant, m, stride, horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(WindowedData {
            trajs: windowed,
            variant,
            m,
            stride,
            horizon,
        })
    }

    pub fn fit_scaler(&self) -> Result<ScalerParams<T>> {
        ScalerParams::fit(self.trajs.iter().map(|t| &t.series))
    }

    pub fn apply_scaler(&mut self, scaler: &ScalerParams<T>) {
        for t in &mut self.trajs {
            scaler.transform_series(&mut t.series);
        }
    }

    pub fn window_count(&self) -> usize {
        self.trajs.iter().map(|t| t.windows.len()).sum()
    }

    /// Windows with the fault label set, as (trajectory, window) indices.
    pub fn fault_window_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ti, t) in self.trajs.iter().enumerate() {
            for (wi, w) in t.windows.iter().enumerate() {
                if w.label.fault {
                    out.push((ti, wi));
                }
            }
        }
        out
    }

    /// All windows as (trajectory, window) indices.
    pub fn all_window_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ti, t) in self.trajs.iter().enumerate() {
            for wi in 0..t.windows.len() {
                out.push((ti, wi));
            }
        }
        out
    }
}
