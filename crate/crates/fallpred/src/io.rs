//! On-disk formats: trajectory CSVs plus a dataset manifest, the windowed
//! dataset bundle (tensor + labels + manifest), the pipeline bundle
//! directory, and training-log CSVs. Floats print in shortest round-trip
//! form, so identical runs produce byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ScalerParams, SplitIds, WindowedData};
use crate::error::{Error, Result};
use crate::nn::{load_network, save_network};
use crate::num::Real;
use crate::pipeline::PipelineBundle;
use crate::sim::{ForceRanges, RobotState, Trajectory, TrajectoryMeta};
use crate::train::{EpochLog, TaskKind, TrainedModel};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

pub const TRAJECTORY_CSV_HEADER: &str = "t,ankle_pitch,hip_pitch,ankle_rate,hip_rate,ankle_torque,hip_torque,com_x,com_z,vcom_x,vcom_z,midfoot_x,midfoot_z,contact_x,fallen";

/// Write one trajectory as CSV with a header row naming each state field.
pub fn save_trajectory_csv<T: Real>(traj: &Trajectory<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{TRAJECTORY_CSV_HEADER}")?;
    for s in &traj.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.joint_angles[0],
            s.joint_angles[1],
            s.joint_velocities[0],
            s.joint_velocities[1],
            s.joint_torques[0],
            s.joint_torques[1],
            s.com_position[0],
            s.com_position[1],
            s.com_velocity[0],
            s.com_velocity[1],
            s.midfoot[0],
            s.midfoot[1],
            s.contact_x,
            u8::from(s.fallen),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f<T: Real>(s: &str, what: &str) -> Result<T> {
    s.parse::<f64>()
        .map(T::from_f64_lossy)
        .map_err(|e| Error::Data(format!("bad {what} value `{s}`: {e}")))
}

pub fn load_trajectory_csv<T: Real>(path: &Path, meta: TrajectoryMeta<T>) -> Result<Trajectory<T>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty trajectory file", path.display())))?;
    if header != TRAJECTORY_CSV_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected trajectory header",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 15 {
            return Err(Error::Data(format!("{}: bad row `{line}`", path.display())));
        }
        samples.push(RobotState {
            t: parse_f(c[0], "t")?,
            joint_angles: [parse_f(c[1], "q")?, parse_f(c[2], "q")?],
            joint_velocities: [parse_f(c[3], "dq")?, parse_f(c[4], "dq")?],
            joint_torques: [parse_f(c[5], "tau")?, parse_f(c[6], "tau")?],
            com_position: [parse_f(c[7], "com")?, parse_f(c[8], "com")?],
            com_velocity: [parse_f(c[9], "vcom")?, parse_f(c[10], "vcom")?],
            midfoot: [parse_f(c[11], "midfoot")?, parse_f(c[12], "midfoot")?],
            contact_x: parse_f(c[13], "contact")?,
            fallen: c[14] == "1",
        });
    }
    Ok(Trajectory { meta, samples })
}

/// Per-trajectory record inside the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord<T> {
    pub file: String,
    pub n_samples: usize,
    #[serde(flatten)]
    pub meta: TrajectoryMeta<T>,
}

/// Dataset manifest: every episode's metadata plus the calibration that
/// produced the force ranges and a snapshot of the generating config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest<T> {
    pub format_version: u32,
    pub master_seed: u64,
    pub calibration: ForceRanges<T>,
    pub trajectories: Vec<TrajectoryRecord<T>>,
}

pub fn save_dataset<T: Real>(
    dir: &Path,
    trajs: &[Trajectory<T>],
    calibration: &ForceRanges<T>,
    master_seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let file = format!("{}.csv", traj.meta.id);
        save_trajectory_csv(traj, &dir.join(&file))?;
        records.push(TrajectoryRecord {
            file,
            n_samples: traj.samples.len(),
            meta: traj.meta.clone(),
        });
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        master_seed,
        calibration: *calibration,
        trajectories: records,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset<T: Real>(dir: &Path) -> Result<(Vec<Trajectory<T>>, DatasetManifest<T>)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest<T> = serde_json::from_str(&text)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut trajs = Vec::with_capacity(manifest.trajectories.len());
    for rec in &manifest.trajectories {
        let traj = load_trajectory_csv(&dir.join(&rec.file), rec.meta.clone())?;
        if traj.samples.len() != rec.n_samples {
            return Err(Error::Data(format!(
                "{}: expected {} samples, found {}",
                rec.file,
                rec.n_samples,
                traj.samples.len()
            )));
        }
        trajs.push(traj);
    }
    Ok((trajs, manifest))
}

const TENSOR_MAGIC: [u8; 4] = *b"FPWT";

/// Windowed-dataset bundle manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowBundleManifest<T> {
    pub format_version: u32,
    pub variant: crate::dataset::FeatureVariant,
    pub m: usize,
    pub stride: usize,
    pub horizon: T,
    pub scaler: Option<ScalerParams<T>>,
    pub split: Option<SplitIds>,
    pub seed: u64,
    pub n_windows: usize,
}

/// One row of the window labels file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLabelRecord<T> {
    pub trajectory_id: String,
    pub window_index: usize,
    pub end_time: T,
    pub fault: bool,
    pub lead: Option<T>,
    pub interval: Option<u8>,
}

/// Write the dataset bundle: materialized window tensor (n x m x d, little-
/// endian f64), a labels CSV, and a JSON manifest.
pub fn save_window_bundle<T: Real>(
    dir: &Path,
    data: &WindowedData<T>,
    scaler: Option<&ScalerParams<T>>,
    split: Option<&SplitIds>,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let d = data.variant.dim();
    let mut tensor = BufWriter::new(fs::File::create(dir.join("windows.bin"))?);
    let mut labels = BufWriter::new(fs::File::create(dir.join("labels.csv"))?);
    writeln!(labels, "trajectory_id,window_index,end_time,fault,lead,interval")?;
    let n: usize = data.trajs.iter().map(|t| t.windows.len()).sum();
    tensor.write_all(&TENSOR_MAGIC)?;
    tensor.write_all(&DATASET_FORMAT_VERSION.to_le_bytes())?;
    for v in [n as u64, data.m as u64, d as u64] {
        tensor.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for tw in &data.trajs {
        for (wi, w) in tw.windows.iter().enumerate() {
            tw.fill_input(w, &mut buf);
            for v in &buf {
                tensor.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
            writeln!(
                labels,
                "{},{},{},{},{},{}",
                tw.id,
                wi,
                w.end_time,
                u8::from(w.label.fault),
                w.label.lead.map(|l| format!("{l}")).unwrap_or_default(),
                w.label.interval.map(|c| c.to_string()).unwrap_or_default(),
            )?;
        }
    }
    tensor.flush()?;
    labels.flush()?;
    let manifest = WindowBundleManifest {
        format_version: DATASET_FORMAT_VERSION,
        variant: data.variant,
        m: data.m,
        stride: data.stride,
        horizon: data.horizon,
        scaler: scaler.cloned(),
        split: split.cloned(),
        seed,
        n_windows: n,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loaded window bundle: flat tensor plus per-window labels.
#[derive(Debug, Clone)]
pub struct WindowBundle<T> {
    pub manifest: WindowBundleManifest<T>,
    /// n x m x d values, row-major.
    pub tensor: Vec<T>,
    pub labels: Vec<WindowLabelRecord<T>>,
}

pub fn load_window_bundle<T: Real>(dir: &Path) -> Result<WindowBundle<T>> {
    let manifest: WindowBundleManifest<T> =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let bytes = fs::read(dir.join("windows.bin"))?;
    if bytes.len() < 32 || bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BundleCorrupt("bad window tensor header".into()));
    }
    let rd_u64 = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let n = rd_u64(8) as usize;
    let m = rd_u64(16) as usize;
    let d = rd_u64(24) as usize;
    let expected = 32 + n * m * d * 8;
    if bytes.len() != expected || m != manifest.m || n != manifest.n_windows {
        return Err(Error::BundleCorrupt(format!(
            "window tensor shape mismatch: {} bytes for {n}x{m}x{d}",
            bytes.len()
        )));
    }
    let mut tensor = Vec::with_capacity(n * m * d);
    for chunk in bytes[32..].chunks_exact(8) {
        tensor.push(T::from_f64_lossy(f64::from_le_bytes(chunk.try_into().unwrap())));
    }
    let labels_text = fs::read_to_string(dir.join("labels.csv"))?;
    let mut labels = Vec::with_capacity(n);
    for (i, line) in labels_text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 6 {
            return Err(Error::Data(format!("bad label row `{line}`")));
        }
        labels.push(WindowLabelRecord {
            trajectory_id: c[0].to_string(),
            window_index: c[1].parse().map_err(|e| Error::Data(format!("{e}")))?,
            end_time: parse_f(c[2], "end_time")?,
            fault: c[3] == "1",
            lead: if c[4].is_empty() { None } else { Some(parse_f(c[4], "lead")?) },
            interval: if c[5].is_empty() {
                None
            } else {
                Some(c[5].parse().map_err(|e| Error::Data(format!("{e}")))?)
            },
        });
    }
    if labels.len() != n {
        return Err(Error::BundleCorrupt(format!(
            "label count {} does not match tensor rows {n}",
            labels.len()
        )));
    }
    Ok(WindowBundle { manifest, tensor, labels })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleModelEntry {
    file: String,
    task: TaskKind,
    threshold: f64,
    saved_epoch: Option<usize>,
    sha256: String,
}

/// Pipeline-bundle manifest: geometry, preprocessing, scalers, the split
/// that produced the models, and a content hash per model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest<T> {
    pub format_version: u32,
    pub window_len: usize,
    pub horizon: T,
    /// Whether trajectories are drift-corrected before windowing.
    #[serde(default)]
    pub drift_correct: bool,
    pub scaler_base: ScalerParams<T>,
    pub scaler_extended: ScalerParams<T>,
    #[serde(default)]
    pub split: Option<SplitIds>,
    models: Vec<BundleModelEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Write the pipeline bundle as a directory: three model files, the two
/// scaler blocks, the horizon, and a manifest with per-file hashes.
pub fn save_bundle<T: Real>(
    dir: &Path,
    bundle: &PipelineBundle<T>,
    drift_correct: bool,
    split: Option<&SplitIds>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut models = Vec::new();
    for (file, model) in [
        ("fault.net", &bundle.fault_model),
        ("interval.net", &bundle.interval_model),
        ("regressor.net", &bundle.regressor_model),
    ] {
        let mut bytes = Vec::new();
        save_network(&model.network, &mut bytes)?;
        fs::write(dir.join(file), &bytes)?;
        models.push(BundleModelEntry {
            file: file.to_string(),
            task: model.task,
            threshold: model.threshold.to_f64_lossy(),
            saved_epoch: model.saved_epoch,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = BundleManifest {
        format_version: BUNDLE_FORMAT_VERSION,
        window_len: bundle.window_len,
        horizon: bundle.horizon,
        drift_correct,
        scaler_base: bundle.scaler_base.clone(),
        scaler_extended: bundle.scaler_extended.clone(),
        split: split.cloned(),
        models,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Load and verify a pipeline bundle; refuses version mismatches and files
/// whose hash disagrees with the manifest.
pub fn load_bundle<T: Real>(dir: &Path) -> Result<(PipelineBundle<T>, BundleManifest<T>)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest: BundleManifest<T> = serde_json::from_str(&text)?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: manifest.format_version,
            expected: BUNDLE_FORMAT_VERSION,
        });
    }
    let mut loaded = Vec::new();
    for entry in &manifest.models {
        let bytes = fs::read(dir.join(&entry.file))?;
        let hash = sha256_hex(&bytes);
        if hash != entry.sha256 {
            return Err(Error::BundleCorrupt(format!(
                "{}: hash mismatch (manifest {}, file {hash})",
                entry.file, entry.sha256
            )));
        }
        let network = load_network::<T, _>(&bytes[..])?;
        loaded.push(TrainedModel {
            task: entry.task,
            network,
            threshold: T::from_f64_lossy(entry.threshold),
            log: Vec::new(),
            saved_epoch: entry.saved_epoch,
        });
    }
    let [fault, interval, regressor]: [TrainedModel<T>; 3] = loaded
        .try_into()
        .map_err(|_| Error::BundleCorrupt("bundle must contain three models".into()))?;
    let bundle = PipelineBundle::new(
        fault,
        interval,
        regressor,
        manifest.scaler_base.clone(),
        manifest.scaler_extended.clone(),
        manifest.window_len,
        manifest.horizon,
    )?;
    Ok((bundle, manifest))
}

/// Parse only the state rows of a trajectory CSV (for `predict` on files
/// without a dataset manifest).
pub fn load_states_csv<T: Real>(path: &Path) -> Result<Vec<RobotState<T>>> {
    let meta = TrajectoryMeta {
        id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trajectory".into()),
        kind: crate::forces::ProfileKind::OscillationPrelude,
        profile: crate::forces::ForceProfile::prelude_only(crate::forces::Impulse {
            start: T::zero(),
            amplitude: T::zero(),
            duration: T::zero(),
        }),
        seed_stream: 0,
        retention_start: T::zero(),
        sample_period: T::zero(),
        t_ft: None,
        ft_index: None,
        t_fall: None,
        fall_index: None,
        unsafe_label: false,
    };
    Ok(load_trajectory_csv(path, meta)?.samples)
}

pub const TRAINING_LOG_HEADER: &str =
    "epoch,mean_loss,train_fpr,val_fpr,val_lead,val_macro_accuracy,val_mae,saved,rule";

/// Training log CSV, one row per epoch.
pub fn save_training_log<T: Real>(path: &Path, log: &[EpochLog<T>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{TRAINING_LOG_HEADER}")?;
    let opt = |v: &Option<T>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            row.epoch,
            row.mean_loss,
            opt(&row.train_fpr),
            opt(&row.val_fpr),
            opt(&row.val_lead),
            opt(&row.val_macro_accuracy),
            opt(&row.val_mae),
            u8::from(row.saved),
            row.rule
                .map(|r| format!("{r:?}"))
                .unwrap_or_default(),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram CSV: `bin_start,count` rows.
pub fn save_histogram_csv<T: Real>(path: &Path, hist: &[(T, u64)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "bin_start,count")?;
    for (start, count) in hist {
        writeln!(w, "{start},{count}")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-window prediction CSV for the `predict` command.
pub fn save_predictions_csv<T: Real>(
    path: &Path,
    times: &[T],
    predictions: &[crate::pipeline::Prediction<T>],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,fault,probability,interval,lead")?;
    for (t, p) in times.iter().zip(predictions) {
        writeln!(
            w,
            "{},{},{},{},{}",
            t,
            u8::from(p.fault),
            p.probability,
            p.interval.map(|c| c.to_string()).unwrap_or_default(),
            p.lead.map(|l| format!("{l}")).unwrap_or_default(),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Resolve output collisions defensively: error rather than overwrite a
/// directory that already has a manifest.
pub fn ensure_fresh_dir(dir: &Path) -> Result<PathBuf> {
    if dir.join("manifest.json").exists() {
        return Err(Error::Data(format!(
            "{} already contains a manifest; refusing to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
