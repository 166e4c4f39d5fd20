//! Command implementations behind the `fallpred` binary: generate, train,
//! eval, and predict, each writing its outputs plus the config snapshot that
//! produced them.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::{
    drift_correct, stratified_split, FeatureVariant, ScalerParams, SplitIds, SplitSpec,
    WindowedData,
};
use crate::error::{Error, Result};
use crate::forces::ProfileKind;
use crate::io;
use crate::metrics::{evaluate, lead_histogram, trimmed_evaluate, EvalReport};
use crate::pipeline::{predict_stream, PipelineBundle};
use crate::sim::{generate_batch, ForceRanges, Simulator, Trajectory};
use crate::train::{
    calibrate_threshold, train_fault_classifier, train_lead_classifier, train_lead_regressor,
};

pub type Scalar = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultFilter {
    All,
    Kind(ProfileKind),
}

impl std::str::FromStr for FaultFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FaultFilter::All),
            "abrupt" => Ok(FaultFilter::Kind(ProfileKind::Abrupt)),
            "incipient" => Ok(FaultFilter::Kind(ProfileKind::Incipient)),
            "intermittent" => Ok(FaultFilter::Kind(ProfileKind::Intermittent)),
            other => Err(Error::Config {
                key: "--fault-type".into(),
                detail: format!("unknown fault type `{other}`"),
            }),
        }
    }
}

fn write_snapshot(config: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.toml"), config.to_snapshot()?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub calibration: ForceRanges<Scalar>,
    /// (kind, total, unsafe) per generated batch.
    pub counts: Vec<(ProfileKind, usize, usize)>,
}

/// Calibrate force ranges, simulate every episode, and write the dataset
/// directory (one CSV per trajectory plus the manifest and config snapshot).
pub fn cmd_generate(config: &RunConfig, out_dir: &Path) -> Result<GenerateSummary> {
    let sim = Simulator::new(config.robot, config.sim)?;
    let ranges = sim.calibrate_force_ranges(&config.forces, &config.calibration)?;

    let mut all: Vec<Trajectory<Scalar>> = Vec::new();
    let mut counts = Vec::new();
    for (kind, count) in [
        (ProfileKind::Abrupt, config.counts.abrupt),
        (ProfileKind::Incipient, config.counts.incipient),
        (ProfileKind::Intermittent, config.counts.intermittent),
    ] {
        let batch = generate_batch(&sim, &ranges, &config.forces, kind, count)?;
        let n_unsafe = batch.iter().filter(|t| t.meta.unsafe_label).count();
        counts.push((kind, batch.len(), n_unsafe));
        all.extend(batch);
    }

    io::ensure_fresh_dir(out_dir)?;
    io::save_dataset(out_dir, &all, &ranges, config.seeds.master)?;
    write_snapshot(config, out_dir)?;
    Ok(GenerateSummary {
        calibration: ranges,
        counts,
    })
}

fn gather<'a>(
    trajs: &'a [Trajectory<Scalar>],
    ids: &[String],
) -> Result<Vec<&'a Trajectory<Scalar>>> {
    ids.iter()
        .map(|id| {
            trajs
                .iter()
                .find(|t| &t.meta.id == id)
                .ok_or_else(|| Error::Data(format!("trajectory `{id}` missing from dataset")))
        })
        .collect()
}

fn build_scaled(
    trajs: &[&Trajectory<Scalar>],
    variant: FeatureVariant,
    config: &RunConfig,
    scaler: Option<&ScalerParams<Scalar>>,
) -> Result<(WindowedData<Scalar>, ScalerParams<Scalar>)> {
    let mut data = WindowedData::build(
        trajs,
        variant,
        config.window.length,
        config.window.stride,
        config.window.horizon,
    )?;
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => data.fit_scaler()?,
    };
    data.apply_scaler(&scaler);
    Ok((data, scaler))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub split: SplitIds,
    pub p_star: Scalar,
    pub val_fpr: Scalar,
    pub val_lead: Option<Scalar>,
}

/// Split the dataset, train the three models, calibrate the probability
/// threshold, and write the pipeline bundle plus per-model training logs.
pub fn cmd_train(
    config: &RunConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    export_windows: bool,
) -> Result<TrainSummary> {
    let (mut trajs, _manifest) = io::load_dataset::<Scalar>(dataset_dir)?;
    if config.window.drift_correct {
        trajs = trajs.iter().map(drift_correct).collect();
    }

    // Abrupt and incipient trajectories are split; intermittent episodes are
    // all test data.
    let splittable: Vec<Trajectory<Scalar>> = trajs
        .iter()
        .filter(|t| matches!(t.meta.kind, ProfileKind::Abrupt | ProfileKind::Incipient))
        .cloned()
        .collect();
    let mut split = stratified_split(
        &splittable,
        &SplitSpec {
            test_reserve: config.split.test_reserve,
            train_fraction: config.split.train_fraction,
            seed: config.split_seed(),
        },
    )?;
    for t in &trajs {
        if !matches!(t.meta.kind, ProfileKind::Abrupt | ProfileKind::Incipient) {
            split.test.push(t.meta.id.clone());
        }
    }
    split.test.sort();

    let train_refs = gather(&trajs, &split.train)?;
    let val_refs = gather(&trajs, &split.val)?;

    let (train_base, scaler_base) = build_scaled(&train_refs, FeatureVariant::Base, config, None)?;
    let (val_base, _) = build_scaled(&val_refs, FeatureVariant::Base, config, Some(&scaler_base))?;
    let (train_ext, scaler_ext) =
        build_scaled(&train_refs, FeatureVariant::Extended, config, None)?;
    let (val_ext, _) = build_scaled(&val_refs, FeatureVariant::Extended, config, Some(&scaler_ext))?;

    let mut fault_model = train_fault_classifier(
        &train_base,
        &val_base,
        &config.network,
        &config.train_config(config.training.epochs_fault, 1),
        &config.save_criteria(),
    )?;
    let calibration = calibrate_threshold(
        &fault_model,
        &val_base,
        config.training.threshold_target_fpr,
    )?;
    fault_model.threshold = calibration.p_star;

    let interval_model = train_lead_classifier(
        &train_ext,
        &val_ext,
        &config.network,
        &config.train_config(config.training.epochs_interval, 2),
        true,
    )?;
    let regressor_model = train_lead_regressor(
        &train_ext,
        &val_ext,
        &config.network,
        &config.train_config(config.training.epochs_regressor, 3),
    )?;

    fs::create_dir_all(out_dir)?;
    io::save_training_log(&out_dir.join("fault_training.csv"), &fault_model.log)?;
    io::save_training_log(&out_dir.join("interval_training.csv"), &interval_model.log)?;
    io::save_training_log(&out_dir.join("regressor_training.csv"), &regressor_model.log)?;

    let bundle = PipelineBundle::new(
        fault_model,
        interval_model,
        regressor_model,
        scaler_base.clone(),
        scaler_ext.clone(),
        config.window.length,
        config.window.horizon,
    )?;
    let bundle_dir = out_dir.join("bundle");
    io::save_bundle(&bundle_dir, &bundle, config.window.drift_correct, Some(&split))?;
    write_snapshot(config, &bundle_dir)?;

    if export_windows {
        io::save_window_bundle(
            &out_dir.join("windows_base_train"),
            &train_base,
            Some(&scaler_base),
            Some(&split),
            config.seeds.master,
        )?;
        io::save_window_bundle(
            &out_dir.join("windows_extended_train"),
            &train_ext,
            Some(&scaler_ext),
            Some(&split),
            config.seeds.master,
        )?;
    }
    write_snapshot(config, out_dir)?;
    Ok(TrainSummary {
        split,
        p_star: calibration.p_star,
        val_fpr: calibration.val_fpr,
        val_lead: calibration.val_lead,
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport<Scalar>,
    pub n_trajectories: usize,
}

/// Evaluate the bundle on the dataset's held-out test trajectories (or all
/// trajectories when the bundle records no split), writing the report CSV,
/// a text table, and the lead histogram CSV.
pub fn cmd_eval(
    bundle_dir: &Path,
    dataset_dir: &Path,
    out_dir: &Path,
    filter: FaultFilter,
    trim_height: Option<Scalar>,
) -> Result<EvalSummary> {
    let (bundle, manifest) = io::load_bundle::<Scalar>(bundle_dir)?;
    let (mut trajs, _) = io::load_dataset::<Scalar>(dataset_dir)?;
    if manifest.drift_correct {
        trajs = trajs.iter().map(|t| drift_correct(t)).collect();
    }

    let mut selected: Vec<Trajectory<Scalar>> = match &manifest.split {
        Some(split) => {
            let test_ids: std::collections::BTreeSet<&String> = split.test.iter().collect();
            trajs
                .iter()
                .filter(|t| test_ids.contains(&t.meta.id))
                .cloned()
                .collect()
        }
        None => trajs,
    };
    if let FaultFilter::Kind(kind) = filter {
        selected.retain(|t| t.meta.kind == kind);
    }
    if selected.is_empty() {
        return Err(Error::EmptySet);
    }
    selected.sort_by(|a, b| a.meta.id.cmp(&b.meta.id));

    let report = match trim_height {
        Some(h) => trimmed_evaluate(&bundle, &selected, h)?,
        None => evaluate(&bundle, &selected)?,
    };

    let refs: Vec<&Trajectory<Scalar>> = selected.iter().collect();
    let windowed = WindowedData::build(
        &refs,
        FeatureVariant::Base,
        manifest.window_len,
        1,
        manifest.horizon,
    )?;
    let hist = lead_histogram(&windowed, 0.1)?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.csv"), report.to_csv())?;
    fs::write(out_dir.join("report.txt"), report.to_table())?;
    io::save_histogram_csv(&out_dir.join("lead_histogram.csv"), &hist)?;
    // Carry the training config snapshot along for provenance.
    let snapshot = bundle_dir.join("config.toml");
    if snapshot.exists() {
        fs::copy(&snapshot, out_dir.join("config.toml"))?;
    }
    Ok(EvalSummary {
        n_trajectories: selected.len(),
        report,
    })
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub n_windows: usize,
    pub any_fault: bool,
    pub first_detection_time: Option<Scalar>,
}

/// Stream the pipeline over one trajectory CSV and write per-window
/// predictions. The exit status of the binary encodes `any_fault`.
pub fn cmd_predict(bundle_dir: &Path, trajectory: &Path, out_csv: &Path) -> Result<PredictSummary> {
    let (bundle, manifest) = io::load_bundle::<Scalar>(bundle_dir)?;
    let states = io::load_states_csv::<Scalar>(trajectory)?;
    let mut traj = Trajectory {
        meta: crate::sim::TrajectoryMeta {
            id: "predict".into(),
            kind: ProfileKind::OscillationPrelude,
            profile: crate::forces::ForceProfile::prelude_only(crate::forces::Impulse {
                start: 0.0,
                amplitude: 0.0,
                duration: 0.0,
            }),
            seed_stream: 0,
            retention_start: states.first().map(|s| s.t).unwrap_or(0.0),
            sample_period: 0.0,
            t_ft: None,
            ft_index: None,
            t_fall: None,
            fall_index: None,
            unsafe_label: false,
        },
        samples: states,
    };
    if manifest.drift_correct {
        traj = drift_correct(&traj);
    }
    let stream = predict_stream(&bundle, &traj)?;
    let times: Vec<Scalar> = traj.samples[bundle.window_len - 1..]
        .iter()
        .map(|s| s.t)
        .collect();
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    io::save_predictions_csv(out_csv, &times, &stream.predictions)?;
    Ok(PredictSummary {
        n_windows: stream.predictions.len(),
        any_fault: stream.first_detection_index.is_some(),
        first_detection_time: stream.first_detection_time,
    })
}
