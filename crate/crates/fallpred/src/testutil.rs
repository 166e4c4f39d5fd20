//! Shared builders for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{FeatureVariant, ScalerParams};
use crate::forces::{ForceProfile, Impulse, ProfileKind};
use crate::nn::{Network, OutputActivation};
use crate::pipeline::PipelineBundle;
use crate::sim::{RobotState, Trajectory, TrajectoryMeta};
use crate::train::{NetHyper, TaskKind, TrainedModel};

pub fn synthetic_trajectory(
    n: usize,
    ts: f64,
    start: f64,
    t_ft: Option<f64>,
    t_fall: Option<f64>,
    wiggle_seed: u64,
) -> Trajectory<f64> {
    // Stamp times exactly as the simulator does: global grid index times the
    // period, so times compare bitwise against grid-snapped fault times.
    let snap = |t: f64| (t / ts).round() * ts;
    let start = snap(start);
    let t_ft = t_ft.map(snap);
    let t_fall = t_fall.map(snap);
    let start_k = (start / ts).round();
    let samples: Vec<RobotState<f64>> = (0..n)
        .map(|i| {
            let t = (start_k + i as f64) * ts;
            let w = ((i as f64 + wiggle_seed as f64) * 0.31).sin() * 0.01;
            RobotState {
                t,
                joint_angles: [w, -w],
                joint_velocities: [0.5 * w, 0.2 * w],
                joint_torques: [12.0 * w, -4.0 * w],
                com_position: [w, 0.88 - w.abs()],
                com_velocity: [0.3 * w, -0.1 * w],
                midfoot: [0.0, 0.0],
                contact_x: 0.04 * w,
                fallen: false,
            }
        })
        .collect();
    Trajectory {
        meta: TrajectoryMeta {
            id: format!("syn_{wiggle_seed}_{n}"),
            kind: ProfileKind::Abrupt,
            profile: ForceProfile::prelude_only(Impulse {
                start: 0.0,
                amplitude: 0.0,
                duration: 0.075,
            }),
            seed_stream: wiggle_seed,
            retention_start: start,
            sample_period: ts,
            t_ft,
            ft_index: t_ft.map(|t| ((t - start) / ts).round() as i64),
            t_fall,
            fall_index: t_fall.map(|t| ((t - start) / ts).round() as usize),
            unsafe_label: t_fall.is_some(),
        },
        samples,
    }
}

/// Identity scaler for `dim` features.
pub fn identity_scaler(dim: usize) -> ScalerParams<f64> {
    ScalerParams {
        min: vec![0.0; dim],
        max: vec![1.0; dim],
        constant: vec![],
    }
}

/// Pipeline bundle around three randomly initialized networks.
pub fn random_bundle(m: usize, horizon: f64, seed: u64) -> PipelineBundle<f64> {
    let hyper = NetHyper::default();
    let base_d = FeatureVariant::Base.dim();
    let ext_d = FeatureVariant::Extended.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fault = TrainedModel {
        task: TaskKind::FaultClassifier,
        network: Network::init_random(hyper.spec(m, base_d, 1, OutputActivation::Identity), &mut rng)
            .unwrap(),
        threshold: 0.5,
        log: vec![],
        saved_epoch: Some(1),
    };
    let interval = TrainedModel {
        task: TaskKind::LeadIntervalClassifier,
        network: Network::init_random(hyper.spec(m, ext_d, 3, OutputActivation::Identity), &mut rng)
            .unwrap(),
        threshold: 0.5,
        log: vec![],
        saved_epoch: Some(1),
    };
    let regressor = TrainedModel {
        task: TaskKind::LeadRegressor,
        network: Network::init_random(hyper.spec(m, ext_d, 1, OutputActivation::Sigmoid), &mut rng)
            .unwrap(),
        threshold: 0.5,
        log: vec![],
        saved_epoch: Some(1),
    };
    PipelineBundle::new(
        fault,
        interval,
        regressor,
        identity_scaler(base_d),
        identity_scaler(ext_d),
        m,
        horizon,
    )
    .unwrap()
}
