//! Planar standing robot: a two-link pendulum (ankle and hip pitch) on a
//! finite flat foot, balanced by a PD controller whose ankle torque is
//! saturated so the zero moment point stays inside the foot.
//!
//! The foot is massless and the ankle sits at the foot center on the ground,
//! so the ZMP is `-tau_ankle / F_ground_z`. While the demanded ZMP stays
//! inside the foot the demanded torque is applied; otherwise the torque is
//! solved exactly for the foot edge, which is also where the contact point
//! sits while the robot tips over.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::forces::{sample_profile, ForceProfile, ProfileKind, ProfileTiming};
use crate::num::{real, Real};

/// Published force ranges used for the Digit robot experiments, kept as
/// reference constants; the planar robot calibrates its own bounds.
pub const DIGIT_ABRUPT_RANGE_N: f64 = 414.8;
pub const DIGIT_INCIPIENT_RANGE_N: f64 = 57.6;
pub const DIGIT_OSCILLATION_RANGE_N: f64 = 202.4;

/// Physical and control parameters of the planar robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams<T> {
    /// Leg link mass (kg), ankle to hip.
    pub leg_mass: T,
    /// Torso link mass (kg), hip upward.
    pub torso_mass: T,
    /// Leg link length (m).
    pub leg_length: T,
    /// Torso link length (m); both links are uniform rods.
    pub torso_length: T,
    /// Half-length of the flat foot (m); the support segment is `[-h, +h]`.
    pub foot_half_length: T,
    /// Upright center-of-mass height (m), used by fractional fall thresholds.
    pub nominal_com_height: T,
    pub gravity: T,
    /// Ankle actuator torque limit (N·m).
    pub ankle_torque_limit: T,
    /// Hip actuator torque limit (N·m).
    pub hip_torque_limit: T,
    /// Ankle PD gain on CoM horizontal position (N·m per m).
    pub com_kp: T,
    /// Ankle PD gain on CoM horizontal velocity (N·m per m/s).
    pub com_kd: T,
    /// Hip PD gain on absolute torso pitch (N·m per rad).
    pub torso_kp: T,
    /// Hip PD gain on torso pitch rate (N·m per rad/s).
    pub torso_kd: T,
    /// Integration step (s).
    pub dt: T,
    /// Sensor sampling period (s); must be an integer multiple of `dt`.
    pub sample_period: T,
}

impl<T: Real> Default for RobotParams<T> {
    fn default() -> Self {
        let mut p = RobotParams {
            leg_mass: real(14.0),
            torso_mass: real(34.0),
            leg_length: real(0.7),
            torso_length: real(0.8),
            foot_half_length: real(0.09),
            nominal_com_height: T::zero(),
            gravity: real(9.81),
            ankle_torque_limit: real(80.0),
            hip_torque_limit: real(150.0),
            com_kp: real(1600.0),
            com_kd: real(320.0),
            torso_kp: real(400.0),
            torso_kd: real(60.0),
            dt: real(0.001),
            sample_period: real(0.01),
        };
        p.nominal_com_height = p.upright_com_height();
        p
    }
}

impl<T: Real> RobotParams<T> {
    pub fn total_mass(&self) -> T {
        self.leg_mass + self.torso_mass
    }

    /// CoM height with both links vertical.
    pub fn upright_com_height(&self) -> T {
        let half = real::<T>(0.5);
        (self.leg_mass * self.leg_length * half
            + self.torso_mass * (self.leg_length + self.torso_length * half))
            / self.total_mass()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("leg_mass", self.leg_mass),
            ("torso_mass", self.torso_mass),
            ("leg_length", self.leg_length),
            ("torso_length", self.torso_length),
            ("foot_half_length", self.foot_half_length),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("sample_period", self.sample_period),
        ];
        for (name, v) in pos {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.dt > self.sample_period {
            return Err(Error::InvalidParams(format!(
                "dt ({}) must not exceed sample_period ({})",
                self.dt, self.sample_period
            )));
        }
        let ratio = (self.sample_period / self.dt).to_f64_lossy();
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!(
                "sample_period must be an integer multiple of dt (ratio {ratio})"
            )));
        }
        Ok(())
    }

    pub(crate) fn substeps_per_sample(&self) -> usize {
        (self.sample_period / self.dt).to_f64_lossy().round() as usize
    }
}

/// How the fall height threshold is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum FallThreshold<T> {
    /// Absolute CoM height (m).
    Absolute(T),
    /// Fraction of the nominal upright CoM height.
    FractionOfNominal(T),
}

impl<T: Real> FallThreshold<T> {
    pub fn resolve(&self, params: &RobotParams<T>) -> T {
        match *self {
            FallThreshold::Absolute(h) => h,
            FallThreshold::FractionOfNominal(f) => f * params.nominal_com_height,
        }
    }
}

/// Episode-level simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub fall_threshold: FallThreshold<T>,
    /// Episode duration (s).
    pub episode_duration: T,
    /// Data recorded before `perturbation start + retention_delay` is dropped.
    pub retention_delay: T,
    /// Master seed for episode generation.
    pub seed: u64,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        SimConfig {
            fall_threshold: FallThreshold::Absolute(real(0.12)),
            episode_duration: real(8.0),
            retention_delay: real(1.0),
            seed: 0,
        }
    }
}

/// Snapshot of the robot at a single instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState<T> {
    pub t: T,
    /// Ankle pitch (absolute from vertical) and hip pitch (relative), rad.
    pub joint_angles: [T; 2],
    pub joint_velocities: [T; 2],
    /// Applied (post-saturation) ankle and hip torques, N·m.
    pub joint_torques: [T; 2],
    /// CoM position in the sagittal x-z plane, m.
    pub com_position: [T; 2],
    pub com_velocity: [T; 2],
    /// Mid-foot reference point, m (the foot is anchored at the origin).
    pub midfoot: [T; 2],
    /// Contact point x-coordinate: ZMP while the foot is flat, the foot edge
    /// while tipping.
    pub contact_x: T,
    pub fallen: bool,
}

impl<T: Real> RobotState<T> {
    pub fn is_finite(&self) -> bool {
        let RobotState {
            t,
            joint_angles,
            joint_velocities,
            joint_torques,
            com_position,
            com_velocity,
            midfoot,
            contact_x,
            fallen: _,
        } = self;
        t.is_finite()
            && joint_angles.iter().all(|v| v.is_finite())
            && joint_velocities.iter().all(|v| v.is_finite())
            && joint_torques.iter().all(|v| v.is_finite())
            && com_position.iter().all(|v| v.is_finite())
            && com_velocity.iter().all(|v| v.is_finite())
            && midfoot.iter().all(|v| v.is_finite())
            && contact_x.is_finite()
    }
}

/// Calibrated amplitude range for one fault family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRange<T> {
    /// Smallest amplitude that causes a fall under nominal timing.
    pub boundary: T,
    /// Sampling upper bound, `2 * boundary`, so uniform draws split roughly
    /// half safe, half falling.
    pub bound: T,
}

/// Calibrated amplitude ranges for profile sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceRanges<T> {
    pub abrupt: AmplitudeRange<T>,
    pub incipient: AmplitudeRange<T>,
    /// Upper bound for the initial oscillatory perturbation.
    pub oscillation_bound: T,
    /// Fraction of the boundary considered safe for first intermittent pushes.
    pub safe_fraction: T,
}

impl<T: Real> ForceRanges<T> {
    pub fn full_bound(&self, abrupt_like: bool) -> T {
        if abrupt_like {
            self.abrupt.bound
        } else {
            self.incipient.bound
        }
    }

    pub fn safe_cap(&self, abrupt_like: bool) -> T {
        let boundary = if abrupt_like {
            self.abrupt.boundary
        } else {
            self.incipient.boundary
        };
        self.safe_fraction * boundary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions<T> {
    /// Relative tolerance for the bisection on the fall boundary.
    pub relative_tolerance: T,
    /// Bracket-search cap; exceeding it is a calibration failure.
    pub max_amplitude: T,
    /// Safe sub-range fraction recorded into [`ForceRanges`].
    pub safe_fraction: T,
}

impl<T: Real> Default for CalibrationOptions<T> {
    fn default() -> Self {
        CalibrationOptions {
            relative_tolerance: real(1e-3),
            max_amplitude: real(1e7),
            safe_fraction: real(0.95),
        }
    }
}

/// Episode metadata stored alongside the sampled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta<T> {
    pub id: String,
    pub kind: ProfileKind,
    pub profile: ForceProfile<T>,
    /// RNG stream that produced the profile.
    pub seed_stream: u64,
    /// First retained instant (s).
    pub retention_start: T,
    pub sample_period: T,
    /// Fault introduction time (first fault for intermittent profiles).
    pub t_ft: Option<T>,
    /// Index of the fault introduction on the retained sample grid.
    pub ft_index: Option<i64>,
    /// Fall time: first retained sample at which the robot is fallen.
    pub t_fall: Option<T>,
    pub fall_index: Option<usize>,
    /// Unsafe iff the episode ends in a fall.
    pub unsafe_label: bool,
}

/// A sampled episode: uniformly spaced retained states plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub meta: TrajectoryMeta<T>,
    pub samples: Vec<RobotState<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Divergence error carrying the retained prefix for debugging.
#[derive(Debug, Error)]
#[error("simulation diverged at t = {t:.4} s after {} retained samples", prefix.len())]
pub struct DivergedError<T: Real> {
    pub t: f64,
    pub prefix: Vec<RobotState<T>>,
}

impl<T: Real> From<DivergedError<T>> for Error {
    fn from(e: DivergedError<T>) -> Self {
        Error::SimulationDiverged { t: e.t }
    }
}

/// Flat-foot standing simulator.
#[derive(Debug, Clone)]
pub struct Simulator<T> {
    pub params: RobotParams<T>,
    pub config: SimConfig<T>,
    fall_height: T,
}

impl<T: Real> Simulator<T> {
    pub fn new(params: RobotParams<T>, config: SimConfig<T>) -> Result<Self> {
        params.validate()?;
        let fall_height = config.fall_threshold.resolve(&params);
        if !(fall_height > T::zero() && fall_height < params.nominal_com_height) {
            return Err(Error::InvalidParams(format!(
                "fall threshold {} must lie in (0, nominal CoM height {})",
                fall_height, params.nominal_com_height
            )));
        }
        if !(config.episode_duration > T::zero()) {
            return Err(Error::InvalidParams(
                "episode_duration must be positive".into(),
            ));
        }
        Ok(Simulator {
            params,
            config,
            fall_height,
        })
    }

    pub fn fall_height(&self) -> T {
        self.fall_height
    }

    /// Upright rest state: the fixed point of the closed-loop dynamics.
    pub fn equilibrium_state(&self) -> RobotState<T> {
        let z = self.params.upright_com_height();
        RobotState {
            t: T::zero(),
            joint_angles: [T::zero(); 2],
            joint_velocities: [T::zero(); 2],
            joint_torques: [T::zero(); 2],
            com_position: [T::zero(), z],
            com_velocity: [T::zero(); 2],
            midfoot: [T::zero(); 2],
            contact_x: T::zero(),
            fallen: false,
        }
    }

    fn link_constants(&self) -> LinkConstants<T> {
        let p = &self.params;
        let half = real::<T>(0.5);
        let twelfth = real::<T>(1.0 / 12.0);
        let lc1 = p.leg_length * half;
        let lc2 = p.torso_length * half;
        let i1 = p.leg_mass * p.leg_length * p.leg_length * twelfth;
        let i2 = p.torso_mass * p.torso_length * p.torso_length * twelfth;
        LinkConstants {
            alpha: i1 + p.leg_mass * lc1 * lc1 + p.torso_mass * p.leg_length * p.leg_length,
            beta: i2 + p.torso_mass * lc2 * lc2,
            gamma: p.torso_mass * p.leg_length * lc2,
            mu1: p.leg_mass * lc1 + p.torso_mass * p.leg_length,
            mu2: p.torso_mass * lc2,
            l1: p.leg_length,
            lc2,
            total_mass: p.total_mass(),
        }
    }

    /// CoM position and velocity from joint coordinates.
    pub fn com_state(&self, q: [T; 2], dq: [T; 2]) -> ([T; 2], [T; 2]) {
        let k = self.link_constants();
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let mt = k.total_mass;
        let pos = [
            (k.mu1 * s1 + k.mu2 * s12) / mt,
            (k.mu1 * c1 + k.mu2 * c12) / mt,
        ];
        let w = dq[0] + dq[1];
        let vel = [
            (k.mu1 * c1 * dq[0] + k.mu2 * c12 * w) / mt,
            -(k.mu1 * s1 * dq[0] + k.mu2 * s12 * w) / mt,
        ];
        (pos, vel)
    }

    /// Joint accelerations for given torques and external horizontal force
    /// applied at the torso CoM.
    pub fn joint_acceleration(&self, q: [T; 2], dq: [T; 2], tau: [T; 2], force: T) -> [T; 2] {
        let k = self.link_constants();
        let dyn_ = self.dynamics_terms(&k, q, dq, force);
        let rhs = [
            tau[0] + dyn_.rhs_passive[0],
            tau[1] + dyn_.rhs_passive[1],
        ];
        [
            dyn_.m_inv[0][0] * rhs[0] + dyn_.m_inv[0][1] * rhs[1],
            dyn_.m_inv[1][0] * rhs[0] + dyn_.m_inv[1][1] * rhs[1],
        ]
    }

    fn dynamics_terms(&self, k: &LinkConstants<T>, q: [T; 2], dq: [T; 2], force: T) -> DynTerms<T> {
        let g = self.params.gravity;
        let (s1, c1) = q[0].sin_cos();
        let (s2, c2) = q[1].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let two = real::<T>(2.0);

        let m11 = k.alpha + k.beta + two * k.gamma * c2;
        let m12 = k.beta + k.gamma * c2;
        let m22 = k.beta;
        let det = m11 * m22 - m12 * m12;
        let m_inv = [[m22 / det, -m12 / det], [-m12 / det, m11 / det]];

        // Coriolis/centrifugal and gravity generalized forces.
        let cor = [
            -k.gamma * s2 * (two * dq[0] * dq[1] + dq[1] * dq[1]),
            k.gamma * s2 * dq[0] * dq[0],
        ];
        let grav = [-g * (k.mu1 * s1 + k.mu2 * s12), -g * k.mu2 * s12];
        // Horizontal force at the torso CoM enters through its Jacobian.
        let q_ext = [force * (k.l1 * c1 + k.lc2 * c12), force * k.lc2 * c12];

        let rhs_passive = [q_ext[0] - cor[0] - grav[0], q_ext[1] - cor[1] - grav[1]];

        // Vertical CoM acceleration is affine in the joint accelerations:
        // zdd = u0 + w . qdd.
        let mt = k.total_mass;
        let w_sum = dq[0] + dq[1];
        let w_vec = [-(k.mu1 * s1 + k.mu2 * s12) / mt, -k.mu2 * s12 / mt];
        let u0 = -(k.mu1 * c1 * dq[0] * dq[0] + k.mu2 * c12 * w_sum * w_sum) / mt;

        DynTerms {
            m_inv,
            rhs_passive,
            w_vec,
            u0,
        }
    }

    /// PD torques before any saturation.
    pub fn raw_pd_torques(&self, state: &RobotState<T>) -> [T; 2] {
        let p = &self.params;
        let ankle = -(p.com_kp * state.com_position[0] + p.com_kd * state.com_velocity[0]);
        let torso_pitch = state.joint_angles[0] + state.joint_angles[1];
        let torso_rate = state.joint_velocities[0] + state.joint_velocities[1];
        let hip = -(p.torso_kp * torso_pitch + p.torso_kd * torso_rate);
        [ankle, hip]
    }

    /// Applied torques after actuator limits and the ZMP clamp, plus the
    /// realized contact point for this step.
    pub fn applied_torques(&self, state: &RobotState<T>, force: T) -> ([T; 2], T) {
        let p = &self.params;
        let k = self.link_constants();
        let pd = self.raw_pd_torques(state);
        let hip = clamp(pd[1], p.hip_torque_limit);
        let mut ankle = clamp(pd[0], p.ankle_torque_limit);

        let q = state.joint_angles;
        let dq = state.joint_velocities;
        let dyn_ = self.dynamics_terms(&k, q, dq, force);

        // qdd(tau1) = a_vec0 + a_vec1 * tau1 with the hip torque fixed.
        let rhs0 = [dyn_.rhs_passive[0], hip + dyn_.rhs_passive[1]];
        let a_vec0 = [
            dyn_.m_inv[0][0] * rhs0[0] + dyn_.m_inv[0][1] * rhs0[1],
            dyn_.m_inv[1][0] * rhs0[0] + dyn_.m_inv[1][1] * rhs0[1],
        ];
        let a_vec1 = [dyn_.m_inv[0][0], dyn_.m_inv[1][0]];
        let a0 = dyn_.u0 + dyn_.w_vec[0] * a_vec0[0] + dyn_.w_vec[1] * a_vec0[1];
        let a1 = dyn_.w_vec[0] * a_vec1[0] + dyn_.w_vec[1] * a_vec1[1];

        let mt = k.total_mass;
        let g = p.gravity;
        let gz = |tau1: T| mt * (g + a0 + a1 * tau1);
        let gz_floor = real::<T>(1e-6) * mt * g;
        let d = p.foot_half_length;

        let gz_pd = gz(ankle);
        let contact = if gz_pd > gz_floor {
            let zmp = -ankle / gz_pd;
            if zmp.abs() <= d {
                zmp
            } else {
                // Solve tau1 exactly so the ZMP sits on the violated edge:
                // tau1 = -edge * mt * (g + a0) / (1 + edge * mt * a1).
                let edge = d * zmp.signum();
                let denom = T::one() + edge * mt * a1;
                let tau_edge = if denom.abs() > real(1e-9) {
                    -edge * mt * (g + a0) / denom
                } else {
                    -edge * mt * g
                };
                ankle = clamp(tau_edge, p.ankle_torque_limit);
                let gz_final = gz(ankle);
                if gz_final > gz_floor {
                    -ankle / gz_final
                } else {
                    edge
                }
            }
        } else {
            // Ground force vanishing: the robot is effectively airborne over
            // the edge; pin the contact there and keep a quasi-static clamp.
            let edge = d * sign_or(state.com_position[0], state.contact_x);
            ankle = clamp(ankle, d * mt * g);
            edge
        };

        ([ankle, hip], contact)
    }

    /// Advance one integration step (`dt`). The fallen flag latches when the
    /// CoM drops below the fall height or the ankle pitch passes ±π/2.
    ///
    /// Callers should not step an already-fallen state; `run_episode` only
    /// does so internally to finish the sampling interval in which the fall
    /// occurred.
    pub fn step(&self, state: &RobotState<T>, external_force: T) -> Result<RobotState<T>> {
        debug_assert!(!state.fallen, "step called on a fallen state");
        let next = self.raw_step(state, external_force);
        if !next.is_finite() {
            return Err(Error::SimulationDiverged {
                t: next.t.to_f64_lossy(),
            });
        }
        Ok(next)
    }

    fn raw_step(&self, state: &RobotState<T>, force: T) -> RobotState<T> {
        let dt = self.params.dt;
        let (tau, contact) = self.applied_torques(state, force);
        let qdd = self.joint_acceleration(state.joint_angles, state.joint_velocities, tau, force);

        // Semi-implicit Euler: velocity first, then position.
        let dq = [
            state.joint_velocities[0] + dt * qdd[0],
            state.joint_velocities[1] + dt * qdd[1],
        ];
        let q = [
            state.joint_angles[0] + dt * dq[0],
            state.joint_angles[1] + dt * dq[1],
        ];
        let (com, vcom) = self.com_state(q, dq);

        let half_pi = real::<T>(std::f64::consts::FRAC_PI_2);
        let fallen = state.fallen || com[1] < self.fall_height || q[0].abs() > half_pi;

        RobotState {
            t: state.t + dt,
            joint_angles: q,
            joint_velocities: dq,
            joint_torques: tau,
            com_position: com,
            com_velocity: vcom,
            midfoot: state.midfoot,
            contact_x: contact,
            fallen,
        }
    }

    /// Mechanical energy of the two-link chain (kinetic plus potential,
    /// potential zero at the ground).
    pub fn energy(&self, state: &RobotState<T>) -> T {
        let k = self.link_constants();
        let q = state.joint_angles;
        let dq = state.joint_velocities;
        let (_, c1) = q[0].sin_cos();
        let c12 = (q[0] + q[1]).cos();
        let c2 = q[1].cos();
        let half = real::<T>(0.5);
        let w = dq[0] + dq[1];
        let kinetic = half * k.alpha * dq[0] * dq[0]
            + half * k.beta * w * w
            + k.gamma * c2 * dq[0] * w;
        let potential = self.params.gravity * (k.mu1 * c1 + k.mu2 * c12);
        kinetic + potential
    }

    /// Simulate one episode under the given force profile. States are
    /// recorded on the sensor grid from the retention start onward; the
    /// episode ends at the first retained sample with the fallen flag set.
    pub fn run_episode(
        &self,
        profile: &ForceProfile<T>,
        seed_stream: u64,
    ) -> std::result::Result<Trajectory<T>, DivergedError<T>> {
        let ts = self.params.sample_period;
        let substeps = self.params.substeps_per_sample();
        let retention_start = profile.prelude.start + self.config.retention_delay;
        let n_samples = (self.config.episode_duration / ts).to_f64_lossy().floor() as usize;
        let retention_k = (retention_start / ts).to_f64_lossy().ceil() as usize;

        let mut state = self.equilibrium_state();
        let mut samples: Vec<RobotState<T>> = Vec::with_capacity(n_samples.saturating_sub(retention_k) + 1);
        let mut fall_index = None;
        let mut t_fall = None;

        'outer: for k in 0..=n_samples {
            let t_k = real::<T>(k as f64) * ts;
            state.t = t_k; // re-stamp onto the exact sensor grid
            if k >= retention_k {
                samples.push(state);
                if state.fallen {
                    fall_index = Some(samples.len() - 1);
                    t_fall = Some(t_k);
                    break 'outer;
                }
            } else if state.fallen {
                // Fell before the retention window opened.
                t_fall = Some(t_k);
                break 'outer;
            }
            if k == n_samples {
                break;
            }
            for s in 0..substeps {
                let t_now = t_k + real::<T>(s as f64) * self.params.dt;
                let force = profile.force_at(t_now);
                let next = self.raw_step(&state, force);
                if !next.is_finite() {
                    return Err(DivergedError {
                        t: t_now.to_f64_lossy(),
                        prefix: samples,
                    });
                }
                state = next;
            }
        }

        let t_ft = profile.fault_time();
        let ft_index = t_ft.map(|t| {
            ((t - retention_start) / ts).to_f64_lossy().round() as i64
        });
        let unsafe_label = t_fall.is_some();
        Ok(Trajectory {
            meta: TrajectoryMeta {
                id: format!("{}_{seed_stream:08}", profile.kind.as_str()),
                kind: profile.kind,
                profile: profile.clone(),
                seed_stream,
                retention_start,
                sample_period: ts,
                t_ft,
                ft_index,
                t_fall,
                fall_index,
                unsafe_label,
            },
            samples,
        })
    }

    /// Probe episode used during calibration: no prelude, nominal fault
    /// timing, single fault of the given kind and amplitude.
    fn probe_profile(&self, abrupt_like: bool, amplitude: T, timing: &ProfileTiming<T>) -> ForceProfile<T> {
        let (lo, hi) = timing.fault_delay_range;
        let mid = (lo + hi) * real::<T>(0.5);
        let k = (mid / timing.sample_period).round();
        let t_ft = timing.perturbation_start + k * timing.sample_period;
        let prelude = crate::forces::Impulse {
            start: timing.perturbation_start,
            amplitude: T::zero(),
            duration: timing.impulse_duration,
        };
        if abrupt_like {
            ForceProfile::abrupt(
                prelude,
                crate::forces::Impulse {
                    start: t_ft,
                    amplitude,
                    duration: timing.impulse_duration,
                },
            )
        } else {
            ForceProfile::incipient(
                prelude,
                crate::forces::Trapezoid {
                    start: t_ft,
                    amplitude,
                    slope: timing.trapezoid_slope,
                    hold: timing.trapezoid_hold,
                },
            )
        }
    }

    /// Does a probe episode at this amplitude end in a fall?
    pub fn probe_falls(&self, abrupt_like: bool, amplitude: T, timing: &ProfileTiming<T>) -> Result<bool> {
        let profile = self.probe_profile(abrupt_like, amplitude, timing);
        let traj = self.run_episode(&profile, 0).map_err(Error::from)?;
        Ok(traj.meta.unsafe_label)
    }

    fn calibrate_kind(
        &self,
        abrupt_like: bool,
        timing: &ProfileTiming<T>,
        opts: &CalibrationOptions<T>,
    ) -> Result<AmplitudeRange<T>> {
        let kind_name = if abrupt_like { "abrupt" } else { "incipient" };
        // Bracket the boundary by doubling.
        let mut hi = T::one();
        while !self.probe_falls(abrupt_like, hi, timing)? {
            hi = hi * real(2.0);
            if hi > opts.max_amplitude {
                return Err(Error::CalibrationFailed {
                    kind: kind_name.into(),
                    searched: opts.max_amplitude.to_f64_lossy(),
                });
            }
        }
        let mut lo = if hi > T::one() { hi * real(0.5) } else { T::zero() };
        // Bisect the fall/no-fall boundary.
        while (hi - lo) > opts.relative_tolerance * hi {
            let mid = (lo + hi) * real(0.5);
            if self.probe_falls(abrupt_like, mid, timing)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let boundary = (lo + hi) * real(0.5);
        Ok(AmplitudeRange {
            boundary,
            bound: boundary * real(2.0),
        })
    }

    /// Calibrate per-fault-type amplitude ranges so uniform sampling yields
    /// roughly half falling episodes: bisection finds the fall boundary and
    /// the sampling bound is twice it.
    pub fn calibrate_force_ranges(
        &self,
        timing: &ProfileTiming<T>,
        opts: &CalibrationOptions<T>,
    ) -> Result<ForceRanges<T>> {
        let abrupt = self.calibrate_kind(true, timing, opts)?;
        let incipient = self.calibrate_kind(false, timing, opts)?;
        Ok(ForceRanges {
            abrupt,
            incipient,
            oscillation_bound: opts.safe_fraction * abrupt.boundary,
            safe_fraction: opts.safe_fraction,
        })
    }
}

/// RNG stream base per fault kind; episode `i` of a kind uses stream
/// `base + i` of the master seed, so batches are reproducible and episodes
/// independent regardless of thread scheduling.
pub fn stream_base(kind: ProfileKind) -> u64 {
    let code: u64 = match kind {
        ProfileKind::OscillationPrelude => 0,
        ProfileKind::Abrupt => 1,
        ProfileKind::Incipient => 2,
        ProfileKind::Intermittent => 3,
    };
    code << 32
}

/// Generate a batch of episodes of one fault kind in parallel.
pub fn generate_batch<T: Real>(
    sim: &Simulator<T>,
    ranges: &ForceRanges<T>,
    timing: &ProfileTiming<T>,
    kind: ProfileKind,
    count: usize,
) -> Result<Vec<Trajectory<T>>> {
    use rand::SeedableRng;
    let master = sim.config.seed;
    let base = stream_base(kind);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let stream = base + i as u64;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master);
            rng.set_stream(stream);
            let profile = sample_profile(kind, &mut rng, ranges, timing);
            let mut traj = sim.run_episode(&profile, stream).map_err(Error::from)?;
            traj.meta.id = format!("{}_{i:04}", kind.as_str());
            Ok(traj)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct LinkConstants<T> {
    alpha: T,
    beta: T,
    gamma: T,
    mu1: T,
    mu2: T,
    l1: T,
    lc2: T,
    total_mass: T,
}

#[derive(Debug, Clone, Copy)]
struct DynTerms<T> {
    m_inv: [[T; 2]; 2],
    rhs_passive: [T; 2],
    w_vec: [T; 2],
    u0: T,
}

fn clamp<T: Real>(v: T, limit: T) -> T {
    v.max(-limit).min(limit)
}

fn sign_or<T: Real>(v: T, fallback: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else if fallback >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}
