//! Scheduled external force profiles: the initial oscillatory perturbation
//! plus abrupt (rectangular impulse), incipient (trapezoid), and intermittent
//! (two separated pushes) fault forces, all applied horizontally at the torso.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::{real, Real};
use crate::sim::ForceRanges;

/// Rectangular force pulse with half-open support `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impulse<T> {
    pub start: T,
    pub amplitude: T,
    pub duration: T,
}

impl<T: Real> Impulse<T> {
    pub fn value_at(&self, t: T) -> T {
        if t >= self.start && t < self.start + self.duration {
            self.amplitude
        } else {
            T::zero()
        }
    }

    /// Half-open support interval `[start, end)`.
    pub fn support(&self) -> (T, T) {
        (self.start, self.start + self.duration)
    }
}

/// Symmetric trapezoid: ramp up at `slope`, hold `amplitude` for `hold`
/// seconds, ramp back down at `-slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid<T> {
    pub start: T,
    pub amplitude: T,
    pub slope: T,
    pub hold: T,
}

impl<T: Real> Trapezoid<T> {
    pub fn ramp_duration(&self) -> T {
        if self.slope > T::zero() {
            self.amplitude / self.slope
        } else {
            T::zero()
        }
    }

    pub fn end(&self) -> T {
        self.start + self.ramp_duration() + self.hold + self.ramp_duration()
    }

    pub fn value_at(&self, t: T) -> T {
        let ramp = self.ramp_duration();
        let rel = t - self.start;
        if rel < T::zero() {
            T::zero()
        } else if rel < ramp {
            self.slope * rel
        } else if rel < ramp + self.hold {
            self.amplitude
        } else if rel < ramp + self.hold + ramp {
            self.amplitude - self.slope * (rel - ramp - self.hold)
        } else {
            T::zero()
        }
    }

    /// Closed-form area: `A * (hold + A / slope)`.
    pub fn integral(&self) -> T {
        self.amplitude * (self.hold + self.ramp_duration())
    }
}

/// One scheduled fault force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultEvent<T> {
    Abrupt(Impulse<T>),
    Incipient(Trapezoid<T>),
}

impl<T: Real> FaultEvent<T> {
    pub fn start(&self) -> T {
        match self {
            FaultEvent::Abrupt(i) => i.start,
            FaultEvent::Incipient(t) => t.start,
        }
    }

    pub fn amplitude(&self) -> T {
        match self {
            FaultEvent::Abrupt(i) => i.amplitude,
            FaultEvent::Incipient(t) => t.amplitude,
        }
    }

    pub fn value_at(&self, t: T) -> T {
        match self {
            FaultEvent::Abrupt(i) => i.value_at(t),
            FaultEvent::Incipient(tr) => tr.value_at(t),
        }
    }
}

/// Fault family of a whole episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Prelude-only episode: no fault is scheduled.
    OscillationPrelude,
    Abrupt,
    Incipient,
    Intermittent,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::OscillationPrelude => "oscillation_prelude",
            ProfileKind::Abrupt => "abrupt",
            ProfileKind::Incipient => "incipient",
            ProfileKind::Intermittent => "intermittent",
        }
    }
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Complete force schedule for one episode: an oscillatory perturbation at
/// the start plus zero, one, or two fault events. The total force at any
/// instant is the superposition of all parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceProfile<T> {
    pub kind: ProfileKind,
    pub prelude: Impulse<T>,
    pub events: Vec<FaultEvent<T>>,
    /// Gap between the two fault introductions (intermittent only).
    pub gap: Option<T>,
}

impl<T: Real> ForceProfile<T> {
    /// Prelude-only profile; `oscillation` may be zero.
    pub fn prelude_only(oscillation: Impulse<T>) -> Self {
        ForceProfile {
            kind: ProfileKind::OscillationPrelude,
            prelude: oscillation,
            events: Vec::new(),
            gap: None,
        }
    }

    pub fn abrupt(prelude: Impulse<T>, fault: Impulse<T>) -> Self {
        ForceProfile {
            kind: ProfileKind::Abrupt,
            prelude,
            events: vec![FaultEvent::Abrupt(fault)],
            gap: None,
        }
    }

    pub fn incipient(prelude: Impulse<T>, fault: Trapezoid<T>) -> Self {
        ForceProfile {
            kind: ProfileKind::Incipient,
            prelude,
            events: vec![FaultEvent::Incipient(fault)],
            gap: None,
        }
    }

    pub fn intermittent(prelude: Impulse<T>, first: FaultEvent<T>, second: FaultEvent<T>, gap: T) -> Self {
        ForceProfile {
            kind: ProfileKind::Intermittent,
            prelude,
            events: vec![first, second],
            gap: Some(gap),
        }
    }

    /// Fault introduction time: the first fault's start. For intermittent
    /// profiles this is deliberately the first of the two pushes.
    pub fn fault_time(&self) -> Option<T> {
        self.events.first().map(|e| e.start())
    }

    /// Total external force at time `t` (superposition of every part).
    pub fn force_at(&self, t: T) -> T {
        let mut f = self.prelude.value_at(t);
        for event in &self.events {
            f += event.value_at(t);
        }
        f
    }

    /// Latest instant at which any part of the schedule can be nonzero.
    pub fn schedule_end(&self) -> T {
        let mut end = self.prelude.start + self.prelude.duration;
        for event in &self.events {
            let e = match event {
                FaultEvent::Abrupt(i) => i.start + i.duration,
                FaultEvent::Incipient(t) => t.end(),
            };
            end = end.max(e);
        }
        end
    }
}

/// Timing and shape constants shared by every sampled profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileTiming<T> {
    /// Perturbation start time (s); episodes begin with the prelude here.
    pub perturbation_start: T,
    /// Duration of every rectangular impulse (s).
    pub impulse_duration: T,
    /// Trapezoid ramp slope (N/s).
    pub trapezoid_slope: T,
    /// Trapezoid hold duration at peak amplitude (s).
    pub trapezoid_hold: T,
    /// Fault introduction delay after the perturbation, sampled uniformly (s).
    pub fault_delay_range: (T, T),
    /// Gap between the two intermittent pushes, sampled uniformly (s).
    pub gap_range: (T, T),
    /// Sensor sampling period (s); fault start times snap to this grid.
    pub sample_period: T,
}

impl<T: Real> Default for ProfileTiming<T> {
    fn default() -> Self {
        ProfileTiming {
            perturbation_start: T::zero(),
            impulse_duration: real(0.075),
            trapezoid_slope: real(480.0),
            trapezoid_hold: real(1.0),
            fault_delay_range: (real(2.0), real(2.5)),
            gap_range: (real(1.0), real(2.5)),
            sample_period: real(0.01),
        }
    }
}

fn uniform<T: Real, R: Rng>(rng: &mut R, lo: T, hi: T) -> T {
    // Sampled in f64 so the RNG stream is identical for every scalar type.
    let u: f64 = rng.gen();
    lo + (hi - lo) * real(u)
}

/// Draw from `[lo, hi]` and snap to the sensor grid, staying inside the range.
fn uniform_on_grid<T: Real, R: Rng>(rng: &mut R, lo: T, hi: T, period: T) -> T {
    let raw = uniform(rng, lo, hi);
    if period <= T::zero() {
        return raw;
    }
    let k = (raw / period).round();
    let lo_k = (lo / period).ceil();
    let hi_k = (hi / period).floor();
    if lo_k > hi_k {
        return raw; // grid too coarse for the range; keep the raw draw
    }
    k.max(lo_k).min(hi_k) * period
}

fn sample_event<T: Real, R: Rng>(
    rng: &mut R,
    abrupt_like: bool,
    start: T,
    amplitude_cap: T,
    timing: &ProfileTiming<T>,
) -> FaultEvent<T> {
    let amplitude = uniform(rng, T::zero(), amplitude_cap);
    if abrupt_like {
        FaultEvent::Abrupt(Impulse {
            start,
            amplitude,
            duration: timing.impulse_duration,
        })
    } else {
        FaultEvent::Incipient(Trapezoid {
            start,
            amplitude,
            slope: timing.trapezoid_slope,
            hold: timing.trapezoid_hold,
        })
    }
}

/// Sample a random force profile of the given kind. Fault amplitudes are
/// uniform over the calibrated ranges; an intermittent profile draws its
/// first push from the safe sub-range and its second from the full range.
pub fn sample_profile<T: Real, R: Rng>(
    kind: ProfileKind,
    rng: &mut R,
    ranges: &ForceRanges<T>,
    timing: &ProfileTiming<T>,
) -> ForceProfile<T> {
    let prelude = Impulse {
        start: timing.perturbation_start,
        amplitude: uniform(rng, T::zero(), ranges.oscillation_bound),
        duration: timing.impulse_duration,
    };
    let (dlo, dhi) = timing.fault_delay_range;
    let t_ft = timing.perturbation_start
        + uniform_on_grid(rng, dlo, dhi, timing.sample_period);

    match kind {
        ProfileKind::OscillationPrelude => ForceProfile::prelude_only(prelude),
        ProfileKind::Abrupt => {
            let amplitude = uniform(rng, T::zero(), ranges.abrupt.bound);
            ForceProfile::abrupt(
                prelude,
                Impulse {
                    start: t_ft,
                    amplitude,
                    duration: timing.impulse_duration,
                },
            )
        }
        ProfileKind::Incipient => {
            let amplitude = uniform(rng, T::zero(), ranges.incipient.bound);
            ForceProfile::incipient(
                prelude,
                Trapezoid {
                    start: t_ft,
                    amplitude,
                    slope: timing.trapezoid_slope,
                    hold: timing.trapezoid_hold,
                },
            )
        }
        ProfileKind::Intermittent => {
            let first_abrupt = rng.gen::<bool>();
            let second_abrupt = rng.gen::<bool>();
            let (glo, ghi) = timing.gap_range;
            let gap = uniform_on_grid(rng, glo, ghi, timing.sample_period);
            let first = sample_event(
                rng,
                first_abrupt,
                t_ft,
                ranges.safe_cap(first_abrupt),
                timing,
            );
            let second = sample_event(
                rng,
                second_abrupt,
                t_ft + gap,
                ranges.full_bound(second_abrupt),
                timing,
            );
            ForceProfile::intermittent(prelude, first, second, gap)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{AmplitudeRange, ForceRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_ranges() -> ForceRanges<f64> {
        ForceRanges {
            abrupt: AmplitudeRange {
                boundary: 207.4,
                bound: 414.8,
            },
            incipient: AmplitudeRange {
                boundary: 28.8,
                bound: 57.6,
            },
            oscillation_bound: 202.4,
            safe_fraction: 0.95,
        }
    }

    #[test]
    fn trapezoid_ramp_completes_at_amplitude_over_slope() {
        // 57.6 N at 480 N/s finishes ramping after 0.12 s.
        let tr = Trapezoid::<f64> {
            start: 2.0,
            amplitude: 57.6,
            slope: 480.0,
            hold: 1.0,
        };
        assert!((tr.ramp_duration() - 0.12).abs() < 1e-12);
        assert_eq!(tr.value_at(2.0 + 0.12), 57.6);
        // Mid-ramp value.
        assert!((tr.value_at(2.0 + 0.06) - 28.8).abs() < 1e-9);
        // Mid-hold and mid-down-ramp.
        assert_eq!(tr.value_at(2.5), 57.6);
        assert!((tr.value_at(2.0 + 0.12 + 1.0 + 0.06) - 28.8).abs() < 1e-9);
        assert_eq!(tr.value_at(tr.end()), 0.0);
    }

    #[test]
    fn impulse_support_is_half_open() {
        let imp = Impulse::<f64> {
            start: 2.0,
            amplitude: 414.8,
            duration: 0.075,
        };
        assert_eq!(imp.value_at(2.0), 414.8);
        assert_eq!(imp.value_at(2.0 + 0.075), 0.0);
        assert_eq!(imp.value_at(2.0 + 0.075 - 1e-12), 414.8);
        assert_eq!(imp.value_at(2.0 - 1e-12), 0.0);
        let (lo, hi) = imp.support();
        assert!((hi - lo - 0.075).abs() < 1e-9);
    }

    #[test]
    fn zero_before_perturbation_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        for kind in [
            ProfileKind::OscillationPrelude,
            ProfileKind::Abrupt,
            ProfileKind::Incipient,
            ProfileKind::Intermittent,
        ] {
            let p = sample_profile(kind, &mut rng, &ranges, &timing);
            assert_eq!(p.force_at(-1e-9), 0.0);
            assert_eq!(p.force_at(-5.0), 0.0);
        }
    }

    #[test]
    fn trapezoid_integral_matches_quadrature() {
        let tr = Trapezoid::<f64> {
            start: 1.3,
            amplitude: 57.6,
            slope: 480.0,
            hold: 1.0,
        };
        let closed = tr.integral();
        // Trapezoid-rule quadrature over the full support at 1 µs steps;
        // kink error is O(h^2 * slope), well under 1e-9 here.
        let h = 1e-6;
        let t0 = tr.start - 0.5;
        let t1 = tr.end() + 0.5;
        let n = ((t1 - t0) / h).round() as usize;
        let mut acc = 0.0;
        let mut prev = tr.value_at(t0);
        for i in 1..=n {
            let v = tr.value_at(t0 + h * i as f64);
            acc += 0.5 * (prev + v) * h;
            prev = v;
        }
        assert!(
            (acc - closed).abs() < 1e-9,
            "quadrature {acc} vs closed form {closed}"
        );
    }

    #[test]
    fn intermittent_is_superposition_of_sub_profiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        let p = sample_profile(ProfileKind::Intermittent, &mut rng, &ranges, &timing);
        assert_eq!(p.events.len(), 2);
        for i in 0..4000 {
            let t = i as f64 * 0.002;
            let parts =
                p.prelude.value_at(t) + p.events[0].value_at(t) + p.events[1].value_at(t);
            assert_eq!(p.force_at(t), parts);
        }
    }

    #[test]
    fn intermittent_first_force_stays_in_safe_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        for _ in 0..2000 {
            let p = sample_profile(ProfileKind::Intermittent, &mut rng, &ranges, &timing);
            let first = &p.events[0];
            let boundary = match first {
                FaultEvent::Abrupt(_) => ranges.abrupt.boundary,
                FaultEvent::Incipient(_) => ranges.incipient.boundary,
            };
            assert!(first.amplitude() < boundary);
        }
    }

    #[test]
    fn sampling_is_deterministic_for_a_fixed_seed() {
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        let a = sample_profile(
            ProfileKind::Intermittent,
            &mut ChaCha8Rng::seed_from_u64(42),
            &ranges,
            &timing,
        );
        let b = sample_profile(
            ProfileKind::Intermittent,
            &mut ChaCha8Rng::seed_from_u64(42),
            &ranges,
            &timing,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn fault_delay_lands_on_grid_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ranges = test_ranges();
        let timing = ProfileTiming::<f64>::default();
        for _ in 0..1000 {
            let p = sample_profile(ProfileKind::Abrupt, &mut rng, &ranges, &timing);
            let t_ft = p.fault_time().unwrap();
            assert!((2.0..=2.5).contains(&t_ft));
            let k = t_ft / timing.sample_period;
            assert!((k - k.round()).abs() < 1e-9, "t_ft {t_ft} off grid");
        }
    }

    #[test]
    fn abrupt_amplitudes_look_uniform() {
        // Kolmogorov-Smirnov test against U[0, bound]; p-value must beat 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| {
                let p = sample_profile(ProfileKind::Abrupt, &mut rng, &ranges, &timing);
                p.events[0].amplitude() / ranges.abrupt.bound
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((hi - x).abs());
        }
        let sqrt_n = (n as f64).sqrt();
        let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
        let mut p_value = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
            p_value += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        }
        assert!(p_value > 0.01, "KS p-value {p_value} (D = {d})");
    }

    #[test]
    fn gap_respects_configured_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ranges = test_ranges();
        let timing = ProfileTiming::default();
        for _ in 0..500 {
            let p = sample_profile(ProfileKind::Intermittent, &mut rng, &ranges, &timing);
            let gap = p.gap.unwrap();
            assert!((1.0..=2.5).contains(&gap));
            assert!((p.events[1].start() - p.events[0].start() - gap).abs() < 1e-9);
        }
    }
}
