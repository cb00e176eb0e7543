//! Seeded MU-MIMO sounding simulator.
//!
//! Each user's channel is a sum of propagation paths synthesized directly in
//! the frequency domain:
//!
//! ```text
//! H_k(t) = Σ_p g_p(t) · a_tx(θ_p) a_rx(ϑ_p)ᵀ · e^{−j2π f_k τ_p} + noise
//! ```
//!
//! Static paths come from the [`EnvironmentProfile`]; activity paths from the
//! [`ActivityProfile`] rotate at their Doppler rate plus a seeded phase
//! random walk. Users see the same paths from different positions: each user
//! draws its own departure-angle offset, arrival angles and path phases from
//! an independent stream keyed by `(seed, user)`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, BfiFrame, CfrMatrix, CodecError};
use crate::rng::substream;

/// Upper bound on the sounding rate.
pub const MAX_SOUNDING_RATE_HZ: f64 = 2000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("time {t} s outside session [0, {duration}) s")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPath {
    pub delay_s: f64,
    pub gain: Complex64,
    #[serde(default)]
    pub doppler_hz: f64,
    /// Departure angle at the access point array, radians from broadside.
    #[serde(default)]
    pub aod_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub env_id: String,
    pub paths: Vec<StaticPath>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPath {
    pub delay_s: f64,
    pub amplitude: f64,
    pub doppler_hz: f64,
    /// Random-walk phase diffusion, radians per √s.
    pub phase_walk_std: f64,
    #[serde(default)]
    pub aod_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub class_id: usize,
    pub label: String,
    pub dynamic_paths: Vec<DynamicPath>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoundingSchedule {
    pub mean_rate_hz: f64,
    /// Inter-sounding intervals are scaled by `1 + jitter·u`, `u ~ U(−1, 1)`.
    pub jitter_fraction: f64,
    /// Recording time per activity.
    pub duration_s: f64,
}

impl Default for SoundingSchedule {
    fn default() -> Self {
        Self { mean_rate_hz: 100.0, jitter_fraction: 0.0, duration_s: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub n_ss: usize,
    pub users: usize,
    pub b_phi: u8,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub rng_seed: u64,
    pub subject_id: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 234,
            m: 3,
            n: 1,
            n_ss: 1,
            users: 3,
            b_phi: 9,
            carrier_hz: 5.77e9,
            bandwidth_hz: 80e6,
            rng_seed: 0,
            subject_id: "S1".into(),
        }
    }
}

impl ScenarioConfig {
    /// Baseband offset of sub-channel `k` in Hz. Spacing is the bandwidth
    /// divided by the FFT size (next power of two ≥ K).
    pub fn subchannel_offset_hz(&self, k: usize) -> f64 {
        let fft = self.k.next_power_of_two() as f64;
        let spacing = self.bandwidth_hz / fft;
        (k as f64 - self.k as f64 / 2.0) * spacing
    }

    pub fn angles_per_user(&self) -> usize {
        codec::angle_layout(self.m, self.n_ss).len()
    }
}

/// Everything needed to generate one labeled session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub config: ScenarioConfig,
    pub environment: EnvironmentProfile,
    pub activities: Vec<ActivityProfile>,
    #[serde(default)]
    pub schedule: SoundingSchedule,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let c = &self.config;
        let bad = |msg: String| Err(SimError::Config(msg));
        if c.k == 0 || c.k > usize::from(u16::MAX) {
            return bad(format!("K = {} outside 1..=65535", c.k));
        }
        if c.m == 0 || c.n == 0 || c.m > 255 {
            return bad(format!("antenna counts M = {}, N = {} invalid", c.m, c.n));
        }
        if c.n_ss == 0 || c.n_ss > c.m.min(c.n) {
            return bad(format!("N_ss = {} outside 1..=min(M, N)", c.n_ss));
        }
        if c.users == 0 || c.users > 256 {
            return bad(format!("user count {} outside 1..=256", c.users));
        }
        if !codec::PHI_BITS.contains(&c.b_phi) {
            return bad(format!("b_phi = {} not in {{7, 9}}", c.b_phi));
        }
        if !(c.bandwidth_hz > 0.0) || !c.bandwidth_hz.is_finite() {
            return bad("bandwidth must be positive".into());
        }
        let env = &self.environment;
        if env.paths.is_empty() {
            return bad(format!("environment {} has no paths", env.env_id));
        }
        for p in &env.paths {
            if !(p.delay_s >= 0.0) || !p.delay_s.is_finite() {
                return bad(format!("negative or non-finite path delay {}", p.delay_s));
            }
            if !p.gain.re.is_finite() || !p.gain.im.is_finite() || !p.doppler_hz.is_finite() || !p.aod_rad.is_finite() {
                return bad("non-finite static path parameter".into());
            }
        }
        if !(env.noise_std >= 0.0) || !env.noise_std.is_finite() {
            return bad(format!("noise_std {} must be >= 0", env.noise_std));
        }
        if self.activities.is_empty() {
            return bad("at least one activity is required".into());
        }
        let mut ids: Vec<usize> = self.activities.iter().map(|a| a.class_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("activity class ids must be unique".into());
        }
        for a in &self.activities {
            for p in &a.dynamic_paths {
                let finite = [p.delay_s, p.amplitude, p.doppler_hz, p.phase_walk_std, p.aod_rad]
                    .iter()
                    .all(|x| x.is_finite());
                if !finite || p.delay_s < 0.0 || p.phase_walk_std < 0.0 {
                    return bad(format!("invalid dynamic path in activity {}", a.label));
                }
            }
        }
        let s = &self.schedule;
        if !(s.mean_rate_hz > 0.0 && s.mean_rate_hz <= MAX_SOUNDING_RATE_HZ) {
            return bad(format!("sounding rate {} Hz outside (0, 2000]", s.mean_rate_hz));
        }
        if !(0.0..1.0).contains(&s.jitter_fraction) {
            return bad(format!("jitter fraction {} outside [0, 1)", s.jitter_fraction));
        }
        if !(s.duration_s > 0.0) || !s.duration_s.is_finite() {
            return bad("duration must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn session_duration(&self) -> f64 {
        self.schedule.duration_s * self.activities.len() as f64
    }
}

#[derive(Debug, Clone)]
struct UserPath {
    tx: Vec<Complex64>,
    rx: Vec<Complex64>,
    phase: f64,
}

/// Per-user channel state: fixed geometry plus the evolving phase walk.
#[derive(Debug, Clone)]
pub struct UserChannel {
    user: usize,
    static_paths: Vec<UserPath>,
    dynamic_paths: Vec<UserPath>,
    active_class: Option<usize>,
    aod_offset: f64,
    walk: Vec<f64>,
    last_t: f64,
    geometry_rng: ChaCha8Rng,
    walk_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

fn steering(n: usize, angle: f64) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, -PI * i as f64 * angle.sin()))
        .collect()
}

impl UserChannel {
    pub fn new(scenario: &Scenario, user: usize) -> Self {
        let cfg = &scenario.config;
        let seed = cfg.rng_seed;
        let mut geometry_rng = substream(seed, "geometry", user as u64);
        let aod_offset = geometry_rng.random_range(-PI / 6.0..PI / 6.0);
        let static_paths = scenario
            .environment
            .paths
            .iter()
            .map(|p| UserPath {
                tx: steering(cfg.m, p.aod_rad + aod_offset + geometry_rng.random_range(-0.05..0.05)),
                rx: steering(cfg.n, geometry_rng.random_range(-PI / 2.0..PI / 2.0)),
                phase: geometry_rng.random_range(0.0..TAU),
            })
            .collect();
        Self {
            user,
            static_paths,
            dynamic_paths: Vec::new(),
            active_class: None,
            aod_offset,
            walk: Vec::new(),
            last_t: 0.0,
            geometry_rng,
            walk_rng: substream(seed, "phase-walk", user as u64),
            noise_rng: substream(seed, "cfr-noise", user as u64),
        }
    }

    pub fn user(&self) -> usize {
        self.user
    }

    fn enter_activity(&mut self, act: &ActivityProfile, cfg: &ScenarioConfig, t: f64) {
        let mut rng = substream(cfg.rng_seed ^ self.geometry_rng.random::<u64>(), "activity", act.class_id as u64);
        self.dynamic_paths = act
            .dynamic_paths
            .iter()
            .map(|p| UserPath {
                tx: steering(cfg.m, p.aod_rad + self.aod_offset),
                rx: steering(cfg.n, rng.random_range(-PI / 2.0..PI / 2.0)),
                phase: rng.random_range(0.0..TAU),
            })
            .collect();
        self.walk = vec![0.0; act.dynamic_paths.len()];
        self.active_class = Some(act.class_id);
        self.last_t = t;
    }
}

/// Synthesizes the K per-sub-channel CFR matrices of one user at time `t`.
///
/// `state` must be advanced with non-decreasing `t`; the phase walk of the
/// activity paths is integrated between consecutive calls.
pub fn gen_cfr(
    env: &EnvironmentProfile,
    act: &ActivityProfile,
    t: f64,
    cfg: &ScenarioConfig,
    state: &mut UserChannel,
) -> Result<Vec<CfrMatrix>, SimError> {
    if !t.is_finite() || t < state.last_t {
        return Err(SimError::TimeOutOfRange { t, duration: f64::INFINITY });
    }
    if state.active_class != Some(act.class_id) {
        state.enter_activity(act, cfg, t);
    }
    let dt = t - state.last_t;
    for (w, p) in state.walk.iter_mut().zip(&act.dynamic_paths) {
        if dt > 0.0 && p.phase_walk_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut state.walk_rng);
            *w += p.phase_walk_std * dt.sqrt() * z;
        }
    }
    state.last_t = t;

    // Per-path complex gain at time t and delay.
    let mut terms: Vec<(Complex64, f64, &UserPath)> = Vec::new();
    for (p, up) in env.paths.iter().zip(&state.static_paths) {
        let g = p.gain * Complex64::from_polar(1.0, up.phase + TAU * p.doppler_hz * t);
        terms.push((g, p.delay_s, up));
    }
    for ((p, up), w) in act.dynamic_paths.iter().zip(&state.dynamic_paths).zip(&state.walk) {
        let g = Complex64::from_polar(p.amplitude, up.phase + TAU * p.doppler_hz * t + w);
        terms.push((g, p.delay_s, up));
    }

    let noise_scale = env.noise_std / std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let f = cfg.subchannel_offset_hz(k);
        let mut h = DMatrix::from_element(cfg.m, cfg.n, Complex64::new(0.0, 0.0));
        for (g, delay, up) in &terms {
            let coeff = g * Complex64::from_polar(1.0, -TAU * f * delay);
            for a in 0..cfg.m {
                for b in 0..cfg.n {
                    h[(a, b)] += coeff * up.tx[a] * up.rx[b];
                }
            }
        }
        if noise_scale > 0.0 {
            for z in h.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut state.noise_rng);
                let im: f64 = StandardNormal.sample(&mut state.noise_rng);
                *z += Complex64::new(re, im) * noise_scale;
            }
        }
        out.push(CfrMatrix::new(k, h)?);
    }
    Ok(out)
}

/// Half-open labeled time span `[start_s, end_s)` of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub class_id: usize,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Sidecar of a record file: label spans plus the scenario that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub seed: u64,
    pub env_id: String,
    pub subject_id: String,
    pub duration_s: f64,
    pub users: usize,
    pub frames_per_user: Vec<usize>,
    pub spans: Vec<LabelSpan>,
    pub scenario: Scenario,
}

impl SessionManifest {
    /// Label of the span containing `t`, if any.
    pub fn label_at(&self, t: f64) -> Option<usize> {
        self.spans
            .iter()
            .find(|s| s.start_s <= t && t < s.end_s)
            .map(|s| s.class_id)
    }
}

/// Sounding instants over `[0, total)`: `t_n = (n + J_n) / rate` where `J_n`
/// accumulates the jitter draws, so zero jitter gives exact multiples.
pub fn sounding_times(schedule: &SoundingSchedule, total: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "sounding-jitter", 0);
    let mut times = Vec::new();
    let mut n = 0u64;
    let mut jitter_sum = 0.0;
    loop {
        let t = (n as f64 + jitter_sum) / schedule.mean_rate_hz;
        if t >= total {
            break;
        }
        times.push(t);
        n += 1;
        if schedule.jitter_fraction > 0.0 {
            jitter_sum += schedule.jitter_fraction * rng.random_range(-1.0..1.0);
        }
    }
    times
}

/// Generates the session and streams its record file into `sink`.
pub fn gen_session<W: Write>(scenario: &Scenario, mut sink: W) -> Result<SessionManifest, SimError> {
    scenario.validate()?;
    let cfg = &scenario.config;
    let dur = scenario.schedule.duration_s;
    let total = scenario.session_duration();
    let spans: Vec<LabelSpan> = scenario
        .activities
        .iter()
        .enumerate()
        .map(|(i, a)| LabelSpan {
            class_id: a.class_id,
            label: a.label.clone(),
            start_s: i as f64 * dur,
            end_s: (i + 1) as f64 * dur,
        })
        .collect();

    let mut users: Vec<UserChannel> = (0..cfg.users).map(|u| UserChannel::new(scenario, u)).collect();
    let mut frames_per_user = vec![0usize; cfg.users];
    codec::write_header(&mut sink)?;
    for t in sounding_times(&scenario.schedule, total, cfg.rng_seed) {
        let idx = spans
            .iter()
            .position(|s| s.start_s <= t && t < s.end_s)
            .expect("sounding times lie inside the session");
        let act = &scenario.activities[idx];
        for (u, state) in users.iter_mut().enumerate() {
            let channels = gen_cfr(&scenario.environment, act, t, cfg, state)?;
            let frame = codec::compress_frame(&channels, cfg.n_ss, cfg.b_phi, u as u8, t)?;
            codec::write_record(&mut sink, &frame)?;
            frames_per_user[u] += 1;
        }
    }
    sink.flush()?;
    Ok(SessionManifest {
        seed: cfg.rng_seed,
        env_id: scenario.environment.env_id.clone(),
        subject_id: cfg.subject_id.clone(),
        duration_s: total,
        users: cfg.users,
        frames_per_user,
        spans,
        scenario: scenario.clone(),
    })
}

/// In-memory variant of [`gen_session`].
pub fn gen_session_frames(scenario: &Scenario) -> Result<(Vec<BfiFrame>, SessionManifest), SimError> {
    let mut buf = Vec::new();
    let manifest = gen_session(scenario, &mut buf)?;
    Ok((codec::decode_records(&buf)?, manifest))
}

/// Parameters for [`synthetic_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Selects one of several fixed room layouts.
    pub environment: usize,
    pub seed: u64,
    pub k: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub jitter: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            environment: 0,
            seed: 0,
            k: 234,
            duration_s: 300.0,
            rate_hz: 100.0,
            jitter: 0.0,
            noise_std: 0.02,
        }
    }
}

const ACTIVITY_LABELS: [&str; 20] = [
    "jogging", "clapping", "push forward", "boxing", "writing", "brushing teeth", "rotating",
    "standing", "eating", "reading a book", "waving", "walking", "browsing phone", "drinking",
    "hands up-down", "phone call", "side bend", "check the watch", "washing hands", "browsing laptop",
];

/// Activity profiles shared by every environment: class `c` gets paths whose
/// delay, departure angle, amplitude and Doppler depend only on `c`.
pub fn synthetic_activities(classes: usize) -> Vec<ActivityProfile> {
    (0..classes)
        .map(|c| {
            let x = c as f64;
            let dynamic_paths = vec![
                DynamicPath {
                    delay_s: 20e-9 + 9e-9 * x,
                    amplitude: 0.35 + 0.1 * ((x * 1.7).sin()).abs(),
                    doppler_hz: 2.0 + 3.0 * x,
                    phase_walk_std: 0.5,
                    aod_rad: -0.9 + 1.8 * (x + 0.5) / classes as f64,
                },
                DynamicPath {
                    delay_s: 60e-9 + 15e-9 * ((x * 2.3).cos()).abs(),
                    amplitude: 0.2,
                    doppler_hz: -(1.0 + 2.0 * x),
                    phase_walk_std: 0.5,
                    aod_rad: 0.7 - 1.4 * (x + 0.5) / classes as f64,
                },
            ];
            ActivityProfile {
                class_id: c,
                label: ACTIVITY_LABELS[c % ACTIVITY_LABELS.len()].to_string(),
                dynamic_paths,
            }
        })
        .collect()
}

/// A fixed static multipath layout, one per `layout` index.
pub fn synthetic_environment(layout: usize, noise_std: f64) -> EnvironmentProfile {
    let mut rng = substream(0x5EED, "environment-layout", layout as u64);
    let n_paths = 3 + layout % 3;
    let paths = (0..n_paths)
        .map(|p| {
            let amp = if p == 0 { 1.0 } else { rng.random_range(0.2..0.6) };
            StaticPath {
                delay_s: if p == 0 { 0.0 } else { rng.random_range(10e-9..150e-9) },
                gain: Complex64::from_polar(amp, rng.random_range(0.0..TAU)),
                doppler_hz: 0.0,
                aod_rad: rng.random_range(-1.2..1.2),
            }
        })
        .collect();
    EnvironmentProfile { env_id: format!("room-{layout}"), paths, noise_std }
}

pub fn synthetic_scenario(spec: &SyntheticSpec) -> Scenario {
    Scenario {
        config: ScenarioConfig { k: spec.k, rng_seed: spec.seed, ..ScenarioConfig::default() },
        environment: synthetic_environment(spec.environment, spec.noise_std),
        activities: synthetic_activities(spec.classes),
        schedule: SoundingSchedule {
            mean_rate_hz: spec.rate_hz,
            jitter_fraction: spec.jitter,
            duration_s: spec.duration_s,
        },
    }
}
