//! Open-loop replay of a constant-curvature turn under base noise.

use std::f64::consts::PI;

use crate::config::{invalid, parse_value, ConfigError, ConfigKeys, KeyValues};
use crate::derive_seed;
use crate::sim::{forward_kinematics, Action, BaseVelocity, NoiseConfig, NoiseModel, RobotState, Side, SimConfig, Simulator, World};

use super::Report;

#[derive(Clone, Debug, PartialEq)]
pub struct DriftConfig {
    pub radius: f64,
    pub speed: f64,
    pub replays: usize,
    pub seed: u64,
    /// Magnitude of the injected angular-velocity bias.
    pub bias_omega: f64,
    pub noise: NoiseConfig,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            speed: 0.5,
            replays: 20,
            seed: 0,
            bias_omega: 0.05,
            noise: NoiseConfig::default(),
        }
    }
}

impl ConfigKeys for DriftConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "radius" => self.radius = parse_value(key, value)?,
            "speed" => self.speed = parse_value(key, value)?,
            "replays" => self.replays = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "bias_omega" => self.bias_omega = parse_value(key, value)?,
            _ => match key.strip_prefix("noise.") {
                Some(rest) => return self.noise.set(rest, value),
                None => return Ok(false),
            },
        }
        Ok(true)
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("radius", self.radius);
        kv.push("speed", self.speed);
        kv.push("replays", self.replays);
        kv.push("seed", self.seed);
        kv.push("bias_omega", self.bias_omega);
        for (k, v) in self.noise.to_kv().iter() {
            kv.push(format!("noise.{k}"), v);
        }
        kv
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("radius", "must be positive"));
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(invalid("speed", "must be positive"));
        }
        if self.replays == 0 {
            return Err(invalid("replays", "must be >= 1"));
        }
        if !self.bias_omega.is_finite() {
            return Err(invalid("bias_omega", "must be finite"));
        }
        self.noise.validate()
    }
}

/// Half a circle of `radius` at `speed`, turning left, arms held straight out.
pub fn turn_profile(cfg: &DriftConfig, dt: f64) -> Vec<Action> {
    let steps = (PI * cfg.radius / cfg.speed / dt).round() as usize;
    let arms = RobotState::default().proprio();
    let a = Action {
        arm_targets: arms,
        base_cmd: BaseVelocity {
            v: cfg.speed,
            omega: cfg.speed / cfg.radius,
        },
    };
    vec![a; steps]
}

/// Terminal left end-effector position after running `profile` open loop.
fn run(profile: &[Action], sim: &SimConfig, noise: NoiseModel) -> ([f64; 2], f64) {
    let mut s = Simulator::new(sim.clone(), RobotState::default(), World::new(Vec::new()), noise);
    for a in profile {
        s.step(a).expect("profile actions are finite");
    }
    let r = &s.robot;
    (forward_kinematics(&r.base, &r.left, Side::Left, &sim.geometry()), r.base.theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftStats {
    pub mean_error: f64,
    /// Mean offset as (lateral, longitudinal); lateral is positive to the left
    /// of the reference's terminal heading.
    pub centroid: [f64; 2],
    /// Standard deviations along the principal axes.
    pub spread_major: f64,
    pub spread_minor: f64,
    /// Range of the offsets projected onto the major axis.
    pub extent_major: f64,
    /// Angle of the major axis from the lateral direction.
    pub axis_angle: f64,
}

impl DriftStats {
    pub fn from_offsets(offsets: &[[f64; 2]]) -> Self {
        let n = offsets.len().max(1) as f64;
        let mean_error = offsets.iter().map(|o| o[0].hypot(o[1])).sum::<f64>() / n;
        let c = [
            offsets.iter().map(|o| o[0]).sum::<f64>() / n,
            offsets.iter().map(|o| o[1]).sum::<f64>() / n,
        ];
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for o in offsets {
            let (dx, dy) = (o[0] - c[0], o[1] - c[1]);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let (sxx, sxy, syy) = (sxx / n, sxy / n, syy / n);
        let mid = 0.5 * (sxx + syy);
        let r = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let axis = [angle.cos(), angle.sin()];
        let proj = offsets.iter().map(|o| o[0] * axis[0] + o[1] * axis[1]);
        let (lo, hi) = proj.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
        Self {
            mean_error,
            centroid: c,
            spread_major: (mid + r).max(0.0).sqrt(),
            spread_minor: (mid - r).max(0.0).sqrt(),
            extent_major: if offsets.is_empty() { 0.0 } else { hi - lo },
            axis_angle: angle,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DriftRun {
    pub condition: String,
    pub offsets: Vec<[f64; 2]>,
    pub stats: DriftStats,
}

#[derive(Clone, Debug)]
pub struct DriftResult {
    pub reference: [f64; 2],
    pub runs: Vec<DriftRun>,
    pub report: Report,
}

impl DriftResult {
    pub fn run(&self, condition: &str) -> Option<&DriftRun> {
        self.runs.iter().find(|r| r.condition == condition)
    }
}

/// Replays the turn profile open loop `cfg.replays` times under four noise
/// conditions and measures the terminal left end-effector offset from the
/// reference run:
///
/// - `zero`: only the deterministic lag, the same dynamics the reference was
///   recorded under;
/// - `default`: lag, drawn biases and per-step scatter;
/// - `bias+` / `bias-`: as `default` with the angular bias fixed to
///   `+bias_omega` / `-bias_omega`.
pub fn replay_drift(cfg: &DriftConfig) -> DriftResult {
    let sim = SimConfig {
        noise: cfg.noise.clone(),
        ..SimConfig::default()
    };
    let profile = turn_profile(cfg, sim.dt);
    let lag_only = NoiseConfig {
        tau: cfg.noise.tau,
        ..NoiseConfig::zero()
    };
    let (reference, theta) = run(&profile, &sim, NoiseModel::sample(&lag_only, 0));
    let (s, c) = theta.sin_cos();
    let to_frame = |p: [f64; 2]| {
        let d = [p[0] - reference[0], p[1] - reference[1]];
        [-s * d[0] + c * d[1], c * d[0] + s * d[1]]
    };

    type Make = Box<dyn Fn(u64) -> NoiseModel>;
    let noise = cfg.noise.clone();
    let b = cfg.bias_omega;
    let conditions: Vec<(&str, Make)> = vec![
        ("zero", Box::new(move |seed| NoiseModel::sample(&lag_only, seed))),
        ("default", {
            let n = noise.clone();
            Box::new(move |seed| NoiseModel::sample(&n, seed))
        }),
        ("bias+", {
            let n = noise.clone();
            Box::new(move |seed| {
                let m = NoiseModel::sample(&n, seed);
                let v = m.bias_v;
                m.with_bias(v, b)
            })
        }),
        ("bias-", {
            let n = noise;
            Box::new(move |seed| {
                let m = NoiseModel::sample(&n, seed);
                let v = m.bias_v;
                m.with_bias(v, -b)
            })
        }),
    ];

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (name, make) in conditions {
        let mut offsets = Vec::with_capacity(cfg.replays);
        for i in 0..cfg.replays {
            let (p, _) = run(&profile, &sim, make(derive_seed(cfg.seed, i as u64)));
            let o = to_frame(p);
            rows.push(vec![
                "replay".to_string(),
                name.to_string(),
                i.to_string(),
                format!("{:.6}", o[0]),
                format!("{:.6}", o[1]),
                format!("{:.6}", o[0].hypot(o[1])),
            ]);
            offsets.push(o);
        }
        let stats = DriftStats::from_offsets(&offsets);
        runs.push(DriftRun {
            condition: name.to_string(),
            offsets,
            stats,
        });
    }

    let mut results = vec![
        ("reference_x".to_string(), format!("{:.6}", reference[0])),
        ("reference_y".to_string(), format!("{:.6}", reference[1])),
        ("steps".to_string(), profile.len().to_string()),
    ];
    for r in &runs {
        let st = &r.stats;
        for (k, v) in [
            ("mean_error", st.mean_error),
            ("centroid_lateral", st.centroid[0]),
            ("centroid_longitudinal", st.centroid[1]),
            ("spread_major", st.spread_major),
            ("spread_minor", st.spread_minor),
            ("extent_major", st.extent_major),
            ("axis_angle", st.axis_angle),
        ] {
            results.push((format!("{}.{k}", r.condition), format!("{v:.6}")));
        }
    }
    let report = Report {
        kind: "drift".to_string(),
        config: cfg.to_kv(),
        results,
        columns: ["kind", "condition", "replay", "lateral", "longitudinal", "error"].map(String::from).to_vec(),
        rows,
    };
    DriftResult {
        reference,
        runs,
        report,
    }
}
