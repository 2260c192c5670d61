//! Parking with a kinematic bicycle: per-vehicle dynamics, a hand-coded expert and
//! scripted suboptimal students.
//!
//! Trajectory rows are `[x, y, vx, vy, cos_h, sin_h, accel, steer]`: the state and the
//! action taken in it.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pairs::PairRow;
use super::{EnvError, Result};
use crate::seed::derive_seed;
use crate::traj::{read_jsonl, Role, Split, Task, Trajectory, MAX_LEN};

pub const STATE_WIDTH: usize = 6;
pub const ROW_WIDTH: usize = 8;
pub const DEFAULT_CONFIG: &str = include_str!("../../config/steering.toml");

/// Proportional gain from bearing error to heading command.
const STEER_GAIN: f64 = 1.5;
/// Fraction of the acceleration limit the expert plans to brake with.
const BRAKE_FRACTION: f64 = 0.5;
/// Slowest speed factor applied while the goal is far off the nose.
const MIN_ALIGNMENT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vehicle {
    Car,
    Plane,
    Bike,
}

impl Vehicle {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::Plane => "plane",
            Self::Bike => "bike",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleConfig {
    pub name: Vehicle,
    pub steering_sensitivity: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Speed the expert travels at away from the goal.
    pub cruise_speed: f64,
    pub wheelbase: f64,
    pub dt: f64,
    pub max_accel: f64,
    pub max_steer: f64,
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::Config(format!("{}: {m}", self.name.as_str())));
        let finite = [
            self.steering_sensitivity,
            self.v_min,
            self.v_max,
            self.cruise_speed,
            self.wheelbase,
            self.dt,
            self.max_accel,
            self.max_steer,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        if self.v_min >= self.v_max {
            return bad("v_min must be below v_max");
        }
        if self.steering_sensitivity <= 0.0 || self.dt <= 0.0 || self.wheelbase <= 0.0 {
            return bad("sensitivity, dt and wheelbase must be positive");
        }
        if self.max_accel <= 0.0 || self.max_steer <= 0.0 {
            return bad("action bounds must be positive");
        }
        if self.steering_sensitivity * self.max_steer >= PI / 2.0 {
            return bad("sensitivity * max_steer must stay below pi/2");
        }
        if !(self.v_min..=self.v_max).contains(&self.cruise_speed) || self.cruise_speed <= 0.0 {
            return bad("cruise_speed must be positive and within the speed bounds");
        }
        Ok(())
    }

    /// Turning radius at a constant heading command.
    pub fn turning_radius(&self, steer: f64) -> f64 {
        self.wheelbase / (self.steering_sensitivity * steer).tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub cos_h: f64,
    pub sin_h: f64,
}

impl SteeringState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        let (sin_h, cos_h) = heading.sin_cos();
        Self { x, y, vx: speed * cos_h, vy: speed * sin_h, cos_h, sin_h }
    }

    /// Signed speed along the heading.
    pub fn speed(&self) -> f64 {
        self.vx * self.cos_h + self.vy * self.sin_h
    }

    pub fn heading(&self) -> f64 {
        self.sin_h.atan2(self.cos_h)
    }

    pub fn to_row(&self) -> [f64; STATE_WIDTH] {
        [self.x, self.y, self.vx, self.vy, self.cos_h, self.sin_h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SteeringAction {
    pub accel: f64,
    pub steer: f64,
}

impl SteeringAction {
    pub fn clamped(self, cfg: &VehicleConfig) -> Self {
        Self {
            accel: self.accel.clamp(-cfg.max_accel, cfg.max_accel),
            steer: self.steer.clamp(-cfg.max_steer, cfg.max_steer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub speed: f64,
}

impl StartPose {
    pub fn state(&self) -> SteeringState {
        SteeringState::new(self.x, self.y, self.heading, self.speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingScenario {
    pub start: StartPose,
    pub goal: Pose,
    /// Parking succeeds within this distance of the goal...
    pub tolerance: f64,
    /// ...once the speed is at most this.
    pub stop_speed: f64,
    pub horizon: usize,
}

impl ParkingScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.stop_speed > 0.0) {
            return Err(EnvError::Config("tolerance and stop_speed must be positive".into()));
        }
        if self.horizon == 0 || self.horizon > MAX_LEN {
            return Err(EnvError::Config(format!("horizon must be in 1..={MAX_LEN}")));
        }
        Ok(())
    }

    pub fn goal_distance(&self, s: &SteeringState) -> f64 {
        (self.goal.x - s.x).hypot(self.goal.y - s.y)
    }

    pub fn parked(&self, s: &SteeringState) -> bool {
        self.goal_distance(s) <= self.tolerance && s.speed().abs() <= self.stop_speed
    }
}

/// One Euler step: clamp speed, turn, then move along the new heading.
pub fn step(cfg: &VehicleConfig, s: &SteeringState, a: SteeringAction) -> SteeringState {
    let a = a.clamped(cfg);
    let speed = (s.speed() + a.accel * cfg.dt).clamp(cfg.v_min, cfg.v_max);
    let yaw_rate = speed / cfg.wheelbase * (cfg.steering_sensitivity * a.steer).tan();
    let (dsin, dcos) = (yaw_rate * cfg.dt).sin_cos();
    let cos_h = s.cos_h * dcos - s.sin_h * dsin;
    let sin_h = s.sin_h * dcos + s.cos_h * dsin;
    let norm = cos_h.hypot(sin_h);
    let (cos_h, sin_h) = (cos_h / norm, sin_h / norm);
    SteeringState {
        x: s.x + speed * cos_h * cfg.dt,
        y: s.y + speed * sin_h * cfg.dt,
        vx: speed * cos_h,
        vy: speed * sin_h,
        cos_h,
        sin_h,
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Bearing of the goal relative to the heading, in (-pi, pi].
pub fn bearing_error(sc: &ParkingScenario, s: &SteeringState) -> f64 {
    wrap_angle((sc.goal.y - s.y).atan2(sc.goal.x - s.x) - s.heading())
}

fn expert_steer(cfg: &VehicleConfig, sc: &ParkingScenario, s: &SteeringState) -> f64 {
    (STEER_GAIN * bearing_error(sc, s) / cfg.steering_sensitivity).clamp(-cfg.max_steer, cfg.max_steer)
}

fn accel_toward(cfg: &VehicleConfig, s: &SteeringState, target: f64) -> f64 {
    ((target - s.speed()) / cfg.dt).clamp(-cfg.max_accel, cfg.max_accel)
}

/// Steers at the goal bearing, cruises, follows a braking curve near the goal and
/// stops inside the tolerance.
pub fn expert_policy(cfg: &VehicleConfig, sc: &ParkingScenario, s: &SteeringState) -> SteeringAction {
    let d = sc.goal_distance(s);
    if d <= sc.tolerance {
        if s.speed().abs() <= sc.stop_speed {
            return SteeringAction::default();
        }
        return SteeringAction { accel: accel_toward(cfg, s, 0.0), steer: 0.0 };
    }
    let braking = (2.0 * BRAKE_FRACTION * cfg.max_accel * (d - 0.5 * sc.tolerance)).sqrt();
    let alignment = bearing_error(sc, s).cos().max(MIN_ALIGNMENT);
    let target = cfg.cruise_speed.min(braking) * alignment;
    SteeringAction { accel: accel_toward(cfg, s, target), steer: expert_steer(cfg, sc, s) }
}

/// Ways a student departs from the expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Perturbation {
    /// Gaussian noise on both action components.
    ActionNoise { sigma_accel: f64, sigma_steer: f64 },
    /// Heading commands lag the expert's by `steps`.
    DelayedTurn { steps: usize },
    /// Heading commands aim from a point `steps` ahead along the current velocity.
    EarlyTurn { steps: usize },
    /// Acceleration sign flipped.
    WrongGear,
    /// Never brakes.
    Overshoot,
    /// Trajectories read from a directory of trajectory records.
    Imported { dir: PathBuf },
}

impl Perturbation {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ActionNoise { .. } => "action_noise",
            Self::DelayedTurn { .. } => "delayed_turn",
            Self::EarlyTurn { .. } => "early_turn",
            Self::WrongGear => "wrong_gear",
            Self::Overshoot => "overshoot",
            Self::Imported { .. } => "imported",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::ActionNoise { sigma_accel, sigma_steer } => {
                if !(*sigma_accel >= 0.0 && *sigma_steer >= 0.0 && sigma_accel.is_finite() && sigma_steer.is_finite()) {
                    return Err(EnvError::BadSpec("noise scales must be finite and non-negative".into()));
                }
            }
            Self::DelayedTurn { steps } | Self::EarlyTurn { steps } if *steps == 0 => {
                return Err(EnvError::BadSpec(format!("{} needs steps > 0", self.label())));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Chooses actions; `rng` is the rollout's seeded stream.
pub trait Policy {
    fn act(
        &mut self,
        cfg: &VehicleConfig,
        sc: &ParkingScenario,
        s: &SteeringState,
        rng: &mut ChaCha8Rng,
    ) -> SteeringAction;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn act(
        &mut self,
        cfg: &VehicleConfig,
        sc: &ParkingScenario,
        s: &SteeringState,
        _: &mut ChaCha8Rng,
    ) -> SteeringAction {
        expert_policy(cfg, sc, s)
    }
}

/// The expert with one scripted flaw.
#[derive(Debug, Clone)]
pub struct PerturbedPolicy {
    perturbation: Perturbation,
    steer_history: VecDeque<f64>,
}

impl PerturbedPolicy {
    pub fn new(perturbation: Perturbation) -> Result<Self> {
        perturbation.validate()?;
        if matches!(perturbation, Perturbation::Imported { .. }) {
            return Err(EnvError::BadSpec("imported trajectories are not a policy".into()));
        }
        Ok(Self { perturbation, steer_history: VecDeque::new() })
    }
}

impl Policy for PerturbedPolicy {
    fn act(
        &mut self,
        cfg: &VehicleConfig,
        sc: &ParkingScenario,
        s: &SteeringState,
        rng: &mut ChaCha8Rng,
    ) -> SteeringAction {
        let expert = expert_policy(cfg, sc, s);
        match &self.perturbation {
            Perturbation::ActionNoise { sigma_accel, sigma_steer } => {
                let noise = |sigma: f64, rng: &mut ChaCha8Rng| Normal::new(0.0, sigma).expect("validated").sample(rng);
                let accel = expert.accel + noise(*sigma_accel, rng);
                let steer = expert.steer + noise(*sigma_steer, rng);
                SteeringAction { accel, steer }
            }
            Perturbation::DelayedTurn { steps } => {
                self.steer_history.push_back(expert.steer);
                let steer = if self.steer_history.len() > *steps {
                    self.steer_history.pop_front().expect("non-empty")
                } else {
                    0.0
                };
                SteeringAction { accel: expert.accel, steer }
            }
            Perturbation::EarlyTurn { steps } => {
                let lead = *steps as f64 * cfg.dt;
                let ahead = SteeringState { x: s.x + s.vx * lead, y: s.y + s.vy * lead, ..*s };
                let steer = if sc.goal_distance(s) <= sc.tolerance { 0.0 } else { expert_steer(cfg, sc, &ahead) };
                SteeringAction { accel: expert.accel, steer }
            }
            Perturbation::WrongGear => SteeringAction { accel: -expert.accel, steer: expert.steer },
            Perturbation::Overshoot => {
                SteeringAction { accel: accel_toward(cfg, s, cfg.cruise_speed), steer: expert.steer }
            }
            Perturbation::Imported { .. } => unreachable!("rejected in new"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub success: bool,
    pub final_state: SteeringState,
    pub final_distance: f64,
}

/// Runs `policy` for at most `horizon` steps, stopping once parked.
///
/// The parked state is recorded with a zero action.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    cfg: &VehicleConfig,
    sc: &ParkingScenario,
    policy: &mut dyn Policy,
    start: SteeringState,
    horizon: usize,
    seed: u64,
    id: &str,
    role: Role,
) -> Result<Rollout> {
    cfg.validate()?;
    sc.validate()?;
    if horizon == 0 || horizon > MAX_LEN {
        return Err(EnvError::Config(format!("horizon must be in 1..={MAX_LEN}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start;
    let mut rows = Vec::with_capacity(horizon);
    let mut success = false;
    for _ in 0..horizon {
        if sc.parked(&s) {
            rows.push(row(&s, SteeringAction::default()));
            success = true;
            break;
        }
        let a = policy.act(cfg, sc, &s, &mut rng).clamped(cfg);
        rows.push(row(&s, a));
        s = step(cfg, &s, a);
    }
    let trajectory = Trajectory::new(id, Task::Steering, cfg.name.as_str(), role, rows)?;
    Ok(Rollout { trajectory, success, final_state: s, final_distance: sc.goal_distance(&s) })
}

fn row(s: &SteeringState, a: SteeringAction) -> Vec<f64> {
    let mut r = s.to_row().to_vec();
    r.extend([a.accel, a.steer]);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    #[serde(flatten)]
    pub perturbation: Perturbation,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub total: usize,
    /// Std of the Gaussian offset added to the start position of each student.
    #[serde(default)]
    pub start_jitter: f64,
    /// Students assigned to the test split, drawn by seeded shuffle; the rest are train.
    #[serde(default)]
    pub test_count: usize,
    pub families: Vec<FamilySpec>,
}

impl StudentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(EnvError::BadSpec("no student families".into()));
        }
        let sum: usize = self.families.iter().map(|f| f.count).sum();
        if sum != self.total {
            return Err(EnvError::BadSpec(format!("family counts sum to {sum}, expected {}", self.total)));
        }
        if !(self.start_jitter >= 0.0 && self.start_jitter.is_finite()) {
            return Err(EnvError::BadSpec("start_jitter must be finite and non-negative".into()));
        }
        if self.test_count > self.total {
            return Err(EnvError::BadSpec("test_count exceeds total".into()));
        }
        self.families.iter().try_for_each(|f| f.perturbation.validate())
    }
}

pub fn student_id(vehicle: Vehicle, index: usize) -> String {
    format!("{}-s{index:02}", vehicle.as_str())
}

pub fn expert_id(vehicle: Vehicle) -> String {
    format!("{}-expert", vehicle.as_str())
}

fn import_trajectories(dir: &Path, vehicle: Vehicle, count: usize) -> Result<Vec<Trajectory>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut found = Vec::new();
    for f in files {
        found.extend(
            read_jsonl::<Trajectory>(&f)?
                .into_iter()
                .filter(|t| t.task == Task::Steering && t.domain == vehicle.as_str() && t.width() == ROW_WIDTH),
        );
    }
    found.sort_by(|a, b| a.id.cmp(&b.id));
    if found.len() < count {
        return Err(EnvError::BadSpec(format!(
            "{} holds {} {} trajectories, {count} requested",
            dir.display(),
            found.len(),
            vehicle.as_str()
        )));
    }
    found.truncate(count);
    Ok(found)
}

/// Rolls out `spec.total` students, family by family, each from a jittered start.
pub fn generate_students(
    cfg: &VehicleConfig,
    sc: &ParkingScenario,
    spec: &StudentSpec,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.total);
    for fam in &spec.families {
        if let Perturbation::Imported { dir } = &fam.perturbation {
            for t in import_trajectories(dir, cfg.name, fam.count)? {
                let original = t.id.clone();
                let id = student_id(cfg.name, out.len());
                out.push(
                    Trajectory { id, role: Role::Student, ..t }
                        .with_meta("family", fam.perturbation.label())
                        .with_meta("imported_from", original),
                );
            }
            continue;
        }
        for _ in 0..fam.count {
            let index = out.len();
            let student_seed = derive_seed(seed, index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(student_seed);
            let mut start = sc.start;
            if spec.start_jitter > 0.0 {
                let jitter = Normal::new(0.0, spec.start_jitter).expect("validated");
                start.x += jitter.sample(&mut rng);
                start.y += jitter.sample(&mut rng);
            }
            let mut policy = PerturbedPolicy::new(fam.perturbation.clone())?;
            let r = rollout(
                cfg,
                sc,
                &mut policy,
                start.state(),
                sc.horizon,
                derive_seed(student_seed, 1),
                &student_id(cfg.name, index),
                Role::Student,
            )?;
            out.push(r.trajectory.with_meta("family", fam.perturbation.label()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub vehicles: Vec<VehicleConfig>,
    pub scenario: ParkingScenario,
    pub students: StudentSpec,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled steering config is valid")
    }
}

impl SteeringConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicles.iter().try_for_each(VehicleConfig::validate)?;
        self.scenario.validate()?;
        self.students.validate()
    }

    pub fn vehicle(&self, v: Vehicle) -> Option<&VehicleConfig> {
        self.vehicles.iter().find(|c| c.name == v)
    }
}

/// Expert and students for one vehicle, with their pair rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSet {
    pub expert: Rollout,
    pub students: Vec<Trajectory>,
    pub rows: Vec<PairRow>,
}

impl VehicleSet {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        std::iter::once(&self.expert.trajectory).chain(&self.students)
    }
}

pub fn simulate_vehicle(
    cfg: &VehicleConfig,
    sc: &ParkingScenario,
    spec: &StudentSpec,
    seed: u64,
) -> Result<VehicleSet> {
    let vehicle_seed = derive_seed(seed, cfg.name as u64);
    let expert = rollout(
        cfg,
        sc,
        &mut ExpertPolicy,
        sc.start.state(),
        sc.horizon,
        vehicle_seed,
        &expert_id(cfg.name),
        Role::Expert,
    )?;
    let students = generate_students(cfg, sc, spec, vehicle_seed)?;
    let mut order: Vec<usize> = (0..students.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(vehicle_seed, u64::MAX)));
    let mut splits = vec![Split::Train; students.len()];
    for &i in &order[..spec.test_count] {
        splits[i] = Split::Test;
    }
    let rows = students
        .iter()
        .zip(splits)
        .map(|(t, split)| PairRow { student_id: t.id.clone(), expert_id: expert.trajectory.id.clone(), split })
        .collect();
    Ok(VehicleSet { expert, students, rows })
}

/// Every configured vehicle, one thread each.
pub fn simulate_all(cfg: &SteeringConfig, seed: u64) -> Result<Vec<VehicleSet>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .vehicles
            .iter()
            .map(|v| scope.spawn(move || simulate_vehicle(v, &cfg.scenario, &cfg.students, seed)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}
