//! Two-phase coordinate fitting: Adam on Chamfer Distance for coarse
//! alignment, then Adam on GeoCD for fine-tuning. Predicted coordinates are
//! the parameters; the ground truth never moves.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::loss::{chamfer, geocd, GeoCdConfig, LossReport, StageTimings};
use crate::metrics::{evaluate, MetricsReport, ThresholdBase};
use crate::pointcloud::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sphere,
    Hemisphere,
    Torus,
    BentPlane,
}

impl std::str::FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "hemisphere" => Ok(ShapeKind::Hemisphere),
            "torus" => Ok(ShapeKind::Torus),
            "bent-plane" => Ok(ShapeKind::BentPlane),
            other => Err(format!(
                "unknown shape '{other}' (expected sphere, hemisphere, torus or bent-plane)"
            )),
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;
pub const TORUS_MAJOR: f64 = 0.4;
pub const TORUS_MINOR: f64 = 0.15;
/// Curvature of the bent plane `z = BEND · x²` over `[-0.5, 0.5]²`.
pub const BEND: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Samples `n_points` points on a parametric surface, plus isotropic
/// Gaussian noise. Deterministic in `seed`.
pub fn sample_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    if spec.n_points < 4 {
        return Err(GeoError::InvalidConfig(format!(
            "shape needs at least 4 points, got {}",
            spec.n_points
        )));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(GeoError::InvalidConfig(format!(
            "noise sigma must be non-negative, got {}",
            spec.noise_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit_sphere = |rng: &mut ChaCha8Rng| loop {
        let v = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v * (1.0 / n);
        }
    };
    let mut points = Vec::with_capacity(spec.n_points);
    for _ in 0..spec.n_points {
        let p = match spec.kind {
            ShapeKind::Sphere => unit_sphere(&mut rng) * SPHERE_RADIUS,
            ShapeKind::Hemisphere => {
                let mut u = unit_sphere(&mut rng);
                u.z = u.z.abs();
                u * SPHERE_RADIUS
            }
            ShapeKind::Torus => {
                let theta = rng.random_range(0.0..2.0 * PI);
                let phi = rng.random_range(0.0..2.0 * PI);
                let ring = TORUS_MAJOR + TORUS_MINOR * phi.cos();
                Point3::new(ring * theta.cos(), ring * theta.sin(), TORUS_MINOR * phi.sin())
            }
            ShapeKind::BentPlane => {
                let x = rng.random_range(-0.5..0.5);
                let y = rng.random_range(-0.5..0.5);
                Point3::new(x, y, BEND * x * x)
            }
        };
        points.push(p);
    }
    let cloud = PointCloud::new(points)?;
    let name = format!("{:?}", spec.kind).to_lowercase();
    Ok(jitter(&cloud, spec.noise_sigma, spec.seed.wrapping_add(0x9e37_79b9))?.with_name(name))
}

/// Adds isotropic Gaussian noise with standard deviation `sigma`.
pub fn jitter(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| GeoError::InvalidConfig(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            *p + Point3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            )
        })
        .collect();
    let mut out = PointCloud::new(pts)?;
    out.name = cloud.name.clone();
    Ok(out)
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps_cd: usize,
    pub steps_geocd: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub geo: GeoCdConfig,
    pub seed: u64,
    /// F1 threshold as a fraction of the bounding-box diagonal.
    pub tau_fraction: f64,
    pub threshold_base: ThresholdBase,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps_cd: 200,
            steps_geocd: 20,
            lr: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            geo: GeoCdConfig::default(),
            seed: 0,
            tau_fraction: 0.01,
            threshold_base: ThresholdBase::GroundTruth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cd,
    GeoCd,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Cd => "cd",
            Phase::GeoCd => "geocd",
        })
    }
}

/// Loss and metrics evaluated at the coordinates a step starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: usize,
    pub loss: f64,
    pub cd: f64,
    pub hd: f64,
    pub f1: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub steps_run: usize,
    pub initial_loss: f64,
    /// Loss at the coordinates after the last update.
    pub final_loss: f64,
    pub final_metrics: MetricsReport,
    /// Set when the phase stopped early on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<StepRecord>,
    pub phases: Vec<PhaseSummary>,
    pub initial_metrics: MetricsReport,
    pub final_metrics: MetricsReport,
    pub final_pred: PointCloud,
    pub timings: StageTimings,
}

impl FitTrace {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseSummary> {
        self.phases.iter().find(|p| p.phase == phase)
    }
}

fn phase_loss(
    phase: Phase,
    pred: &PointCloud,
    gt: &PointCloud,
    cfg: &FitConfig,
    with_grad: bool,
) -> Result<LossReport> {
    match phase {
        Phase::Cd => Ok(chamfer(pred, gt, with_grad)),
        Phase::GeoCd => geocd(pred, gt, &cfg.geo, with_grad),
    }
}

/// Optimizes `pred_init` towards `gt`: `steps_cd` Adam steps on Chamfer
/// Distance, then `steps_geocd` steps on GeoCD. Each phase starts a fresh
/// Adam state with the same learning rate. The kNN graph is rebuilt from the
/// current coordinates at every GeoCD step.
pub fn fit(pred_init: &PointCloud, gt: &PointCloud, cfg: &FitConfig) -> Result<FitTrace> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(GeoError::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    let metrics = |p: &PointCloud| evaluate(p, gt, cfg.tau_fraction, cfg.threshold_base);
    let initial_metrics = metrics(pred_init)?;
    let mut coords = pred_init.to_flat();
    let mut records = Vec::new();
    let mut phases = Vec::new();
    let mut timings = StageTimings::default();

    for (phase, steps) in [(Phase::Cd, cfg.steps_cd), (Phase::GeoCd, cfg.steps_geocd)] {
        if steps == 0 {
            continue;
        }
        let mut adam = Adam::new(coords.len(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut aborted = None;
        let mut initial_loss = f64::NAN;
        let mut steps_run = 0;
        for step in 0..steps {
            let t0 = Instant::now();
            let cur = PointCloud::from_flat(&coords)?;
            let report = phase_loss(phase, &cur, gt, cfg, true)?;
            timings += report.timings;
            let grad: Vec<f64> = report.grad_pred.iter().flatten().copied().collect();
            if !report.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                aborted = Some(format!("non-finite loss or gradient at step {step}"));
                break;
            }
            if step == 0 {
                initial_loss = report.value;
            }
            let m = metrics(&cur)?;
            adam.step(&mut coords, &grad);
            steps_run += 1;
            records.push(StepRecord {
                phase,
                step,
                loss: report.value,
                cd: m.cd,
                hd: m.hd,
                f1: m.f1,
                elapsed_s: t0.elapsed().as_secs_f64(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeoError::InvalidConfig(format!(
                "{phase} phase produced non-finite coordinates"
            )));
        }
        let end = PointCloud::from_flat(&coords)?;
        let final_loss = phase_loss(phase, &end, gt, cfg, false)?.value;
        phases.push(PhaseSummary {
            phase,
            steps_run,
            initial_loss,
            final_loss,
            final_metrics: metrics(&end)?,
            aborted,
        });
    }

    let mut final_pred = PointCloud::from_flat(&coords)?;
    final_pred.name = pred_init.name.clone();
    Ok(FitTrace {
        records,
        phases,
        initial_metrics,
        final_metrics: metrics(&final_pred)?,
        final_pred,
        timings,
    })
}
