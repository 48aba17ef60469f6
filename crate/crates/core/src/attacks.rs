//! Attack-time schedules and the stealthy attack generators.

use std::f64::consts::PI;

use crate::dynamics::Basis;
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm2, Mat};
use crate::rng::{sample_unit_sphere, RngStream};

/// Minimum Monte-Carlo draw count for the assumption probes.
pub const MIN_PROBE_DRAWS: usize = 10_000;

/// Anything that can produce an attack vector given the current state.
pub trait AttackSampler {
    fn sample(&self, t: usize, x: &[f64], rng: &mut RngStream) -> Vec<f64>;
}

impl<F> AttackSampler for F
where
    F: Fn(usize, &[f64], &mut RngStream) -> Vec<f64>,
{
    fn sample(&self, t: usize, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self(t, x, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackModel {
    /// `ℓ d̂` with `ℓ ~ N(0, min(‖x‖², 1/n))` and `d̂` uniform on the sphere.
    LipschitzSubGaussian,
    /// Component `i` uniform on `(−cᵢπ, cᵢπ)`, `cᵢ = clamp(|xᵢ|, 0.1, 0.5)`.
    BoundedUniformComponentwise,
    /// First coordinate uniform on `±[|x₁|+π, |x₁|+2π]`, other coordinates 0.
    AnnulusUniform,
    /// Uniform on the unit sphere.
    UnitSphere,
}

impl AttackModel {
    pub const ALL: [AttackModel; 4] = [
        AttackModel::LipschitzSubGaussian,
        AttackModel::BoundedUniformComponentwise,
        AttackModel::AnnulusUniform,
        AttackModel::UnitSphere,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackModel::LipschitzSubGaussian => "lipschitz_subgaussian",
            AttackModel::BoundedUniformComponentwise => "bounded_uniform",
            AttackModel::AnnulusUniform => "annulus",
            AttackModel::UnitSphere => "unit_sphere",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown attack model `{s}`")))
    }

    /// Standard deviation of the Gaussian magnitude at state `x`.
    pub fn subgaussian_sigma(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let r2 = norm2(x).powi(2);
        // σ = 0 at the origin would force a zero attack; fall back to the cap.
        let var = if r2 == 0.0 { 1.0 / n } else { r2.min(1.0 / n) };
        var.sqrt()
    }

    fn draw(self, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let n = x.len();
        match self {
            AttackModel::LipschitzSubGaussian => {
                let sigma = Self::subgaussian_sigma(x);
                let mut ell = 0.0;
                while ell == 0.0 {
                    ell = sigma * rng.normal();
                }
                let dir = sample_unit_sphere(n, rng).expect("n ≥ 1");
                dir.into_iter().map(|u| ell * u).collect()
            }
            AttackModel::BoundedUniformComponentwise => x
                .iter()
                .map(|xi| {
                    let c = xi.abs().max(0.1).min(0.5);
                    rng.uniform(-c * PI, c * PI)
                })
                .collect(),
            AttackModel::AnnulusUniform => {
                let base = x[0].abs();
                let mag = rng.uniform(base + PI, base + 2.0 * PI);
                let mut d = vec![0.0; n];
                d[0] = rng.sign() * mag;
                d
            }
            AttackModel::UnitSphere => sample_unit_sphere(n, rng).expect("n ≥ 1"),
        }
    }
}

impl AttackSampler for AttackModel {
    fn sample(&self, _t: usize, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        loop {
            let d = self.draw(x, rng);
            if d.iter().any(|v| *v != 0.0) {
                return d;
            }
        }
    }
}

/// Draws a nonzero attack vector `d̄_t` for state `x_t`.
pub fn sample_attack(model: AttackModel, t: usize, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::DimensionMismatch("attack needs a state of dimension ≥ 1".into()));
    }
    Ok(model.sample(t, x, rng))
}

/// Sorted set of attacked times in `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    pub horizon: usize,
    pub p: f64,
    pub times: Vec<usize>,
}

impl AttackSchedule {
    pub fn contains(&self, t: usize) -> bool {
        self.times.binary_search(&t).is_ok()
    }
}

/// Each `t ∈ 0..horizon` is attacked independently with probability `p`.
/// `p ∈ {0, 1}` is accepted for test scaffolding.
pub fn sample_schedule(horizon: usize, p: f64, rng: &mut RngStream) -> Result<AttackSchedule> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("attack probability {p} outside [0, 1]")));
    }
    let times = (0..horizon).filter(|_| rng.bernoulli(p)).collect();
    Ok(AttackSchedule { horizon, p, times })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StealthReport {
    pub mean_norm: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Norm of the empirical mean attack direction at a fixed state, compared
/// against `4 √(n/N)`.
pub fn check_stealthiness<S: AttackSampler + ?Sized>(
    sampler: &S,
    x_probe: &[f64],
    draws: usize,
    rng: &mut RngStream,
) -> Result<StealthReport> {
    if draws < MIN_PROBE_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "stealthiness probe needs at least {MIN_PROBE_DRAWS} draws"
        )));
    }
    let n = x_probe.len();
    let mut mean = vec![0.0; n];
    let w = 1.0 / draws as f64;
    for _ in 0..draws {
        let d = sampler.sample(0, x_probe, rng);
        let r = norm2(&d);
        axpy(w / r, &d, &mut mean);
    }
    let mean_norm = norm2(&mean);
    let threshold = 4.0 * (n as f64 / draws as f64).sqrt();
    Ok(StealthReport {
        mean_norm,
        threshold,
        pass: mean_norm <= threshold,
    })
}

/// Smallest eigenvalue of the Monte-Carlo estimate of
/// `E[f(x + d̄) f(x + d̄)ᵀ]` at a fixed state.
pub fn estimate_nondegeneracy<S: AttackSampler + ?Sized>(
    sampler: &S,
    basis: &Basis,
    x_probe: &[f64],
    draws: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if draws < MIN_PROBE_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "non-degeneracy probe needs at least {MIN_PROBE_DRAWS} draws"
        )));
    }
    if x_probe.len() != basis.n() {
        return Err(Error::DimensionMismatch("probe state vs basis".into()));
    }
    let m = basis.m();
    let mut second_moment = Mat::zeros(m, m);
    let w = 1.0 / draws as f64;
    for _ in 0..draws {
        let d = sampler.sample(0, x_probe, rng);
        let shifted: Vec<f64> = x_probe.iter().zip(&d).map(|(a, b)| a + b).collect();
        let f = basis.eval(&shifted)?;
        second_moment.add_outer(w, &f, &f);
    }
    Ok(second_moment.symmetric_eigenvalues()[0])
}
