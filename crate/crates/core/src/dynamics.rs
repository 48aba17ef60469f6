//! Basis-function systems `x_{t+1} = Ā f(x_t) + d̄_t` and their simulation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{norm2, Mat};
use crate::rng::{sample_gaussian_vector, sample_orthogonal, RngStream};

/// Sine harmonics per state coordinate in the bounded basis.
pub const SINE_HARMONICS: usize = 5;

/// States at or beyond this norm abort the simulation.
pub const DEFAULT_EXPLOSION_THRESHOLD: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Linear,
    MultiquadricLipschitz,
    SineBounded,
    SaturatedSine,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Linear => "linear",
            BasisKind::MultiquadricLipschitz => "multiquadric",
            BasisKind::SineBounded => "sine",
            BasisKind::SaturatedSine => "saturated_sine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BasisKind::Linear),
            "multiquadric" => Ok(BasisKind::MultiquadricLipschitz),
            "sine" => Ok(BasisKind::SineBounded),
            "saturated_sine" => Ok(BasisKind::SaturatedSine),
            other => Err(Error::Parse(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// A known feature map `f: ℝⁿ → ℝᵐ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// `f(x) = x`.
    Linear { n: usize },
    /// `fᵢ(x) = (√(‖x − cᵢ‖² + 1) − √(‖cᵢ‖² + 1)) / √n`, one center per
    /// feature, `m = n`. 1-Lipschitz with `f(0) = 0`.
    Multiquadric { centers: Vec<Vec<f64>> },
    /// Blocks `[sin(x_i), …, sin(5 x_i)]` for each coordinate, `m = 5n`.
    SineBounded { n: usize },
    /// `[x₁ / max(|x₁|, 1), sin(x₁), …, sin((m−1) x₁)]`; only the first
    /// coordinate is read.
    SaturatedSine { n: usize, m: usize },
}

impl Basis {
    pub fn linear(n: usize) -> Result<Self> {
        let b = Basis::Linear { n };
        b.validate()?;
        Ok(b)
    }

    pub fn multiquadric(centers: Vec<Vec<f64>>) -> Result<Self> {
        let b = Basis::Multiquadric { centers };
        b.validate()?;
        Ok(b)
    }

    /// Multiquadric basis with i.i.d. standard Gaussian centers.
    pub fn random_multiquadric(n: usize, rng: &mut RngStream) -> Result<Self> {
        let centers = (0..n)
            .map(|_| sample_gaussian_vector(n, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::multiquadric(centers)
    }

    pub fn sine_bounded(n: usize) -> Result<Self> {
        let b = Basis::SineBounded { n };
        b.validate()?;
        Ok(b)
    }

    pub fn saturated_sine(n: usize, m: usize) -> Result<Self> {
        let b = Basis::SaturatedSine { n, m };
        b.validate()?;
        Ok(b)
    }

    pub fn kind(&self) -> BasisKind {
        match self {
            Basis::Linear { .. } => BasisKind::Linear,
            Basis::Multiquadric { .. } => BasisKind::MultiquadricLipschitz,
            Basis::SineBounded { .. } => BasisKind::SineBounded,
            Basis::SaturatedSine { .. } => BasisKind::SaturatedSine,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Basis::Linear { n } | Basis::SineBounded { n } | Basis::SaturatedSine { n, .. } => *n,
            Basis::Multiquadric { centers } => centers.len(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Basis::Linear { n } => *n,
            Basis::Multiquadric { centers } => centers.len(),
            Basis::SineBounded { n } => SINE_HARMONICS * n,
            Basis::SaturatedSine { m, .. } => *m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::InvalidArgument("basis state dimension must be ≥ 1".into()));
        }
        match self {
            Basis::Multiquadric { centers } => {
                let n = centers.len();
                for (i, c) in centers.iter().enumerate() {
                    if c.len() != n {
                        return Err(Error::DimensionMismatch(format!(
                            "multiquadric center {i} has dimension {}, expected {n}",
                            c.len()
                        )));
                    }
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("multiquadric center {i}")));
                    }
                }
                Ok(())
            }
            Basis::SaturatedSine { m, .. } if *m < 2 => Err(Error::InvalidArgument(
                "saturated sine basis needs m ≥ 2".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Lipschitz constant when the basis is globally Lipschitz with `f(0)=0`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match self {
            Basis::Linear { .. } | Basis::Multiquadric { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Uniform bound on `‖f(x)‖_∞` when the basis is bounded.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            Basis::SineBounded { .. } | Basis::SaturatedSine { .. } => Some(1.0),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "basis expects a {}-vector, got {}",
                self.n(),
                x.len()
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Linear { .. } => x.to_vec(),
            Basis::Multiquadric { centers } => {
                let scale = 1.0 / (centers.len() as f64).sqrt();
                centers
                    .iter()
                    .map(|c| {
                        // √(‖x−c‖²+1) − √(‖c‖²+1) rewritten as a quotient so
                        // small states keep full relative precision.
                        let dist2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        let c2: f64 = c.iter().map(|b| b * b).sum();
                        let num: f64 = x.iter().zip(c).map(|(a, b)| a * (a - 2.0 * b)).sum();
                        scale * num / ((dist2 + 1.0).sqrt() + (c2 + 1.0).sqrt())
                    })
                    .collect()
            }
            Basis::SineBounded { .. } => x
                .iter()
                .flat_map(|&xi| (1..=SINE_HARMONICS).map(move |k| (k as f64 * xi).sin()))
                .collect(),
            Basis::SaturatedSine { m, .. } => {
                let y = x[0];
                let mut out = Vec::with_capacity(*m);
                out.push(y / y.abs().max(1.0));
                out.extend((1..*m).map(|k| (k as f64 * y).sin()));
                out
            }
        }
    }
}

/// Free function form of [`Basis::eval`].
pub fn eval_basis(basis: &Basis, x: &[f64]) -> Result<Vec<f64>> {
    basis.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundTruthStyle {
    /// `U Σ Vᵀ` with Haar `U, V` and `σᵢ ~ Uniform(0, ρ)`; needs `m = n`.
    SpectralUniform(f64),
    /// `U Σ Vᵀ` with all `σᵢ = ρ`; needs `m = n`.
    SpectralFixed(f64),
    /// Row `i` weights the harmonics of coordinate `i` with coefficients
    /// uniform on `(lo, hi)`; needs `m = 5n`.
    BoundedBlock { lo: f64, hi: f64 },
    /// `[[1, 0, …], 0, …]`: first row selects the first feature, rest zero.
    FirstFeatureSelector,
    /// `ρ Iₙ`; needs `m = n`.
    ScaledIdentity(f64),
}

pub fn make_ground_truth(
    style: GroundTruthStyle,
    n: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<Mat> {
    let square = || {
        if n == m && n >= 1 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{style:?} needs m = n ≥ 1, got n={n}, m={m}"
            )))
        }
    };
    match style {
        GroundTruthStyle::SpectralUniform(rho) | GroundTruthStyle::SpectralFixed(rho) => {
            square()?;
            if !(rho >= 0.0) {
                return Err(Error::InvalidArgument(format!("spectral bound {rho} < 0")));
            }
            let u = sample_orthogonal(n, rng)?;
            let v = sample_orthogonal(n, rng)?;
            let mut us = u.clone();
            for j in 0..n {
                let sigma = match style {
                    GroundTruthStyle::SpectralUniform(_) => rng.uniform(0.0, rho),
                    _ => rho,
                };
                for i in 0..n {
                    us[(i, j)] = u[(i, j)] * sigma;
                }
            }
            Ok(us.matmul(&v.transpose()))
        }
        GroundTruthStyle::BoundedBlock { lo, hi } => {
            if n == 0 || m != SINE_HARMONICS * n {
                return Err(Error::DimensionMismatch(format!(
                    "bounded block ground truth needs m = 5n, got n={n}, m={m}"
                )));
            }
            let mut a = Mat::zeros(n, m);
            for i in 0..n {
                for k in 0..SINE_HARMONICS {
                    // Open interval: redraw the (measure-zero) left endpoint.
                    let mut v = rng.uniform(lo, hi);
                    while v == lo {
                        v = rng.uniform(lo, hi);
                    }
                    a[(i, SINE_HARMONICS * i + k)] = v;
                }
            }
            Ok(a)
        }
        GroundTruthStyle::FirstFeatureSelector => {
            if n == 0 || m == 0 {
                return Err(Error::DimensionMismatch("empty selector".into()));
            }
            let mut a = Mat::zeros(n, m);
            a[(0, 0)] = 1.0;
            Ok(a)
        }
        GroundTruthStyle::ScaledIdentity(rho) => {
            square()?;
            Ok(Mat::identity(n).scaled(rho))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub a_bar: Mat,
    pub basis: Basis,
    pub horizon: usize,
}

impl SystemSpec {
    pub fn new(a_bar: Mat, basis: Basis, horizon: usize) -> Result<Self> {
        basis.validate()?;
        if a_bar.shape() != (basis.n(), basis.m()) {
            return Err(Error::DimensionMismatch(format!(
                "Ā is {:?} but the basis maps ℝ^{} → ℝ^{}",
                a_bar.shape(),
                basis.n(),
                basis.m()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be ≥ 1".into()));
        }
        Ok(Self {
            a_bar,
            basis,
            horizon,
        })
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    /// `Ā f(x)`
    pub fn step_clean(&self, x: &[f64]) -> Vec<f64> {
        self.a_bar.mul_vec(&self.basis.eval_unchecked(x))
    }
}

/// One realized attack `d̄ = magnitude · direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attack {
    pub d_bar: Vec<f64>,
    pub direction: Vec<f64>,
    pub magnitude: f64,
}

impl Attack {
    pub fn from_vector(d_bar: Vec<f64>) -> Result<Self> {
        if d_bar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attack vector".into()));
        }
        let magnitude = norm2(&d_bar);
        if magnitude == 0.0 {
            return Err(Error::Invariant("attack vector must be nonzero".into()));
        }
        let direction = d_bar.iter().map(|v| v / magnitude).collect();
        Ok(Self {
            d_bar,
            direction,
            magnitude,
        })
    }
}

/// States `x_0 … x_T` and the attack trace that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub attacks: BTreeMap<usize, Attack>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn schedule(&self) -> Vec<usize> {
        self.attacks.keys().copied().collect()
    }

    pub fn is_attacked(&self, t: usize) -> bool {
        self.attacks.contains_key(&t)
    }

    /// `d̄_t`, zero when `t` is not attacked.
    pub fn d_bar(&self, t: usize) -> Vec<f64> {
        self.attacks
            .get(&t)
            .map_or_else(|| vec![0.0; self.n()], |a| a.d_bar.clone())
    }

    /// Checks every structural invariant and, given the system, that the
    /// states follow the dynamics exactly (`tol = 0`) or within a relative
    /// tolerance.
    pub fn validate(&self, system: Option<&SystemSpec>, tol: f64) -> Result<()> {
        let n = self.n();
        if self.states.is_empty() {
            return Err(Error::Invariant("trajectory has no states".into()));
        }
        if self.states.iter().any(|s| s.len() != n) {
            return Err(Error::Invariant("states have inconsistent dimensions".into()));
        }
        if self.states[0].iter().any(|&v| v != 0.0) {
            return Err(Error::Invariant("x_0 must be the zero vector".into()));
        }
        let horizon = self.horizon();
        for (&t, a) in &self.attacks {
            if t >= horizon {
                return Err(Error::Invariant(format!("attack time {t} outside 0..{horizon}")));
            }
            if a.d_bar.len() != n || a.direction.len() != n {
                return Err(Error::Invariant(format!("attack at t={t} has wrong dimension")));
            }
            if !(a.magnitude > 0.0) {
                return Err(Error::Invariant(format!("attack at t={t} has zero magnitude")));
            }
            if (norm2(&a.direction) - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!("attack direction at t={t} is not unit")));
            }
            let recon_err = a
                .d_bar
                .iter()
                .zip(&a.direction)
                .map(|(d, u)| (d - a.magnitude * u).abs())
                .fold(0.0, f64::max);
            if recon_err > 1e-12 * a.magnitude.max(1.0) {
                return Err(Error::Invariant(format!(
                    "attack at t={t}: magnitude·direction does not reconstruct d̄"
                )));
            }
        }
        if let Some(sys) = system {
            if sys.n() != n {
                return Err(Error::DimensionMismatch("trajectory vs system dimension".into()));
            }
            for t in 0..horizon {
                let mut next = sys.step_clean(&self.states[t]);
                if let Some(a) = self.attacks.get(&t) {
                    for (v, d) in next.iter_mut().zip(&a.d_bar) {
                        *v += d;
                    }
                }
                let err = norm2(&crate::linalg::sub_vec(&next, &self.states[t + 1]));
                if err > tol * (1.0 + norm2(&next)) {
                    return Err(Error::Invariant(format!(
                        "x_{} does not follow the dynamics (error {err:e})",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Simulates the system from `x_0 = 0` with attacks at the scheduled times.
///
/// `sampler(t, x_t, rng)` supplies `d̄_t`; zero draws are redrawn.
pub fn simulate<F>(
    system: &SystemSpec,
    schedule: &[usize],
    sampler: F,
    rng: &mut RngStream,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64], &mut RngStream) -> Vec<f64>,
{
    simulate_with_guard(system, schedule, sampler, rng, DEFAULT_EXPLOSION_THRESHOLD)
}

pub fn simulate_with_guard<F>(
    system: &SystemSpec,
    schedule: &[usize],
    mut sampler: F,
    rng: &mut RngStream,
    explosion_threshold: f64,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64], &mut RngStream) -> Vec<f64>,
{
    const MAX_REDRAWS: usize = 1000;
    let n = system.n();
    let horizon = system.horizon;
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("schedule must be strictly increasing".into()));
    }
    if let Some(&last) = schedule.last() {
        if last >= horizon {
            return Err(Error::InvalidArgument(format!(
                "attack time {last} outside 0..{horizon}"
            )));
        }
    }

    let mut states = Vec::with_capacity(horizon + 1);
    states.push(vec![0.0; n]);
    let mut attacks = BTreeMap::new();
    let mut next_attack = schedule.iter().peekable();

    for t in 0..horizon {
        let x = &states[t];
        let mut next = system.step_clean(x);
        if next_attack.peek() == Some(&&t) {
            next_attack.next();
            let mut draws = 0;
            let d = loop {
                let d = sampler(t, x, rng);
                if d.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "attack sampler returned {} entries, expected {n}",
                        d.len()
                    )));
                }
                if d.iter().any(|v| *v != 0.0) {
                    break d;
                }
                draws += 1;
                if draws >= MAX_REDRAWS {
                    return Err(Error::Invariant(format!(
                        "attack sampler kept returning zero at t={t}"
                    )));
                }
            };
            for (v, di) in next.iter_mut().zip(&d) {
                *v += di;
            }
            attacks.insert(t, Attack::from_vector(d)?);
        }
        let norm = norm2(&next);
        if !(norm < explosion_threshold) {
            return Err(Error::Explosion { t: t + 1, norm });
        }
        states.push(next);
    }
    Ok(Trajectory { states, attacks })
}

/// Re-runs the dynamics with a recorded attack trace.
pub fn replay(system: &SystemSpec, attacks: &BTreeMap<usize, Attack>) -> Result<Trajectory> {
    let schedule: Vec<usize> = attacks.keys().copied().collect();
    let mut rng = RngStream::new(0);
    simulate(system, &schedule, |t, _, _| attacks[&t].d_bar.clone(), &mut rng)
}
