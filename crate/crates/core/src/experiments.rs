//! Recovery studies: prefix sweeps over seeded trajectories, the two
//! counterexample frequency studies, and sample-complexity trend checks.
//!
//! Every (grid point, seed) and every counterexample trial draws from its
//! own child stream of the master seed, so results do not depend on thread
//! scheduling. Seeds run in parallel and are reduced in seed order.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::attacks::{sample_schedule, AttackModel, AttackSampler};
use crate::certificates::{degeneracy_rank, optimality_certificate, CertificateOptions, CertificateProblem};
use crate::dynamics::{make_ground_truth, simulate, Basis, GroundTruthStyle, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{objective, solve, RegressionDataset, SolverConfig};
use crate::io::{format_float, write_raw, write_rows, write_series, Metadata};
use crate::linalg::Mat;
use crate::rng::RngStream;

/// Mean solution gap below which a prefix counts as recovered.
pub const RECOVERY_THRESHOLD: f64 = 1e-3;

/// `2 + √6`, the smallest spectral value for the unstable counterexample.
pub const THM6_MIN_RHO: f64 = 4.449_489_742_783_178;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    LipschitzFrequency,
    LipschitzDimension,
    LipschitzSpectral,
    BoundedFrequency,
    BoundedDimension,
    CounterexampleNonUnique,
    CounterexampleUnstable,
    ScalingTrend,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::LipschitzFrequency,
        Scenario::LipschitzDimension,
        Scenario::LipschitzSpectral,
        Scenario::BoundedFrequency,
        Scenario::BoundedDimension,
        Scenario::CounterexampleNonUnique,
        Scenario::CounterexampleUnstable,
        Scenario::ScalingTrend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::LipschitzFrequency => "lipschitz_frequency",
            Scenario::LipschitzDimension => "lipschitz_dimension",
            Scenario::LipschitzSpectral => "lipschitz_spectral",
            Scenario::BoundedFrequency => "bounded_frequency",
            Scenario::BoundedDimension => "bounded_dimension",
            Scenario::CounterexampleNonUnique => "counterexample_nonunique",
            Scenario::CounterexampleUnstable => "counterexample_unstable",
            Scenario::ScalingTrend => "scaling_trend",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown scenario `{s}`")))
    }

    fn is_bounded(self) -> bool {
        matches!(self, Scenario::BoundedFrequency | Scenario::BoundedDimension)
    }
}

/// Which parameter a trend study varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendAxis {
    P,
    N,
}

impl TrendAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            TrendAxis::P => "p",
            TrendAxis::N => "n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(TrendAxis::P),
            "n" => Ok(TrendAxis::N),
            _ => Err(Error::Parse(format!("unknown trend axis `{s}` (expected p or n)"))),
        }
    }
}

/// One parameter setting. `rho` is the spectral scale for the Lipschitz and
/// unstable systems and the coefficient bound for the bounded systems; `m`
/// is the feature count (only free for the non-uniqueness study).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub rho: f64,
}

impl GridPoint {
    /// Grid point with `m` implied by the scenario's basis.
    pub fn for_scenario(scenario: Scenario, p: f64, n: usize, rho: f64) -> Self {
        let m = if scenario.is_bounded() { 5 * n } else { n };
        Self { p, n, m, rho }
    }

    /// Directory-safe label, e.g. `p0.7_n3_m3_rho1`.
    pub fn label(&self) -> String {
        format!(
            "p{}_n{}_m{}_rho{}",
            format_float(self.p),
            self.n,
            self.m,
            format_float(self.rho)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub grid: Vec<GridPoint>,
    pub horizon: usize,
    pub seeds: usize,
    pub prefix_stride: usize,
    pub master_seed: u64,
    /// Trial count for the counterexample studies.
    pub trials: usize,
    /// Axis for [`Scenario::ScalingTrend`].
    pub axis: TrendAxis,
    pub solver: SolverConfig,
    pub cert: CertificateOptions,
}

impl ExperimentSpec {
    /// The published protocol for each scenario.
    pub fn defaults(scenario: Scenario, master_seed: u64) -> Self {
        use Scenario::*;
        let pt = |p, n, rho| GridPoint::for_scenario(scenario, p, n, rho);
        let (grid, horizon) = match scenario {
            LipschitzFrequency => (vec![pt(0.7, 3, 1.0), pt(0.8, 3, 1.0), pt(0.85, 3, 1.0)], 500),
            LipschitzDimension => (vec![pt(0.75, 3, 1.0), pt(0.75, 5, 1.0), pt(0.75, 7, 1.0)], 500),
            LipschitzSpectral => (vec![pt(0.75, 3, 0.5), pt(0.75, 3, 0.95), pt(0.75, 3, 1.5)], 100),
            BoundedFrequency => (
                vec![pt(0.7, 1, 100.0), pt(0.8, 1, 100.0), pt(0.85, 1, 100.0)],
                900,
            ),
            BoundedDimension => (vec![pt(0.7, 1, 100.0), pt(0.7, 2, 100.0), pt(0.7, 4, 100.0)], 500),
            CounterexampleNonUnique => (
                vec![GridPoint {
                    p: 0.5,
                    n: 1,
                    m: 30,
                    rho: 1.0,
                }],
                50,
            ),
            CounterexampleUnstable => (vec![pt(0.5, 1, 5.0)], 3),
            ScalingTrend => (vec![pt(0.7, 3, 1.0), pt(0.8, 3, 1.0), pt(0.85, 3, 1.0)], 500),
        };
        let trials = match scenario {
            CounterexampleNonUnique => 500,
            CounterexampleUnstable => 2000,
            _ => 0,
        };
        Self {
            scenario,
            grid,
            horizon,
            seeds: 10,
            prefix_stride: 10,
            master_seed,
            trials,
            axis: TrendAxis::P,
            solver: SolverConfig::default(),
            cert: CertificateOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.seeds == 0 {
            return bad("seeds must be ≥ 1".into());
        }
        if self.prefix_stride == 0 {
            return bad("prefix stride must be ≥ 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be ≥ 1".into());
        }
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        for g in &self.grid {
            if !(0.0..=1.0).contains(&g.p) {
                return bad(format!("p={} outside [0, 1]", g.p));
            }
            if g.n == 0 || g.m == 0 {
                return bad("n and m must be ≥ 1".into());
            }
            if !(g.rho >= 0.0 && g.rho.is_finite()) {
                return bad(format!("rho={} must be finite and ≥ 0", g.rho));
            }
        }
        if matches!(self.scenario, Scenario::CounterexampleNonUnique | Scenario::CounterexampleUnstable)
            && self.trials < 100
        {
            return bad(format!("counterexample studies need ≥ 100 trials, got {}", self.trials));
        }
        self.solver.validate()
    }

    /// Evaluated prefix lengths: the stride multiples up to `T`, plus `T`.
    pub fn prefixes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (1..)
            .map(|k| k * self.prefix_stride)
            .take_while(|&t| t <= self.horizon)
            .collect();
        if v.last() != Some(&self.horizon) {
            v.push(self.horizon);
        }
        v
    }
}

/// The system and attack model of one sweep seed.
pub fn build_system(
    scenario: Scenario,
    point: &GridPoint,
    horizon: usize,
    rng: &RngStream,
) -> Result<(SystemSpec, AttackModel)> {
    use Scenario::*;
    let n = point.n;
    let (basis, style, model) = match scenario {
        LipschitzFrequency | LipschitzDimension | ScalingTrend => (
            Basis::random_multiquadric(n, &mut rng.child("basis"))?,
            GroundTruthStyle::SpectralUniform(point.rho),
            AttackModel::LipschitzSubGaussian,
        ),
        LipschitzSpectral => (
            Basis::random_multiquadric(n, &mut rng.child("basis"))?,
            GroundTruthStyle::SpectralFixed(point.rho),
            AttackModel::LipschitzSubGaussian,
        ),
        BoundedFrequency | BoundedDimension => (
            Basis::sine_bounded(n)?,
            GroundTruthStyle::BoundedBlock {
                lo: -point.rho,
                hi: point.rho,
            },
            AttackModel::BoundedUniformComponentwise,
        ),
        CounterexampleNonUnique => (
            Basis::saturated_sine(n, point.m)?,
            GroundTruthStyle::FirstFeatureSelector,
            AttackModel::AnnulusUniform,
        ),
        CounterexampleUnstable => (
            Basis::linear(n)?,
            GroundTruthStyle::ScaledIdentity(point.rho),
            AttackModel::UnitSphere,
        ),
    };
    if basis.m() != point.m {
        return Err(Error::InvalidArgument(format!(
            "grid point has m={} but the {} basis has m={}",
            point.m,
            scenario.as_str(),
            basis.m()
        )));
    }
    let a_bar = make_ground_truth(style, n, basis.m(), &mut rng.child("ground-truth"))?;
    Ok((SystemSpec::new(a_bar, basis, horizon)?, model))
}

/// Draws the schedule and attacks for one seeded system.
pub fn simulate_seed(system: &SystemSpec, model: AttackModel, p: f64, rng: &RngStream) -> Result<Trajectory> {
    let schedule = sample_schedule(system.horizon, p, &mut rng.child("schedule"))?;
    let mut attack_rng = rng.child("attacks");
    simulate(
        system,
        &schedule.times,
        |t, x, r: &mut RngStream| model.sample(t, x, r),
        &mut attack_rng,
    )
}

/// Metrics of one seed at one prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedRow {
    pub seed: usize,
    pub t_prime: usize,
    pub loss_gap: f64,
    pub solution_gap: f64,
    pub cert_value: f64,
    /// `Σ_{t<T′} ‖f(x_t)‖₂`, the natural scale of the certificate.
    pub scale: f64,
    /// All features vanish, so every `A` (including Ā) is a minimizer.
    pub degenerate: bool,
}

/// Seed means at one prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t_prime: usize,
    pub mean_loss_gap: f64,
    pub mean_solution_gap: f64,
    pub mean_cert_value: f64,
    pub mean_scale: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplodedSeed {
    pub seed: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub scenario: Scenario,
    pub point: GridPoint,
    pub horizon: usize,
    pub seeds: usize,
    pub rows: Vec<SeriesRow>,
    pub raw: Vec<SeedRow>,
    pub exploded: Vec<ExplodedSeed>,
}

impl MetricSeries {
    pub fn completed(&self) -> usize {
        self.seeds - self.exploded.len()
    }

    /// Smallest evaluated `T′` from which the mean solution gap stays at or
    /// below `threshold`; `T + 1` if it never does.
    pub fn recovery_time(&self, threshold: f64) -> usize {
        let mut rec = self.horizon + 1;
        for row in self.rows.iter().rev() {
            if row.mean_solution_gap <= threshold {
                rec = row.t_prime;
            } else {
                break;
            }
        }
        rec
    }

    pub fn final_row(&self) -> Option<&SeriesRow> {
        self.rows.last()
    }

    /// Raw rows of one seed in prefix order.
    pub fn seed_rows(&self, seed: usize) -> impl Iterator<Item = &SeedRow> {
        self.raw.iter().filter(move |r| r.seed == seed)
    }
}

/// Evaluates estimator and certificate on every prefix of one trajectory.
pub fn evaluate_prefixes(
    system: &SystemSpec,
    traj: &Trajectory,
    prefixes: &[usize],
    solver: &SolverConfig,
    cert: &CertificateOptions,
    seed: usize,
    rng: &RngStream,
) -> Result<Vec<SeedRow>> {
    let mut rows = Vec::with_capacity(prefixes.len());
    for &tp in prefixes {
        let data = RegressionDataset::from_trajectory(traj, &system.basis, tp)?;
        let prob = CertificateProblem::from_trajectory(traj, &system.basis, tp)?;
        let scale = data.feature_mass();
        let c = optimality_certificate(&prob, cert, &mut rng.child_indexed("certificate", tp as u64));
        let row = if scale == 0.0 {
            SeedRow {
                seed,
                t_prime: tp,
                loss_gap: 0.0,
                solution_gap: 0.0,
                cert_value: c.value,
                scale,
                degenerate: true,
            }
        } else {
            let est = solve(&data, solver)?;
            SeedRow {
                seed,
                t_prime: tp,
                loss_gap: objective(&system.a_bar, &data)? - est.objective,
                solution_gap: system.a_bar.sub(&est.a_hat).frobenius_norm(),
                cert_value: c.value,
                scale,
                degenerate: false,
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn point_stream(master_seed: u64, scenario: Scenario, point: &GridPoint) -> RngStream {
    RngStream::new(master_seed).child(&format!("{}/{}", scenario.as_str(), point.label()))
}

/// Simulates `spec.seeds` trajectories at `point` and averages the metrics
/// over the seeds that did not explode.
pub fn run_prefix_sweep(spec: &ExperimentSpec, point: &GridPoint) -> Result<MetricSeries> {
    spec.validate()?;
    let prefixes = spec.prefixes();
    let base = point_stream(spec.master_seed, spec.scenario, point);
    let outcomes: Vec<Result<std::result::Result<Vec<SeedRow>, ExplodedSeed>>> = (0..spec.seeds)
        .into_par_iter()
        .map(|seed| {
            let rng = base.child_indexed("seed", seed as u64);
            let (system, model) = build_system(spec.scenario, point, spec.horizon, &rng)?;
            match simulate_seed(&system, model, point.p, &rng) {
                Ok(traj) => Ok(Ok(evaluate_prefixes(
                    &system,
                    &traj,
                    &prefixes,
                    &spec.solver,
                    &spec.cert,
                    seed,
                    &rng.child("evaluation"),
                )?)),
                Err(Error::Explosion { t, .. }) => Ok(Err(ExplodedSeed { seed, t })),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut raw = Vec::new();
    let mut exploded = Vec::new();
    let mut per_seed = Vec::new();
    for o in outcomes {
        match o? {
            Ok(rows) => {
                raw.extend_from_slice(&rows);
                per_seed.push(rows);
            }
            Err(e) => exploded.push(e),
        }
    }
    let rows = prefixes
        .iter()
        .enumerate()
        .map(|(k, &tp)| {
            let c = per_seed.len();
            let mean = |f: fn(&SeedRow) -> f64| {
                if c == 0 {
                    f64::NAN
                } else {
                    per_seed.iter().map(|r| f(&r[k])).sum::<f64>() / c as f64
                }
            };
            SeriesRow {
                t_prime: tp,
                mean_loss_gap: mean(|r| r.loss_gap),
                mean_solution_gap: mean(|r| r.solution_gap),
                mean_cert_value: mean(|r| r.cert_value),
                mean_scale: mean(|r| r.scale),
                completed: c,
            }
        })
        .collect();
    Ok(MetricSeries {
        scenario: spec.scenario,
        point: *point,
        horizon: spec.horizon,
        seeds: spec.seeds,
        rows,
        raw,
        exploded,
    })
}

/// Observed frequency of a counterexample event, with the analytic bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyResult {
    pub trials: usize,
    /// Trials that finished without tripping the explosion guard.
    pub completed: usize,
    pub hits: usize,
    pub frequency: f64,
    /// Analytic lower bound on the event probability, when it applies.
    pub bound: Option<f64>,
    /// Binomial standard deviation at the bound.
    pub sigma: f64,
}

impl FrequencyResult {
    fn new(trials: usize, completed: usize, hits: usize, bound: Option<f64>) -> Self {
        let frequency = if completed == 0 {
            f64::NAN
        } else {
            hits as f64 / completed as f64
        };
        let sigma = bound.map_or(0.0, |b| (b * (1.0 - b) / completed.max(1) as f64).sqrt());
        Self {
            trials,
            completed,
            hits,
            frequency,
            bound,
            sigma,
        }
    }

    /// `frequency ≥ bound − k σ` (vacuously true without a bound).
    pub fn meets_bound(&self, k: f64) -> bool {
        self.bound.is_none_or(|b| self.frequency >= b - k * self.sigma)
    }
}

/// Saturated-sine system, first-feature selector, annulus attacks: counts
/// trials whose clean features fail to span ℝᵐ (so the minimizer is not
/// unique).
pub fn run_counterexample_thm4(m: usize, p: f64, horizon: usize, trials: usize, rng: &RngStream) -> Result<FrequencyResult> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need ≥ 100 trials, got {trials}")));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("need m ≥ 2".into()));
    }
    let point = GridPoint { p, n: 1, m, rho: 1.0 };
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trng = rng.child_indexed("trial", i as u64);
            let (system, model) = build_system(Scenario::CounterexampleNonUnique, &point, horizon, &trng)?;
            let traj = simulate_seed(&system, model, p, &trng)?;
            let prob = CertificateProblem::from_trajectory(&traj, &system.basis, horizon)?;
            Ok(degeneracy_rank(&prob) < m)
        })
        .collect();
    let hits = outcomes.into_iter().collect::<Result<Vec<_>>>()?.into_iter().filter(|&b| b).count();
    let applies = 0.0 < p && p < 1.0 && (horizon as f64) < m as f64 / (2.0 * p * (1.0 - p));
    let bound = applies.then(|| 1.0 - 2.0 * (-(m as f64) / 3.0).exp());
    Ok(FrequencyResult::new(trials, trials, hits, bound))
}

/// `ρIₙ` with unit-sphere attacks: counts trials where Ā is provably not a
/// minimizer (certificate below `−1e-9·Σ‖f‖`).
pub fn run_counterexample_thm6(
    rho: f64,
    n: usize,
    p: f64,
    horizon: usize,
    trials: usize,
    cert: &CertificateOptions,
    rng: &RngStream,
) -> Result<FrequencyResult> {
    if !(rho >= THM6_MIN_RHO) {
        return Err(Error::InvalidArgument(format!("rho={rho} < 2+√6")));
    }
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need ≥ 100 trials, got {trials}")));
    }
    let point = GridPoint { p, n, m: n, rho };
    let outcomes: Vec<Result<Option<bool>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trng = rng.child_indexed("trial", i as u64);
            let (system, model) = build_system(Scenario::CounterexampleUnstable, &point, horizon, &trng)?;
            let traj = match simulate_seed(&system, model, p, &trng) {
                Ok(t) => t,
                Err(Error::Explosion { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let prob = CertificateProblem::from_trajectory(&traj, &system.basis, horizon)?;
            let c = optimality_certificate(&prob, cert, &mut trng.child("certificate"));
            Ok(Some(c.value < -1e-9 * prob.feature_mass()))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let completed = outcomes.iter().filter(|o| o.is_some()).count();
    let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
    let bound = p * (1.0 - (1.0 - p).powi(horizon as i32 - 1));
    Ok(FrequencyResult::new(trials, completed, hits, Some(bound)))
}

/// Spearman rank correlation (average ranks for ties). `None` when either
/// side is constant or has fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendResult {
    pub axis: TrendAxis,
    pub values: Vec<f64>,
    pub recovery_t: Vec<usize>,
    /// 0 when undefined.
    pub spearman: f64,
    pub defined: bool,
    pub series: Vec<MetricSeries>,
}

/// Recovery time along one axis of the Lipschitz setup, and its rank
/// correlation with the parameter.
pub fn run_scaling_trend(axis: TrendAxis, grid: &[f64], base: &ExperimentSpec) -> Result<TrendResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty trend grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("trend grid must be strictly ascending".into()));
    }
    let template = base.grid.first().copied().unwrap_or(GridPoint::for_scenario(
        Scenario::ScalingTrend,
        0.7,
        3,
        1.0,
    ));
    let points: Vec<GridPoint> = grid
        .iter()
        .map(|&v| match axis {
            TrendAxis::P => GridPoint::for_scenario(Scenario::ScalingTrend, v, template.n, template.rho),
            TrendAxis::N => {
                GridPoint::for_scenario(Scenario::ScalingTrend, template.p, v as usize, template.rho)
            }
        })
        .collect();
    if axis == TrendAxis::N && grid.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::InvalidArgument("dimension grid must hold positive integers".into()));
    }
    let spec = ExperimentSpec {
        scenario: Scenario::ScalingTrend,
        grid: points.clone(),
        axis,
        ..base.clone()
    };
    let series = points
        .par_iter()
        .map(|pt| run_prefix_sweep(&spec, pt))
        .collect::<Result<Vec<_>>>()?;
    let recovery_t: Vec<usize> = series.iter().map(|s| s.recovery_time(RECOVERY_THRESHOLD)).collect();
    let rt: Vec<f64> = recovery_t.iter().map(|&t| t as f64).collect();
    let rho = spearman(grid, &rt);
    Ok(TrendResult {
        axis,
        values: grid.to_vec(),
        recovery_t,
        spearman: rho.unwrap_or(0.0),
        defined: rho.is_some(),
        series,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioOutput {
    Sweep(Vec<MetricSeries>),
    Trend(TrendResult),
    Frequency(FrequencyResult),
}

/// Runs a scenario with the spec's grid.
pub fn run_scenario(spec: &ExperimentSpec) -> Result<ScenarioOutput> {
    spec.validate()?;
    let rng = RngStream::new(spec.master_seed).child(spec.scenario.as_str());
    match spec.scenario {
        Scenario::CounterexampleNonUnique => {
            let g = spec.grid[0];
            Ok(ScenarioOutput::Frequency(run_counterexample_thm4(
                g.m,
                g.p,
                spec.horizon,
                spec.trials,
                &rng,
            )?))
        }
        Scenario::CounterexampleUnstable => {
            let g = spec.grid[0];
            Ok(ScenarioOutput::Frequency(run_counterexample_thm6(
                g.rho,
                g.n,
                g.p,
                spec.horizon,
                spec.trials,
                &spec.cert,
                &rng,
            )?))
        }
        Scenario::ScalingTrend => {
            let values: Vec<f64> = spec
                .grid
                .iter()
                .map(|g| match spec.axis {
                    TrendAxis::P => g.p,
                    TrendAxis::N => g.n as f64,
                })
                .collect();
            Ok(ScenarioOutput::Trend(run_scaling_trend(spec.axis, &values, spec)?))
        }
        _ => Ok(ScenarioOutput::Sweep(
            spec.grid
                .par_iter()
                .map(|pt| run_prefix_sweep(spec, pt))
                .collect::<Result<Vec<_>>>()?,
        )),
    }
}

const SWEEP_SUMMARY_HEADER: [&str; 15] = [
    "point",
    "p",
    "n",
    "m",
    "rho",
    "T",
    "seeds",
    "completed",
    "exploded",
    "first_explosion_t",
    "recovery_T",
    "final_Tprime",
    "final_loss_gap",
    "final_solution_gap",
    "final_cert_value",
];

fn sweep_summary_row(s: &MetricSeries) -> Vec<String> {
    let fin = s.final_row();
    let f = |v: Option<f64>| format_float(v.unwrap_or(f64::NAN));
    vec![
        s.point.label(),
        format_float(s.point.p),
        s.point.n.to_string(),
        s.point.m.to_string(),
        format_float(s.point.rho),
        s.horizon.to_string(),
        s.seeds.to_string(),
        s.completed().to_string(),
        s.exploded.len().to_string(),
        s.exploded
            .iter()
            .map(|e| e.t)
            .min()
            .map_or_else(String::new, |t| t.to_string()),
        s.recovery_time(RECOVERY_THRESHOLD).to_string(),
        fin.map_or_else(String::new, |r| r.t_prime.to_string()),
        f(fin.map(|r| r.mean_loss_gap)),
        f(fin.map(|r| r.mean_solution_gap)),
        f(fin.map(|r| r.mean_cert_value)),
    ]
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_sweep_series(dir: &Path, series: &[MetricSeries], meta: &Metadata) -> Result<()> {
    for s in series {
        let pdir = dir.join(s.point.label());
        fs::create_dir_all(&pdir).map_err(|e| Error::Io(format!("{}: {e}", pdir.display())))?;
        let m = meta
            .clone()
            .with("point", s.point.label())
            .with("completed", s.completed())
            .with("exploded", s.exploded.len());
        write_file(&pdir.join("series.csv"), |b| write_series(b, s, &m))?;
        write_file(&pdir.join("raw.csv"), |b| write_raw(b, &s.raw, &m))?;
    }
    Ok(())
}

/// Writes `<out>/<scenario>/<point>/series.csv`, `raw.csv` and
/// `<out>/<scenario>/summary.csv`.
pub fn write_scenario_output(out_dir: &Path, spec: &ExperimentSpec, output: &ScenarioOutput) -> Result<()> {
    let dir = out_dir.join(spec.scenario.as_str());
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let meta = Metadata::new(spec.master_seed).with("scenario", spec.scenario.as_str());
    match output {
        ScenarioOutput::Sweep(series) => {
            write_sweep_series(&dir, series, &meta)?;
            let rows: Vec<Vec<String>> = series.iter().map(sweep_summary_row).collect();
            write_file(&dir.join("summary.csv"), |b| {
                write_rows(b, &SWEEP_SUMMARY_HEADER, &rows, &meta)
            })
        }
        ScenarioOutput::Trend(trend) => {
            write_sweep_series(&dir, &trend.series, &meta)?;
            let mut header: Vec<&str> = SWEEP_SUMMARY_HEADER.to_vec();
            header.extend(["axis", "spearman", "spearman_defined"]);
            let rows: Vec<Vec<String>> = trend
                .series
                .iter()
                .map(|s| {
                    let mut r = sweep_summary_row(s);
                    r.push(trend.axis.as_str().into());
                    r.push(format_float(trend.spearman));
                    r.push(if trend.defined { "1" } else { "0" }.into());
                    r
                })
                .collect();
            write_file(&dir.join("summary.csv"), |b| write_rows(b, &header, &rows, &meta))
        }
        ScenarioOutput::Frequency(f) => {
            let g = spec.grid[0];
            let header = [
                "p", "n", "m", "rho", "T", "trials", "completed", "hits", "frequency", "bound", "sigma",
            ];
            let row = vec![
                format_float(g.p),
                g.n.to_string(),
                g.m.to_string(),
                format_float(g.rho),
                spec.horizon.to_string(),
                f.trials.to_string(),
                f.completed.to_string(),
                f.hits.to_string(),
                format_float(f.frequency),
                f.bound.map_or_else(String::new, format_float),
                format_float(f.sigma),
            ];
            write_file(&dir.join("summary.csv"), |b| write_rows(b, &header, &[row], &meta))
        }
    }
}

/// Ground truth the sweep used for one seed (for inspection and tests).
pub fn seed_system(spec: &ExperimentSpec, point: &GridPoint, seed: usize) -> Result<(SystemSpec, AttackModel, Mat)> {
    let rng = point_stream(spec.master_seed, spec.scenario, point).child_indexed("seed", seed as u64);
    let (system, model) = build_system(spec.scenario, point, spec.horizon, &rng)?;
    let a = system.a_bar.clone();
    Ok((system, model, a))
}
