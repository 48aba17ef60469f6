//! The sum-of-residual-norms estimator `min_A Σₜ ‖x_{t+1} − A f(x_t)‖₂`.
//!
//! The solver minimizes the smoothed surrogate `Σₜ √(‖rₜ‖² + ε²)` by
//! iteratively reweighted least squares while ε shrinks geometrically. Each
//! weighted step also carries a tiny proximal term `λ‖A − A_k‖²`, so the
//! majorize–minimize descent stays monotone even on rank-deficient data.
//! The IRLS limit is then sharpened in two ways and the best exact objective
//! wins:
//!
//! * a *support refit*: residuals that are numerically zero are driven to
//!   exactly zero by a least-squares correction on that support, which is
//!   where the minimizer of a sum of norms sits under exact recovery;
//! * a short diminishing-step subgradient polish on the exact objective.

use crate::dynamics::{Basis, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Mat};

/// Pairs `(f(x_t), x_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    features: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} features vs {} targets",
                features.len(),
                targets.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one pair".into()));
        }
        let m = features[0].len();
        let n = targets[0].len();
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch("zero-dimensional features or targets".into()));
        }
        for (t, (f, y)) in features.iter().zip(&targets).enumerate() {
            if f.len() != m || y.len() != n {
                return Err(Error::DimensionMismatch(format!("pair {t} has inconsistent dimensions")));
            }
            if f.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("pair {t} contains a non-finite entry")));
            }
        }
        Ok(Self { features, targets })
    }

    /// Scalar convenience constructor (`n = m = 1`).
    pub fn scalar(features: &[f64], targets: &[f64]) -> Result<Self> {
        Self::new(
            features.iter().map(|&v| vec![v]).collect(),
            targets.iter().map(|&v| vec![v]).collect(),
        )
    }

    /// Pairs for `t = 0 … prefix−1` of a trajectory.
    pub fn from_trajectory(traj: &Trajectory, basis: &Basis, prefix: usize) -> Result<Self> {
        if prefix == 0 || prefix > traj.horizon() {
            return Err(Error::InvalidArgument(format!(
                "prefix {prefix} outside 1..={}",
                traj.horizon()
            )));
        }
        let features = traj.states[..prefix]
            .iter()
            .map(|x| basis.eval(x))
            .collect::<Result<Vec<_>>>()?;
        let targets = traj.states[1..=prefix].to_vec();
        Self::new(features, targets)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n(&self) -> usize {
        self.targets[0].len()
    }

    pub fn m(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    /// Same pairs, targets multiplied by `c`.
    pub fn scale_targets(&self, c: f64) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.targets.iter().map(|y| y.iter().map(|v| c * v).collect()).collect(),
        )
    }

    /// Pairs reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(
            perm.iter().map(|&i| self.features[i].clone()).collect(),
            perm.iter().map(|&i| self.targets[i].clone()).collect(),
        )
    }

    /// `Σₜ ‖f(x_t)‖₂`, the natural scale of gradient-type quantities.
    pub fn feature_mass(&self) -> f64 {
        self.features.iter().map(|f| norm2(f)).sum()
    }

    fn residual(&self, a: &Mat, t: usize) -> Vec<f64> {
        let mut r = self.targets[t].clone();
        let af = a.mul_vec(&self.features[t]);
        for (ri, v) in r.iter_mut().zip(af) {
            *ri -= v;
        }
        r
    }

    fn check_shape(&self, a: &Mat) -> Result<()> {
        if a.shape() != (self.n(), self.m()) {
            return Err(Error::DimensionMismatch(format!(
                "A is {:?}, data needs ({}, {})",
                a.shape(),
                self.n(),
                self.m()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub tol: f64,
    pub eps_init: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    pub polish_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 500,
            tol: 1e-9,
            eps_init: 1.0,
            eps_min: 1e-10,
            eps_decay: 0.5,
            polish_iters: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_outer > 0
            && self.tol > 0.0
            && self.eps_init > 0.0
            && self.eps_min > 0.0
            && self.eps_min <= self.eps_init;
        if !positive || !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

/// One IRLS update at fixed smoothing: surrogate value before and after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsStep {
    pub eps: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub a_hat: Mat,
    /// Exact non-smooth objective at `a_hat`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final smoothing level relative to the data scale.
    pub smoothing_final: f64,
    /// The feature matrix does not span ℝᵐ, so the minimizer cannot be
    /// unique along some direction.
    pub rank_deficient: bool,
    pub history: Vec<IrlsStep>,
}

/// `Σₜ ‖x_{t+1} − A f(x_t)‖₂`
pub fn objective(a: &Mat, data: &RegressionDataset) -> Result<f64> {
    data.check_shape(a)?;
    Ok(objective_unchecked(a, data))
}

fn objective_unchecked(a: &Mat, data: &RegressionDataset) -> f64 {
    (0..data.len()).map(|t| norm2(&data.residual(a, t))).sum()
}

fn smoothed_objective(a: &Mat, data: &RegressionDataset, eps: f64) -> f64 {
    (0..data.len())
        .map(|t| {
            let r = norm2(&data.residual(a, t));
            r.hypot(eps)
        })
        .sum()
}

/// Line search along the IRLS step `next − a` on the smoothed objective.
///
/// The plain reweighted step is a majorize–minimize update, so it never
/// increases the objective, but near a kink shared by many samples it can
/// crawl along a nearly flat valley. Step multiples are doubled while they
/// keep improving and the bracket is then refined by golden section; the
/// unit step stays a candidate, so descent is preserved.
fn extrapolate(data: &RegressionDataset, a: &Mat, next: Mat, eps: f64) -> (Mat, f64) {
    let dir = next.sub(a);
    let at = |s: f64| {
        let mut x = a.clone();
        x.add_scaled(s, &dir);
        x
    };
    let phi = |s: f64| smoothed_objective(&at(s), data, eps);
    let unit = phi(1.0);
    let (mut s, mut best) = (1.0, unit);
    for _ in 0..60 {
        let v = phi(2.0 * s);
        if v < best {
            s *= 2.0;
            best = v;
        } else {
            break;
        }
    }
    if s == 1.0 {
        return (next, unit);
    }
    const G: f64 = 0.618_033_988_749_895;
    let (mut lo, mut hi) = (s / 2.0, 2.0 * s);
    let mut x1 = hi - G * (hi - lo);
    let mut x2 = lo + G * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - G * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + G * (hi - lo);
            f2 = phi(x2);
        }
    }
    for (x, f) in [(x1, f1), (x2, f2)] {
        if f < best {
            best = f;
            s = x;
        }
    }
    let out = at(s);
    if out.is_finite() {
        (out, best)
    } else {
        (next, unit)
    }
}

fn data_scale(data: &RegressionDataset) -> f64 {
    let mass: f64 = data.targets.iter().map(|y| norm2(y)).sum::<f64>() / data.len() as f64;
    if mass > 0.0 {
        mass
    } else {
        1.0
    }
}

/// Proximal weight: negligible against the Gram matrix but keeps it SPD.
fn prox_weight(gram: &Mat) -> f64 {
    let m = gram.rows() as f64;
    let avg = gram.trace() / m;
    if avg > 0.0 && avg.is_finite() {
        1e-12 * avg
    } else {
        1e-12
    }
}

/// Solves `min_A Σ wₜ ‖yₜ − A fₜ‖² + λ ‖A − anchor‖²`.
fn weighted_step(
    data: &RegressionDataset,
    weights: &[f64],
    anchor: &Mat,
    targets_override: Option<&[Vec<f64>]>,
) -> Mat {
    let (n, m) = (data.n(), data.m());
    let mut gram = Mat::zeros(m, m);
    let mut cross = Mat::zeros(n, m);
    let targets = targets_override.unwrap_or(&data.targets);
    for ((f, y), &w) in data.features.iter().zip(targets).zip(weights) {
        if w == 0.0 {
            continue;
        }
        gram.add_outer(w, f, f);
        cross.add_outer(w, y, f);
    }
    let mut lambda = prox_weight(&gram);
    loop {
        let mut lhs = gram.clone();
        for i in 0..m {
            lhs[(i, i)] += lambda;
        }
        let mut rhs = cross.clone();
        rhs.add_scaled(lambda, anchor);
        if let Some(x) = Mat::solve_right_spd(&rhs, &lhs) {
            return x;
        }
        lambda *= 1e3;
    }
}

/// `A = (Σ x_{t+1} f(x_t)ᵀ)(Σ f(x_t) f(x_t)ᵀ + ridge·I)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresResult {
    pub a: Mat,
    /// The Gram matrix was singular and a `1e-12` ridge was added.
    pub ridged: bool,
}

pub fn least_squares_baseline(data: &RegressionDataset) -> LeastSquaresResult {
    let (n, m) = (data.n(), data.m());
    let mut gram = Mat::zeros(m, m);
    let mut cross = Mat::zeros(n, m);
    for (f, y) in data.features.iter().zip(&data.targets) {
        gram.add_outer(1.0, f, f);
        cross.add_outer(1.0, y, f);
    }
    let full_rank = gram.rank(1e-12) == m;
    if full_rank {
        if let Some(a) = Mat::solve_right_spd(&cross, &gram) {
            return LeastSquaresResult { a, ridged: false };
        }
    }
    let mut ridge = 1e-12;
    loop {
        let mut lhs = gram.clone();
        for i in 0..m {
            lhs[(i, i)] += ridge;
        }
        if let Some(a) = Mat::solve_right_spd(&cross, &lhs) {
            return LeastSquaresResult { a, ridged: true };
        }
        ridge *= 1e3;
    }
}

fn feature_rank(data: &RegressionDataset) -> usize {
    let m = data.m();
    let k = data.len();
    let mut fm = Mat::zeros(m, k);
    for (t, f) in data.features.iter().enumerate() {
        for i in 0..m {
            fm[(i, t)] = f[i];
        }
    }
    fm.rank(1e-10)
}

/// Least-squares correction that zeroes the residuals on the numerically
/// zero support. Rows are normalized by `‖fₜ‖` so tiny and large samples
/// weigh alike.
fn support_refit(data: &RegressionDataset, a: &Mat, rel_tol: f64) -> Option<Mat> {
    let a_norm = a.frobenius_norm();
    let mut weights = vec![0.0; data.len()];
    let mut zero_residual_targets = Vec::with_capacity(data.len());
    let mut support = 0;
    for t in 0..data.len() {
        let f = &data.features[t];
        let fnorm = norm2(f);
        let r = data.residual(a, t);
        let rn = norm2(&r);
        let local = norm2(&data.targets[t]) + a_norm * fnorm;
        if fnorm > 0.0 && rn <= rel_tol * local {
            weights[t] = 1.0 / (fnorm * fnorm);
            support += 1;
        }
        zero_residual_targets.push(r);
    }
    if support == 0 {
        return None;
    }
    // Solve for the correction Δ with Δ fₜ ≈ rₜ on the support.
    let zero = Mat::zeros(data.n(), data.m());
    let delta = weighted_step(data, &weights, &zero, Some(&zero_residual_targets));
    let mut out = a.clone();
    out.add_scaled(1.0, &delta);
    out.is_finite().then_some(out)
}

/// Exact-objective subgradient with zero residuals contributing nothing.
fn plain_subgradient(data: &RegressionDataset, a: &Mat) -> Mat {
    let mut g = Mat::zeros(data.n(), data.m());
    for t in 0..data.len() {
        let r = data.residual(a, t);
        let rn = norm2(&r);
        if rn > 0.0 {
            g.add_outer(-1.0 / rn, &r, &data.features[t]);
        }
    }
    g
}

pub fn solve(data: &RegressionDataset, config: &SolverConfig) -> Result<EstimateResult> {
    config.validate()?;
    let scale = data_scale(data);
    let mut a = least_squares_baseline(data).a;
    let mut eps = config.eps_init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut weights = vec![0.0; data.len()];

    while iterations < config.max_outer {
        let eps_abs = eps * scale;
        for (t, w) in weights.iter_mut().enumerate() {
            *w = 1.0 / norm2(&data.residual(&a, t)).hypot(eps_abs);
        }
        let before = smoothed_objective(&a, data, eps_abs);
        let next = weighted_step(data, &weights, &a, None);
        if !next.is_finite() {
            return Err(Error::NonFinite("IRLS iterate overflowed".into()));
        }
        let (next, after) = extrapolate(data, &a, next, eps_abs);
        history.push(IrlsStep { eps, before, after });
        let step = next.sub(&a).frobenius_norm();
        a = next;
        iterations += 1;

        let a_scale = 1.0 + a.frobenius_norm();
        if eps <= config.eps_min {
            if step <= config.tol * a_scale {
                converged = true;
                break;
            }
        } else if step <= config.tol.max(eps) * a_scale {
            eps = (eps * config.eps_decay).max(config.eps_min);
        }
    }

    let mut best_obj = objective_unchecked(&a, data);
    let mut best = a;
    let try_candidate = |cand: Mat, best: &mut Mat, best_obj: &mut f64| {
        let obj = objective_unchecked(&cand, data);
        if obj <= *best_obj {
            *best_obj = obj;
            *best = cand;
        }
    };

    for rel_tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        if let Some(c) = support_refit(data, &best, rel_tol) {
            try_candidate(c, &mut best, &mut best_obj);
        }
    }

    if config.polish_iters > 0 {
        let base_step = 1e-6 * (1.0 + best.frobenius_norm());
        let mut cur = best.clone();
        for k in 0..config.polish_iters {
            let g = plain_subgradient(data, &cur);
            let gn = g.frobenius_norm();
            if gn == 0.0 {
                break;
            }
            cur.add_scaled(-base_step / ((k + 1) as f64).sqrt() / gn, &g);
            try_candidate(cur.clone(), &mut best, &mut best_obj);
        }
        for rel_tol in [1e-6, 1e-9] {
            if let Some(c) = support_refit(data, &best, rel_tol) {
                try_candidate(c, &mut best, &mut best_obj);
            }
        }
    }

    Ok(EstimateResult {
        objective: best_obj,
        a_hat: best,
        iterations,
        converged,
        smoothing_final: eps,
        rank_deficient: feature_rank(data) < data.m(),
        history,
    })
}

/// Exact scalar solution by breakpoint enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub a_star: f64,
    pub objective: f64,
    /// Another breakpoint attains the same objective, so the optimum is an
    /// interval.
    pub non_unique: bool,
}

/// The scalar objective `Σ |yₜ − a fₜ|` is piecewise linear with kinks at
/// `yₜ / fₜ`, so its minimum sits at one of them.
pub fn solve_1d_oracle(data: &RegressionDataset) -> Result<OracleResult> {
    if data.n() != 1 || data.m() != 1 {
        return Err(Error::DimensionMismatch("scalar oracle needs n = m = 1".into()));
    }
    let pairs: Vec<(f64, f64)> = data
        .features
        .iter()
        .zip(&data.targets)
        .map(|(f, y)| (f[0], y[0]))
        .collect();
    let eval = |a: f64| -> f64 { pairs.iter().map(|(f, y)| (y - a * f).abs()).sum() };
    let mut candidates: Vec<f64> = pairs
        .iter()
        .filter(|(f, _)| *f != 0.0)
        .map(|(f, y)| y / f)
        .collect();
    if candidates.is_empty() {
        return Err(Error::AllFeaturesZero);
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let values: Vec<f64> = candidates.iter().map(|&a| eval(a)).collect();
    let (best_idx, &best_val) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let tie_tol = 1e-12 * (1.0 + best_val);
    let ties = values.iter().filter(|&&v| v - best_val <= tie_tol).count();
    Ok(OracleResult {
        a_star: candidates[best_idx],
        objective: best_val,
        non_unique: ties > 1,
    })
}

/// Norm of the smallest element of the subdifferential of the objective at
/// `a`. Residuals below `zero_tol` (relative to the sample's own scale) count
/// as zero and contribute any vector of the unit ball times `fₜᵀ`.
pub fn min_norm_subgradient(data: &RegressionDataset, a: &Mat, zero_tol: f64) -> Result<f64> {
    data.check_shape(a)?;
    let a_norm = a.frobenius_norm();
    let mut base = Mat::zeros(data.n(), data.m());
    let mut free = Vec::new();
    for t in 0..data.len() {
        let f = &data.features[t];
        let fnorm = norm2(f);
        if fnorm == 0.0 {
            continue;
        }
        let r = data.residual(a, t);
        let rn = norm2(&r);
        let local = norm2(&data.targets[t]) + a_norm * fnorm;
        if rn <= zero_tol * local {
            free.push(f.as_slice());
        } else {
            base.add_outer(-1.0 / rn, &r, f);
        }
    }
    let (_, residual) = crate::certificates::min_norm_ball_combination(&base, &free, 5000, 0.0);
    Ok(residual.frobenius_norm())
}
