//! Recovery metrics and the optimality / uniqueness conditions for the
//! ground truth.
//!
//! Everything here works with the function
//!
//! ```text
//! h(Z) = Σ_{t ∈ Kᶜ} ‖Zᵀ f(x_t)‖₂ − ⟨Z, V⟩,   V = Σ_{t ∈ K} f(x_t) d̂_tᵀ,
//! ```
//!
//! which is convex and positively homogeneous in `Z ∈ ℝ^{m×n}`. Ā minimizes
//! the loss iff `h ≥ 0` everywhere, i.e. iff `min_{‖Z‖_F ≤ 1} h(Z) = 0`.
//!
//! The ball minimum is computed from both sides. By minimax duality it
//! equals `−min ‖V − Σ_{Kᶜ} f_t g_tᵀ‖_F` over `‖g_t‖₂ ≤ 1`, a smooth problem
//! that block-coordinate descent solves well; its value is a lower bound and
//! its residual direction is a near-optimal `Z`. Projected subgradient
//! descent on `h` itself, seeded with that `Z`, supplies the upper bound that
//! is reported.

use crate::dynamics::{Basis, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{objective, RegressionDataset};
use crate::linalg::{dot, norm2, Mat};
use crate::rng::RngStream;

/// Rank threshold relative to the largest singular value.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Data of the optimality condition: the partition into clean and attacked
/// times, their features and the attack directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateProblem {
    m: usize,
    n: usize,
    clean_features: Vec<Vec<f64>>,
    attack_features: Vec<Vec<f64>>,
    attack_directions: Vec<Vec<f64>>,
    /// `Σ_K f d̂ᵀ`, `m × n`.
    v: Mat,
}

impl CertificateProblem {
    pub fn new(
        m: usize,
        n: usize,
        clean_features: Vec<Vec<f64>>,
        attack_features: Vec<Vec<f64>>,
        attack_directions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch("m and n must be ≥ 1".into()));
        }
        if attack_features.len() != attack_directions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} attack features vs {} directions",
                attack_features.len(),
                attack_directions.len()
            )));
        }
        for f in clean_features.iter().chain(&attack_features) {
            if f.len() != m {
                return Err(Error::DimensionMismatch(format!("feature of length {} ≠ m={m}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature".into()));
            }
        }
        for d in &attack_directions {
            if d.len() != n {
                return Err(Error::DimensionMismatch(format!("direction of length {} ≠ n={n}", d.len())));
            }
            if (norm2(d) - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "attack direction has norm {}, expected 1",
                    norm2(d)
                )));
            }
        }
        let mut v = Mat::zeros(m, n);
        for (f, d) in attack_features.iter().zip(&attack_directions) {
            v.add_outer(1.0, f, d);
        }
        Ok(Self {
            m,
            n,
            clean_features,
            attack_features,
            attack_directions,
            v,
        })
    }

    /// Partition of `t = 0 … prefix−1` by the recorded attack trace.
    pub fn from_trajectory(traj: &Trajectory, basis: &Basis, prefix: usize) -> Result<Self> {
        if prefix == 0 || prefix > traj.horizon() {
            return Err(Error::InvalidArgument(format!(
                "prefix {prefix} outside 1..={}",
                traj.horizon()
            )));
        }
        let mut clean = Vec::new();
        let mut attacked = Vec::new();
        let mut dirs = Vec::new();
        for t in 0..prefix {
            let f = basis.eval(&traj.states[t])?;
            match traj.attacks.get(&t) {
                Some(a) => {
                    attacked.push(f);
                    dirs.push(a.direction.clone());
                }
                None => clean.push(f),
            }
        }
        Self::new(basis.m(), basis.n(), clean, attacked, dirs)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn clean_features(&self) -> &[Vec<f64>] {
        &self.clean_features
    }

    pub fn attack_features(&self) -> &[Vec<f64>] {
        &self.attack_features
    }

    pub fn attack_directions(&self) -> &[Vec<f64>] {
        &self.attack_directions
    }

    /// `Σ_K f(x_t) d̂_tᵀ`
    pub fn attack_moment(&self) -> &Mat {
        &self.v
    }

    /// `Σ_{Kᶜ} ‖f(x_t)‖₂`
    pub fn clean_mass(&self) -> f64 {
        self.clean_features.iter().map(|f| norm2(f)).sum()
    }

    /// `Σ_{all t} ‖f(x_t)‖₂`
    pub fn feature_mass(&self) -> f64 {
        self.clean_mass() + self.attack_features.iter().map(|f| norm2(f)).sum::<f64>()
    }

    /// Tolerance used for the optimality and uniqueness flags.
    pub fn tolerance(&self) -> f64 {
        1e-6 * (1.0 + self.clean_mass())
    }

    /// `h(Z) = Σ_{Kᶜ} ‖Zᵀf‖ − ⟨Z, V⟩`
    pub fn h(&self, z: &Mat) -> f64 {
        self.clean_term(z) - z.inner(&self.v)
    }

    fn clean_term(&self, z: &Mat) -> f64 {
        self.clean_features.iter().map(|f| norm2(&z.tr_mul_vec(f))).sum()
    }

    fn attack_norm_term(&self, z: &Mat) -> f64 {
        self.attack_features.iter().map(|f| norm2(&z.tr_mul_vec(f))).sum()
    }

    /// Subgradient of `Σ ‖Zᵀf‖` over the given features; zero images
    /// contribute 0.
    fn norm_sum_subgradient(&self, z: &Mat, feats: &[Vec<f64>], out: &mut Mat, sign: f64) {
        for f in feats {
            let img = z.tr_mul_vec(f);
            let r = norm2(&img);
            if r > 0.0 {
                out.add_outer(sign / r, f, &img);
            }
        }
    }

    fn h_subgradient(&self, z: &Mat) -> Mat {
        let mut g = self.v.scaled(-1.0);
        self.norm_sum_subgradient(z, &self.clean_features, &mut g, 1.0);
        g
    }

    fn clean_matrix(&self) -> Mat {
        let k = self.clean_features.len();
        let mut b = Mat::zeros(self.m, k);
        for (t, f) in self.clean_features.iter().enumerate() {
            for i in 0..self.m {
                b[(i, t)] = f[i];
            }
        }
        b
    }

    /// Unit vectors `u ∈ ℝᵐ` orthogonal to every clean feature.
    fn clean_null_space(&self) -> Vec<Vec<f64>> {
        let k = self.clean_features.len();
        if k == 0 {
            return (0..self.m)
                .map(|i| {
                    let mut e = vec![0.0; self.m];
                    e[i] = 1.0;
                    e
                })
                .collect();
        }
        // Left singular vectors of the m × k clean matrix via B Bᵀ.
        let b = self.clean_matrix();
        let bbt = b.matmul(&b.transpose()).to_nalgebra();
        let eig = bbt.symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
        let thresh = (RANK_REL_TOL * RANK_REL_TOL) * lam_max;
        (0..self.m)
            .filter(|&i| eig.eigenvalues[i] <= thresh)
            .map(|i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect()
    }
}

/// Minimizes `‖base + Σᵢ uᵢ aᵢᵀ‖_F` over `‖uᵢ‖₂ ≤ 1` by cyclic block
/// coordinate descent. Returns the blocks and the residual matrix.
const DUAL_CHUNK: usize = 500;

pub fn min_norm_ball_combination(
    base: &Mat,
    vecs: &[&[f64]],
    max_sweeps: usize,
    target: f64,
) -> (Vec<Vec<f64>>, Mat) {
    let us = vec![vec![0.0; base.rows()]; vecs.len()];
    ball_combination_from(base, vecs, us, max_sweeps, target)
}

/// [`min_norm_ball_combination`] warm-started from feasible blocks `us`.
fn ball_combination_from(
    base: &Mat,
    vecs: &[&[f64]],
    mut us: Vec<Vec<f64>>,
    max_sweeps: usize,
    target: f64,
) -> (Vec<Vec<f64>>, Mat) {
    let norms2: Vec<f64> = vecs.iter().map(|a| dot(a, a)).collect();
    let rebuild = |us: &[Vec<f64>]| {
        let mut m = base.clone();
        for (u, a) in us.iter().zip(vecs) {
            m.add_outer(1.0, u, a);
        }
        m
    };
    let mut resid = rebuild(&us);
    let mut prev = resid.frobenius_norm();
    if prev <= target || vecs.is_empty() {
        return (us, resid);
    }
    let mut stalled = 0;
    for _ in 0..max_sweeps {
        for (i, a) in vecs.iter().enumerate() {
            let an2 = norms2[i];
            if an2 == 0.0 {
                continue;
            }
            resid.add_outer(-1.0, &us[i], a);
            let mut cand = resid.mul_vec(a);
            for c in cand.iter_mut() {
                *c = -*c / an2;
            }
            let cn = norm2(&cand);
            if cn > 1.0 {
                for c in cand.iter_mut() {
                    *c /= cn;
                }
            }
            resid.add_outer(1.0, &cand, a);
            us[i] = cand;
        }
        resid = rebuild(&us);
        let cur = resid.frobenius_norm();
        if cur <= target {
            break;
        }
        if prev - cur <= 1e-12 * prev {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
        prev = cur;
    }
    (us, resid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub restarts: usize,
    pub iters: usize,
    pub dual_sweeps: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            iters: 2000,
            dual_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityCertificate {
    /// Smallest `h(Z)` found over the unit ball (≤ 0).
    pub value: f64,
    pub minimizer: Mat,
    /// Certified lower bound on the ball minimum.
    pub lower_bound: f64,
}

/// `min_{‖Z‖_F ≤ 1} h(Z)`; zero iff Ā is a global minimizer of the loss.
pub fn optimality_certificate(
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
) -> OptimalityCertificate {
    let (m, n) = (prob.m, prob.n);
    let zero = Mat::zeros(m, n);
    if prob.attack_features.is_empty() {
        return OptimalityCertificate {
            value: 0.0,
            minimizer: zero,
            lower_bound: 0.0,
        };
    }

    if m == 1 {
        // Zᵀf = f·z, so h(z) = ‖z‖ Σ|f| − zᵀv: the minimum is closed form.
        let s = prob.clean_mass();
        let vnorm = prob.v.frobenius_norm();
        if vnorm <= s {
            return OptimalityCertificate {
                value: 0.0,
                minimizer: zero,
                lower_bound: 0.0,
            };
        }
        let value = s - vnorm;
        return OptimalityCertificate {
            value,
            minimizer: prob.v.scaled(1.0 / vnorm),
            lower_bound: value,
        };
    }
    optimality_certificate_iterative(prob, opts, rng)
}

/// The general-dimension route of [`optimality_certificate`], without the
/// scalar-feature shortcut: a dual block-coordinate bound, primal candidates
/// built from it, and projected subgradient restarts when the two disagree.
pub fn optimality_certificate_iterative(
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
) -> OptimalityCertificate {
    let (m, n) = (prob.m, prob.n);
    let zero = Mat::zeros(m, n);
    if prob.attack_features.is_empty() {
        return OptimalityCertificate {
            value: 0.0,
            minimizer: zero,
            lower_bound: 0.0,
        };
    }

    let mut best = zero.clone();
    let mut best_val = 0.0;
    let consider = |z: Mat, best: &mut Mat, best_val: &mut f64| {
        let v = prob.h(&z);
        if v < *best_val {
            *best_val = v;
            *best = z;
        }
    };
    let vnorm = prob.v.frobenius_norm();
    if vnorm > 0.0 {
        consider(prob.v.scaled(1.0 / vnorm), &mut best, &mut best_val);
    }
    let gap_tol = 1e-9 * (1.0 + prob.clean_mass() + vnorm);

    // Dual side: min ‖Vᵀ + Σ u fᵀ‖ over the clean times, in warm-started
    // chunks until the normalized residual closes the gap. Nearly collinear
    // features make the coordinate descent slow, so the budget is large but
    // rarely used.
    let vt = prob.v.transpose();
    let feats: Vec<&[f64]> = prob.clean_features.iter().map(Vec::as_slice).collect();
    let mut us = vec![vec![0.0; n]; feats.len()];
    let mut lower_bound = -vnorm;
    let mut done = 0;
    let mut prev_rnorm = f64::INFINITY;
    while done < opts.dual_sweeps.max(1) {
        let chunk = DUAL_CHUNK.min(opts.dual_sweeps.max(1) - done);
        let (next, resid_t) = ball_combination_from(&vt, &feats, us, chunk, gap_tol);
        us = next;
        done += chunk;
        let resid = resid_t.transpose();
        let rnorm = resid.frobenius_norm();
        lower_bound = lower_bound.max(-rnorm);
        if rnorm > 0.0 {
            consider(resid.scaled(1.0 / rnorm), &mut best, &mut best_val);
        }
        if best_val - lower_bound <= gap_tol || rnorm >= prev_rnorm * (1.0 - 1e-12) {
            break;
        }
        prev_rnorm = rnorm;
    }

    if best_val - lower_bound > gap_tol {
        let polyak_floor = lower_bound;
        for r in 0..opts.restarts {
            let mut child = rng.child_indexed("certificate-restart", r as u64);
            let start = if r == 0 {
                best.clone()
            } else {
                random_ball_point(m, n, &mut child)
            };
            let (z, v) = projected_subgradient(prob, start, opts.iters, polyak_floor);
            if v < best_val {
                best_val = v;
                best = z;
            }
        }
    }

    OptimalityCertificate {
        value: best_val,
        minimizer: best,
        lower_bound: lower_bound.min(best_val),
    }
}

fn random_ball_point(m: usize, n: usize, rng: &mut RngStream) -> Mat {
    let data: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
    let z = Mat::new(m, n, data).expect("finite gaussian draws");
    let r = z.frobenius_norm();
    let radius = rng.uniform(0.05, 1.0);
    if r > 0.0 {
        z.scaled(radius / r)
    } else {
        z
    }
}

fn project_ball(z: &mut Mat) {
    let r = z.frobenius_norm();
    if r > 1.0 {
        *z = z.scaled(1.0 / r);
    }
}

/// Projected subgradient descent on `h` over the unit ball with Polyak
/// steps against `floor` and a diminishing factor; returns the best iterate.
fn projected_subgradient(prob: &CertificateProblem, start: Mat, iters: usize, floor: f64) -> (Mat, f64) {
    let mut z = start;
    project_ball(&mut z);
    let mut best_val = prob.h(&z);
    let mut best = z.clone();
    for k in 0..iters {
        let val = prob.h(&z);
        if val < best_val {
            best_val = val;
            best = z.clone();
        }
        let g = prob.h_subgradient(&z);
        let g2 = g.inner(&g);
        if g2 == 0.0 {
            break;
        }
        let gap = (val - floor).max(1e-12 * (1.0 + val.abs()));
        let step = gap / g2 / ((k + 1) as f64).sqrt();
        z.add_scaled(-step, &g);
        project_ball(&mut z);
    }
    let val = prob.h(&z);
    if val < best_val {
        best_val = val;
        best = z;
    }
    (best, best_val)
}

/// Sphere-constrained descent on an arbitrary homogeneous objective.
fn sphere_descent<F, G>(start: Mat, iters: usize, value: F, subgrad: G) -> (Mat, f64)
where
    F: Fn(&Mat) -> f64,
    G: Fn(&Mat) -> Mat,
{
    let normalize = |z: &Mat| {
        let r = z.frobenius_norm();
        z.scaled(1.0 / r)
    };
    let mut z = normalize(&start);
    let mut best_val = value(&z);
    let mut best = z.clone();
    for k in 0..iters {
        let mut g = subgrad(&z);
        // Tangential component only.
        let radial = g.inner(&z);
        g.add_scaled(-radial, &z);
        let gn = g.frobenius_norm();
        if gn <= 1e-15 {
            break;
        }
        let step = 0.3 / ((k + 1) as f64).sqrt();
        z.add_scaled(-step / gn, &g);
        z = normalize(&z);
        let v = value(&z);
        if v < best_val {
            best_val = v;
            best = z.clone();
        }
    }
    (best, best_val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginEstimate {
    /// Smallest `h` found on the unit sphere.
    pub value: f64,
    /// `true` when the value is exact (`m = 1`); otherwise it is an upper
    /// bound on the true infimum.
    pub exact: bool,
    pub minimizer: Mat,
}

/// `inf_{‖Z‖_F = 1} h(Z)`; strictly positive certifies that Ā is the unique
/// minimizer (given optimality).
pub fn uniqueness_margin(
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
) -> MarginEstimate {
    uniqueness_margin_seeded(prob, opts, rng, &[])
}

fn uniqueness_margin_seeded(
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
    extra_seeds: &[Mat],
) -> MarginEstimate {
    let (m, n) = (prob.m, prob.n);
    if m == 1 {
        let s = prob.clean_mass();
        let vnorm = prob.v.frobenius_norm();
        let minimizer = if vnorm > 0.0 {
            prob.v.scaled(1.0 / vnorm)
        } else {
            let mut e = Mat::zeros(1, n);
            e[(0, 0)] = 1.0;
            e
        };
        return MarginEstimate {
            value: s - vnorm,
            exact: true,
            minimizer,
        };
    }

    let mut seeds: Vec<Mat> = extra_seeds
        .iter()
        .filter(|z| z.frobenius_norm() > 0.0)
        .cloned()
        .collect();
    let vnorm = prob.v.frobenius_norm();
    if vnorm > 0.0 {
        seeds.push(prob.v.scaled(1.0 / vnorm));
    }
    for u in prob.clean_null_space() {
        // Z = u wᵀ annihilates the clean features; pick w to make ⟨Z, V⟩ ≥ 0.
        let vu = prob.v.tr_mul_vec(&u);
        let vun = norm2(&vu);
        let w = if vun > 0.0 {
            vu.iter().map(|x| x / vun).collect()
        } else {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        };
        seeds.push(Mat::outer(&u, &w));
    }
    for r in 0..opts.restarts {
        let mut child = rng.child_indexed("margin-restart", r as u64);
        seeds.push(random_ball_point(m, n, &mut child));
    }

    let mut best_val = f64::INFINITY;
    let mut best = Mat::zeros(m, n);
    for seed in seeds {
        let (z, v) = sphere_descent(seed, opts.iters, |z| prob.h(z), |z| prob.h_subgradient(z));
        if v < best_val {
            best_val = v;
            best = z;
        }
    }
    MarginEstimate {
        value: best_val,
        exact: false,
        minimizer: best,
    }
}

/// `Σ_{Kᶜ} ‖f‖₂ − ‖Σ_K f d̂ᵀ‖_F`; negative slack proves Ā is not optimal.
pub fn necessary_condition_slack(prob: &CertificateProblem) -> f64 {
    prob.clean_mass() - prob.v.frobenius_norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientCheck {
    pub margin: f64,
    pub certified: bool,
    pub exact: bool,
}

/// Estimates `inf_{‖Z‖_F = 1} Σ_{Kᶜ}‖Zᵀf‖ − Σ_K‖Zᵀf‖`. A negative value is a
/// genuine counterexample to the sufficient condition; a nonnegative one is
/// only heuristic evidence when `m > 1`.
pub fn sufficient_condition_check(
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
) -> SufficientCheck {
    let tol = prob.tolerance();
    if prob.m == 1 {
        let attack: f64 = prob.attack_features.iter().map(|f| f[0].abs()).sum();
        let margin = prob.clean_mass() - attack;
        return SufficientCheck {
            margin,
            certified: margin >= -tol,
            exact: true,
        };
    }
    let (m, n) = (prob.m, prob.n);
    let value = |z: &Mat| prob.clean_term(z) - prob.attack_norm_term(z);
    let subgrad = |z: &Mat| {
        let mut g = Mat::zeros(m, n);
        prob.norm_sum_subgradient(z, &prob.clean_features, &mut g, 1.0);
        prob.norm_sum_subgradient(z, &prob.attack_features, &mut g, -1.0);
        g
    };

    let mut seeds = Vec::new();
    let mut by_norm: Vec<&Vec<f64>> = prob.attack_features.iter().collect();
    by_norm.sort_by(|a, b| norm2(b).total_cmp(&norm2(a)));
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    for f in by_norm.into_iter().take(4) {
        if norm2(f) > 0.0 {
            seeds.push(Mat::outer(f, &e1));
        }
    }
    for u in prob.clean_null_space() {
        seeds.push(Mat::outer(&u, &e1));
    }
    for r in 0..opts.restarts {
        let mut child = rng.child_indexed("sufficient-restart", r as u64);
        seeds.push(random_ball_point(m, n, &mut child));
    }
    let mut margin = f64::INFINITY;
    let mut certified = true;
    for seed in seeds {
        let (_, v) = sphere_descent(seed, opts.iters, value, subgrad);
        margin = margin.min(v);
        if v < -tol {
            certified = false;
        }
    }
    SufficientCheck {
        margin,
        certified,
        exact: false,
    }
}

/// Numerical rank of the clean-feature matrix `[f(x_t), t ∈ Kᶜ]`.
pub fn degeneracy_rank(prob: &CertificateProblem) -> usize {
    if prob.clean_features.is_empty() {
        return 0;
    }
    prob.clean_matrix().rank(RANK_REL_TOL)
}

/// `g(Ā) − g(Â)` on the same data.
pub fn loss_gap(a_bar: &Mat, a_hat: &Mat, data: &RegressionDataset) -> Result<f64> {
    Ok(objective(a_bar, data)? - objective(a_hat, data)?)
}

/// `‖Ā − Â‖_F`
pub fn solution_gap(a_bar: &Mat, a_hat: &Mat) -> Result<f64> {
    if a_bar.shape() != a_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a_bar.shape(),
            a_hat.shape()
        )));
    }
    Ok(a_bar.sub(a_hat).frobenius_norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub loss_gap: f64,
    pub solution_gap: f64,
    pub cert_value: f64,
    pub cert_lower_bound: f64,
    pub cert_minimizer: Mat,
    pub uniqueness_margin: f64,
    pub margin_exact: bool,
    pub necessary_slack: f64,
    pub degeneracy_rank: usize,
    pub is_optimal: bool,
    pub is_unique: bool,
    /// `|margin| ≤ tol`: the uniqueness question is not settled numerically.
    pub undetermined: bool,
    pub tolerance: f64,
}

/// Full report for one prefix: metrics against `Ā` plus every condition.
pub fn certify(
    a_bar: &Mat,
    a_hat: &Mat,
    data: &RegressionDataset,
    prob: &CertificateProblem,
    opts: &CertificateOptions,
    rng: &mut RngStream,
) -> Result<CertificateReport> {
    let loss_gap = loss_gap(a_bar, a_hat, data)?;
    let solution_gap = solution_gap(a_bar, a_hat)?;
    let mut cert = optimality_certificate(prob, opts, &mut rng.child("certificate"));
    // The estimate itself points along a descent direction whenever it beats
    // Ā, which the generic search can miss on badly conditioned features.
    let diff = a_hat.sub(a_bar).transpose();
    let dn = diff.frobenius_norm();
    let mut seeds = vec![cert.minimizer.clone()];
    if dn > 0.0 && diff.shape() == (prob.m, prob.n) {
        let z = diff.scaled(1.0 / dn);
        let v = prob.h(&z);
        if v < cert.value {
            cert.value = v;
            cert.lower_bound = cert.lower_bound.min(v);
            cert.minimizer = z.clone();
        }
        seeds.push(z);
    }
    let margin = uniqueness_margin_seeded(prob, opts, &mut rng.child("margin"), &seeds);
    let tol = prob.tolerance();
    let rank = degeneracy_rank(prob);
    let is_optimal = cert.value >= -tol;
    Ok(CertificateReport {
        loss_gap,
        solution_gap,
        cert_value: cert.value,
        cert_lower_bound: cert.lower_bound,
        cert_minimizer: cert.minimizer,
        uniqueness_margin: margin.value,
        margin_exact: margin.exact,
        necessary_slack: necessary_condition_slack(prob),
        degeneracy_rank: rank,
        is_optimal,
        is_unique: is_optimal && margin.value > tol && rank == prob.m,
        undetermined: margin.value.abs() <= tol,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn witness() -> CertificateProblem {
        CertificateProblem::new(
            1,
            1,
            vec![vec![1.0]],
            vec![vec![0.0], vec![5.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap()
    }

    fn clean_after_one_attack() -> CertificateProblem {
        CertificateProblem::new(
            1,
            1,
            vec![vec![1.0], vec![0.7], vec![0.49]],
            vec![vec![0.0]],
            vec![vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_unit_direction() {
        let err = CertificateProblem::new(1, 1, vec![], vec![vec![1.0]], vec![vec![0.9]]);
        assert!(matches!(err, Err(Error::Invariant(_))));
        assert!(CertificateProblem::new(1, 1, vec![], vec![vec![1.0]], vec![]).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(solution_gap(&Mat::scalar(5.0), &Mat::scalar(5.0)).unwrap(), 0.0);
        assert!((solution_gap(&Mat::scalar(5.0), &Mat::scalar(5.2)).unwrap() - 0.2).abs() < 1e-12);
        let g = solution_gap(&Mat::identity(2), &Mat::zeros(2, 2)).unwrap();
        assert!((g - 2f64.sqrt()).abs() < 1e-15);
        assert!(solution_gap(&Mat::identity(2), &Mat::zeros(2, 1)).is_err());

        let d = RegressionDataset::scalar(&[0.0, 1.0, 5.0], &[1.0, 5.0, 26.0]).unwrap();
        assert!((loss_gap(&Mat::scalar(5.0), &Mat::scalar(5.2), &d).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(loss_gap(&Mat::scalar(5.0), &Mat::scalar(5.0), &d).unwrap(), 0.0);
    }

    #[test]
    fn certificate_examples() {
        let mut rng = RngStream::new(0);
        let opts = CertificateOptions::default();
        let empty = CertificateProblem::new(2, 2, vec![vec![1.0, 0.0]], vec![], vec![]).unwrap();
        let c = optimality_certificate(&empty, &opts, &mut rng);
        assert_eq!(c.value, 0.0);
        assert_eq!(c.minimizer.frobenius_norm(), 0.0);

        let c = optimality_certificate(&witness(), &opts, &mut rng);
        assert!((c.value + 4.0).abs() < 1e-12);
        assert!((c.minimizer[(0, 0)] - 1.0).abs() < 1e-12);

        let c = optimality_certificate(&clean_after_one_attack(), &opts, &mut rng);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn margin_and_slack_examples() {
        let mut rng = RngStream::new(0);
        let opts = CertificateOptions::default();
        let u = uniqueness_margin(&clean_after_one_attack(), &opts, &mut rng);
        assert!(u.exact);
        assert!((u.value - 2.19).abs() < 1e-12);
        let u = uniqueness_margin(&witness(), &opts, &mut rng);
        assert!((u.value + 4.0).abs() < 1e-12);

        let no_clean = CertificateProblem::new(
            2,
            2,
            vec![],
            vec![vec![1.0, 0.5], vec![0.0, 2.0]],
            vec![vec![1.0, 0.0], vec![0.6, 0.8]],
        )
        .unwrap();
        assert!(uniqueness_margin(&no_clean, &opts, &mut rng).value <= 0.0);

        assert!((necessary_condition_slack(&clean_after_one_attack()) - 2.19).abs() < 1e-12);
        assert_eq!(necessary_condition_slack(&witness()), -4.0);
        let empty = CertificateProblem::new(1, 1, vec![vec![-3.0]], vec![], vec![]).unwrap();
        assert_eq!(necessary_condition_slack(&empty), 3.0);
    }

    #[test]
    fn sufficient_check_examples() {
        let mut rng = RngStream::new(0);
        let opts = CertificateOptions::default();
        let empty = CertificateProblem::new(
            2,
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![],
            vec![],
        )
        .unwrap();
        let s = sufficient_condition_check(&empty, &opts, &mut rng);
        assert!(s.margin >= 0.0 && s.certified);

        let no_clean = CertificateProblem::new(
            2,
            1,
            vec![],
            vec![vec![1.0, 0.0]],
            vec![vec![-1.0]],
        )
        .unwrap();
        let s = sufficient_condition_check(&no_clean, &opts, &mut rng);
        assert!(s.margin < 0.0 && !s.certified);

        let s = sufficient_condition_check(&witness(), &opts, &mut rng);
        assert!(s.exact && !s.certified);
        assert_eq!(s.margin, -4.0);
    }

    #[test]
    fn rank_examples() {
        let full = CertificateProblem::new(
            3,
            1,
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(degeneracy_rank(&full), 3);
        let none = CertificateProblem::new(3, 1, vec![], vec![vec![1.0, 0.0, 0.0]], vec![vec![1.0]])
            .unwrap();
        assert_eq!(degeneracy_rank(&none), 0);
        let rank1 = CertificateProblem::new(
            2,
            1,
            vec![vec![1.0, 2.0], vec![-2.0, -4.0], vec![0.5, 1.0]],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(degeneracy_rank(&rank1), 1);
    }

    #[test]
    fn ball_combination_reaches_zero_when_feasible() {
        // u = −(0.3, −0.4) lies inside the ball and cancels the base.
        let base = Mat::outer(&[0.3, -0.4], &[2.0, 0.0]);
        let a = [2.0, 0.0];
        let (us, r) = min_norm_ball_combination(&base, &[&a], 100, 0.0);
        assert!(r.frobenius_norm() < 1e-14);
        assert!((norm2(&us[0]) - 0.5).abs() < 1e-14);
        // Infeasible: the ball is too small.
        let base = Mat::outer(&[3.0], &[1.0]);
        let (us, r) = min_norm_ball_combination(&base, &[&[1.0]], 100, 0.0);
        assert_eq!(us[0], vec![-1.0]);
        assert!((r.frobenius_norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn report_for_witness() {
        let d = RegressionDataset::scalar(&[0.0, 1.0, 5.0], &[1.0, 5.0, 26.0]).unwrap();
        let r = certify(
            &Mat::scalar(5.0),
            &Mat::scalar(5.2),
            &d,
            &witness(),
            &CertificateOptions::default(),
            &mut RngStream::new(1),
        )
        .unwrap();
        assert!(!r.is_optimal && !r.is_unique);
        assert!((r.cert_value + 4.0).abs() < 1e-12);
        assert_eq!(r.necessary_slack, -4.0);
        assert_eq!(r.degeneracy_rank, 1);
    }
}
