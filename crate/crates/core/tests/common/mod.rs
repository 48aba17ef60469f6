//! Checks shared by the property suite and the acceptance report. Each
//! returns a one-line summary on success and the first violation otherwise.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use robust_sysid::attacks::{check_stealthiness, AttackModel};
use robust_sysid::certificates::{
    optimality_certificate, optimality_certificate_iterative, CertificateOptions, CertificateProblem,
};
use robust_sysid::dynamics::{Basis, SystemSpec, Trajectory};
use robust_sysid::estimator::{solve, RegressionDataset, SolverConfig};
use robust_sysid::experiments::{run_scenario, simulate_seed, write_scenario_output, ExperimentSpec, Scenario};
use robust_sysid::linalg::norm2;
use robust_sysid::rng::{sample_gaussian_vector, sample_unit_sphere};
use robust_sysid::{Error, Mat, RngStream};

pub type Check = Result<String, String>;

fn gaussian(n: usize, scale: f64, rng: &mut RngStream) -> Vec<f64> {
    sample_gaussian_vector(n, rng).unwrap().into_iter().map(|v| v * scale).collect()
}

fn gaussian_mat(rows: usize, cols: usize, rng: &mut RngStream) -> Mat {
    Mat::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// A state whose scale spans several orders of magnitude across draws.
fn probe_state(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let scale = 10f64.powf(rng.uniform(-3.0, 1.5));
    gaussian(n, scale, rng)
}

pub fn bases(n: usize, rng: &mut RngStream) -> Vec<Basis> {
    vec![
        Basis::linear(n).unwrap(),
        Basis::random_multiquadric(n, rng).unwrap(),
        Basis::sine_bounded(n).unwrap(),
        Basis::saturated_sine(n, 4).unwrap(),
    ]
}

/// Lipschitz bound, uniform bound and `f(0) = 0` on random pairs of states.
pub fn basis_properties(seed: u64) -> Check {
    let mut rng = RngStream::new(seed).child("basis-properties");
    let mut pairs = 0;
    for n in [1, 2, 3, 5] {
        for basis in bases(n, &mut rng) {
            let f0 = basis.eval(&vec![0.0; n]).unwrap();
            if f0.iter().any(|v| *v != 0.0) {
                return Err(format!("{:?}: f(0) = {f0:?}", basis.kind()));
            }
            for _ in 0..200 {
                let x = probe_state(n, &mut rng);
                let y = probe_state(n, &mut rng);
                let (fx, fy) = (basis.eval(&x).unwrap(), basis.eval(&y).unwrap());
                if let Some(l) = basis.lipschitz_constant() {
                    let lhs = norm2(&robust_sysid::linalg::sub_vec(&fx, &fy));
                    let rhs = l * norm2(&robust_sysid::linalg::sub_vec(&x, &y));
                    if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                        return Err(format!("{:?}: ‖f(x)−f(y)‖ = {lhs:e} > {rhs:e}", basis.kind()));
                    }
                }
                if let Some(b) = basis.sup_bound() {
                    if fx.iter().any(|v| v.abs() > b) {
                        return Err(format!("{:?}: ‖f(x)‖∞ > {b}", basis.kind()));
                    }
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} state pairs over 16 bases"))
}

/// Empirical mean attack direction at 10 probe states per model.
pub fn stealthiness(seed: u64) -> Check {
    let rng = RngStream::new(seed).child("stealthiness");
    let mut worst: f64 = 0.0;
    for model in AttackModel::ALL {
        let mut probes = rng.child(model.as_str());
        for k in 0..10 {
            let n = 1 + k % 3;
            let x = if k == 0 { vec![0.0; n] } else { probe_state(n, &mut probes) };
            let r = check_stealthiness(&model, &x, 10_000, &mut probes.child_indexed("draws", k as u64))
                .map_err(|e| e.to_string())?;
            if !r.pass {
                return Err(format!(
                    "{} at x={x:?}: mean direction norm {:e} > {:e}",
                    model.as_str(),
                    r.mean_norm,
                    r.threshold
                ));
            }
            worst = worst.max(r.mean_norm / r.threshold);
        }
    }
    Ok(format!("40 probes, worst mean-norm/threshold = {worst:.3}"))
}

/// Random certificate problem with `m` features and `n` states.
pub fn random_problem(m: usize, n: usize, rng: &mut RngStream) -> CertificateProblem {
    let clean_count = (rng.uniform01() * 8.0) as usize;
    let attack_count = 1 + (rng.uniform01() * 8.0) as usize;
    // Mix scales so both optimal and non-optimal instances occur.
    let clean_scale = 10f64.powf(rng.uniform(-1.0, 1.0));
    let clean = (0..clean_count).map(|_| gaussian(m, clean_scale, rng)).collect();
    let attack = (0..attack_count).map(|_| gaussian(m, 1.0, rng)).collect();
    let dirs = (0..attack_count).map(|_| sample_unit_sphere(n, rng).unwrap()).collect();
    CertificateProblem::new(m, n, clean, attack, dirs).unwrap()
}

fn scaled_problem(p: &CertificateProblem, c: f64) -> CertificateProblem {
    let scale = |v: &[Vec<f64>]| v.iter().map(|f| f.iter().map(|x| c * x).collect()).collect();
    CertificateProblem::new(
        p.m(),
        p.n(),
        scale(p.clean_features()),
        scale(p.attack_features()),
        p.attack_directions().to_vec(),
    )
    .unwrap()
}

/// `h(cZ) = c h(Z)` and scaling every feature by `c` scales the certificate by `c`.
pub fn certificate_homogeneity(seed: u64, instances: usize) -> Check {
    let rng = RngStream::new(seed).child("homogeneity");
    let opts = CertificateOptions::default();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut r = rng.child_indexed("instance", i as u64);
        let m = 1 + i % 3;
        let n = 1 + (i / 3) % 3;
        let prob = random_problem(m, n, &mut r);
        let z = gaussian_mat(m, n, &mut r);
        let c = 10f64.powf(r.uniform(-2.0, 2.0));
        let (hz, hcz) = (prob.h(&z), prob.h(&z.scaled(c)));
        let err = (hcz - c * hz).abs() / (1.0 + c * hz.abs());
        if err > 1e-12 {
            return Err(format!("instance {i}: h(cZ) = {hcz:e} vs c·h(Z) = {:e}", c * hz));
        }
        let base = optimality_certificate(&prob, &opts, &mut r.child("cert"));
        let scaled = optimality_certificate(&scaled_problem(&prob, c), &opts, &mut r.child("cert"));
        let err = (scaled.value - c * base.value).abs() / (c * (1.0 + base.value.abs()));
        if err > 1e-6 {
            return Err(format!(
                "instance {i}: cert(c·f) = {:e} vs c·cert(f) = {:e}",
                scaled.value,
                c * base.value
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("{instances} instances, worst relative error {worst:.1e}"))
}

/// Scalar-feature closed form against the general iterative route.
pub fn scalar_certificate_agreement(seed: u64, instances: usize) -> Check {
    let rng = RngStream::new(seed).child("scalar-agreement");
    let opts = CertificateOptions::default();
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for i in 0..instances {
        let mut r = rng.child_indexed("instance", i as u64);
        let n = 1 + i % 3;
        let prob = random_problem(1, n, &mut r);
        let closed = optimality_certificate(&prob, &opts, &mut r.child("cert"));
        let iter = optimality_certificate_iterative(&prob, &opts, &mut r.child("cert"));
        let err = (closed.value - iter.value).abs();
        if err > 1e-6 {
            return Err(format!(
                "instance {i}: closed form {:e} vs iterative {:e}",
                closed.value, iter.value
            ));
        }
        if closed.value < 0.0 {
            negative += 1;
        }
        worst = worst.max(err);
    }
    Ok(format!("{instances} instances ({negative} non-optimal), worst |diff| {worst:.1e}"))
}

/// Sparse gross corruptions on top of a random linear model.
pub fn random_dataset(rng: &mut RngStream) -> RegressionDataset {
    let m = 1 + (rng.uniform01() * 3.0) as usize;
    let n = 1 + (rng.uniform01() * 3.0) as usize;
    let len = 3 + (rng.uniform01() * 40.0) as usize;
    let a = gaussian_mat(n, m, rng);
    let p = rng.uniform(0.0, 0.8);
    let mut feats = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    for _ in 0..len {
        let f = gaussian(m, 1.0, rng);
        let mut y = a.mul_vec(&f);
        if rng.bernoulli(p) {
            let d = gaussian(n, 5.0, rng);
            y.iter_mut().zip(&d).for_each(|(yi, di)| *yi += di);
        }
        feats.push(f);
        targets.push(y);
    }
    RegressionDataset::new(feats, targets).unwrap()
}

/// Every recorded IRLS step does not increase the smoothed surrogate.
pub fn irls_descent(seed: u64, instances: usize) -> Check {
    let rng = RngStream::new(seed).child("irls-descent");
    let cfg = SolverConfig::default();
    let mut steps = 0;
    for i in 0..instances {
        let data = random_dataset(&mut rng.child_indexed("instance", i as u64));
        let res = solve(&data, &cfg).map_err(|e| e.to_string())?;
        for (k, s) in res.history.iter().enumerate() {
            if s.after > s.before + 1e-12 * (1.0 + s.before) {
                return Err(format!(
                    "instance {i}, step {k} (eps={:e}): {} → {}",
                    s.eps, s.before, s.after
                ));
            }
        }
        steps += res.history.len();
    }
    Ok(format!("{instances} datasets, {steps} steps"))
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_into(spec: &ExperimentSpec, threads: usize, dir: &Path) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let output = pool.install(|| run_scenario(spec)).unwrap();
    write_scenario_output(dir, spec, &output).unwrap();
}

/// Two runs with the same master seed (with different thread counts) give
/// byte-identical output trees.
pub fn determinism(seed: u64) -> Check {
    let mut files = 0;
    for scenario in [Scenario::BoundedFrequency, Scenario::LipschitzDimension, Scenario::CounterexampleUnstable] {
        let mut spec = ExperimentSpec::defaults(scenario, seed);
        spec.seeds = 3;
        spec.horizon = spec.horizon.min(60);
        spec.prefix_stride = 20;
        spec.trials = spec.trials.min(200);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_into(&spec, 1, a.path());
        run_into(&spec, 3, b.path());
        let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
        if ta != tb {
            return Err(format!("{}: output trees differ", scenario.as_str()));
        }
        files += ta.len();
    }
    Ok(format!("3 scenarios, {files} files identical across runs"))
}

/// A random small system, its trajectory and the attack model used.
pub struct Instance {
    pub system: SystemSpec,
    pub traj: Trajectory,
    pub model: AttackModel,
}

/// Random system with `n, m ≤ 3` and `T ≤ max_horizon`, redrawn on explosion.
pub fn random_instance(rng: &RngStream, max_horizon: usize) -> Instance {
    for attempt in 0.. {
        let mut r = rng.child_indexed("attempt", attempt);
        let n = 1 + (r.uniform01() * 3.0) as usize;
        let basis = match (r.uniform01() * 3.0) as usize {
            0 => Basis::linear(n).unwrap(),
            1 => Basis::random_multiquadric(n, &mut r).unwrap(),
            _ => Basis::saturated_sine(n, 2 + (r.uniform01() * 2.0) as usize).unwrap(),
        };
        let a = gaussian_mat(n, basis.m(), &mut r);
        let a_bar = a.scaled(r.uniform(0.3, 0.9) / a.frobenius_norm());
        let horizon = 5 + (r.uniform01() * (max_horizon - 4) as f64) as usize;
        let system = SystemSpec::new(a_bar, basis, horizon).unwrap();
        let model = AttackModel::ALL[(r.uniform01() * 4.0) as usize];
        let p = r.uniform(0.2, 0.8);
        match simulate_seed(&system, model, p, &r) {
            Ok(traj) => return Instance { system, traj, model },
            Err(Error::Explosion { .. }) => continue,
            Err(e) => panic!("{e}"),
        }
    }
    unreachable!()
}
