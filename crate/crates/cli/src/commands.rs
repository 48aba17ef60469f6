//! The `simulate`, `estimate`, `certify` and `experiment` commands.

use std::fs;
use std::path::{Path, PathBuf};

use robust_sysid::certificates::{certify as certify_prefix, CertificateProblem};
use robust_sysid::dynamics::{SystemSpec, Trajectory};
use robust_sysid::estimator::{solve, RegressionDataset};
use robust_sysid::experiments::{run_scenario, simulate_seed, write_scenario_output, ScenarioOutput};
use robust_sysid::io::{format_float, read_trajectory, write_certificates, write_estimates, write_trajectory, Metadata};
use robust_sysid::{Error, RngStream};

use crate::config::Config;
use crate::{CliError, Common};

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_config(c: &Common) -> Result<Config, CliError> {
    Config::load(c.config.as_deref(), &c.overrides)
}

/// `--seed`, then `run.seed`, then the seed recorded in an input file, then 0.
fn resolve_seed(c: &Common, cfg: &Config, from_file: Option<u64>) -> Result<u64, CliError> {
    Ok(c.seed.or(cfg.seed()?).or(from_file).unwrap_or(0))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_out(path: &Path, buf: Vec<u8>) -> Result<(), CliError> {
    fs::write(path, buf).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_trajectory(path: &Path) -> Result<(Trajectory, Option<Metadata>), CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open trajectory {}: {e}", path.display())))?;
    read_trajectory(file).map_err(|e| {
        let hint = match &e {
            Error::Parse(m) if m.contains("header") && !m.contains("attacked") => {
                " (the file must carry the attack trace: columns `attacked,dbar_1..dbar_n`)"
            }
            _ => "",
        };
        CliError::Usage(format!("invalid trajectory {}: {e}{hint}", path.display()))
    })
}

fn check_shape(traj: &Trajectory, n: usize) -> Result<(), CliError> {
    if traj.n() != n {
        return Err(CliError::Usage(format!(
            "trajectory has state dimension {} but the configured system has n={n}",
            traj.n()
        )));
    }
    Ok(())
}

fn system_meta(seed: u64, sys: &SystemSpec) -> Metadata {
    Metadata::new(seed)
        .with("basis", sys.basis.kind().as_str())
        .with("n", sys.n())
        .with("m", sys.m())
}

pub fn simulate(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let seed = resolve_seed(c, &cfg, None)?;
    let sys = cfg.system(seed)?;
    let (model, p) = cfg.attack()?;
    let traj = match simulate_seed(&sys, model, p, &RngStream::new(seed)) {
        Ok(t) => t,
        Err(Error::Explosion { t, norm }) => {
            return Err(CliError::Runtime(format!(
                "trajectory exploded at t={t} (‖x‖ = {norm:e}); nothing written"
            )))
        }
        Err(e) => return Err(runtime(e)),
    };
    create_out(&c.out)?;
    let path = c.out.join("trajectory.csv");
    let meta = system_meta(seed, &sys).with("attack", model.as_str()).with("p", format_float(p));
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &traj, &meta).map_err(runtime)?;
    write_out(&path, buf)?;
    let last = traj.states.last().expect("non-empty");
    let norm = last.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("attacked steps |K| = {} of {}", traj.attacks.len(), traj.horizon());
    println!("final state norm = {}", format_float(norm));
    println!("wrote {}", path.display());
    Ok(())
}

pub fn estimate(c: &Common, trajectory: &Path) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let (traj, meta) = load_trajectory(trajectory)?;
    let seed = resolve_seed(c, &cfg, meta.map(|m| m.seed))?;
    let basis = cfg.basis(seed)?;
    check_shape(&traj, basis.n())?;
    let solver = cfg.solver()?;
    let prefixes = cfg.prefixes(traj.horizon())?;
    let mut rows = Vec::with_capacity(prefixes.len());
    for &tp in &prefixes {
        let data = RegressionDataset::from_trajectory(&traj, &basis, tp).map_err(runtime)?;
        rows.push((tp, solve(&data, &solver).map_err(runtime)?));
    }
    create_out(&c.out)?;
    let path = c.out.join("estimate.csv");
    let mut buf = Vec::new();
    write_estimates(&mut buf, &rows, &Metadata::new(seed).with("basis", basis.kind().as_str()))
        .map_err(runtime)?;
    write_out(&path, buf)?;
    if let Some((tp, r)) = rows.last() {
        let attack_mass: f64 = traj
            .attacks
            .range(..tp)
            .map(|(_, a)| a.magnitude)
            .sum();
        println!("T' = {tp}: objective = {}", format_float(r.objective));
        println!("sum of attack magnitudes in prefix = {}", format_float(attack_mass));
        for i in 0..r.a_hat.rows() {
            let row: Vec<String> = r.a_hat.row(i).iter().map(|v| format_float(*v)).collect();
            println!("A_hat[{}] = [{}]", i + 1, row.join(", "));
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn certify(c: &Common, trajectory: &Path) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let (traj, meta) = load_trajectory(trajectory)?;
    let seed = resolve_seed(c, &cfg, meta.map(|m| m.seed))?;
    let sys = cfg.system(seed)?;
    check_shape(&traj, sys.n())?;
    traj.validate(Some(&sys), 1e-9).map_err(|e| {
        CliError::Usage(format!("trajectory is inconsistent with the configured system: {e}"))
    })?;
    let solver = cfg.solver()?;
    let opts = cfg.certificate()?;
    let prefixes = cfg.prefixes(traj.horizon())?;
    let rng = RngStream::new(seed).child("certify");
    let mut rows = Vec::with_capacity(prefixes.len());
    for &tp in &prefixes {
        let data = RegressionDataset::from_trajectory(&traj, &sys.basis, tp).map_err(runtime)?;
        let prob = CertificateProblem::from_trajectory(&traj, &sys.basis, tp)
            .map_err(|e| CliError::Usage(format!("attack trace: {e}")))?;
        let est = solve(&data, &solver).map_err(runtime)?;
        let report = certify_prefix(
            &sys.a_bar,
            &est.a_hat,
            &data,
            &prob,
            &opts,
            &mut rng.child_indexed("prefix", tp as u64),
        )
        .map_err(runtime)?;
        rows.push((tp, report));
    }
    create_out(&c.out)?;
    let path = c.out.join("certificate.csv");
    let mut buf = Vec::new();
    write_certificates(&mut buf, &rows, &system_meta(seed, &sys)).map_err(runtime)?;
    write_out(&path, buf)?;
    if let Some((tp, r)) = rows.last() {
        println!(
            "T' = {tp}: cert_value = {}, is_optimal = {}, is_unique = {}{}",
            format_float(r.cert_value),
            r.is_optimal,
            r.is_unique,
            if r.undetermined { " (uniqueness undetermined)" } else { "" }
        );
        println!(
            "loss_gap = {}, solution_gap = {}",
            format_float(r.loss_gap),
            format_float(r.solution_gap)
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn experiment(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let seed = resolve_seed(c, &cfg, None)?;
    let spec = cfg.experiment(seed)?;
    let output = run_scenario(&spec).map_err(runtime)?;
    create_out(&c.out)?;
    write_scenario_output(&c.out, &spec, &output).map_err(runtime)?;
    let dir: PathBuf = c.out.join(spec.scenario.as_str());
    match &output {
        ScenarioOutput::Sweep(series) => {
            for s in series {
                println!(
                    "{}: completed {}/{}, exploded {}, recovery T' = {}",
                    s.point.label(),
                    s.completed(),
                    s.seeds,
                    s.exploded.len(),
                    s.recovery_time(robust_sysid::experiments::RECOVERY_THRESHOLD)
                );
            }
        }
        ScenarioOutput::Trend(t) => {
            for (v, r) in t.values.iter().zip(&t.recovery_t) {
                println!("{} = {}: recovery T' = {r}", t.axis.as_str(), format_float(*v));
            }
            if t.defined {
                println!("spearman = {}", format_float(t.spearman));
            } else {
                println!("spearman undefined (reported as 0)");
            }
        }
        ScenarioOutput::Frequency(f) => {
            println!(
                "frequency = {} ({} of {} completed trials){}",
                format_float(f.frequency),
                f.hits,
                f.completed,
                f.bound
                    .map(|b| format!(", bound = {}, sigma = {}", format_float(b), format_float(f.sigma)))
                    .unwrap_or_default()
            );
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}
