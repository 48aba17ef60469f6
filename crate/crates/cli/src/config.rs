//! Run configuration: a TOML file with one table per module, plus
//! `--set section.key=value` overrides.
//!
//! ```toml
//! [run]
//! seed = 42
//! prefixes = [100, 500]        # or "all", or a stride: { stride = 10 }
//!
//! [system]
//! basis = "multiquadric"       # linear | multiquadric | sine | saturated_sine
//! n = 3
//! horizon = 500
//! ground_truth = "spectral_uniform"
//! rho = 1.0
//!
//! [attack]
//! model = "lipschitz_subgaussian"
//! p = 0.7
//! ```

use std::path::Path;

use robust_sysid::attacks::AttackModel;
use robust_sysid::certificates::CertificateOptions;
use robust_sysid::dynamics::{make_ground_truth, Basis, BasisKind, GroundTruthStyle, SystemSpec};
use robust_sysid::estimator::SolverConfig;
use robust_sysid::experiments::{ExperimentSpec, GridPoint, Scenario, TrendAxis};
use robust_sysid::{Mat, RngStream};
use toml::{Table, Value};

use crate::CliError;

/// Every accepted key, by section.
const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["seed", "prefixes"]),
    (
        "system",
        &[
            "basis",
            "n",
            "m",
            "horizon",
            "ground_truth",
            "rho",
            "lo",
            "hi",
            "a_bar",
            "centers",
        ],
    ),
    ("attack", &["model", "p"]),
    (
        "solver",
        &["max_outer", "tol", "eps_init", "eps_min", "eps_decay", "polish_iters"],
    ),
    ("certificate", &["restarts", "iters", "dual_sweeps"]),
    (
        "experiment",
        &["scenario", "seeds", "stride", "horizon", "trials", "axis", "p", "n", "m", "rho"],
    ),
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    table: Table,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_str(&text, overrides)
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = text.parse::<Table>().map_err(|e| usage(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self { table };
        cfg.check_schema()?;
        Ok(cfg)
    }

    fn check_schema(&self) -> Result<(), CliError> {
        for (section, value) in &self.table {
            let keys = SCHEMA
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, k)| *k)
                .ok_or_else(|| usage(format!("unknown config section `[{section}]`")))?;
            let tbl = value
                .as_table()
                .ok_or_else(|| usage(format!("`{section}` must be a section, not a value")))?;
            for key in tbl.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(usage(format!("unknown config key `{section}.{key}`")));
                }
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&Value> {
        let (section, k) = key.split_once('.')?;
        self.table.get(section)?.as_table()?.get(k)
    }

    pub fn has(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    fn require(&self, key: &str) -> Result<&Value, CliError> {
        self.get(key)
            .ok_or_else(|| usage(format!("missing required config key `{key}`")))
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(usage(format!("`{key}` must be a string, got {v}"))),
        }
    }

    pub fn req_str(&self, key: &str) -> Result<&str, CliError> {
        self.require(key)?;
        Ok(self.str(key)?.expect("checked"))
    }

    pub fn float(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => as_float(v)
                .map(Some)
                .ok_or_else(|| usage(format!("`{key}` must be a number, got {v}"))),
        }
    }

    pub fn req_float(&self, key: &str) -> Result<f64, CliError> {
        self.require(key)?;
        Ok(self.float(key)?.expect("checked"))
    }

    pub fn uint(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(usage(format!("`{key}` must be a non-negative integer, got {v}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.uint(key)?.map(|v| v as usize))
    }

    pub fn req_usize(&self, key: &str) -> Result<usize, CliError> {
        self.require(key)?;
        Ok(self.usize(key)?.expect("checked"))
    }

    /// A number or an array of numbers.
    pub fn float_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| as_float(v).ok_or_else(|| usage(format!("`{key}` entries must be numbers"))))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => as_float(v)
                .map(|x| Some(vec![x]))
                .ok_or_else(|| usage(format!("`{key}` must be a number or a list of numbers"))),
        }
    }

    /// A number, a row, or a list of rows.
    pub fn matrix(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, CliError> {
        let bad = || usage(format!("`{key}` must be a number, a list, or a list of lists"));
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(rows)) if rows.iter().all(|r| r.is_array()) => rows
                .iter()
                .map(|r| {
                    r.as_array()
                        .expect("checked")
                        .iter()
                        .map(|v| as_float(v).ok_or_else(bad))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(Value::Array(row)) => Ok(Some(vec![row
                .iter()
                .map(|v| as_float(v).ok_or_else(bad))
                .collect::<Result<Vec<_>, _>>()?])),
            Some(v) => as_float(v).map(|x| Some(vec![vec![x]])).ok_or_else(bad),
        }
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        self.uint("run.seed")
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let mut s = SolverConfig::default();
        if let Some(v) = self.usize("solver.max_outer")? {
            s.max_outer = v;
        }
        if let Some(v) = self.float("solver.tol")? {
            s.tol = v;
        }
        if let Some(v) = self.float("solver.eps_init")? {
            s.eps_init = v;
        }
        if let Some(v) = self.float("solver.eps_min")? {
            s.eps_min = v;
        }
        if let Some(v) = self.float("solver.eps_decay")? {
            s.eps_decay = v;
        }
        if let Some(v) = self.usize("solver.polish_iters")? {
            s.polish_iters = v;
        }
        s.validate().map_err(|e| usage(format!("[solver]: {e}")))?;
        Ok(s)
    }

    pub fn certificate(&self) -> Result<CertificateOptions, CliError> {
        let mut c = CertificateOptions::default();
        if let Some(v) = self.usize("certificate.restarts")? {
            c.restarts = v;
        }
        if let Some(v) = self.usize("certificate.iters")? {
            c.iters = v;
        }
        if let Some(v) = self.usize("certificate.dual_sweeps")? {
            c.dual_sweeps = v;
        }
        Ok(c)
    }

    pub fn attack(&self) -> Result<(AttackModel, f64), CliError> {
        let model = AttackModel::parse(self.req_str("attack.model")?)
            .map_err(|e| usage(format!("attack.model: {e}")))?;
        let p = self.req_float("attack.p")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(usage(format!("attack.p = {p} is outside [0, 1]")));
        }
        Ok((model, p))
    }

    /// The basis alone (multiquadric centers come from `seed`).
    pub fn basis(&self, seed: u64) -> Result<Basis, CliError> {
        let rng = RngStream::new(seed);
        let kind = BasisKind::parse(self.req_str("system.basis")?)
            .map_err(|e| usage(format!("system.basis: {e}")))?;
        let n = self.req_usize("system.n")?;
        let basis = match kind {
            BasisKind::Linear => Basis::linear(n),
            BasisKind::SineBounded => Basis::sine_bounded(n),
            BasisKind::SaturatedSine => Basis::saturated_sine(n, self.req_usize("system.m")?),
            BasisKind::MultiquadricLipschitz => match self.matrix("system.centers")? {
                Some(c) => Basis::multiquadric(c),
                None => Basis::random_multiquadric(n, &mut rng.child("basis")),
            },
        }
        .map_err(|e| usage(format!("[system]: {e}")))?;
        Ok(basis)
    }

    /// Builds the system; random parts (centers, ground truth) come from
    /// child streams of `seed`, so the same config and seed always give the
    /// same system.
    pub fn system(&self, seed: u64) -> Result<SystemSpec, CliError> {
        let rng = RngStream::new(seed);
        let basis = self.basis(seed)?;
        let n = basis.n();
        let horizon = self.req_usize("system.horizon")?;
        let m = basis.m();

        let a_bar = if let Some(rows) = self.matrix("system.a_bar")? {
            if self.has("system.ground_truth") && self.str("system.ground_truth")? != Some("explicit") {
                return Err(usage("give either system.a_bar or system.ground_truth, not both"));
            }
            Mat::from_rows(&rows).map_err(|e| usage(format!("system.a_bar: {e}")))?
        } else {
            let rho = self.float("system.rho")?;
            let need_rho = |name: &str| rho.ok_or_else(|| usage(format!("ground truth `{name}` needs system.rho")));
            let gt = self.req_str("system.ground_truth")?;
            let style = match gt {
                "spectral_uniform" => GroundTruthStyle::SpectralUniform(need_rho(gt)?),
                "spectral_fixed" => GroundTruthStyle::SpectralFixed(need_rho(gt)?),
                "scaled_identity" => GroundTruthStyle::ScaledIdentity(need_rho(gt)?),
                "first_feature" => GroundTruthStyle::FirstFeatureSelector,
                "bounded_block" => GroundTruthStyle::BoundedBlock {
                    lo: self.float("system.lo")?.unwrap_or(-100.0),
                    hi: self.float("system.hi")?.unwrap_or(100.0),
                },
                other => {
                    return Err(usage(format!(
                        "system.ground_truth: unknown style `{other}` (spectral_uniform, spectral_fixed, \
                         scaled_identity, first_feature, bounded_block, explicit)"
                    )))
                }
            };
            make_ground_truth(style, n, m, &mut rng.child("ground-truth"))
                .map_err(|e| usage(format!("system.ground_truth: {e}")))?
        };
        SystemSpec::new(a_bar, basis, horizon).map_err(|e| usage(format!("[system]: {e}")))
    }

    /// Prefix lengths to evaluate on a trajectory of length `horizon`.
    pub fn prefixes(&self, horizon: usize) -> Result<Vec<usize>, CliError> {
        let list = match self.get("run.prefixes") {
            None => vec![horizon],
            Some(Value::String(s)) if s == "all" => (1..=horizon).collect(),
            Some(Value::Table(t)) => {
                let stride = t
                    .get("stride")
                    .and_then(Value::as_integer)
                    .filter(|&s| s >= 1)
                    .ok_or_else(|| usage("run.prefixes table must be { stride = k } with k ≥ 1"))?
                    as usize;
                let mut v: Vec<usize> = (1..).map(|k| k * stride).take_while(|&t| t <= horizon).collect();
                if v.last() != Some(&horizon) {
                    v.push(horizon);
                }
                v
            }
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| {
                    v.as_integer()
                        .filter(|&i| i >= 1)
                        .map(|i| i as usize)
                        .ok_or_else(|| usage("run.prefixes entries must be positive integers"))
                })
                .collect::<Result<Vec<_>, _>>()?,
            Some(v) => return Err(usage(format!("run.prefixes: unsupported value {v}"))),
        };
        if let Some(bad) = list.iter().find(|&&t| t == 0 || t > horizon) {
            return Err(usage(format!("run.prefixes: {bad} is outside 1..={horizon}")));
        }
        Ok(list)
    }

    pub fn experiment(&self, seed: u64) -> Result<ExperimentSpec, CliError> {
        let scenario = Scenario::parse(self.req_str("experiment.scenario")?)
            .map_err(|e| usage(format!("experiment.scenario: {e}")))?;
        let mut spec = ExperimentSpec::defaults(scenario, seed);
        if let Some(v) = self.usize("experiment.seeds")? {
            spec.seeds = v;
        }
        if let Some(v) = self.usize("experiment.stride")? {
            spec.prefix_stride = v;
        }
        if let Some(v) = self.usize("experiment.horizon")? {
            spec.horizon = v;
        }
        if let Some(v) = self.usize("experiment.trials")? {
            spec.trials = v;
        }
        if let Some(a) = self.str("experiment.axis")? {
            spec.axis = TrendAxis::parse(a).map_err(|e| usage(format!("experiment.axis: {e}")))?;
        }
        let ps = self.float_list("experiment.p")?;
        let ns = self.float_list("experiment.n")?;
        let rhos = self.float_list("experiment.rho")?;
        let m = self.usize("experiment.m")?;
        if ps.is_some() || ns.is_some() || rhos.is_some() || m.is_some() {
            let base = spec.grid[0];
            let ps = ps.unwrap_or_else(|| vec![base.p]);
            let ns = ns.unwrap_or_else(|| vec![base.n as f64]);
            let rhos = rhos.unwrap_or_else(|| vec![base.rho]);
            let mut grid = Vec::new();
            for &n in &ns {
                if n.fract() != 0.0 || n < 1.0 {
                    return Err(usage(format!("experiment.n: {n} is not a positive integer")));
                }
                for &p in &ps {
                    for &rho in &rhos {
                        let mut g = GridPoint::for_scenario(scenario, p, n as usize, rho);
                        if scenario == Scenario::CounterexampleNonUnique {
                            g.n = 1;
                            g.m = m.unwrap_or(base.m);
                        }
                        grid.push(g);
                    }
                }
            }
            spec.grid = grid;
        }
        spec.solver = self.solver()?;
        spec.cert = self.certificate()?;
        spec.validate().map_err(|e| usage(format!("[experiment]: {e}")))?;
        Ok(spec)
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Applies `section.key=value`; the value is read as TOML, falling back to a
/// bare string.
fn apply_override(table: &mut Table, text: &str) -> Result<(), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects section.key=value, got `{text}`")))?;
    let (section, k) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| usage(format!("--set key `{key}` must be section.key")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let sec = entry
        .as_table_mut()
        .ok_or_else(|| usage(format!("`{section}` is not a section")))?;
    sec.insert(k.to_string(), value);
    Ok(())
}
