//! CSV serialization of trajectories, estimates, certificate reports and
//! experiment series.
//!
//! Every file starts with one `#` metadata line carrying the toolkit version
//! and the master seed, followed by a header row. Floats are written in the
//! shortest form that parses back to the same `f64`.

use std::io::{BufRead, BufReader, Read, Write};

use crate::certificates::CertificateReport;
use crate::dynamics::{Attack, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::EstimateResult;
use crate::experiments::{MetricSeries, SeedRow, SeriesRow};
use crate::linalg::Mat;
use crate::VERSION;

/// Shortest round-trip decimal; scientific notation outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("`{s}` is not a number")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("`{s}` is not a non-negative integer")))
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::Parse(format!("`{other}` is not a 0/1 flag"))),
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// The `# robust-sysid version=… seed=… key=value …` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub version: String,
    pub seed: u64,
    pub fields: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(seed: u64) -> Self {
        Self {
            version: VERSION.to_string(),
            seed,
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("# robust-sysid version={} seed={}", self.version, self.seed);
        for (k, v) in &self.fields {
            s.push(' ');
            s.push_str(k);
            s.push('=');
            s.push_str(v);
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let body = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("metadata line must start with `#`".into()))?;
        let mut tokens = body.split_whitespace();
        if tokens.next() != Some("robust-sysid") {
            return Err(Error::Parse("metadata line is not from robust-sysid".into()));
        }
        let mut version = None;
        let mut seed = None;
        let mut fields = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("metadata token `{tok}` is not key=value")))?;
            match k {
                "version" => version = Some(v.to_string()),
                "seed" => {
                    seed = Some(
                        v.parse::<u64>()
                            .map_err(|_| Error::Parse(format!("metadata seed `{v}`")))?,
                    )
                }
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Self {
            version: version.ok_or_else(|| Error::Parse("metadata lacks version".into()))?,
            seed: seed.ok_or_else(|| Error::Parse("metadata lacks seed".into()))?,
            fields,
        })
    }
}

fn write_table<W: Write>(w: W, meta: &Metadata, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = w;
    writeln!(w, "{}", meta.to_line())?;
    let mut csv = csv::WriterBuilder::new().from_writer(w);
    csv.write_record(header)?;
    for row in rows {
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// A parsed CSV: optional metadata, header and string records.
struct Table {
    meta: Option<Metadata>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table<R: Read>(r: R) -> Result<Table> {
    let mut reader = BufReader::new(r);
    let mut meta = None;
    let mut rest = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if meta.is_none() {
                meta = Metadata::parse_line(trimmed).ok();
            }
            continue;
        }
        rest.push_str(&line);
        break;
    }
    reader.read_to_string(&mut rest)?;
    if rest.trim().is_empty() {
        return Err(Error::Parse("file has no header row".into()));
    }
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { meta, header, rows })
}

fn expect_header(found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        return Err(Error::Parse(format!(
            "unexpected header `{}`, expected `{}`",
            found.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(indexed("x", n));
    h.push("attacked".into());
    h.extend(indexed("dbar", n));
    h
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, meta: &Metadata) -> Result<()> {
    let n = traj.n();
    let rows: Vec<Vec<String>> = traj
        .states
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| format_float(*v)));
            row.push(flag(traj.is_attacked(t)).into());
            row.extend(traj.d_bar(t).iter().map(|v| format_float(*v)));
            row
        })
        .collect();
    write_table(w, meta, &trajectory_header(n), &rows)
}

/// Parses and structurally validates a trajectory file. Dynamics are not
/// checked here since the file does not carry the system.
pub fn read_trajectory<R: Read>(r: R) -> Result<(Trajectory, Option<Metadata>)> {
    let table = read_table(r)?;
    let cols = table.header.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(Error::Parse(format!("trajectory header has {cols} columns")));
    }
    let n = (cols - 2) / 2;
    expect_header(&table.header, &trajectory_header(n))?;
    if table.rows.is_empty() {
        return Err(Error::Parse("trajectory has no state rows".into()));
    }
    let mut states = Vec::with_capacity(table.rows.len());
    let mut attacks = std::collections::BTreeMap::new();
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Parse(format!("row {i} has {} fields, expected {cols}", row.len())));
        }
        let t = parse_usize(&row[0])?;
        if t != i {
            return Err(Error::Parse(format!("row {i} has t={t}; rows must be t=0,1,…")));
        }
        let x = row[1..=n].iter().map(|s| parse_float(s)).collect::<Result<Vec<_>>>()?;
        let attacked = parse_flag(&row[n + 1])?;
        let d = row[n + 2..].iter().map(|s| parse_float(s)).collect::<Result<Vec<_>>>()?;
        if attacked {
            let attack = Attack::from_vector(d)
                .map_err(|e| Error::Invariant(format!("row t={t} is flagged attacked: {e}")))?;
            attacks.insert(t, attack);
        } else if d.iter().any(|v| *v != 0.0) {
            return Err(Error::Invariant(format!(
                "row t={t} is not flagged attacked but has a nonzero dbar"
            )));
        }
        states.push(x);
    }
    let traj = Trajectory { states, attacks };
    traj.validate(None, 0.0)?;
    Ok((traj, table.meta))
}

fn matrix_header(prefix: &str, n: usize, m: usize) -> Vec<String> {
    (1..=n)
        .flat_map(|i| (1..=m).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

pub fn write_estimates<W: Write>(w: W, rows: &[(usize, EstimateResult)], meta: &Metadata) -> Result<()> {
    let (n, m) = rows.first().map_or((0, 0), |(_, r)| r.a_hat.shape());
    let mut header: Vec<String> = ["Tprime", "objective", "converged", "iterations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(matrix_header("a", n, m));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(tp, r)| {
            let mut row = vec![
                tp.to_string(),
                format_float(r.objective),
                flag(r.converged).into(),
                r.iterations.to_string(),
            ];
            row.extend(r.a_hat.as_slice().iter().map(|v| format_float(*v)));
            row
        })
        .collect();
    write_table(w, meta, &header, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub t_prime: usize,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub a_hat: Mat,
}

/// Reads an estimate file; `(n, m)` gives the matrix shape.
pub fn read_estimates<R: Read>(r: R, n: usize, m: usize) -> Result<Vec<EstimateRow>> {
    let table = read_table(r)?;
    let mut expected: Vec<String> = ["Tprime", "objective", "converged", "iterations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    expected.extend(matrix_header("a", n, m));
    expect_header(&table.header, &expected)?;
    table
        .rows
        .iter()
        .map(|row| {
            let data = row[4..].iter().map(|s| parse_float(s)).collect::<Result<Vec<_>>>()?;
            Ok(EstimateRow {
                t_prime: parse_usize(&row[0])?,
                objective: parse_float(&row[1])?,
                converged: parse_flag(&row[2])?,
                iterations: parse_usize(&row[3])?,
                a_hat: Mat::new(n, m, data)?,
            })
        })
        .collect()
}

const CERT_HEADER: [&str; 9] = [
    "Tprime",
    "loss_gap",
    "solution_gap",
    "cert_value",
    "uniq_margin",
    "nec_slack",
    "rank",
    "is_optimal",
    "is_unique",
];

pub fn write_certificates<W: Write>(
    w: W,
    rows: &[(usize, CertificateReport)],
    meta: &Metadata,
) -> Result<()> {
    let header: Vec<String> = CERT_HEADER.iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(tp, r)| {
            vec![
                tp.to_string(),
                format_float(r.loss_gap),
                format_float(r.solution_gap),
                format_float(r.cert_value),
                format_float(r.uniqueness_margin),
                format_float(r.necessary_slack),
                r.degeneracy_rank.to_string(),
                flag(r.is_optimal).into(),
                flag(r.is_unique).into(),
            ]
        })
        .collect();
    write_table(w, meta, &header, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow {
    pub t_prime: usize,
    pub loss_gap: f64,
    pub solution_gap: f64,
    pub cert_value: f64,
    pub uniq_margin: f64,
    pub nec_slack: f64,
    pub rank: usize,
    pub is_optimal: bool,
    pub is_unique: bool,
}

pub fn read_certificates<R: Read>(r: R) -> Result<Vec<CertificateRow>> {
    let table = read_table(r)?;
    let header: Vec<String> = CERT_HEADER.iter().map(|s| s.to_string()).collect();
    expect_header(&table.header, &header)?;
    table
        .rows
        .iter()
        .map(|row| {
            Ok(CertificateRow {
                t_prime: parse_usize(&row[0])?,
                loss_gap: parse_float(&row[1])?,
                solution_gap: parse_float(&row[2])?,
                cert_value: parse_float(&row[3])?,
                uniq_margin: parse_float(&row[4])?,
                nec_slack: parse_float(&row[5])?,
                rank: parse_usize(&row[6])?,
                is_optimal: parse_flag(&row[7])?,
                is_unique: parse_flag(&row[8])?,
            })
        })
        .collect()
}

const SERIES_HEADER: [&str; 6] = [
    "Tprime",
    "mean_loss_gap",
    "mean_solution_gap",
    "mean_cert_value",
    "mean_scale",
    "completed",
];

const RAW_HEADER: [&str; 7] = [
    "seed",
    "Tprime",
    "loss_gap",
    "solution_gap",
    "cert_value",
    "scale",
    "degenerate",
];

/// Per-point `series.csv`: one row of seed means per evaluated prefix.
pub fn write_series<W: Write>(w: W, series: &MetricSeries, meta: &Metadata) -> Result<()> {
    let header: Vec<String> = SERIES_HEADER.iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = series
        .rows
        .iter()
        .map(|r| {
            vec![
                r.t_prime.to_string(),
                format_float(r.mean_loss_gap),
                format_float(r.mean_solution_gap),
                format_float(r.mean_cert_value),
                format_float(r.mean_scale),
                r.completed.to_string(),
            ]
        })
        .collect();
    write_table(w, meta, &header, &body)
}

pub fn read_series<R: Read>(r: R) -> Result<(Option<Metadata>, Vec<SeriesRow>)> {
    let table = read_table(r)?;
    let header: Vec<String> = SERIES_HEADER.iter().map(|s| s.to_string()).collect();
    expect_header(&table.header, &header)?;
    let rows = table
        .rows
        .iter()
        .map(|row| {
            Ok(SeriesRow {
                t_prime: parse_usize(&row[0])?,
                mean_loss_gap: parse_float(&row[1])?,
                mean_solution_gap: parse_float(&row[2])?,
                mean_cert_value: parse_float(&row[3])?,
                mean_scale: parse_float(&row[4])?,
                completed: parse_usize(&row[5])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table.meta, rows))
}

/// Per-point `raw.csv`: every (seed, prefix) evaluation.
pub fn write_raw<W: Write>(w: W, rows: &[SeedRow], meta: &Metadata) -> Result<()> {
    let header: Vec<String> = RAW_HEADER.iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.t_prime.to_string(),
                format_float(r.loss_gap),
                format_float(r.solution_gap),
                format_float(r.cert_value),
                format_float(r.scale),
                flag(r.degenerate).into(),
            ]
        })
        .collect();
    write_table(w, meta, &header, &body)
}

/// Generic writer for small summary tables whose cells are already strings.
pub fn write_rows<W: Write>(w: W, header: &[&str], rows: &[Vec<String>], meta: &Metadata) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_table(w, meta, &header, rows)
}

/// Generic reader returning the metadata, header and string cells.
pub fn read_rows<R: Read>(r: R) -> Result<(Option<Metadata>, Vec<String>, Vec<Vec<String>>)> {
    let t = read_table(r)?;
    Ok((t.meta, t.header, t.rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Basis, SystemSpec};
    use crate::rng::RngStream;

    #[test]
    fn floats_round_trip() {
        let mut rng = RngStream::new(3);
        let mut values = vec![0.0, -0.0, 1.0, 0.1, 1e-4, 9.99e-5, 1e15, 1e300, -5e-324, 123456.789];
        for _ in 0..1000 {
            values.push(rng.normal() * 10f64.powi((rng.uniform(-30.0, 30.0)) as i32));
        }
        for v in values {
            let s = format_float(v);
            assert_eq!(parse_float(&s).unwrap().to_bits(), v.to_bits(), "{v} → {s}");
        }
        assert_eq!(format_float(1e-5), "1e-5");
        assert_eq!(format_float(0.25), "0.25");
        assert!(format_float(f64::NAN) == "NaN");
    }

    #[test]
    fn metadata_round_trip() {
        let m = Metadata::new(42).with("scenario", "lipschitz_frequency");
        let back = Metadata::parse_line(&m.to_line()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("scenario"), Some("lipschitz_frequency"));
        assert!(Metadata::parse_line("# something else").is_err());
    }

    #[test]
    fn trajectory_round_trip() {
        let sys = SystemSpec::new(Mat::identity(2).scaled(0.9), Basis::linear(2).unwrap(), 20).unwrap();
        let mut rng = RngStream::new(5);
        let traj = simulate(
            &sys,
            &[0, 3, 7],
            |_, _, r: &mut RngStream| vec![r.normal(), r.normal() / 3.0],
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, &Metadata::new(5)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2 + 21);
        assert!(text.lines().nth(1).unwrap() == "t,x_1,x_2,attacked,dbar_1,dbar_2");
        let (back, meta) = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
        assert_eq!(meta.unwrap().seed, 5);
        back.validate(Some(&sys), 0.0).unwrap();
    }

    #[test]
    fn trajectory_rejections() {
        let head = "t,x_1,attacked,dbar_1\n";
        let bad_attacked = format!("{head}0,0,1,0\n1,0,0,0\n");
        assert!(matches!(read_trajectory(bad_attacked.as_bytes()), Err(Error::Invariant(_))));
        let bad_clean = format!("{head}0,0,0,1\n1,1,0,0\n");
        assert!(matches!(read_trajectory(bad_clean.as_bytes()), Err(Error::Invariant(_))));
        assert!(matches!(read_trajectory(head.as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_trajectory("".as_bytes()), Err(Error::Parse(_))));
        let bad_t = format!("{head}0,0,0,0\n2,0,0,0\n");
        assert!(read_trajectory(bad_t.as_bytes()).is_err());
        let last_attacked = format!("{head}0,0,0,0\n1,0,1,1\n");
        assert!(read_trajectory(last_attacked.as_bytes()).is_err());
    }
}
