//! CSV artifacts. Every float is written as `{:.16e}` (17 significant digits),
//! which round-trips doubles bit-exactly.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::forward::{MomentsReport, Trajectory};
use crate::measures::GridMeasure;
use crate::ode::IntegratorStats;
use crate::sensitivity::SensitivityPath;
use crate::stochastic::{MlRun, ReplicaSummary};
use crate::validation::ConvergenceTable;

pub const MEASURE_HEADER: &str = "mass,weight";
pub const TRAJECTORY_HEADER: &str = "t,mass,weight,overflow_mass,overflow_number";
pub const MOMENTS_HEADER: &str = "t,p,value";
pub const SENSITIVITY_HEADER: &str = "t,param_index,mass,weight";
pub const ROUTES_HEADER: &str = "t,f_id,direct,representation,abs_diff";
pub const CONVERGENCE_HEADER: &str = "N,err_mu_2eps,err_sigma_1";
pub const STOCHASTIC_HEADER: &str = "t,replica,mass,weight,stderr";

/// Lossless text form of a double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_measure<W: Write>(mut w: W, m: &GridMeasure) -> io::Result<()> {
    writeln!(w, "{MEASURE_HEADER}")?;
    for (k, v) in m.weights().iter().enumerate() {
        writeln!(w, "{},{}", k + 1, fmt_f64(*v))?;
    }
    writeln!(
        w,
        "# overflow_mass={} overflow_number={}",
        fmt_f64(m.overflow_mass),
        fmt_f64(m.overflow_number)
    )
}

fn parse_float(line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{what}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_mass(line: usize, field: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::parse(line, format!("mass: expected a positive integer, got {field:?}")))
}

fn parse_overflow_comment(line: usize, text: &str) -> Result<(f64, f64)> {
    let body = text.trim_start_matches('#').trim();
    let mut mass = None;
    let mut number = None;
    for part in body.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected key=value, got {part:?}")))?;
        let v = parse_float(line, value, key)?;
        let slot = match key {
            "overflow_mass" => &mut mass,
            "overflow_number" => &mut number,
            other => return Err(Error::parse(line, format!("unknown key {other:?}"))),
        };
        if slot.replace(v).is_some() {
            return Err(Error::parse(line, format!("duplicate key {key:?}")));
        }
    }
    match (mass, number) {
        (Some(m), Some(n)) => Ok((m, n)),
        _ => Err(Error::parse(line, "overflow comment needs overflow_mass and overflow_number")),
    }
}

fn split_fields<'a>(line: usize, text: &'a str, expected: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != expected {
        return Err(Error::parse(
            line,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn expect_header<'a>(
    it: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
) -> Result<()> {
    match it.next() {
        Some((_, l)) if l.trim() == header => Ok(()),
        Some((n, l)) => Err(Error::parse(n, format!("expected header {header:?}, found {l:?}"))),
        None => Err(Error::parse(1, "empty input")),
    }
}

pub fn parse_measure(text: &str) -> Result<GridMeasure> {
    let mut it = lines(text);
    expect_header(&mut it, MEASURE_HEADER)?;
    let mut weights = Vec::new();
    let mut overflow = None;
    for (n, l) in it {
        if overflow.is_some() {
            return Err(Error::parse(n, "content after the overflow comment"));
        }
        if l.trim_start().starts_with('#') {
            overflow = Some(parse_overflow_comment(n, l)?);
            continue;
        }
        let f = split_fields(n, l, 2)?;
        let k = parse_mass(n, f[0])?;
        if k != weights.len() + 1 {
            return Err(Error::parse(n, format!("expected mass {}, found {k}", weights.len() + 1)));
        }
        weights.push(parse_float(n, f[1], "weight")?);
    }
    if weights.is_empty() {
        return Err(Error::parse(1, "measure has no rows"));
    }
    let (om, on) = overflow.unwrap_or((0.0, 0.0));
    Ok(GridMeasure::from_parts(weights, om, on))
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for (t, m) in traj.times().iter().zip(traj.measures()) {
        let (t, om, on) = (fmt_f64(*t), fmt_f64(m.overflow_mass), fmt_f64(m.overflow_number));
        for (k, v) in m.weights().iter().enumerate() {
            writeln!(w, "{t},{},{},{om},{on}", k + 1, fmt_f64(*v))?;
        }
    }
    Ok(())
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut it = lines(text);
    expect_header(&mut it, TRAJECTORY_HEADER)?;
    let mut times: Vec<f64> = Vec::new();
    let mut measures: Vec<GridMeasure> = Vec::new();
    let mut current: Option<(f64, Vec<f64>, f64, f64)> = None;
    let mut n_max: Option<usize> = None;
    let close = |n: usize,
                 cur: (f64, Vec<f64>, f64, f64),
                 times: &mut Vec<f64>,
                 measures: &mut Vec<GridMeasure>,
                 n_max: &mut Option<usize>|
     -> Result<()> {
        let (t, w, om, on) = cur;
        match *n_max {
            Some(expected) if expected != w.len() => {
                return Err(Error::parse(
                    n,
                    format!("checkpoint t = {t} has {} masses, expected {expected}", w.len()),
                ))
            }
            _ => *n_max = Some(w.len()),
        }
        times.push(t);
        measures.push(GridMeasure::from_parts(w, om, on));
        Ok(())
    };
    for (n, l) in it {
        let f = split_fields(n, l, 5)?;
        let t = parse_float(n, f[0], "t")?;
        let k = parse_mass(n, f[1])?;
        let w = parse_float(n, f[2], "weight")?;
        let om = parse_float(n, f[3], "overflow_mass")?;
        let on = parse_float(n, f[4], "overflow_number")?;
        let same = matches!(&current, Some((ct, ..)) if ct.to_bits() == t.to_bits());
        if !same {
            if let Some(cur) = current.take() {
                if !(t > cur.0) {
                    return Err(Error::parse(n, format!("time {t} does not increase")));
                }
                close(n, cur, &mut times, &mut measures, &mut n_max)?;
            }
            current = Some((t, Vec::new(), om, on));
        }
        let cur = current.as_mut().expect("set above");
        if k != cur.1.len() + 1 {
            return Err(Error::parse(n, format!("expected mass {}, found {k}", cur.1.len() + 1)));
        }
        if cur.2.to_bits() != om.to_bits() || cur.3.to_bits() != on.to_bits() {
            return Err(Error::parse(n, "overflow columns differ within one checkpoint"));
        }
        cur.1.push(w);
    }
    let last_line = text.lines().count().max(1);
    match current {
        Some(cur) => close(last_line, cur, &mut times, &mut measures, &mut n_max)?,
        None => return Err(Error::parse(last_line, "trajectory has no rows")),
    }
    Trajectory::new(times, measures, IntegratorStats::default())
}

pub fn write_moments<W: Write>(mut w: W, rep: &MomentsReport) -> io::Result<()> {
    writeln!(w, "{MOMENTS_HEADER}")?;
    for (t, row) in rep.times.iter().zip(&rep.values) {
        for (p, v) in rep.powers.iter().zip(row) {
            writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*p), fmt_f64(*v))?;
        }
    }
    Ok(())
}

pub fn write_sensitivity<W: Write>(mut w: W, sens: &SensitivityPath) -> io::Result<()> {
    writeln!(w, "{SENSITIVITY_HEADER}")?;
    for (t, b) in sens.times().iter().zip(sens.blocks()) {
        let t = fmt_f64(*t);
        for (m, c) in b.components.iter().enumerate() {
            for (k, v) in c.weights().iter().enumerate() {
                writeln!(w, "{t},{m},{},{}", k + 1, fmt_f64(*v))?;
            }
        }
    }
    Ok(())
}

/// One line of the route comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteRow {
    pub t: f64,
    pub f_id: String,
    pub direct: f64,
    pub representation: f64,
}

impl RouteRow {
    pub fn abs_diff(&self) -> f64 {
        (self.direct - self.representation).abs()
    }
}

pub fn write_routes<W: Write>(mut w: W, rows: &[RouteRow]) -> io::Result<()> {
    writeln!(w, "{ROUTES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.t),
            r.f_id,
            fmt_f64(r.direct),
            fmt_f64(r.representation),
            fmt_f64(r.abs_diff())
        )?;
    }
    Ok(())
}

pub fn write_convergence<W: Write>(mut w: W, table: &ConvergenceTable) -> io::Result<()> {
    writeln!(w, "{CONVERGENCE_HEADER}")?;
    for r in &table.rows {
        writeln!(w, "{},{},{}", fmt_f64(r.level), fmt_f64(r.err_mu), fmt_f64(r.err_sigma))?;
    }
    Ok(())
}

/// Per-replica rows (empty `stderr`) followed by rows with `replica = mean`.
///
/// `replicas[r][i]` is replica `r` at `summary.times[i]`.
pub fn write_stochastic<W: Write>(
    mut w: W,
    replicas: &[&[GridMeasure]],
    summary: &ReplicaSummary,
) -> io::Result<()> {
    writeln!(w, "{STOCHASTIC_HEADER}")?;
    for (r, path) in replicas.iter().enumerate() {
        for (t, m) in summary.times.iter().zip(path.iter()) {
            let t = fmt_f64(*t);
            for (k, v) in m.weights().iter().enumerate() {
                writeln!(w, "{t},{r},{},{},", k + 1, fmt_f64(*v))?;
            }
        }
    }
    write_summary_rows(&mut w, summary)
}

/// Replica paths of an ensemble, in the shape [`write_stochastic`] takes.
pub fn replica_paths(runs: &[MlRun]) -> Vec<&[GridMeasure]> {
    runs.iter().map(|r| r.measures.as_slice()).collect()
}

/// Rows with `replica = mean` only.
pub fn write_summary_rows<W: Write>(mut w: W, summary: &ReplicaSummary) -> io::Result<()> {
    for ((t, m), se) in summary.times.iter().zip(&summary.mean).zip(&summary.stderr) {
        let t = fmt_f64(*t);
        for (k, (v, s)) in m.weights().iter().zip(se).enumerate() {
            writeln!(w, "{t},mean,{},{},{}", k + 1, fmt_f64(*v), fmt_f64(*s))?;
        }
    }
    Ok(())
}
