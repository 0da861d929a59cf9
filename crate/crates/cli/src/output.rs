//! Result files: trajectory and sweep CSV, metrics, resolved config, plots
//! and a hashed manifest. Every file is written to a temporary name and
//! renamed into place.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ddfl_core::{loglog_slope, IoLog, Phase, RunMetrics, StepRecord, SweepRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioSpec;
use crate::presets::FitTarget;
use crate::svg::{Chart, Series};

/// A filesystem failure, tagged with the path involved.
#[derive(Debug)]
pub struct IoFailure {
    pub path: PathBuf,
    pub source: std::io::Error,
}

impl fmt::Display for IoFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I/O error on {}: {}", self.path.display(), self.source)
    }
}

impl std::error::Error for IoFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> IoFailure + '_ {
    move |source| IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `dir/name` via a sibling temporary file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, IoFailure> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    let mut f = fs::File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes).map_err(io_at(&tmp))?;
    f.sync_all().map_err(io_at(&tmp))?;
    drop(f);
    fs::rename(&tmp, &dest).map_err(io_at(&dest))?;
    Ok(dest)
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn trajectory_header(eta_dim: usize, rho: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "t", "phase", "u", "y"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=eta_dim).map(|i| format!("eta{i}")));
    h.extend((1..=rho).map(|i| format!("xi{i}")));
    h.extend((1..=rho).map(|i| format!("xihat{i}")));
    h.push("alphahat".into());
    h
}

pub fn trajectory_csv(log: &IoLog) -> Vec<u8> {
    let rho = log.rho();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(trajectory_header(log.eta_dim(), rho))
        .expect("writing to memory");
    for r in &log.records {
        let mut row = vec![
            r.k.to_string(),
            num(r.t),
            r.phase.as_str().to_string(),
            num(r.u),
            num(r.y),
        ];
        row.extend(r.eta.iter().map(|&v| num(v)));
        row.extend(r.xi.iter().map(|&v| num(v)));
        match &r.xi_hat {
            Some(xh) => row.extend(xh.iter().map(|&v| num(v))),
            None => row.extend(std::iter::repeat_n(String::new(), rho)),
        }
        row.push(r.alpha_hat.map(num).unwrap_or_default());
        w.write_record(&row).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Parses a trajectory file back into step records.
pub fn read_trajectory_csv<R: Read>(reader: R) -> anyhow::Result<Vec<StepRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| {
                h.strip_prefix(prefix).is_some_and(|rest| {
                    !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())
                })
            })
            .count()
    };
    let (eta_dim, rho) = (count("eta"), count("xi"));
    let expected = trajectory_header(eta_dim, rho);
    anyhow::ensure!(
        header.iter().eq(expected.iter().map(String::as_str)),
        "unexpected trajectory header"
    );
    let float = |s: &str| -> anyhow::Result<f64> { Ok(s.parse::<f64>()?) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let xi_at = 5 + eta_dim;
        let hat_at = xi_at + rho;
        let xi_hat = if f[hat_at].is_empty() {
            None
        } else {
            Some(
                f[hat_at..hat_at + rho]
                    .iter()
                    .map(|s| float(s))
                    .collect::<anyhow::Result<_>>()?,
            )
        };
        let last = f[hat_at + rho];
        out.push(StepRecord {
            k: f[0].parse()?,
            t: float(f[1])?,
            phase: Phase::parse(f[2]).ok_or_else(|| anyhow::anyhow!("unknown phase {:?}", f[2]))?,
            u: float(f[3])?,
            y: float(f[4])?,
            eta: f[5..xi_at]
                .iter()
                .map(|s| float(s))
                .collect::<anyhow::Result<_>>()?,
            xi: f[xi_at..hat_at]
                .iter()
                .map(|s| float(s))
                .collect::<anyhow::Result<_>>()?,
            xi_hat,
            alpha_hat: if last.is_empty() {
                None
            } else {
                Some(float(last)?)
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub metrics: RunMetrics,
    pub tail_fraction: f64,
    pub transient_cut: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub fit: FitTarget,
    pub slope_fit: Option<f64>,
    pub slope_e_beta: Option<f64>,
    pub slope_sup_exi: Option<f64>,
    /// Sampling time with the smallest `e_beta`.
    pub e_beta_argmin_t: f64,
    /// True when that minimum is strictly inside the grid.
    pub e_beta_interior_minimum: bool,
    pub seed: u64,
    pub repeats: usize,
    pub fresh_seeds: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report types serialize");
    s.push(b'\n');
    s
}

/// Writes the files in order, then a manifest covering them.
fn emit(dir: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Vec<PathBuf>, IoFailure> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut written = Vec::new();
    let mut manifest = Vec::new();
    for (name, bytes) in &files {
        written.push(write_atomic(dir, name, bytes)?);
        manifest.push(ManifestEntry {
            file: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
    }
    written.push(write_atomic(dir, "manifest.json", &json(&manifest))?);
    Ok(written)
}

fn run_plots(log: &IoLog) -> Vec<(String, Vec<u8>)> {
    let rho = log.rho();
    let mut xi = Chart::new("Tracked state", "t [s]", "xi");
    for i in 0..rho {
        xi = xi.with(Series::line(
            format!("xi{}", i + 1),
            log.records.iter().map(|r| (r.t, r.xi[i])).collect(),
        ));
    }
    let norm = Chart::new("Convergence of |xi|", "t [s]", "|xi|").with(Series::line(
        "|xi|",
        log.records
            .iter()
            .zip(log.xi_norms())
            .map(|(r, n)| (r.t, n))
            .collect(),
    ));
    let mut plots = vec![
        ("plot-xi.svg".to_string(), xi.render().into_bytes()),
        ("plot-xi-norm.svg".to_string(), norm.render().into_bytes()),
    ];
    if log.eta_dim() >= 2 {
        let eta = Chart::new("Zero dynamics", "eta1", "eta2").with(Series::line(
            "eta",
            log.records.iter().map(|r| (r.eta[0], r.eta[1])).collect(),
        ));
        plots.push(("plot-eta.svg".to_string(), eta.render().into_bytes()));
    }
    plots
}

pub fn emit_run(
    spec: &ScenarioSpec,
    log: &IoLog,
    metrics: &RunMetrics,
) -> Result<Vec<PathBuf>, IoFailure> {
    let report = RunReport {
        metrics: *metrics,
        tail_fraction: spec.config.tail_fraction,
        transient_cut: spec.config.transient_cut,
    };
    let mut files = vec![
        ("trajectory.csv".to_string(), trajectory_csv(log)),
        ("metrics.json".to_string(), json(&report)),
        ("config-resolved.json".to_string(), json(spec)),
    ];
    files.extend(run_plots(log));
    emit(&spec.output_dir, files)
}

pub fn sweep_report(spec: &ScenarioSpec, rows: &[SweepRow]) -> SweepReport {
    let plan = spec.sweep.as_ref().expect("sweep scenario has a plan");
    let t: Vec<f64> = rows.iter().map(|r| r.sampling_time).collect();
    let slope = |v: Vec<f64>| loglog_slope(&t, &v).ok();
    let slope_e_beta = slope(rows.iter().map(|r| r.e_beta).collect());
    let slope_sup_exi = slope(rows.iter().map(|r| r.sup_exi).collect());
    let argmin = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.e_beta.total_cmp(&b.1.e_beta))
        .map(|(i, _)| i)
        .unwrap_or(0);
    SweepReport {
        fit: plan.fit,
        slope_fit: match plan.fit {
            FitTarget::EBeta => slope_e_beta,
            FitTarget::SupExi => slope_sup_exi,
        },
        slope_e_beta,
        slope_sup_exi,
        e_beta_argmin_t: rows.get(argmin).map_or(f64::NAN, |r| r.sampling_time),
        e_beta_interior_minimum: argmin > 0 && argmin + 1 < rows.len(),
        seed: spec.config.excitation.seed,
        repeats: plan.repeats,
        fresh_seeds: plan.fresh_seeds,
    }
}

pub fn sweep_csv(rows: &[SweepRow], slope_fit: Option<f64>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["T", "e_beta", "sup_exi", "slope_fit"])
        .expect("writing to memory");
    let slope = slope_fit.map(num).unwrap_or_default();
    for r in rows {
        w.write_record([
            num(r.sampling_time),
            num(r.e_beta),
            num(r.sup_exi),
            slope.clone(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn emit_sweep(
    spec: &ScenarioSpec,
    rows: &[SweepRow],
    report: &SweepReport,
) -> Result<Vec<PathBuf>, IoFailure> {
    let label = |name: &str, s: Option<f64>| match s {
        Some(s) => format!("{name} (slope {s:.3})"),
        None => name.to_string(),
    };
    let mut chart =
        Chart::new("Estimation error against sampling time", "T [s]", "error").log_log();
    chart = chart.with(Series {
        label: label("e_beta", report.slope_e_beta),
        points: rows.iter().map(|r| (r.sampling_time, r.e_beta)).collect(),
        markers: true,
    });
    if rows.iter().any(|r| r.sup_exi > 0.0) {
        chart = chart.with(Series {
            label: label("sup e_xi", report.slope_sup_exi),
            points: rows.iter().map(|r| (r.sampling_time, r.sup_exi)).collect(),
            markers: true,
        });
    }
    let files = vec![
        ("sweep.csv".to_string(), sweep_csv(rows, report.slope_fit)),
        ("metrics.json".to_string(), json(report)),
        ("config-resolved.json".to_string(), json(spec)),
        ("plot-sweep.svg".to_string(), chart.render().into_bytes()),
    ];
    emit(&spec.output_dir, files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip_formatting() {
        for x in [0.1, 1.0 / 3.0, 2.5e-17, -1e300, 0.0, 123456789.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            trajectory_header(2, 2).join(","),
            "k,t,phase,u,y,eta1,eta2,xi1,xi2,xihat1,xihat2,alphahat"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_atomic(dir.path(), "a.txt", b"hello").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hello");
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.txt")]);
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = [SweepRow {
            sampling_time: 0.02,
            e_beta: 0.5,
            sup_exi: 0.25,
        }];
        let text = String::from_utf8(sweep_csv(&rows, Some(1.0))).unwrap();
        assert_eq!(text, "T,e_beta,sup_exi,slope_fit\n0.02,0.5,0.25,1.0\n");
    }
}
