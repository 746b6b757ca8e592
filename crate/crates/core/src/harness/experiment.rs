//! Monte Carlo batches, CSV output and the MANIFEST.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{Algo, ExperimentConfig};
use super::{empirical_cdf, MetricRow, MetricTable};
use crate::allocator::{run_primal_decomposition, AllocatorOptions, BudgetRecord, MasterOptions};
use crate::bca::{run_centralized, BcaMode, BcaOptions};
use crate::error::{Error, Result};
use crate::mse::{interference, worst_case_interference};
use crate::scenario::{derive_seed, generate, NetworkConfig};

pub const INTERFERENCE_HEADER: &str = "run,pu,link,nominal_w,worst_case_w,realized_w,limit_w";
pub const TRACE_HEADER: &str = "run,cycle,sum_mse,sum_utility";
pub const SUMMARY_HEADER: &str = "run,algo,final_sum_mse,cycles,feasible";
pub const BUDGETS_HEADER: &str = "run,master_iter,link,iota_w,lambda";
pub const SWEEP_HEADER: &str = "parameter,value,runs,mean_sum_mse,std_err,violation_rate";

/// Relative slack allowed on every interference limit.
pub const LIMIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceRow {
    pub pu: usize,
    pub link: usize,
    pub nominal: f64,
    pub worst_case: f64,
    pub realized: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub interference: Vec<InterferenceRow>,
    /// `(cycle, sum_mse, sum_utility)`, starting with the zero profile.
    pub trace: Vec<(usize, f64, f64)>,
    pub final_sum_mse: f64,
    pub final_sum_utility: f64,
    pub cycles: usize,
    pub converged: bool,
    /// No PU receives more than `ι^max` through the true channels.
    pub feasible: bool,
    /// Largest drop of the sum utility between cycles.
    pub max_decrease: f64,
    pub budgets: Vec<BudgetRecord>,
    /// Largest aggregate worst case over `ι^max` across master steps.
    pub max_aggregate_ratio: Option<f64>,
}

impl RunRecord {
    /// Total interference per PU through the true channels.
    pub fn realized_totals(&self, num_pu: usize) -> Vec<f64> {
        let mut t = vec![0.0; num_pu];
        for r in &self.interference {
            t[r.pu] += r.realized;
        }
        t
    }
}

pub fn bca_options(cfg: &ExperimentConfig, links: usize) -> BcaOptions {
    let mut o = BcaOptions::new(links);
    o.mode = if cfg.algo == Algo::BcaProximal { BcaMode::Proximal } else { BcaMode::Plain };
    o.tau = vec![cfg.tau; links];
    o.upsilon = cfg.upsilon;
    o.max_cycles = cfg.max_cycles;
    o.neighbor_threshold = cfg.neighbor_threshold;
    o
}

pub fn allocator_options(cfg: &ExperimentConfig, links: usize) -> AllocatorOptions {
    AllocatorOptions {
        bca: bca_options(cfg, links),
        master: MasterOptions {
            s0: cfg.step0,
            normalize: cfg.normalize_step,
            ..MasterOptions::default()
        },
        max_master: cfg.max_master,
        max_stall: cfg.max_stall,
        inner_to_convergence: false,
    }
}

/// One Monte Carlo run on fresh channels.
pub fn run_single(cfg: &ExperimentConfig, net: &NetworkConfig, run: usize) -> Result<RunRecord> {
    let seed = derive_seed(cfg.seed, run as u64);
    let mut net = net.clone();
    net.seed = seed;
    let ch = generate(&net)?;
    let links = ch.links();
    let (prof, trace, limits, budgets, agg) = match cfg.algo {
        Algo::PrimalDecomp => {
            let res = run_primal_decomposition(&ch, net.iota_max, &allocator_options(cfg, links))?;
            let agg = res
                .aggregate_worst_case
                .iter()
                .flatten()
                .fold(0.0f64, |m, &v| m.max(v / net.iota_max));
            (res.profile, res.trace, res.applied, res.history, Some(agg))
        }
        Algo::Nonrobust => {
            let budgets = net.equal_split_budgets();
            let (p, t) = run_centralized(&ch.without_uncertainty(), &budgets, &bca_options(cfg, links))?;
            (p, t, budgets, Vec::new(), None)
        }
        Algo::Bca | Algo::BcaProximal => {
            let budgets = net.equal_split_budgets();
            let (p, t) = run_centralized(&ch, &budgets, &bca_options(cfg, links))?;
            (p, t, budgets, Vec::new(), None)
        }
    };
    let mut rows = Vec::new();
    let mut totals = vec![0.0; ch.num_pu()];
    for pu in 0..ch.num_pu() {
        for k in 0..links {
            let (wc, _) = worst_case_interference(&ch.g_hat[pu][k], ch.eps[pu][k], &prof.q[k])?;
            let realized = interference(&ch, &prof.q[k], k, pu, true)?;
            totals[pu] += realized;
            rows.push(InterferenceRow {
                pu,
                link: k,
                nominal: interference(&ch, &prof.q[k], k, pu, false)?,
                worst_case: wc,
                realized,
                limit: limits[pu][k],
            });
        }
    }
    let last = trace.cycles.last().expect("trace holds the initial profile");
    Ok(RunRecord {
        run,
        seed,
        interference: rows,
        trace: trace.cycles.iter().map(|c| (c.cycle, c.sum_mse, c.sum_utility)).collect(),
        final_sum_mse: last.sum_mse,
        final_sum_utility: last.sum_utility,
        cycles: trace.cycle_count(),
        converged: trace.converged,
        feasible: totals.iter().all(|&t| t <= net.iota_max * (1.0 + LIMIT_TOL)),
        max_decrease: trace.max_decrease(),
        budgets,
        max_aggregate_ratio: agg,
    })
}

/// Runs `cfg.runs` instances on a bounded pool; results keep run order.
pub fn run_batch(cfg: &ExperimentConfig, net: &NetworkConfig) -> Result<Vec<Result<RunRecord>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..cfg.runs).into_par_iter().map(|r| run_single(cfg, net, r)).collect()))
}

pub fn interference_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{INTERFERENCE_HEADER}\n");
    for rec in records {
        for r in &rec.interference {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e}",
                rec.run, r.pu, r.link, r.nominal, r.worst_case, r.realized, r.limit
            );
        }
    }
    out
}

pub fn trace_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for rec in records {
        for (c, mse, u) in &rec.trace {
            let _ = writeln!(out, "{},{},{:e},{:e}", rec.run, c, mse, u);
        }
    }
    out
}

pub fn summary_csv(records: &[RunRecord], algo: Algo) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for rec in records {
        let _ = writeln!(
            out,
            "{},{},{:e},{},{}",
            rec.run,
            algo.name(),
            rec.final_sum_mse,
            rec.cycles,
            rec.feasible
        );
    }
    out
}

/// With several PUs the `link` column holds `pu·K + k`.
pub fn budgets_csv(records: &[RunRecord], links: usize) -> String {
    let mut out = format!("{BUDGETS_HEADER}\n");
    for rec in records {
        for b in &rec.budgets {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e}",
                rec.run,
                b.master_iter,
                b.pu * links + b.link,
                b.iota,
                b.lambda
            );
        }
    }
    out
}

pub fn metric_table(records: &[RunRecord], num_pu: usize) -> Result<MetricTable> {
    let mut rows = Vec::new();
    let mut realized_totals = Vec::new();
    let mut worst_totals = Vec::new();
    for rec in records {
        let ratio = |f: fn(&InterferenceRow) -> f64| {
            rec.interference
                .iter()
                .map(|r| if r.limit > 0.0 { f(r) / r.limit } else { 0.0 })
                .fold(0.0f64, f64::max)
        };
        let metrics = [
            ("final_sum_mse", rec.final_sum_mse),
            ("final_sum_utility", rec.final_sum_utility),
            ("cycles", rec.cycles as f64),
            ("feasible", rec.feasible as u8 as f64),
            ("max_worst_case_ratio", ratio(|r| r.worst_case)),
            ("max_realized_ratio", ratio(|r| r.realized)),
        ];
        for (name, value) in metrics {
            rows.push(MetricRow {
                run: rec.run,
                seed: rec.seed,
                metric: name.to_string(),
                value,
            });
        }
        realized_totals.extend(rec.realized_totals(num_pu));
        let mut w = vec![0.0; num_pu];
        for r in &rec.interference {
            w[r.pu] += r.worst_case;
        }
        worst_totals.extend(w);
    }
    let mut cdfs = Vec::new();
    if !records.is_empty() && num_pu > 0 {
        cdfs.push(("realized_total_w".to_string(), empirical_cdf(&realized_totals)?));
        cdfs.push(("worst_case_total_w".to_string(), empirical_cdf(&worst_totals)?));
    }
    Ok(MetricTable { rows, cdfs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: usize,
    pub mean_sum_mse: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub violation_rate: f64,
}

impl SweepPoint {
    pub fn from_records(value: f64, records: &[RunRecord]) -> SweepPoint {
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.final_sum_mse).sum::<f64>() / n;
        let var = if records.len() > 1 {
            records.iter().map(|r| (r.final_sum_mse - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        SweepPoint {
            value,
            runs: records.len(),
            mean_sum_mse: mean,
            std_err: (var / n).sqrt(),
            violation_rate: records.iter().filter(|r| !r.feasible).count() as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: MetricTable,
    pub records: Vec<RunRecord>,
    pub sweep: Vec<SweepPoint>,
    pub files: Vec<PathBuf>,
}

fn write_file(dir: &Path, rel: &str, content: &str, files: &mut Vec<(String, String)>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, content)?;
    files.push((rel.to_string(), hex::encode(Sha256::digest(content.as_bytes()))));
    Ok(())
}

fn write_run_files(dir: &Path, prefix: &str, cfg: &ExperimentConfig, links: usize, records: &[RunRecord], files: &mut Vec<(String, String)>) -> Result<()> {
    write_file(dir, &format!("{prefix}interference_cdf.csv"), &interference_csv(records), files)?;
    write_file(dir, &format!("{prefix}mse_trace.csv"), &trace_csv(records), files)?;
    write_file(dir, &format!("{prefix}summary.csv"), &summary_csv(records, cfg.algo), files)?;
    write_file(dir, &format!("{prefix}budgets.csv"), &budgets_csv(records, links), files)
}

fn settings(cfg: &ExperimentConfig, net: &NetworkConfig) -> Vec<(String, String)> {
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut s = vec![
        ("scenario", cfg.scenario.clone()),
        ("algo", cfg.algo.name().to_string()),
        ("runs", cfg.runs.to_string()),
        ("seed", cfg.seed.to_string()),
        ("links", net.links.to_string()),
        ("tx_antennas", list(&net.tx_antennas)),
        ("rx_antennas", list(&net.rx_antennas)),
        ("num_pu", net.num_pu.to_string()),
        ("pu_antennas", list(&net.pu_antennas)),
        ("eta", format!("{:e}", net.eta)),
        ("d_direct", net.d_direct.iter().map(|d| format!("{d:e}")).collect::<Vec<_>>().join(",")),
        ("d_cross_range", format!("{:e},{:e}", net.d_cross_range.0, net.d_cross_range.1)),
        ("d_pu_range", format!("{:e},{:e}", net.d_pu_range.0, net.d_pu_range.1)),
        ("snr_db", format!("{:e}", net.snr_db)),
        ("noise_w", format!("{:e}", net.noise_w)),
        ("iota_max", format!("{:e}", net.iota_max)),
        ("rho", format!("{:e}", net.rho)),
        ("tau", format!("{:e}", cfg.tau)),
        ("upsilon", format!("{:e}", cfg.upsilon)),
        ("max_cycles", cfg.max_cycles.to_string()),
        ("neighbor_threshold", format!("{:e}", cfg.neighbor_threshold)),
        ("step0", format!("{:e}", cfg.step0.unwrap_or(net.iota_max / 10.0))),
        ("step_schedule", "s0/sqrt(l)".to_string()),
        ("normalize_step", cfg.normalize_step.to_string()),
        ("max_master", cfg.max_master.to_string()),
        ("max_stall", cfg.max_stall.to_string()),
    ];
    if let Some(sw) = &cfg.sweep {
        s.push(("sweep_parameter", sw.param.name().to_string()));
        s.push(("sweep_values", sw.values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")));
    }
    s.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn write_manifest(dir: &Path, settings: &[(String, String)], files: &[(String, String)], failure: Option<&str>) -> Result<()> {
    let mut out = String::from("# cogbeam manifest v1\n");
    let _ = writeln!(out, "complete = {}", failure.is_none());
    if let Some(f) = failure {
        let _ = writeln!(out, "error = {}", f.replace('\n', " "));
    }
    for (k, v) in settings {
        let _ = writeln!(out, "{k} = {v}");
    }
    for (rel, hash) in files {
        let _ = writeln!(out, "{hash}  {rel}");
    }
    fs::write(dir.join("MANIFEST"), out)?;
    Ok(())
}

/// Re-hashes every file listed in `dir/MANIFEST`.
pub fn verify_manifest(dir: &Path) -> Result<Vec<(String, bool)>> {
    let text = fs::read_to_string(dir.join("MANIFEST"))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.contains(" = ") {
            continue;
        }
        let Some((hash, rel)) = line.split_once("  ") else {
            continue;
        };
        let ok = fs::read(dir.join(rel))
            .map(|b| hex::encode(Sha256::digest(&b)) == hash)
            .unwrap_or(false);
        out.push((rel.to_string(), ok));
    }
    Ok(out)
}

fn split_results(results: Vec<Result<RunRecord>>) -> (Vec<RunRecord>, Option<(usize, Error)>) {
    let mut ok = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => ok.push(rec),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some((i, e));
                }
            }
        }
    }
    (ok, first_err)
}

/// Runs the configured experiment and writes its CSV files and MANIFEST to
/// `cfg.out_dir`. A sweep writes one sub-directory per grid point plus
/// `sweep.csv`. On a run failure the completed runs are still written and
/// the MANIFEST is marked incomplete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let base = cfg.effective_network()?;
    base.validate()?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut all = Vec::new();
    let mut points = Vec::new();
    let mut failure: Option<(String, Error)> = None;
    match &cfg.sweep {
        None => {
            let (records, err) = split_results(run_batch(cfg, &base)?);
            write_run_files(dir, "", cfg, base.links, &records, &mut files)?;
            if let Some((run, e)) = err {
                failure = Some((format!("run {run}: {e}"), e));
            }
            all = records;
        }
        Some(sw) => {
            let mut table = format!("{SWEEP_HEADER}\n");
            for (i, &v) in sw.values.iter().enumerate() {
                let mut net = base.clone();
                sw.param.apply(&mut net, v);
                net.validate()?;
                let (records, err) = split_results(run_batch(cfg, &net)?);
                write_run_files(dir, &format!("point_{i:02}/"), cfg, net.links, &records, &mut files)?;
                if let Some((run, e)) = err {
                    failure = Some((format!("point {i}, run {run}: {e}"), e));
                    break;
                }
                let p = SweepPoint::from_records(v, &records);
                let _ = writeln!(
                    table,
                    "{},{:e},{},{:e},{:e},{:e}",
                    sw.param.name(),
                    p.value,
                    p.runs,
                    p.mean_sum_mse,
                    p.std_err,
                    p.violation_rate
                );
                points.push(p);
                all.extend(records);
            }
            write_file(dir, "sweep.csv", &table, &mut files)?;
        }
    }
    write_manifest(dir, &settings(cfg, &base), &files, failure.as_ref().map(|(m, _)| m.as_str()))?;
    if let Some((_, e)) = failure {
        return Err(e);
    }
    Ok(ExperimentOutput {
        table: metric_table(&all, base.num_pu)?,
        records: all,
        sweep: points,
        files: files.iter().map(|(rel, _)| dir.join(rel)).collect(),
    })
}
