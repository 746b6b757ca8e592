use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cogbeam::harness::{self, parse_config, Algo, ExperimentConfig, Sweep, SweepParam, REFERENCE_CONFIG};

#[derive(Parser)]
#[command(
    name = "cogbeam",
    version,
    about = "Monte Carlo experiments for robust MIMO cognitive-radio covariance design",
    after_long_help = concat!(
        "Configuration files use `[section]` headers and `key = value` lines. ",
        "Command-line flags override the file. Reference file with every default:\n\n",
        include_str!("../../core/config/reference.ini")
    )
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo batch and write CSV files plus a MANIFEST.
    Simulate(Common),
    /// Run a parameter sweep, one batch per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept parameter: iota_max, rho or snr_db (overrides [sweep]).
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated grid values (overrides [sweep]).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run the invariant and certificate checks on generated fixtures and
    /// verify the MANIFEST in --out when present.
    Check {
        #[command(flatten)]
        common: Common,
        /// Number of fixture instances.
        #[arg(long, default_value_t = 3)]
        fixtures: usize,
    },
    /// Print the reference configuration.
    ReferenceConfig,
}

#[derive(Args)]
struct Common {
    /// Configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// PU geometry preset: c1 or c2.
    #[arg(long)]
    scenario: Option<String>,
    /// bca, bca_proximal, primal_decomp or nonrobust.
    #[arg(long)]
    algo: Option<String>,
    /// Monte Carlo runs (default 200).
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scenario {
            if s != "c1" && s != "c2" {
                bail!("--scenario must be c1 or c2, got `{s}`");
            }
            cfg.scenario = s.clone();
        }
        if let Some(a) = &self.algo {
            cfg.algo = Algo::parse(a).with_context(|| format!("unknown --algo `{a}`"))?;
        }
        if let Some(r) = self.runs {
            if r == 0 {
                bail!("--runs must be >= 1");
            }
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }
}

fn report(out: &harness::ExperimentOutput, cfg: &ExperimentConfig) {
    let n = out.records.len();
    let mean = out.records.iter().map(|r| r.final_sum_mse).sum::<f64>() / n.max(1) as f64;
    let violations = out.records.iter().filter(|r| !r.feasible).count();
    println!("algo {} scenario {} runs {n}", cfg.algo.name(), cfg.scenario);
    println!("mean final sum-MSE {mean:.6}");
    println!("runs exceeding the PU limit {violations}/{n}");
    for p in &out.sweep {
        println!(
            "  value {:e}: mean sum-MSE {:.6} +- {:.6}, violation rate {:.3}",
            p.value, p.mean_sum_mse, p.std_err, p.violation_rate
        );
    }
    println!("wrote {} files to {}", out.files.len() + 1, cfg.out_dir.display());
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(common) => {
            let mut cfg = common.load()?;
            cfg.sweep = None;
            let out = harness::run_experiment(&cfg)?;
            report(&out, &cfg);
        }
        Command::Sweep { common, parameter, values } => {
            let mut cfg = common.load()?;
            match (parameter, values) {
                (Some(p), Some(v)) => {
                    let param = SweepParam::parse(&p).with_context(|| format!("unknown sweep parameter `{p}`"))?;
                    cfg.sweep = Some(Sweep { param, values: v });
                }
                (None, None) => {}
                _ => bail!("--parameter and --values go together"),
            }
            if cfg.sweep.is_none() {
                bail!("no sweep given: add a [sweep] section or --parameter/--values");
            }
            let out = harness::run_experiment(&cfg)?;
            report(&out, &cfg);
        }
        Command::Check { common, fixtures } => {
            let cfg = common.load()?;
            let results = harness::run_checks(&cfg, fixtures)?;
            let mut ok = true;
            for c in &results {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
        Command::ReferenceConfig => print!("{REFERENCE_CONFIG}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
