//! Experiment configuration files.
//!
//! The grammar is line oriented: `[section]` headers, `key = value` pairs,
//! and comments starting with `#` or `;`. Lists are comma separated. Every
//! key has a default, so an empty file is a valid configuration. The
//! shipped reference file (see [`REFERENCE_CONFIG`]) lists every key.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::scenario::{scenario_preset, BudgetMode, NetworkConfig};

/// Reference configuration with every key at its default value.
pub const REFERENCE_CONFIG: &str = include_str!("../../config/reference.ini");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Bca,
    BcaProximal,
    PrimalDecomp,
    Nonrobust,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Bca => "bca",
            Algo::BcaProximal => "bca_proximal",
            Algo::PrimalDecomp => "primal_decomp",
            Algo::Nonrobust => "nonrobust",
        }
    }

    pub fn parse(s: &str) -> Option<Algo> {
        Some(match s {
            "bca" => Algo::Bca,
            "bca_proximal" => Algo::BcaProximal,
            "primal_decomp" => Algo::PrimalDecomp,
            "nonrobust" => Algo::Nonrobust,
            _ => return None,
        })
    }

    pub fn is_robust(self) -> bool {
        self != Algo::Nonrobust
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    IotaMax,
    Rho,
    SnrDb,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::IotaMax => "iota_max",
            SweepParam::Rho => "rho",
            SweepParam::SnrDb => "snr_db",
        }
    }

    pub fn parse(s: &str) -> Option<SweepParam> {
        Some(match s {
            "iota_max" => SweepParam::IotaMax,
            "rho" => SweepParam::Rho,
            "snr_db" => SweepParam::SnrDb,
            _ => return None,
        })
    }

    pub fn apply(self, net: &mut NetworkConfig, v: f64) {
        match self {
            SweepParam::IotaMax => net.iota_max = v,
            SweepParam::Rho => net.rho = v,
            SweepParam::SnrDb => net.snr_db = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub algo: Algo,
    pub runs: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub network: NetworkConfig,
    pub tau: f64,
    pub upsilon: f64,
    pub max_cycles: usize,
    pub neighbor_threshold: f64,
    /// Master step `s₀`; `None` means `ι^max / 10`.
    pub step0: Option<f64>,
    pub normalize_step: bool,
    pub max_master: usize,
    pub max_stall: usize,
    pub sweep: Option<Sweep>,
    pub out_dir: PathBuf,
    /// `d_pu_range` was given explicitly, so the scenario preset keeps it.
    pub network_overrides_pu_range: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "c1".into(),
            algo: Algo::Bca,
            runs: 200,
            seed: 1,
            threads: 0,
            network: NetworkConfig::default(),
            tau: 0.1,
            upsilon: 1e-5,
            max_cycles: 100,
            neighbor_threshold: 0.0,
            step0: None,
            normalize_step: true,
            max_master: 100,
            max_stall: 5,
            sweep: None,
            out_dir: PathBuf::from("results"),
            network_overrides_pu_range: false,
        }
    }
}

impl ExperimentConfig {
    /// Network configuration with the scenario preset applied.
    pub fn effective_network(&self) -> Result<NetworkConfig> {
        let mut net = self.network.clone();
        if !self.network_overrides_pu_range {
            net = scenario_preset(&self.scenario, &net)?;
        }
        net.budget_mode = if self.algo == Algo::PrimalDecomp {
            BudgetMode::Aggregate
        } else {
            BudgetMode::PrepartitionedEqual
        };
        Ok(net)
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["scenario", "algo", "runs", "seed", "threads", "out_dir"]),
    (
        "network",
        &[
            "links",
            "tx_antennas",
            "rx_antennas",
            "num_pu",
            "pu_antennas",
            "eta",
            "d_direct",
            "d_cross_range",
            "d_pu_range",
            "snr_db",
            "noise_w",
            "iota_max",
            "rho",
            "budget_mode",
        ],
    ),
    ("bca", &["tau", "upsilon", "max_cycles", "neighbor_threshold"]),
    ("allocator", &["step0", "normalize_step", "max_master", "max_stall"]),
    ("sweep", &["parameter", "values"]),
];

struct Entry {
    line: usize,
    value: String,
}

fn range(line: usize, msg: impl Into<String>) -> Error {
    Error::Range { line, msg: msg.into() }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn float(e: &Entry, key: &str) -> Result<f64> {
    let v: f64 = e.value.parse().map_err(|_| parse_err(e.line, format!("`{key}` expects a number, got `{}`", e.value)))?;
    if !v.is_finite() {
        return Err(range(e.line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn int(e: &Entry, key: &str) -> Result<i64> {
    e.value
        .parse()
        .map_err(|_| parse_err(e.line, format!("`{key}` expects an integer, got `{}`", e.value)))
}

fn count(e: &Entry, key: &str, min: i64) -> Result<usize> {
    let v = int(e, key)?;
    if v < min {
        return Err(range(e.line, format!("`{key}` must be >= {min}, got {v}")));
    }
    Ok(v as usize)
}

fn positive(e: &Entry, key: &str) -> Result<f64> {
    let v = float(e, key)?;
    if !(v > 0.0) {
        return Err(range(e.line, format!("`{key}` must be > 0, got {v}")));
    }
    Ok(v)
}

fn list(e: &Entry, key: &str) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| parse_err(e.line, format!("`{key}` expects numbers, got `{t}`")))
        })
        .collect()
}

fn boolean(e: &Entry, key: &str) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(parse_err(e.line, format!("`{key}` expects true/false, got `{other}`"))),
    }
}

/// Per-link list: one value for every link, or exactly `n` values.
fn per_item<T: Copy>(e: &Entry, key: &str, vals: Vec<T>, n: usize) -> Result<Vec<T>> {
    match vals.len() {
        1 => Ok(vec![vals[0]; n]),
        len if len == n => Ok(vals),
        len => Err(range(e.line, format!("`{key}` has {len} entries, expected 1 or {n}"))),
    }
}

fn pair(e: &Entry, key: &str) -> Result<(f64, f64)> {
    let v = list(e, key)?;
    if v.len() != 2 || !(v[0] > 0.0) || v[0] > v[1] {
        return Err(range(e.line, format!("`{key}` must be `min, max` with 0 < min <= max")));
    }
    Ok((v[0], v[1]))
}

/// Parses a configuration; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: HashMap<(String, String), Entry> = HashMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.split(['#', ';']).next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::UnknownKey { line, key: format!("[{name}]") });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = t
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{t}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section
            .clone()
            .ok_or_else(|| parse_err(line, "key outside of a section"))?;
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| k.contains(&key)).unwrap_or(false);
        if !known {
            return Err(Error::UnknownKey { line, key: format!("{sec}.{key}") });
        }
        if value.is_empty() {
            return Err(parse_err(line, format!("`{key}` has no value")));
        }
        let prev = entries.insert(
            (sec.clone(), key.to_string()),
            Entry {
                line,
                value: value.to_string(),
            },
        );
        if let Some(p) = prev {
            return Err(parse_err(line, format!("`{sec}.{key}` already set at line {}", p.line)));
        }
    }
    let get = |s: &str, k: &str| entries.get(&(s.to_string(), k.to_string()));

    let mut cfg = ExperimentConfig::default();
    if let Some(e) = get("experiment", "scenario") {
        if e.value != "c1" && e.value != "c2" {
            return Err(range(e.line, format!("scenario must be c1 or c2, got `{}`", e.value)));
        }
        cfg.scenario = e.value.clone();
    }
    if let Some(e) = get("experiment", "algo") {
        cfg.algo = Algo::parse(&e.value)
            .ok_or_else(|| range(e.line, format!("algo must be bca, bca_proximal, primal_decomp or nonrobust, got `{}`", e.value)))?;
    }
    if let Some(e) = get("experiment", "runs") {
        cfg.runs = count(e, "runs", 1)?;
    }
    if let Some(e) = get("experiment", "seed") {
        cfg.seed = count(e, "seed", 0)? as u64;
    }
    if let Some(e) = get("experiment", "threads") {
        cfg.threads = count(e, "threads", 0)?;
    }
    if let Some(e) = get("experiment", "out_dir") {
        cfg.out_dir = PathBuf::from(&e.value);
    }

    let net = &mut cfg.network;
    let links = match get("network", "links") {
        Some(e) => count(e, "links", 1)?,
        None => net.links,
    };
    let num_pu = match get("network", "num_pu") {
        Some(e) => count(e, "num_pu", 0)?,
        None => net.num_pu,
    };
    net.resize(links, num_pu);
    let antennas = |key: &str, n: usize, cur: &mut Vec<usize>| -> Result<()> {
        if let Some(e) = get("network", key) {
            let vals = list(e, key)?;
            if vals.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                return Err(range(e.line, format!("`{key}` entries must be integers >= 1")));
            }
            *cur = per_item(e, key, vals.into_iter().map(|v| v as usize).collect(), n)?;
        }
        Ok(())
    };
    antennas("tx_antennas", links, &mut net.tx_antennas)?;
    antennas("rx_antennas", links, &mut net.rx_antennas)?;
    antennas("pu_antennas", num_pu, &mut net.pu_antennas)?;
    if let Some(e) = get("network", "eta") {
        net.eta = positive(e, "eta")?;
    }
    if let Some(e) = get("network", "d_direct") {
        let vals = list(e, "d_direct")?;
        if vals.iter().any(|&v| !(v > 0.0)) {
            return Err(range(e.line, "`d_direct` entries must be > 0"));
        }
        net.d_direct = per_item(e, "d_direct", vals, links)?;
    }
    if let Some(e) = get("network", "d_cross_range") {
        net.d_cross_range = pair(e, "d_cross_range")?;
    }
    if let Some(e) = get("network", "d_pu_range") {
        net.d_pu_range = pair(e, "d_pu_range")?;
    }
    if let Some(e) = get("network", "snr_db") {
        net.snr_db = float(e, "snr_db")?;
    }
    if let Some(e) = get("network", "noise_w") {
        net.noise_w = positive(e, "noise_w")?;
    }
    if let Some(e) = get("network", "iota_max") {
        net.iota_max = positive(e, "iota_max")?;
    }
    if let Some(e) = get("network", "rho") {
        net.rho = float(e, "rho")?;
        if net.rho < 0.0 {
            return Err(range(e.line, format!("`rho` must be >= 0, got {}", net.rho)));
        }
    }
    if let Some(e) = get("network", "budget_mode") {
        let aggregate = match e.value.as_str() {
            "equal" => false,
            "aggregate" => true,
            other => return Err(range(e.line, format!("budget_mode must be equal or aggregate, got `{other}`"))),
        };
        if aggregate != (cfg.algo == Algo::PrimalDecomp) {
            return Err(range(e.line, "aggregate budgets go with algo = primal_decomp and only with it"));
        }
    }
    cfg.network_overrides_pu_range = get("network", "d_pu_range").is_some();

    if let Some(e) = get("bca", "tau") {
        cfg.tau = positive(e, "tau")?;
    }
    if let Some(e) = get("bca", "upsilon") {
        cfg.upsilon = positive(e, "upsilon")?;
    }
    if let Some(e) = get("bca", "max_cycles") {
        cfg.max_cycles = count(e, "max_cycles", 1)?;
    }
    if let Some(e) = get("bca", "neighbor_threshold") {
        cfg.neighbor_threshold = float(e, "neighbor_threshold")?;
        if cfg.neighbor_threshold < 0.0 {
            return Err(range(e.line, "`neighbor_threshold` must be >= 0"));
        }
    }
    if let Some(e) = get("allocator", "step0") {
        cfg.step0 = if e.value == "auto" { None } else { Some(positive(e, "step0")?) };
    }
    if let Some(e) = get("allocator", "normalize_step") {
        cfg.normalize_step = boolean(e, "normalize_step")?;
    }
    if let Some(e) = get("allocator", "max_master") {
        cfg.max_master = count(e, "max_master", 1)?;
    }
    if let Some(e) = get("allocator", "max_stall") {
        cfg.max_stall = count(e, "max_stall", 1)?;
    }
    match (get("sweep", "parameter"), get("sweep", "values")) {
        (None, None) => {}
        (Some(p), Some(v)) => {
            let param = SweepParam::parse(&p.value)
                .ok_or_else(|| range(p.line, format!("sweep parameter must be iota_max, rho or snr_db, got `{}`", p.value)))?;
            let values = list(v, "values")?;
            let ok = |x: f64| match param {
                SweepParam::IotaMax => x > 0.0,
                SweepParam::Rho => x >= 0.0,
                SweepParam::SnrDb => x.is_finite(),
            };
            if values.iter().any(|&x| !ok(x)) {
                return Err(range(v.line, format!("sweep values out of range for {}", param.name())));
            }
            cfg.sweep = Some(Sweep { param, values });
        }
        (Some(e), None) | (None, Some(e)) => {
            return Err(range(e.line, "a sweep needs both `parameter` and `values`"));
        }
    }
    cfg.network.validate().map_err(|e| range(0, e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_noise_w;

    #[test]
    fn reference_file_is_the_baseline() {
        let cfg = parse_config(REFERENCE_CONFIG).unwrap();
        let n = &cfg.network;
        assert_eq!(n.links, 4);
        assert_eq!(n.eta, 3.5);
        assert_eq!(n.d_direct, vec![30.0; 4]);
        assert_eq!(n.snr_db, 15.0);
        assert_eq!(n.iota_max, 4e-7);
        assert_eq!(n.rho, 0.05);
        assert_eq!(cfg.tau, 0.1);
        assert_eq!(n.tx_antennas, vec![2; 4]);
        assert!((n.noise_w - default_noise_w()).abs() < 1e-12 * default_noise_w());
        assert_eq!(cfg.sweep, None);
        let mut plain = parse_config("").unwrap();
        plain.network.noise_w = n.noise_w;
        assert_eq!(plain, cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
        assert_eq!(parse_config("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn negative_runs_is_a_range_error_at_its_line() {
        let err = parse_config("[experiment]\nalgo = bca\nruns = -1\n").unwrap_err();
        assert_eq!(err, Error::Range { line: 3, msg: "`runs` must be >= 1, got -1".into() });
    }

    #[test]
    fn unknown_keys_and_sections() {
        assert!(matches!(parse_config("[network]\nfoo = 1"), Err(Error::UnknownKey { line: 2, .. })));
        assert!(matches!(parse_config("[nope]"), Err(Error::UnknownKey { line: 1, .. })));
        assert!(matches!(parse_config("runs = 3"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("[experiment]\nruns 3"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("[experiment]\nruns = x"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_config("[experiment]\nruns = 3\nruns = 4"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn lists_sweeps_and_overrides() {
        let cfg = parse_config(
            "[experiment]\nalgo = primal_decomp\nscenario = c2\n[network]\nlinks = 3\ntx_antennas = 4, 2, 2\n\
             budget_mode = aggregate\n[sweep]\nparameter = iota_max\nvalues = 1e-7, 2e-7\n",
        )
        .unwrap();
        assert_eq!(cfg.network.tx_antennas, vec![4, 2, 2]);
        assert_eq!(cfg.network.rx_antennas, vec![2, 2, 2]);
        let net = cfg.effective_network().unwrap();
        assert_eq!(net.d_pu_range, (30.0, 100.0));
        assert_eq!(net.budget_mode, BudgetMode::Aggregate);
        assert_eq!(cfg.sweep.unwrap().values, vec![1e-7, 2e-7]);
        assert!(matches!(
            parse_config("[network]\nlinks = 3\ntx_antennas = 2, 2"),
            Err(Error::Range { line: 3, .. })
        ));
        assert!(matches!(parse_config("[network]\nbudget_mode = aggregate"), Err(Error::Range { line: 2, .. })));
        assert!(matches!(parse_config("[sweep]\nparameter = eta\nvalues = 1"), Err(Error::Range { line: 2, .. })));
    }
}
