//! Network instance generation: geometry, path loss, Rayleigh channels and
//! norm-bounded uncertainty around the CR-to-PU estimates.
//!
//! Randomness comes from ChaCha20 with one stream per channel object. The
//! stream id encodes what is being drawn and for which link pair, so the
//! channel of link pair `(k, j)` does not depend on how many links exist or in
//! which order the generator visits them:
//!
//! | stream id                      | draws                                   |
//! |--------------------------------|-----------------------------------------|
//! | `1 << 56 \| k << 28 \| j`      | distance of `H_{k,j}` (if cross) + entries |
//! | `2 << 56 \| pu << 28 \| k`     | CR-to-PU distance + entries of `Ĝ_k`     |
//! | `3 << 56 \| pu << 28 \| k`     | uncertainty realization `ΔG_k`          |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{complex_gaussian, ComplexMatrix, C64};

/// How the PU interference limit is divided among CR links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    PrepartitionedEqual,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub links: usize,
    /// Transmit antennas `M_k`, one entry per link.
    pub tx_antennas: Vec<usize>,
    /// Receive antennas `N_k`, one entry per link.
    pub rx_antennas: Vec<usize>,
    pub num_pu: usize,
    /// PU receive antennas `L`, one entry per PU.
    pub pu_antennas: Vec<usize>,
    pub eta: f64,
    /// Direct-link distances in meters, one per link.
    pub d_direct: Vec<f64>,
    pub d_cross_range: (f64, f64),
    pub d_pu_range: (f64, f64),
    pub snr_db: f64,
    /// Receiver noise power `σ²` (watts), identical on every link.
    pub noise_w: f64,
    pub iota_max: f64,
    pub budget_mode: BudgetMode,
    pub rho: f64,
    pub seed: u64,
}

/// Noise power giving a 1 W power cap at 15 dB SNR on a 30 m link with
/// path-loss exponent 3.5.
pub fn default_noise_w() -> f64 {
    30f64.powf(-3.5) / 10f64.powf(1.5)
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::uniform(4, 2, 2, 2)
    }
}

impl NetworkConfig {
    /// Baseline geometry with `links` identical links.
    pub fn uniform(links: usize, m: usize, n: usize, l: usize) -> Self {
        NetworkConfig {
            links,
            tx_antennas: vec![m; links],
            rx_antennas: vec![n; links],
            num_pu: 1,
            pu_antennas: vec![l],
            eta: 3.5,
            d_direct: vec![30.0; links],
            d_cross_range: (30.0, 100.0),
            d_pu_range: (70.0, 100.0),
            snr_db: 15.0,
            noise_w: default_noise_w(),
            iota_max: 4e-7,
            budget_mode: BudgetMode::PrepartitionedEqual,
            rho: 0.05,
            seed: 1,
        }
    }

    /// Resizes the per-link and per-PU vectors, keeping the first entry as
    /// the fill value.
    pub fn resize(&mut self, links: usize, num_pu: usize) {
        let m = self.tx_antennas.first().copied().unwrap_or(2);
        let n = self.rx_antennas.first().copied().unwrap_or(2);
        let d = self.d_direct.first().copied().unwrap_or(30.0);
        let l = self.pu_antennas.first().copied().unwrap_or(2);
        self.links = links;
        self.num_pu = num_pu;
        self.tx_antennas.resize(links, m);
        self.rx_antennas.resize(links, n);
        self.d_direct.resize(links, d);
        self.pu_antennas.resize(num_pu, l);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.links == 0 {
            return bad("K >= 1 required".into());
        }
        if self.tx_antennas.len() != self.links
            || self.rx_antennas.len() != self.links
            || self.d_direct.len() != self.links
        {
            return bad("per-link vectors must have K entries".into());
        }
        if self.pu_antennas.len() != self.num_pu {
            return bad("pu_antennas must have num_pu entries".into());
        }
        if self
            .tx_antennas
            .iter()
            .chain(&self.rx_antennas)
            .chain(&self.pu_antennas)
            .any(|&a| a == 0)
        {
            return bad("all antenna counts must be >= 1".into());
        }
        if !(self.eta > 0.0) {
            return bad(format!("eta > 0 required, got {}", self.eta));
        }
        if self.d_direct.iter().any(|&d| !(d > 0.0)) {
            return bad("distances must be > 0".into());
        }
        for (name, (lo, hi)) in [("d_cross_range", self.d_cross_range), ("d_pu_range", self.d_pu_range)] {
            if !(lo > 0.0) || !(lo <= hi) {
                return bad(format!("{name} must satisfy 0 < min <= max, got ({lo}, {hi})"));
            }
        }
        if !(self.iota_max > 0.0) {
            return bad(format!("iota_max > 0 required, got {}", self.iota_max));
        }
        if !(self.rho >= 0.0) {
            return bad(format!("rho >= 0 required, got {}", self.rho));
        }
        if !(self.noise_w > 0.0) {
            return bad(format!("noise_w > 0 required, got {}", self.noise_w));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        Ok(())
    }

    /// Per-link, per-PU interference limits `ι_k^max` under
    /// [`BudgetMode::PrepartitionedEqual`] (also the starting point of the
    /// aggregate allocator).
    pub fn equal_split_budgets(&self) -> Vec<Vec<f64>> {
        vec![vec![self.iota_max / self.links as f64; self.links]; self.num_pu]
    }
}

/// Applies a named PU-geometry preset.
pub fn scenario_preset(name: &str, base: &NetworkConfig) -> Result<NetworkConfig> {
    let mut cfg = base.clone();
    cfg.d_pu_range = match name {
        "c1" => (70.0, 100.0),
        "c2" => (30.0, 100.0),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

/// `ε = sqrt(ρ) ‖Ĝ‖_F`.
pub fn uncertainty_radius(g_hat: &ComplexMatrix, rho: f64) -> f64 {
    rho.sqrt() * g_hat.norm()
}

/// All channels of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `h[k][j]` is `H_{k,j}` (`N_k x M_j`), from transmitter `j` to receiver `k`.
    pub h: Vec<Vec<ComplexMatrix>>,
    /// `g_hat[pu][k]` is the estimate `Ĝ_k` (`L x M_k`) towards PU `pu`.
    pub g_hat: Vec<Vec<ComplexMatrix>>,
    pub g_true: Option<Vec<Vec<ComplexMatrix>>>,
    /// `eps[pu][k]` radius of the Frobenius uncertainty ball.
    pub eps: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub p_max: Vec<f64>,
}

impl ChannelSet {
    pub fn links(&self) -> usize {
        self.h.len()
    }

    pub fn num_pu(&self) -> usize {
        self.g_hat.len()
    }

    pub fn tx_antennas(&self, k: usize) -> usize {
        self.h[k][k].ncols()
    }

    pub fn rx_antennas(&self, k: usize) -> usize {
        self.h[k][k].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.links();
        let shape = |msg: String| Err(Error::ShapeMismatch(msg));
        if k == 0 {
            return shape("no links".into());
        }
        if self.sigma2.len() != k || self.p_max.len() != k {
            return shape("sigma2/p_max must have K entries".into());
        }
        for (r, row) in self.h.iter().enumerate() {
            if row.len() != k {
                return shape(format!("H row {r} has {} entries", row.len()));
            }
            for (j, hm) in row.iter().enumerate() {
                if hm.nrows() != self.rx_antennas(r) || hm.ncols() != self.tx_antennas(j) {
                    return shape(format!("H[{r}][{j}] is {}x{}", hm.nrows(), hm.ncols()));
                }
            }
        }
        if self.eps.len() != self.num_pu() {
            return shape("eps must have one row per PU".into());
        }
        for (p, gs) in self.g_hat.iter().enumerate() {
            if gs.len() != k || self.eps[p].len() != k {
                return shape(format!("PU {p} needs K channel estimates and radii"));
            }
            let l = gs[0].nrows();
            for (j, g) in gs.iter().enumerate() {
                if g.nrows() != l || g.ncols() != self.tx_antennas(j) {
                    return shape(format!("G_hat[{p}][{j}] has wrong shape"));
                }
                if !(self.eps[p][j] >= 0.0) {
                    return Err(Error::InvalidConfig(format!("eps[{p}][{j}] < 0")));
                }
            }
            if let Some(gt) = &self.g_true {
                for (j, g) in gt[p].iter().enumerate() {
                    let dist = (g - &gs[j]).norm();
                    if dist > self.eps[p][j] + 1e-12 * (1.0 + gs[j].norm()) {
                        return Err(Error::InvalidConfig(format!(
                            "G_true[{p}][{j}] lies outside the uncertainty ball"
                        )));
                    }
                }
            }
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("noise powers must be > 0".into()));
        }
        Ok(())
    }

    /// Same instance with every uncertainty radius forced to zero (the
    /// non-robust baseline designs against the estimates only). The true
    /// channels are dropped since they no longer lie in the zero-radius balls.
    pub fn without_uncertainty(&self) -> ChannelSet {
        let mut out = self.clone();
        out.g_true = None;
        for row in &mut out.eps {
            row.iter_mut().for_each(|e| *e = 0.0);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelSetDump::from(self)).expect("channel set serializes")
    }

    pub fn from_json(text: &str) -> Result<ChannelSet> {
        let dump: ChannelSetDump =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        let set = dump.into_set()?;
        set.validate()?;
        Ok(set)
    }
}

fn stream_id(tag: u64, a: usize, b: usize) -> u64 {
    (tag << 56) | ((a as u64) << 28) | b as u64
}

fn stream_rng(seed: u64, tag: u64, a: usize, b: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(tag, a, b));
    rng
}

/// Mixes a base seed with a run index (splitmix64 finalizer), giving the
/// per-run seeds of a Monte Carlo batch.
pub fn derive_seed(seed: u64, run: u64) -> u64 {
    let mut z = seed ^ run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_in(rng: &mut ChaCha20Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a matrix uniformly from the complex Frobenius ball of radius `eps`.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, eps: f64) -> ComplexMatrix {
    if eps == 0.0 {
        return ComplexMatrix::zeros(rows, cols);
    }
    let mut dir = complex_gaussian(rng, rows, cols, 2.0);
    let norm = dir.norm();
    let real_dim = (2 * rows * cols) as f64;
    let u: f64 = rng.random();
    let r = eps * u.powf(1.0 / real_dim);
    dir *= C64::new(r / norm, 0.0);
    dir
}

/// Builds a full network instance. Deterministic in `cfg` (including the
/// seed).
pub fn generate(cfg: &NetworkConfig) -> Result<ChannelSet> {
    cfg.validate()?;
    let k = cfg.links;
    let mut h = Vec::with_capacity(k);
    for r in 0..k {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            let mut rng = stream_rng(cfg.seed, 1, r, j);
            let d = if r == j {
                cfg.d_direct[r]
            } else {
                uniform_in(&mut rng, cfg.d_cross_range)
            };
            row.push(complex_gaussian(
                &mut rng,
                cfg.rx_antennas[r],
                cfg.tx_antennas[j],
                d.powf(-cfg.eta),
            ));
        }
        h.push(row);
    }

    let mut g_hat = Vec::with_capacity(cfg.num_pu);
    let mut g_true = Vec::with_capacity(cfg.num_pu);
    let mut eps = Vec::with_capacity(cfg.num_pu);
    for pu in 0..cfg.num_pu {
        let l = cfg.pu_antennas[pu];
        let (mut est, mut real, mut radii) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..k {
            let mut rng = stream_rng(cfg.seed, 2, pu, j);
            let d = uniform_in(&mut rng, cfg.d_pu_range);
            let g = complex_gaussian(&mut rng, l, cfg.tx_antennas[j], d.powf(-cfg.eta));
            let e = uncertainty_radius(&g, cfg.rho);
            let mut rng = stream_rng(cfg.seed, 3, pu, j);
            let delta = uniform_in_ball(&mut rng, l, cfg.tx_antennas[j], e);
            real.push(&g + delta);
            est.push(g);
            radii.push(e);
        }
        g_hat.push(est);
        g_true.push(real);
        eps.push(radii);
    }

    let snr = 10f64.powf(cfg.snr_db / 10.0);
    let sigma2 = vec![cfg.noise_w; k];
    let p_max = (0..k)
        .map(|j| snr * cfg.noise_w / cfg.d_direct[j].powf(-cfg.eta))
        .collect();

    let set = ChannelSet {
        h,
        g_hat,
        g_true: Some(g_true),
        eps,
        sigma2,
        p_max,
    };
    set.validate()?;
    Ok(set)
}

/// Standard normal helper shared with tests.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Serialize, Deserialize)]
struct MatrixDump {
    rows: usize,
    cols: usize,
    /// Row-major `[re, im]` pairs.
    data: Vec<[f64; 2]>,
}

impl From<&ComplexMatrix> for MatrixDump {
    fn from(m: &ComplexMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push([m[(r, c)].re, m[(r, c)].im]);
            }
        }
        MatrixDump {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixDump {
    fn into_matrix(self) -> Result<ComplexMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix dump declares {}x{} but has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(ComplexMatrix::from_fn(self.rows, self.cols, |r, c| {
            let [re, im] = self.data[r * self.cols + c];
            C64::new(re, im)
        }))
    }
}

/// JSON layout of a [`ChannelSet`]: `{"h": [[M]], "g_hat": [[M]], "g_true":
/// [[M]] | null, "eps": [[f64]], "sigma2": [f64], "p_max": [f64]}` where each
/// `M` is `{"rows", "cols", "data": [[re, im], ...]}` in row-major order.
#[derive(Serialize, Deserialize)]
struct ChannelSetDump {
    h: Vec<Vec<MatrixDump>>,
    g_hat: Vec<Vec<MatrixDump>>,
    g_true: Option<Vec<Vec<MatrixDump>>>,
    eps: Vec<Vec<f64>>,
    sigma2: Vec<f64>,
    p_max: Vec<f64>,
}

fn dump_grid(g: &[Vec<ComplexMatrix>]) -> Vec<Vec<MatrixDump>> {
    g.iter().map(|row| row.iter().map(MatrixDump::from).collect()).collect()
}

fn load_grid(g: Vec<Vec<MatrixDump>>) -> Result<Vec<Vec<ComplexMatrix>>> {
    g.into_iter()
        .map(|row| row.into_iter().map(MatrixDump::into_matrix).collect())
        .collect()
}

impl From<&ChannelSet> for ChannelSetDump {
    fn from(s: &ChannelSet) -> Self {
        ChannelSetDump {
            h: dump_grid(&s.h),
            g_hat: dump_grid(&s.g_hat),
            g_true: s.g_true.as_deref().map(dump_grid),
            eps: s.eps.clone(),
            sigma2: s.sigma2.clone(),
            p_max: s.p_max.clone(),
        }
    }
}

impl ChannelSetDump {
    fn into_set(self) -> Result<ChannelSet> {
        Ok(ChannelSet {
            h: load_grid(self.h)?,
            g_hat: load_grid(self.g_hat)?,
            g_true: self.g_true.map(load_grid).transpose()?,
            eps: self.eps,
            sigma2: self.sigma2,
            p_max: self.p_max,
        })
    }
}
