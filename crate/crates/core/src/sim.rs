//! Monte Carlo sweeps over pilot budget, scatterer count and group count.
//!
//! Every trial owns its random streams, derived from the master seed:
//! the channel draw depends only on `(L_rb, L_ur, trial)`, so all points of a
//! sweep that share scatterer counts see the same channels; pilot phases and
//! noise depend on the full config point. Grouped methods share one noise
//! stream and the random-phase methods share another, so a method's result
//! never depends on which other methods were requested.

use std::fmt;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, Geometry};
use crate::error::{Error, Result};
use crate::estimators::{
    conv_2tce, default_dictionary, nmse, omp_estimate, perturb_channel, piecewise_ls, Estimate, Method,
};
use crate::grouping::{contiguous_partition, correlation_weights, greedy_partition};
use crate::numerics::{ComplexMatrix, Conditioning};
use crate::phase::{
    build_schedule, decouple, random_reflections, simulate_pilot_rx, simulate_schedule_rx, snr_to_noise_var, Fnv,
    Partition,
};

const CHANNEL_STREAM: u64 = 0x6368_616e;
const PIECEWISE_STREAM: u64 = 0x7069_6563;
const RANDOM_PHASE_STREAM: u64 = 0x7261_6e64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    /// Group counts. Pilot and scatterer sweeps use the first entry.
    pub q: Vec<usize>,
    /// Subframe count for the scatterer sweep, paired with the first `q`.
    pub b: usize,
    /// Total pilot budgets `T` for the pilot and group sweeps.
    pub pilots: Vec<usize>,
    /// Scatterer counts for the scatterer sweep, applied to both links.
    pub scatterers: Vec<usize>,
    pub l_rb: usize,
    pub l_ur: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub f_hat_rel_error: f64,
    /// OMP iteration count; `None` uses `L_ur` of the point.
    pub omp_sparsity: Option<usize>,
    /// Record estimator wall time. Off by default so output is reproducible.
    pub timing: bool,
    pub geometry: Geometry,
}

impl SimConfig {
    /// Benchmark defaults for an `n`-antenna BS and `m`-element RIS.
    pub fn new(n: usize, m: usize) -> SimConfig {
        SimConfig {
            n,
            m,
            q: vec![16],
            b: 8,
            pilots: vec![32, 64, 128],
            scatterers: vec![4, 8, 16, 32],
            l_rb: 16,
            l_ur: 16,
            snr_db: 20.0,
            trials: 200,
            seed: 2024,
            methods: Method::ALL.to_vec(),
            f_hat_rel_error: 0.0,
            omp_sparsity: None,
            timing: false,
            geometry: Geometry::with_sizes(n, m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be at least 1".into());
        }
        if self.q.is_empty() {
            return bad("q must list at least one group count".into());
        }
        for &q in &self.q {
            if q == 0 || self.m % q != 0 {
                return bad(format!("m={} must be divisible by q={q}", self.m));
            }
            let m_prime = self.m / q;
            if !q.is_power_of_two() || !m_prime.is_power_of_two() {
                return bad(format!("q={q} and m/q={m_prime} must be powers of two"));
            }
        }
        let m_prime = self.m / self.q[0];
        if self.b == 0 || self.b > m_prime {
            return bad(format!("b={} must lie in 1..=m/q={m_prime} for q={}", self.b, self.q[0]));
        }
        if self.pilots.is_empty() || self.pilots.contains(&0) {
            return bad("pilots must list positive pilot budgets".into());
        }
        if self.scatterers.is_empty() || self.scatterers.contains(&0) {
            return bad("scatterers must list positive counts".into());
        }
        if self.l_rb == 0 || self.l_ur == 0 {
            return bad("l_rb and l_ur must be at least 1".into());
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must name at least one estimator".into());
        }
        if !(self.f_hat_rel_error >= 0.0 && self.f_hat_rel_error.is_finite()) {
            return bad("f_hat_rel_error must be a finite value >= 0".into());
        }
        if self.omp_sparsity == Some(0) {
            return bad("omp_sparsity must be at least 1".into());
        }
        if self.geometry.bs_array.elements != self.n {
            return bad(format!("geometry BS array has {} elements, n={}", self.geometry.bs_array.elements, self.n));
        }
        if self.geometry.ris_array.elements() != self.m {
            return bad(format!(
                "geometry RIS array is {}x{}, m={}",
                self.geometry.ris_array.rows, self.geometry.ris_array.cols, self.m
            ));
        }
        self.geometry.validate().map_err(|e| Error::Config(format!("geometry: {e}")))
    }

    fn has_grouped(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, Method::NoPerm | Method::Greedy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Pilots,
    Scatterers,
    Groups,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Pilots => "pilots",
            SweepKind::Scatterers => "scatterers",
            SweepKind::Groups => "groups",
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One point of a sweep: pilot budget `T = Q B` and scatterer counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub sweep: SweepKind,
    pub t: usize,
    pub q: usize,
    pub b: usize,
    pub l_rb: usize,
    pub l_ur: usize,
}

impl ConfigPoint {
    /// Seed component. The sweep kind is left out so identical points in
    /// different sweeps replay identical trials.
    pub fn id(&self) -> u64 {
        let mut h = Fnv::new();
        for x in [self.t, self.q, self.b, self.l_rb, self.l_ur] {
            h.write_u64(x as u64);
        }
        h.finish()
    }

    pub fn label(&self) -> String {
        match self.sweep {
            SweepKind::Pilots => format!("T={}", self.t),
            SweepKind::Scatterers => format!("L={}", self.l_rb),
            SweepKind::Groups => format!("Q={},T={}", self.q, self.t),
        }
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one random stream, `hash(master_seed, parts...)`.
pub fn stream_seed(master_seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(master_seed), |acc, &p| mix64(acc ^ mix64(p)))
}

fn stream(master_seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub nmse: f64,
    /// `None` for OMP; `Some(inf)` for a singular Gram.
    pub worst_cond: Option<f64>,
    pub flagged: bool,
    pub seconds: f64,
    /// Partition used by the grouped methods.
    pub partition_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub point_id: u64,
    pub outcomes: Vec<MethodOutcome>,
}

impl TrialRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Shared per-sweep state: the channel model and the OMP dictionary.
pub struct Simulator {
    config: SimConfig,
    model: ChannelModel,
    dictionary: Option<ComplexMatrix>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Simulator> {
        config.validate()?;
        let model = ChannelModel::new(config.geometry.clone())?;
        let dictionary = if config.methods.contains(&Method::Omp) {
            Some(default_dictionary(&config.geometry.ris_array)?)
        } else {
            None
        };
        Ok(Simulator { config, model, dictionary })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Checks that `T = Q B` fits the grouped schedule when grouped methods
    /// are requested.
    pub fn point(&self, sweep: SweepKind, t: usize, q: usize, l_rb: usize, l_ur: usize) -> Result<ConfigPoint> {
        let m = self.config.m;
        if q == 0 || m % q != 0 || !q.is_power_of_two() || !(m / q).is_power_of_two() {
            return Err(Error::Config(format!("q={q} is not a valid group count for m={m}")));
        }
        if t == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        let b = t / q;
        if self.config.has_grouped() && (t % q != 0 || b == 0 || b > m / q) {
            return Err(Error::Config(format!("T={t} is not Q*B with Q={q} and 1 <= B <= {}", m / q)));
        }
        Ok(ConfigPoint { sweep, t, q, b: b.max(1), l_rb, l_ur })
    }

    /// One full pipeline for a config point and trial index.
    pub fn run_trial(&self, point: &ConfigPoint, trial: usize) -> Result<TrialRecord> {
        let cfg = &self.config;
        let mut ch_rng = stream(cfg.seed, &[CHANNEL_STREAM, point.l_rb as u64, point.l_ur as u64, trial as u64]);
        let channel = self.model.realize(point.l_rb, point.l_ur, &mut ch_rng)?;
        let f_hat = perturb_channel(&channel.ris_bs, cfg.f_hat_rel_error, &mut ch_rng)?;
        let noise_var = snr_to_noise_var(cfg.snr_db, 1.0)?;
        let h = &channel.user_ris;
        let mut outcomes = Vec::with_capacity(cfg.methods.len());

        if cfg.has_grouped() {
            let noise = stream(cfg.seed, &[PIECEWISE_STREAM, point.id(), trial as u64]);
            for method in [Method::NoPerm, Method::Greedy] {
                if !cfg.methods.contains(&method) {
                    continue;
                }
                let partition = if method == Method::Greedy {
                    greedy_partition(&correlation_weights(&f_hat)?, point.q)?
                } else {
                    contiguous_partition(cfg.m, point.q)?
                };
                let hash = partition.hash_hex();
                let schedule = build_schedule(cfg.m, point.q, point.b, partition)?;
                let obs = simulate_schedule_rx(&channel, &schedule, 1.0, noise_var, &mut noise.clone())?;
                let mut est = piecewise_ls(&f_hat, &schedule, &decouple(&obs, &schedule)?)?;
                est.method = method;
                outcomes.push(outcome(est, h, Some(hash))?);
            }
        }

        let wants_conv = cfg.methods.contains(&Method::Conv2tce);
        let wants_omp = cfg.methods.contains(&Method::Omp);
        if wants_conv || wants_omp {
            let mut rng = stream(cfg.seed, &[RANDOM_PHASE_STREAM, point.id(), trial as u64]);
            let reflections = random_reflections(cfg.m, point.t, &mut rng);
            let rx = simulate_pilot_rx(&channel.ris_bs, h, &reflections, 1.0, noise_var, &mut rng)?;
            if wants_conv {
                outcomes.push(outcome(conv_2tce(&f_hat, &reflections, &rx.slots)?, h, None)?);
            }
            if wants_omp {
                let dict = self.dictionary.as_ref().expect("built when OMP is requested");
                let k = cfg.omp_sparsity.unwrap_or(point.l_ur).min(cfg.n * point.t);
                outcomes.push(outcome(omp_estimate(&f_hat, &reflections, &rx.slots, dict, k)?, h, None)?);
            }
        }
        outcomes.sort_by_key(|o| o.method);
        Ok(TrialRecord { trial, point_id: point.id(), outcomes })
    }

    /// All trials of one point, in trial order.
    pub fn run_point(&self, point: &ConfigPoint) -> Result<Vec<TrialRecord>> {
        (0..self.config.trials).into_par_iter().map(|i| self.run_trial(point, i)).collect()
    }

    fn sweep(&self, points: Vec<ConfigPoint>) -> Result<SweepResult> {
        let sweep = points.first().map(|p| p.sweep).ok_or_else(|| Error::Config("sweep has no valid points".into()))?;
        let mut rows = Vec::new();
        for point in &points {
            let records = self.run_point(point)?;
            let summary = summarize(&self.config, point, &records);
            for row in &summary {
                info!("{} {} {}: mean NMSE {:.3e}", sweep, row.point, row.method, row.mean_nmse);
            }
            rows.extend(summary);
        }
        Ok(SweepResult { sweep, rows })
    }

    /// NMSE versus total pilot budget at the first configured `Q`.
    pub fn sweep_pilots(&self, pilots: &[usize]) -> Result<SweepResult> {
        let cfg = &self.config;
        let q = cfg.q[0];
        let points = pilots
            .iter()
            .filter_map(|&t| skip_invalid(self.point(SweepKind::Pilots, t, q, cfg.l_rb, cfg.l_ur)))
            .collect();
        self.sweep(points)
    }

    /// NMSE versus scatterer count at `T = Q B`, with `L_rb = L_ur = L`.
    pub fn sweep_scatterers(&self, counts: &[usize]) -> Result<SweepResult> {
        let cfg = &self.config;
        let (q, b) = (cfg.q[0], cfg.b);
        let points = counts
            .iter()
            .filter_map(|&l| skip_invalid(self.point(SweepKind::Scatterers, q * b, q, l, l)))
            .collect();
        self.sweep(points)
    }

    /// NMSE for every `(Q, T)` pair; incompatible pairs are skipped.
    pub fn sweep_groups(&self, groups: &[usize], pilots: &[usize]) -> Result<SweepResult> {
        let cfg = &self.config;
        let mut points = Vec::new();
        for &t in pilots {
            for &q in groups {
                points.extend(skip_invalid(self.point(SweepKind::Groups, t, q, cfg.l_rb, cfg.l_ur)));
            }
        }
        self.sweep(points)
    }

    pub fn run_sweep(&self, kind: SweepKind) -> Result<SweepResult> {
        let cfg = &self.config;
        match kind {
            SweepKind::Pilots => self.sweep_pilots(&cfg.pilots),
            SweepKind::Scatterers => self.sweep_scatterers(&cfg.scatterers),
            SweepKind::Groups => self.sweep_groups(&cfg.q, &cfg.pilots),
        }
    }
}

fn skip_invalid(point: Result<ConfigPoint>) -> Option<ConfigPoint> {
    match point {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("skipping point: {e}");
            None
        }
    }
}

fn outcome(est: Estimate, h: &crate::numerics::ComplexVector, partition_hash: Option<String>) -> Result<MethodOutcome> {
    Ok(MethodOutcome {
        method: est.method,
        nmse: nmse(&est.h_hat, h)?,
        worst_cond: est.worst_condition().map(Conditioning::value),
        flagged: est.flagged(),
        seconds: est.seconds,
        partition_hash,
    })
}

/// Aggregated statistics for one `(point, method)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: SweepKind,
    pub point: String,
    pub method: Method,
    pub t: usize,
    pub q: usize,
    pub b: usize,
    pub l_rb: usize,
    pub l_ur: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub mean_nmse: f64,
    pub median_nmse: f64,
    /// NaN for OMP, which solves no Gram system; infinite if any trial was
    /// singular.
    pub mean_worst_cond: f64,
    pub mean_est_seconds: Option<f64>,
    /// Trials whose Gram failed the rank threshold.
    pub flagged: usize,
    pub seed: u64,
    /// Fixed partition hash for noperm, digest of the per-trial hashes for
    /// greedy, `none` otherwise.
    pub partition_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep: SweepKind,
    pub rows: Vec<ResultRow>,
}

impl SweepResult {
    pub fn row(&self, point: &str, method: Method) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.point == point && r.method == method)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Folds trial records, in trial order, into one row per method.
pub fn summarize(config: &SimConfig, point: &ConfigPoint, records: &[TrialRecord]) -> Vec<ResultRow> {
    let mut methods: Vec<Method> = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        let outs: Vec<&MethodOutcome> = records.iter().filter_map(|r| r.outcome(method)).collect();
        if outs.is_empty() {
            continue;
        }
        let count = outs.len() as f64;
        let nmses: Vec<f64> = outs.iter().map(|o| o.nmse).collect();
        let mean_worst_cond = if outs.iter().all(|o| o.worst_cond.is_some()) {
            outs.iter().map(|o| o.worst_cond.unwrap_or(f64::NAN)).sum::<f64>() / count
        } else {
            f64::NAN
        };
        let partition_hash = match method {
            Method::NoPerm => outs[0].partition_hash.clone().unwrap_or_default(),
            Method::Greedy => {
                let mut h = Fnv::new();
                for o in &outs {
                    let part = o.partition_hash.as_deref().unwrap_or("0");
                    h.write_u64(u64::from_str_radix(part, 16).unwrap_or(0));
                }
                format!("{:016x}", h.finish())
            }
            _ => "none".to_string(),
        };
        rows.push(ResultRow {
            sweep: point.sweep,
            point: point.label(),
            method,
            t: point.t,
            q: point.q,
            b: point.b,
            l_rb: point.l_rb,
            l_ur: point.l_ur,
            snr_db: config.snr_db,
            trials: outs.len(),
            mean_nmse: nmses.iter().sum::<f64>() / count,
            median_nmse: median(&nmses),
            mean_worst_cond,
            mean_est_seconds: config.timing.then(|| outs.iter().map(|o| o.seconds).sum::<f64>() / count),
            flagged: outs.iter().filter(|o| o.flagged).count(),
            seed: config.seed,
            partition_hash,
        });
    }
    rows
}

/// Greedy and contiguous partitions for one channel draw, with their
/// worst-group condition numbers.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub point: ConfigPoint,
    pub trial: usize,
    pub greedy: Partition,
    pub greedy_conditions: Vec<f64>,
    pub contiguous_conditions: Vec<f64>,
    pub greedy_hash: String,
    pub mean_coherence: f64,
}

impl Simulator {
    /// Partition diagnostics for the channel of `(point, trial)`.
    pub fn partition_report(&self, point: &ConfigPoint, trial: usize) -> Result<PartitionReport> {
        use crate::grouping::group_conditions;
        let cfg = &self.config;
        let mut ch_rng = stream(cfg.seed, &[CHANNEL_STREAM, point.l_rb as u64, point.l_ur as u64, trial as u64]);
        let channel = self.model.realize(point.l_rb, point.l_ur, &mut ch_rng)?;
        let f_hat = perturb_channel(&channel.ris_bs, cfg.f_hat_rel_error, &mut ch_rng)?;
        let weights = correlation_weights(&f_hat)?;
        let greedy = greedy_partition(&weights, point.q)?;
        let contiguous = contiguous_partition(cfg.m, point.q)?;
        let values = |c: Vec<Conditioning>| c.into_iter().map(Conditioning::value).collect::<Vec<f64>>();
        Ok(PartitionReport {
            point: *point,
            trial,
            greedy_conditions: values(group_conditions(&f_hat, &greedy, point.b)?),
            contiguous_conditions: values(group_conditions(&f_hat, &contiguous, point.b)?),
            greedy_hash: greedy.hash_hex(),
            greedy,
            mean_coherence: weights.mean_coherence(),
        })
    }
}
