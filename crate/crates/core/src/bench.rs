//! Monte Carlo harness for the estimator tables.
//!
//! Each replicate simulates a chain from its own seed
//! ([`derive_seed`]`(base_seed, n, replicate)`), selects the density model,
//! evaluates `λ̂_{m̂}` on the interval and sweeps all models for the oracle.
//! A row aggregates the replicates of one chain length; the oracle column is
//! the mean of the per-replicate risk ratios.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::basis::{coefficients_for, BasisSpec};
use crate::density::{select_model, Penalty};
use crate::error::{Error, Result};
use crate::jumprate::{
    d_hat, estimate_rate, l2_risk, oracle_dimension, EvalGrid, Interval, RateCurves, RateEstimate,
    DEFAULT_GRID_POINTS,
};
use crate::model::{Family, JumpRateSpec, ModelSpec};
use crate::numeric::ols_slope;
use crate::simulate::{derive_seed, simulate_chain, ChainStream, JumpChain};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub interval: Interval,
    pub basis: BasisSpec,
    pub n_values: Vec<usize>,
    pub replicates: usize,
    pub penalty: Penalty,
    pub base_seed: u64,
    pub z0: f64,
    pub grid_points: usize,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, interval: Interval, n_values: Vec<usize>) -> Self {
        ExperimentConfig {
            model,
            interval,
            basis: BasisSpec::default(),
            n_values,
            replicates: 50,
            penalty: Penalty::default(),
            base_seed: 0,
            z0: 1.0,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("experiment.replicates", "must be >= 1"));
        }
        if self.n_values.is_empty() {
            return Err(Error::invalid("experiment.n_values", "must not be empty"));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("experiment.n_values", "must be strictly increasing"));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < crate::jumprate::MIN_TRANSITIONS) {
            return Err(Error::SampleTooSmall {
                n,
                min: crate::jumprate::MIN_TRANSITIONS,
            });
        }
        EvalGrid::new(self.interval, self.grid_points)?;
        if self.grid_points < 257 {
            return Err(Error::Grid(format!(
                "risk needs at least 257 grid points, got {}",
                self.grid_points
            )));
        }
        Ok(())
    }

    fn truth(&self) -> impl Fn(f64) -> f64 + '_ {
        |y| self.model.rate.rate(y)
    }
}

/// One replicate's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateResult {
    pub d_mhat: usize,
    pub d_mopt: usize,
    pub risk_mhat: f64,
    pub risk_mopt: f64,
    pub seconds: f64,
}

impl ReplicateResult {
    /// `risk(m̂) / risk(m_opt)`, which is at least one.
    pub fn oracle_ratio(&self) -> f64 {
        if self.risk_mopt > 0.0 {
            self.risk_mhat / self.risk_mopt
        } else if self.risk_mhat == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// Equality ignoring the wall-clock time.
    pub fn same_outcome(&self, other: &ReplicateResult) -> bool {
        self.d_mhat == other.d_mhat
            && self.d_mopt == other.d_mopt
            && self.risk_mhat.to_bits() == other.risk_mhat.to_bits()
            && self.risk_mopt.to_bits() == other.risk_mopt.to_bits()
    }
}

/// Replicate `index` at chain length `n`.
pub fn run_replicate(config: &ExperimentConfig, n: usize, index: usize) -> Result<ReplicateResult> {
    let wrap = |e: Error| Error::Replicate {
        n,
        replicate: index,
        source: Box::new(e),
    };
    let start = Instant::now();
    let seed = derive_seed(config.base_seed, n as u64, index as u64);
    let chain = simulate_chain(&config.model, config.z0, n, seed).map_err(wrap)?;
    let grid = EvalGrid::new(config.interval, config.grid_points).map_err(wrap)?;
    let fit = select_model(chain.observations(), &config.basis, config.penalty).map_err(wrap)?;
    let curves = RateCurves::new(&fit, &chain, &grid).map_err(wrap)?;
    let truth = config.truth();
    let est = curves.estimate(fit.m_hat);
    let risk_mhat = l2_risk(&grid, &est.values, &truth).map_err(wrap)?;
    let sweep = oracle_dimension(&curves, &truth).map_err(wrap)?;
    Ok(ReplicateResult {
        d_mhat: fit.d_hat(),
        d_mopt: BasisSpec::dimension(sweep.m_opt),
        risk_mhat,
        risk_mopt: sweep.risk_opt,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The selected-model estimate of replicate `index` at chain length `n`, for
/// writing grid files; the same chain as [`run_replicate`].
pub fn replicate_estimate(config: &ExperimentConfig, n: usize, index: usize) -> Result<RateEstimate> {
    let seed = derive_seed(config.base_seed, n as u64, index as u64);
    let chain = simulate_chain(&config.model, config.z0, n, seed)?;
    let grid = EvalGrid::new(config.interval, config.grid_points)?;
    let fit = select_model(chain.observations(), &config.basis, config.penalty)?;
    estimate_rate(&fit, &chain, &grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub n: usize,
    pub mean_d_mhat: f64,
    pub mean_d_mopt: f64,
    pub mean_risk: f64,
    pub oracle_ratio: f64,
    pub mean_time_seconds: f64,
    pub replicates: Vec<ReplicateResult>,
}

impl ExperimentRow {
    pub fn from_replicates(n: usize, reps: Vec<ReplicateResult>) -> Self {
        let k = reps.len() as f64;
        let mean = |f: &dyn Fn(&ReplicateResult) -> f64| reps.iter().map(f).sum::<f64>() / k;
        ExperimentRow {
            n,
            mean_d_mhat: mean(&|r| r.d_mhat as f64),
            mean_d_mopt: mean(&|r| r.d_mopt as f64),
            mean_risk: mean(&|r| r.risk_mhat),
            oracle_ratio: mean(&|r| r.oracle_ratio()),
            mean_time_seconds: mean(&|r| r.seconds),
            replicates: reps,
        }
    }
}

/// One row per chain length; failed rows carry their first error.
#[derive(Debug)]
pub struct ExperimentTable {
    pub rows: Vec<(usize, Result<ExperimentRow>)>,
}

impl ExperimentTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn ok_rows(&self) -> impl Iterator<Item = &ExperimentRow> {
        self.rows.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    /// CSV with header `n,mean_D_mhat,mean_D_mopt,mean_risk,oracle,mean_time_s`.
    /// Failed rows are written with `NaN` fields. With `record_timing = false`
    /// the time column is written as `0` so that reruns are byte-identical.
    pub fn to_csv(&self, record_timing: bool) -> String {
        let mut s = String::from("n,mean_D_mhat,mean_D_mopt,mean_risk,oracle,mean_time_s\n");
        for (n, row) in &self.rows {
            match row {
                Ok(r) => {
                    let t = if record_timing { r.mean_time_seconds } else { 0.0 };
                    writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        r.n, r.mean_d_mhat, r.mean_d_mopt, r.mean_risk, r.oracle_ratio, t
                    )
                    .unwrap();
                }
                Err(_) => writeln!(s, "{n},NaN,NaN,NaN,NaN,NaN").unwrap(),
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W, record_timing: bool) -> Result<()> {
        out.write_all(self.to_csv(record_timing).as_bytes())?;
        Ok(())
    }
}

/// Runs every `(n, replicate)` pair, at most `threads` at a time (all cores when
/// `None`). Aggregation is in replicate order, so the table does not depend on
/// scheduling.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentTable> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    let rows = pool.install(|| {
        config
            .n_values
            .iter()
            .map(|&n| {
                let reps: Result<Vec<ReplicateResult>> = (0..config.replicates)
                    .into_par_iter()
                    .map(|i| run_replicate(config, n, i))
                    .collect();
                let row = reps.map(|r| ExperimentRow::from_replicates(n, r));
                if let Err(e) = &row {
                    log::error!("row n = {n} failed: {e}");
                }
                (n, row)
            })
            .collect()
    });
    Ok(ExperimentTable { rows })
}

/// Whether the rate grows fast enough at infinity for the chain to be
/// geometrically ergodic with uniform constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailCondition {
    Satisfied,
    /// On the edge of the growth condition; estimation usually still works.
    Boundary,
    /// The growth condition fails; the estimator may be biased.
    Violated,
    Unknown,
}

/// Additive flow needs `λ(x) ≳ x^b` with `b > 0`; exponential flow needs
/// `λ(x)/x ≳ x^b`, i.e. exponent above one.
pub fn tail_condition(model: &ModelSpec) -> TailCondition {
    let edge = match model.family() {
        Family::Tcp => 0.0,
        Family::Bacterial => 1.0,
    };
    match &model.rate {
        JumpRateSpec::Power { exponent, .. } => {
            if *exponent > edge {
                TailCondition::Satisfied
            } else if *exponent == edge {
                TailCondition::Boundary
            } else {
                TailCondition::Violated
            }
        }
        JumpRateSpec::ShiftedQuadratic { .. } => {
            if edge < 2.0 {
                TailCondition::Satisfied
            } else {
                TailCondition::Violated
            }
        }
        JumpRateSpec::Custom(_) => TailCondition::Unknown,
    }
}

/// Distance between the projection estimates on the two halves of a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfChainCheck {
    pub m: usize,
    /// `‖ν̂¹_m - ν̂²_m‖² = Σ (â¹_l - â²_l)²`.
    pub distance: f64,
    /// Expected distance if the observations were independent:
    /// `Σ_l Var(φ_l(Z)) (1/n₁ + 1/n₂)`.
    pub iid_reference: f64,
}

pub fn half_chain_distance(observations: &[f64], basis: &BasisSpec, m: usize) -> Result<HalfChainCheck> {
    let n = observations.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    let dim = BasisSpec::dimension(m);
    let (a, b) = observations.split_at(n / 2);
    let ca = coefficients_for(a, basis, dim);
    let cb = coefficients_for(b, basis, dim);
    let distance = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();

    let mean = coefficients_for(observations, basis, dim);
    let mut second = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for &z in observations {
        basis.eval_all(z, &mut row);
        for (s, v) in second.iter_mut().zip(&row) {
            *s += v * v;
        }
    }
    let nf = n as f64;
    let var: f64 = second
        .iter()
        .zip(&mean)
        .map(|(s, mu)| (s / nf - mu * mu).max(0.0))
        .sum();
    let iid_reference = var * (1.0 / a.len() as f64 + 1.0 / b.len() as f64);
    Ok(HalfChainCheck {
        m,
        distance,
        iid_reference,
    })
}

/// Settings of the `D̂_n` rate check.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheckOptions {
    pub n_values: Vec<usize>,
    pub replicates: usize,
    /// Reference chain length as a multiple of the largest `n`.
    pub reference_factor: usize,
    /// Evaluation point; the interval midpoint when `None`.
    pub y0: Option<f64>,
}

impl Default for RateCheckOptions {
    fn default() -> Self {
        RateCheckOptions {
            n_values: vec![1_000, 10_000, 100_000],
            replicates: 50,
            reference_factor: 100,
            y0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DRateCheck {
    pub y0: f64,
    pub reference: f64,
    pub n_values: Vec<usize>,
    pub rmse: Vec<f64>,
    /// Least-squares slope of `ln RMSE` against `ln n`; about `-1/2` when `D̂_n` is root-n consistent.
    pub slope: f64,
}

/// RMSE of `D̂_n(y₀)` across replicates at each `n`, against a long reference chain.
pub fn d_hat_rate(config: &ExperimentConfig, opts: &RateCheckOptions) -> Result<DRateCheck> {
    if opts.n_values.len() < 2 || opts.replicates == 0 {
        return Err(Error::invalid("diagnose", "need two or more n values and >= 1 replicate"));
    }
    let y0 = opts.y0.unwrap_or_else(|| config.interval.midpoint());
    let model = &config.model;
    let n_max = *opts.n_values.iter().max().unwrap();
    let n_ref = n_max * opts.reference_factor.max(1);

    // streamed reference: D̂ over n_ref transitions without storing the chain
    let fy = model.map.apply(y0);
    let ref_seed = derive_seed(config.base_seed, u64::MAX, 0);
    let mut stream = ChainStream::new(model, config.z0, ref_seed)?;
    let mut count = 0usize;
    for _ in 0..n_ref {
        let prev = stream.current();
        let next = stream.next().expect("stream is infinite")?;
        if next >= fy && y0 >= prev {
            count += 1;
        }
    }
    let reference = if count == 0 {
        0.0
    } else {
        model.g_closed(fy) * count as f64 / n_ref as f64
    };

    let mut rmse = Vec::with_capacity(opts.n_values.len());
    for &n in &opts.n_values {
        let sq: Result<Vec<f64>> = (0..opts.replicates)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(config.base_seed ^ 0xd1a6, n as u64, i as u64);
                let chain = simulate_chain(model, config.z0, n, seed)?;
                let d = d_hat(&chain, y0) - reference;
                Ok(d * d)
            })
            .collect();
        let sq = sq?;
        rmse.push((sq.iter().sum::<f64>() / sq.len() as f64).sqrt());
    }
    let xs: Vec<f64> = opts.n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    Ok(DRateCheck {
        y0,
        reference,
        n_values: opts.n_values.clone(),
        rmse,
        slope: ols_slope(&xs, &ys),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub half_chain: HalfChainCheck,
    pub rate: DRateCheck,
    pub tail: TailCondition,
    pub warnings: Vec<String>,
}

/// Stationarity, `D̂_n` rate and tail-condition checks for one configuration.
pub fn convergence_diagnostics(config: &ExperimentConfig, opts: &RateCheckOptions) -> Result<DiagnosticReport> {
    let n = *config.n_values.last().ok_or_else(|| {
        Error::invalid("experiment.n_values", "must not be empty")
    })?;
    if n < 1000 {
        return Err(Error::SampleTooSmall { n, min: 1000 });
    }
    let chain: JumpChain = simulate_chain(&config.model, config.z0, n, derive_seed(config.base_seed, n as u64, 0))?;
    let fit = select_model(chain.observations(), &config.basis, config.penalty)?;
    let half_chain = half_chain_distance(chain.observations(), &config.basis, fit.m_hat)?;
    let rate = d_hat_rate(config, opts)?;
    let tail = tail_condition(&config.model);

    let mut warnings = Vec::new();
    match tail {
        TailCondition::Violated => warnings.push(format!(
            "rate {} grows too slowly for this flow: the tail growth condition fails and the estimator may be biased",
            config.model.rate.label()
        )),
        TailCondition::Boundary => warnings.push(format!(
            "rate {} sits on the edge of the tail growth condition",
            config.model.rate.label()
        )),
        TailCondition::Unknown => warnings.push("tail growth condition not checked for custom rates".into()),
        TailCondition::Satisfied => {}
    }
    if half_chain.distance > 4.0 * half_chain.iid_reference {
        warnings.push(format!(
            "half-chain distance {:.3e} exceeds 4x the independent-sample reference {:.3e}; the chain may not be stationary",
            half_chain.distance, half_chain.iid_reference
        ));
    }
    if !(-0.65..=-0.35).contains(&rate.slope) {
        warnings.push(format!(
            "D_hat RMSE slope {:.3} is outside [-0.65, -0.35]",
            rate.slope
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DiagnosticReport {
        half_chain,
        rate,
        tail,
        warnings,
    })
}

/// The model and estimation interval of each table configuration.
#[derive(Debug, Clone)]
pub struct Preset {
    pub key: &'static str,
    pub model: ModelSpec,
    pub interval: Interval,
}

pub fn presets() -> Vec<Preset> {
    let p = |s, e| JumpRateSpec::power(s, e).unwrap();
    let i = |a, b| Interval::new(a, b).unwrap();
    let tcp = |k, r| ModelSpec::tcp(k, 1.0, r).unwrap();
    let bac = |r| ModelSpec::bacterial(1.0, r).unwrap();
    vec![
        Preset { key: "tcp-one", model: tcp(0.5, p(1.0, 0.0)), interval: i(0.2, 4.0) },
        Preset { key: "tcp-sqrt", model: tcp(0.5, p(1.0, 0.5)), interval: i(0.2, 3.0) },
        Preset { key: "tcp-linear", model: tcp(0.5, p(1.0, 1.0)), interval: i(0.5, 2.5) },
        Preset { key: "tcp-linear-k5", model: tcp(0.2, p(1.0, 1.0)), interval: i(0.1, 2.5) },
        Preset { key: "tcp-square", model: tcp(0.5, p(1.0, 2.0)), interval: i(0.5, 2.0) },
        Preset {
            key: "tcp-quadratic-k5",
            model: tcp(0.2, JumpRateSpec::shifted_quadratic(1.0, 0.5).unwrap()),
            interval: i(0.1, 2.8),
        },
        Preset { key: "bacterial-sqrt", model: bac(p(1.0, 0.5)), interval: i(0.5, 3.0) },
        Preset { key: "bacterial-linear", model: bac(p(1.0, 1.0)), interval: i(0.5, 2.5) },
        Preset { key: "bacterial-square", model: bac(p(1.0, 2.0)), interval: i(0.5, 2.0) },
    ]
}

pub fn preset(key: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.key == key)
}

/// The table interval for a model matching one of the presets.
pub fn default_interval(model: &ModelSpec) -> Option<Interval> {
    let strip = |m: &ModelSpec| {
        let mut m = m.clone();
        m.name.clear();
        m.descriptor().ok()
    };
    let key = strip(model)?;
    presets()
        .into_iter()
        .find(|p| strip(&p.model).as_deref() == Some(key.as_str()))
        .map(|p| p.interval)
}
