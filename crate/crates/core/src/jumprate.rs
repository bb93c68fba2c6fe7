//! Quotient estimator of the jump rate.
//!
//! The jump rate satisfies `λ(y) = ν(f(y)) / D(y)` with
//! `D(y) = E_ν[g_{Z₀}(f(y)) 1{Z₀ ≤ y ≤ f⁻¹(Z₁)}]`. Both factors are replaced by
//! empirical versions and the quotient is cut off where the density estimate is
//! negative or the denominator is below `1 / ln n`.

use std::fmt::Write as _;
use std::io::Write;

use crate::basis::BasisSpec;
use crate::density::{density_eval, DensityFit};
use crate::error::{Error, Result};
use crate::numeric::composite_simpson;
use crate::simulate::JumpChain;

/// Smallest chain length for which the `1 / ln n` threshold is below one.
pub const MIN_TRANSITIONS: usize = 9;

/// Estimation interval `I = [lo, hi]` with `0 < lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(
                "estimation.interval",
                format!("need 0 < lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Equispaced evaluation abscissae on an interval; the count is odd so that
/// Simpson's rule applies.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub interval: Interval,
    pub points: Vec<f64>,
}

pub const DEFAULT_GRID_POINTS: usize = 513;

impl EvalGrid {
    pub fn new(interval: Interval, count: usize) -> Result<Self> {
        if count < 3 || count.is_multiple_of(2) {
            return Err(Error::Grid(format!("point count must be odd and >= 3, got {count}")));
        }
        let h = interval.len() / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| interval.lo + h * i as f64).collect();
        points[count - 1] = interval.hi;
        Ok(EvalGrid { interval, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `1 / ln n`.
pub fn threshold(n: usize) -> f64 {
    1.0 / (n as f64).ln()
}

/// `D̂_n(y) = (1/n) Σ_k g_{Z_{k-1}}(f(y)) 1{Z_k ≥ f(y), y ≥ Z_{k-1}}`, by direct scan.
///
/// In both model families `g` does not depend on the starting point, so the
/// factor is applied once to the count of fired indicators.
pub fn d_hat(chain: &JumpChain, y: f64) -> f64 {
    let model = &chain.model;
    let fy = model.map.apply(y);
    let count = chain
        .z
        .windows(2)
        .filter(|w| w[1] >= fy && y >= w[0])
        .count();
    scale_count(chain, fy, count)
}

#[inline]
fn scale_count(chain: &JumpChain, fy: f64, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    chain.model.g_closed(fy) * count as f64 / chain.n() as f64
}

/// Sorted order statistics of `Z_{k-1}` and `Z_k` for `O(log n)` evaluation of
/// [`d_hat`]; agrees with the direct scan exactly.
#[derive(Debug, Clone)]
pub struct DHatIndex<'a> {
    chain: &'a JumpChain,
    starts: Vec<f64>,
    ends: Vec<f64>,
}

impl<'a> DHatIndex<'a> {
    /// Requires `Z_k ≥ f(Z_{k-1})` for every transition, which holds for
    /// simulated chains.
    pub fn new(chain: &'a JumpChain) -> Result<Self> {
        for (k, w) in chain.z.windows(2).enumerate() {
            if w[1] < chain.model.map.apply(w[0]) {
                return Err(Error::InconsistentChain { index: k + 1 });
            }
        }
        let n = chain.n();
        let mut starts = chain.z[..n].to_vec();
        let mut ends = chain.z[1..].to_vec();
        starts.sort_by(f64::total_cmp);
        ends.sort_by(f64::total_cmp);
        Ok(DHatIndex { chain, starts, ends })
    }

    pub fn eval(&self, y: f64) -> f64 {
        let fy = self.chain.model.map.apply(y);
        // #{Z_{k-1} ≤ y} - #{Z_k < f(y)}: a transition with Z_k < f(y) also has
        // Z_{k-1} < y because f(Z_{k-1}) ≤ Z_k.
        let started = self.starts.partition_point(|&v| v <= y);
        let ended = self.ends.partition_point(|&v| v < fy);
        scale_count(self.chain, fy, started.saturating_sub(ended))
    }
}

/// `ν̂(f(y)) / D̂(y) · 1{ν̂(f(y)) ≥ 0} · 1{D̂(y) ≥ 1/ln n}`.
pub fn quotient(nu_f: f64, d: f64, n: usize) -> f64 {
    if nu_f >= 0.0 && d >= threshold(n) {
        nu_f / d
    } else {
        0.0
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_TRANSITIONS {
        return Err(Error::SampleTooSmall {
            n,
            min: MIN_TRANSITIONS,
        });
    }
    Ok(())
}

/// `λ̂_n(y)` at the selected model of `fit`.
pub fn lambda_hat(fit: &DensityFit, chain: &JumpChain, y: f64) -> Result<f64> {
    lambda_hat_m(fit, chain, fit.m_hat, y)
}

/// `λ̂_m(y)`, the quotient estimator built on `ν̂_m`.
pub fn lambda_hat_m(fit: &DensityFit, chain: &JumpChain, m: usize, y: f64) -> Result<f64> {
    let n = chain.n();
    check_n(n)?;
    if m > fit.max_m() {
        return Err(Error::ModelOutsideCollection {
            dim: BasisSpec::dimension(m),
            n,
        });
    }
    let nu_f = density_eval(fit, m, chain.model.map.apply(y));
    Ok(quotient(nu_f, d_hat(chain, y), n))
}

/// The estimator and its two factors on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub m: usize,
    pub threshold: f64,
    pub grid: EvalGrid,
    pub nu_f: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub values: Vec<f64>,
}

/// `ν̂_m(f(y))` on the grid for every `m ≤ max_m`, plus `D̂_n` on the grid.
#[derive(Debug, Clone)]
pub struct RateCurves {
    pub n: usize,
    pub grid: EvalGrid,
    /// `nu_f[m][i] = ν̂_m(f(y_i))`
    pub nu_f: Vec<Vec<f64>>,
    pub d_hat: Vec<f64>,
}

impl RateCurves {
    pub fn new(fit: &DensityFit, chain: &JumpChain, grid: &EvalGrid) -> Result<Self> {
        let n = chain.n();
        check_n(n)?;
        let index = DHatIndex::new(chain)?;
        let d_hat: Vec<f64> = grid.points.iter().map(|&y| index.eval(y)).collect();
        let max_m = fit.max_m();
        let dim = fit.coeffs.len();
        let mut nu_f = vec![vec![0.0; grid.len()]; max_m + 1];
        let mut row = vec![0.0; dim];
        for (i, &y) in grid.points.iter().enumerate() {
            fit.basis.eval_all(chain.model.map.apply(y), &mut row);
            let mut acc = 0.0;
            let mut used = 0;
            for (m, curve) in nu_f.iter_mut().enumerate() {
                let d = BasisSpec::dimension(m);
                for (a, v) in fit.coeffs[used..d].iter().zip(&row[used..d]) {
                    acc += a * v;
                }
                used = d;
                curve[i] = acc;
            }
        }
        Ok(RateCurves {
            n,
            grid: grid.clone(),
            nu_f,
            d_hat,
        })
    }

    pub fn estimate(&self, m: usize) -> RateEstimate {
        let values = self.nu_f[m]
            .iter()
            .zip(&self.d_hat)
            .map(|(&nu, &d)| quotient(nu, d, self.n))
            .collect();
        RateEstimate {
            m,
            threshold: threshold(self.n),
            grid: self.grid.clone(),
            nu_f: self.nu_f[m].clone(),
            d_hat: self.d_hat.clone(),
            values,
        }
    }
}

/// `λ̂_{m̂}` on `grid`.
pub fn estimate_rate(fit: &DensityFit, chain: &JumpChain, grid: &EvalGrid) -> Result<RateEstimate> {
    Ok(RateCurves::new(fit, chain, grid)?.estimate(fit.m_hat))
}

/// `∫_I (λ̂ - λ)²` by composite Simpson on the grid values.
pub fn l2_risk<F: Fn(f64) -> f64>(grid: &EvalGrid, estimate: &[f64], truth: F) -> Result<f64> {
    let truth_vals: Vec<f64> = grid.points.iter().map(|&y| truth(y)).collect();
    l2_risk_values(grid, estimate, &truth_vals)
}

/// [`l2_risk`] with the truth already tabulated on the grid.
pub fn l2_risk_values(grid: &EvalGrid, estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if grid.len() < 257 || grid.len().is_multiple_of(2) {
        return Err(Error::Grid(format!(
            "risk needs an odd number of at least 257 points, got {}",
            grid.len()
        )));
    }
    if estimate.len() != grid.len() || truth.len() != grid.len() {
        return Err(Error::Grid(format!(
            "{} values and {} truth values for {} grid points",
            estimate.len(),
            truth.len(),
            grid.len()
        )));
    }
    let sq: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(&v, &t)| (v - t) * (v - t))
        .collect();
    Ok(composite_simpson(&sq, grid.interval.lo, grid.interval.hi))
}

/// Outcome of the exhaustive sweep over models.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSweep {
    pub m_opt: usize,
    pub risk_opt: f64,
    /// Risk of `λ̂_m` for every `m ≤ max_m`.
    pub risks: Vec<f64>,
}

/// `m_opt = argmin_m ‖λ̂_m - λ‖²_{L²(I)}` with ties resolved toward the smallest `m`.
pub fn oracle_dimension<F: Fn(f64) -> f64>(curves: &RateCurves, truth: F) -> Result<OracleSweep> {
    if curves.nu_f.is_empty() {
        return Err(Error::SampleTooSmall { n: curves.n, min: 1 });
    }
    let truth_vals: Vec<f64> = curves.grid.points.iter().map(|&y| truth(y)).collect();
    let mut risks = Vec::with_capacity(curves.nu_f.len());
    for m in 0..curves.nu_f.len() {
        let est = curves.estimate(m);
        risks.push(l2_risk_values(&curves.grid, &est.values, &truth_vals)?);
    }
    let mut m_opt = 0;
    for (m, r) in risks.iter().enumerate() {
        if *r < risks[m_opt] {
            m_opt = m;
        }
    }
    Ok(OracleSweep {
        m_opt,
        risk_opt: risks[m_opt],
        risks,
    })
}

/// TSV with columns `y, lambda_hat, [lambda_true,] nu_hat_of_f, d_hat`.
pub fn write_grid_tsv<W: Write, F: Fn(f64) -> f64>(
    est: &RateEstimate,
    truth: Option<F>,
    mut out: W,
) -> Result<()> {
    let mut s = String::new();
    match truth {
        Some(_) => writeln!(s, "y\tlambda_hat\tlambda_true\tnu_hat_of_f\td_hat").unwrap(),
        None => writeln!(s, "y\tlambda_hat\tnu_hat_of_f\td_hat").unwrap(),
    }
    for (i, &y) in est.grid.points.iter().enumerate() {
        write!(s, "{y:.16e}\t{:.16e}", est.values[i]).unwrap();
        if let Some(t) = &truth {
            write!(s, "\t{:.16e}", t(y)).unwrap();
        }
        writeln!(s, "\t{:.16e}\t{:.16e}", est.nu_f[i], est.d_hat[i]).unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}
