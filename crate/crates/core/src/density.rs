//! Adaptive projection estimator of the stationary density.
//!
//! For each model `m` the least-squares contrast `γ_n(s) = ‖s‖² - (2/n) Σ s(Z_k)`
//! is minimized over the span of the first `D_m` basis functions by the
//! empirical coefficients, at which point `γ_n(ν̂_m) = -Σ â_l²`. The selected
//! model minimizes `γ_n(ν̂_m) + pen(m)` with `pen(m) = σ D_m / n + σ' / n`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::basis::{coefficients_for, BasisSpec};
use crate::error::{Error, Result};

/// Penalty slope and offset; `(2, 0)` unless configured otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub sigma: f64,
    pub sigma_prime: f64,
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty {
            sigma: 2.0,
            sigma_prime: 0.0,
        }
    }
}

impl Penalty {
    pub fn new(sigma: f64, sigma_prime: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("estimation.sigma", format!("must be >= 0, got {sigma}")));
        }
        if !(sigma_prime >= 0.0) || !sigma_prime.is_finite() {
            return Err(Error::invalid(
                "estimation.sigma_prime",
                format!("must be >= 0, got {sigma_prime}"),
            ));
        }
        Ok(Penalty { sigma, sigma_prime })
    }

    /// `σ D_m / n + σ' / n`.
    pub fn eval(&self, m: usize, n: usize) -> f64 {
        penalty(m, n, self.sigma, self.sigma_prime)
    }
}

pub fn penalty(m: usize, n: usize, sigma: f64, sigma_prime: f64) -> f64 {
    let n = n as f64;
    sigma * BasisSpec::dimension(m) as f64 / n + sigma_prime / n
}

/// Minimized contrast `-Σ â_l²` of a coefficient vector.
pub fn contrast(coeffs: &[f64]) -> f64 {
    -coeffs.iter().map(|a| a * a).sum::<f64>()
}

/// A fitted collection of projection estimators with the selected model.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFit {
    pub basis: BasisSpec,
    pub n: usize,
    /// Coefficients of the largest admissible model; model `m` uses the first `D_m`.
    pub coeffs: Vec<f64>,
    /// `γ_n(ν̂_m)` for `m = 0..=max_m`.
    pub contrast: Vec<f64>,
    /// `pen(m)` for `m = 0..=max_m`.
    pub penalty: Vec<f64>,
    pub m_hat: usize,
    pub sigma: f64,
    pub sigma_prime: f64,
}

impl DensityFit {
    pub fn max_m(&self) -> usize {
        self.contrast.len() - 1
    }

    pub fn coeffs_of(&self, m: usize) -> &[f64] {
        &self.coeffs[..BasisSpec::dimension(m)]
    }

    pub fn d_hat(&self) -> usize {
        BasisSpec::dimension(self.m_hat)
    }

    pub fn criterion(&self, m: usize) -> f64 {
        self.contrast[m] + self.penalty[m]
    }

    /// Same coefficients, reselected under another penalty.
    pub fn reselect(&self, pen: Penalty) -> DensityFit {
        build_fit(self.basis, self.n, self.coeffs.clone(), pen)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "# pdmp-density-fit v1").unwrap();
        writeln!(s, "window\t{:.16e}", self.basis.a_max()).unwrap();
        writeln!(s, "n\t{}", self.n).unwrap();
        writeln!(s, "d_max\t{}", self.coeffs.len()).unwrap();
        writeln!(s, "m_hat\t{}", self.m_hat).unwrap();
        writeln!(s, "d_hat\t{}", self.d_hat()).unwrap();
        writeln!(s, "sigma\t{:.16e}", self.sigma).unwrap();
        writeln!(s, "sigma_prime\t{:.16e}", self.sigma_prime).unwrap();
        writeln!(s, "coefficients").unwrap();
        for a in &self.coeffs {
            writeln!(s, "{a:.16e}").unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Parses a record written by [`DensityFit::write_to`]; contrasts and
    /// penalties are recomputed from the coefficients.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut window = None;
        let mut n = None;
        let mut d_max = None;
        let mut m_hat = None;
        let mut sigma = None;
        let mut sigma_prime = None;
        let mut coeffs = Vec::new();
        let mut in_coeffs = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if in_coeffs {
                coeffs.push(line.parse::<f64>().map_err(|e| perr(e.to_string()))?);
                continue;
            }
            if line == "coefficients" {
                in_coeffs = true;
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| perr(format!("expected `key<TAB>value`, got `{line}`")))?;
            let float = || v.parse::<f64>().map_err(|e| perr(format!("{k}: {e}")));
            let int = || v.parse::<usize>().map_err(|e| perr(format!("{k}: {e}")));
            match k {
                "window" => window = Some(float()?),
                "n" => n = Some(int()?),
                "d_max" => d_max = Some(int()?),
                "m_hat" => m_hat = Some(int()?),
                "d_hat" => {}
                "sigma" => sigma = Some(float()?),
                "sigma_prime" => sigma_prime = Some(float()?),
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            msg: format!("missing `{k}`"),
        };
        let basis = BasisSpec::new(window.ok_or_else(|| missing("window"))?)?;
        let n = n.ok_or_else(|| missing("n"))?;
        let d_max = d_max.ok_or_else(|| missing("d_max"))?;
        if coeffs.len() != d_max {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {d_max} coefficients, found {}", coeffs.len()),
            });
        }
        let pen = Penalty::new(
            sigma.ok_or_else(|| missing("sigma"))?,
            sigma_prime.ok_or_else(|| missing("sigma_prime"))?,
        )?;
        let fit = build_fit(basis, n, coeffs, pen);
        if Some(fit.m_hat) != m_hat {
            return Err(Error::Parse {
                line: 0,
                msg: format!("recorded m_hat {m_hat:?} disagrees with recomputed {}", fit.m_hat),
            });
        }
        Ok(fit)
    }
}

fn build_fit(basis: BasisSpec, n: usize, coeffs: Vec<f64>, pen: Penalty) -> DensityFit {
    let max_m = (coeffs.len() - 1) / 2;
    let mut contrast_vals = Vec::with_capacity(max_m + 1);
    let mut penalties = Vec::with_capacity(max_m + 1);
    // running sum in index order: identical arithmetic to `contrast(prefix)`
    let mut sq = 0.0;
    let mut used = 0;
    for m in 0..=max_m {
        let dim = BasisSpec::dimension(m);
        for a in &coeffs[used..dim] {
            sq += a * a;
        }
        used = dim;
        contrast_vals.push(-sq);
        penalties.push(pen.eval(m, n));
    }
    let mut m_hat = 0;
    for m in 1..=max_m {
        // strict inequality breaks ties toward the smaller model
        if contrast_vals[m] + penalties[m] < contrast_vals[m_hat] + penalties[m_hat] {
            m_hat = m;
        }
    }
    DensityFit {
        basis,
        n,
        coeffs,
        contrast: contrast_vals,
        penalty: penalties,
        m_hat,
        sigma: pen.sigma,
        sigma_prime: pen.sigma_prime,
    }
}

/// Fits every model in `{m : D_m² ≤ n}` and selects `m̂`.
///
/// `observations` are `Z₁, …, Z_n`.
pub fn select_model(observations: &[f64], basis: &BasisSpec, pen: Penalty) -> Result<DensityFit> {
    let n = observations.len();
    let max_m = BasisSpec::max_model_index(n).ok_or(Error::SampleTooSmall { n, min: 1 })?;
    let coeffs = coefficients_for(observations, basis, BasisSpec::dimension(max_m));
    Ok(build_fit(*basis, n, coeffs, pen))
}

/// `ν̂_m(x) = Σ_{l ≤ D_m} â_l φ_l(x)`; zero outside the window.
pub fn density_eval(fit: &DensityFit, m: usize, x: f64) -> f64 {
    let coeffs = fit.coeffs_of(m);
    let mut row = vec![0.0; coeffs.len()];
    fit.basis.eval_all(x, &mut row);
    coeffs.iter().zip(&row).map(|(a, v)| a * v).sum()
}

/// Result of sweeping the penalty slope: the selected dimension for each `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionJump {
    pub sigmas: Vec<f64>,
    pub dims: Vec<usize>,
    /// Slope right after the largest drop in selected dimension.
    pub sigma_min: f64,
    /// `2 σ_min`, the calibrated slope.
    pub sigma_calibrated: f64,
}

/// Dimension-jump calibration of the penalty slope. The sweep is over the
/// given increasing `sigmas`; the largest drop in `D_m̂` between consecutive
/// values locates `σ_min`.
pub fn dimension_jump(fit: &DensityFit, sigmas: &[f64]) -> Result<DimensionJump> {
    if sigmas.len() < 2 || sigmas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("sigmas", "need at least two strictly increasing values"));
    }
    let dims: Vec<usize> = sigmas
        .iter()
        .map(|&s| {
            fit.reselect(Penalty {
                sigma: s,
                sigma_prime: fit.sigma_prime,
            })
            .d_hat()
        })
        .collect();
    let mut best = 0;
    let mut best_drop = 0;
    for i in 0..dims.len() - 1 {
        let drop = dims[i].saturating_sub(dims[i + 1]);
        if drop > best_drop {
            best_drop = drop;
            best = i + 1;
        }
    }
    let sigma_min = sigmas[best];
    Ok(DimensionJump {
        sigmas: sigmas.to_vec(),
        dims,
        sigma_min,
        sigma_calibrated: 2.0 * sigma_min,
    })
}
