//! Trigonometric orthonormal system on the window `A = [0, A_max]`.
//!
//! Index `l` is 1-based: `φ₁ = 1/√A_max`, and for `j ≥ 1`
//! `φ_{2j} = √(2/A_max) cos(2πjx/A_max)`, `φ_{2j+1} = √(2/A_max) sin(2πjx/A_max)`.
//! Model `m` spans the first `D_m = 2m + 1` functions, so models are nested.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec {
    a_max: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { a_max: 6.0 }
    }
}

impl BasisSpec {
    pub fn new(a_max: f64) -> Result<Self> {
        if !(a_max > 0.0) || !a_max.is_finite() {
            return Err(Error::invalid(
                "estimation.a_max",
                format!("window must be nonempty, got A_max = {a_max}"),
            ));
        }
        Ok(BasisSpec { a_max })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.a_max).contains(&x)
    }

    /// `D_m = 2m + 1`.
    #[inline]
    pub fn dimension(m: usize) -> usize {
        2 * m + 1
    }

    /// Largest `m` with `D_m² ≤ n`, or `None` when the collection is empty.
    pub fn max_model_index(n: usize) -> Option<usize> {
        if n == 0 {
            return None;
        }
        let mut m = ((n as f64).sqrt() as usize).saturating_sub(1) / 2;
        while Self::dimension(m + 1).pow(2) <= n {
            m += 1;
        }
        while m > 0 && Self::dimension(m).pow(2) > n {
            m -= 1;
        }
        Some(m)
    }

    /// The constant `ψ₁ = 2/A_max` bounding `sup_x Σ_{l≤D} φ_l(x)² ≤ ψ₁ D`.
    pub fn psi1(&self) -> f64 {
        2.0 / self.a_max
    }

    /// `φ_l(x)`, zero outside the window.
    pub fn eval(&self, l: usize, x: f64) -> f64 {
        assert!(l >= 1, "basis index is 1-based");
        if !self.contains(x) {
            return 0.0;
        }
        if l == 1 {
            return 1.0 / self.a_max.sqrt();
        }
        let j = (l / 2) as f64;
        let arg = 2.0 * PI * j * x / self.a_max;
        let amp = (2.0 / self.a_max).sqrt();
        if l.is_multiple_of(2) {
            amp * arg.cos()
        } else {
            amp * arg.sin()
        }
    }

    /// Writes `φ_1(x), …, φ_dim(x)` into `out` (zeros outside the window).
    ///
    /// Harmonics are generated by the angle-addition recurrence from a single
    /// `sin_cos`, so the value of `φ_l` never depends on `dim`.
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        if !self.contains(x) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let dim = out.len();
        if dim == 0 {
            return;
        }
        out[0] = 1.0 / self.a_max.sqrt();
        let amp = (2.0 / self.a_max).sqrt();
        let (s1, c1) = (2.0 * PI * x / self.a_max).sin_cos();
        let (mut s, mut c) = (s1, c1);
        let mut l = 1;
        while l < dim {
            out[l] = amp * c;
            if l + 1 < dim {
                out[l + 1] = amp * s;
            }
            let next_c = c * c1 - s * s1;
            let next_s = s * c1 + c * s1;
            c = next_c;
            s = next_s;
            l += 2;
        }
    }
}

/// Empirical coefficients `â_l = (1/n) Σ_{k=1}^{n} φ_l(Z_k)` for `l ≤ dim`.
///
/// `observations` are the post-jump states `Z₁, …, Z_n`. Each coefficient is
/// summed sequentially over `k`, so the first `D_m` entries are identical for
/// every `dim ≥ D_m`.
pub fn coefficients_for(observations: &[f64], basis: &BasisSpec, dim: usize) -> Vec<f64> {
    let n = observations.len();
    let mut acc = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for &z in observations {
        if !basis.contains(z) {
            continue;
        }
        basis.eval_all(z, &mut row);
        for (a, v) in acc.iter_mut().zip(&row) {
            *a += v;
        }
    }
    let scale = n as f64;
    acc.iter_mut().for_each(|a| *a /= scale);
    acc
}

/// Coefficients of model `m` from a chain; rejects `m` outside `{m : D_m² ≤ n}`.
pub fn coefficients(observations: &[f64], basis: &BasisSpec, m: usize) -> Result<Vec<f64>> {
    let n = observations.len();
    let dim = BasisSpec::dimension(m);
    if n == 0 || dim * dim > n {
        return Err(Error::ModelOutsideCollection { dim, n });
    }
    Ok(coefficients_for(observations, basis, dim))
}
