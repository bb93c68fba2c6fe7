//! Exact sampling of the embedded jump chain.
//!
//! Each sampler maps the current post-jump state `z` and a unit-exponential draw
//! `e` to the next post-jump state. The closed-form samplers invert the
//! cumulative hazard analytically; [`sample_next_generic`] inverts it numerically
//! and works for any [`ModelSpec`].
//!
//! Random numbers come from a ChaCha8 stream keyed by a single `u64` seed, so a
//! chain is reproducible bit for bit from `(model, z0, n, seed)`. Independent
//! replicates use seeds from [`derive_seed`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::{FlowSpec, JumpRateSpec, ModelSpec};
use crate::numeric::adaptive_simpson;

/// Which sampler a model is simulated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    TcpPower,
    TcpQuadratic,
    BacterialPower,
    Generic,
}

impl SamplerKind {
    /// The closed-form sampler for the model when one exists, otherwise [`SamplerKind::Generic`].
    pub fn for_model(model: &ModelSpec) -> Self {
        match (&model.flow, &model.rate) {
            (FlowSpec::Additive { .. }, JumpRateSpec::Power { .. }) => SamplerKind::TcpPower,
            (FlowSpec::Additive { .. }, JumpRateSpec::ShiftedQuadratic { .. }) => {
                SamplerKind::TcpQuadratic
            }
            (FlowSpec::Exponential { .. }, JumpRateSpec::Power { exponent, .. })
                if *exponent > 0.0 =>
            {
                SamplerKind::BacterialPower
            }
            _ => SamplerKind::Generic,
        }
    }

    pub fn sample(self, model: &ModelSpec, z: f64, e: f64, opts: &GenericOptions) -> Result<f64> {
        match self {
            SamplerKind::TcpPower => sample_next_tcp_power(model, z, e),
            SamplerKind::TcpQuadratic => sample_next_tcp_quadratic(model, z, e),
            SamplerKind::BacterialPower => sample_next_bacterial_power(model, z, e),
            SamplerKind::Generic => sample_next_generic_with(model, z, e, opts),
        }
    }
}

fn mismatch(sampler: &'static str, model: &ModelSpec) -> Error {
    Error::FamilyMismatch {
        sampler,
        model: model.name.clone(),
    }
}

fn check_draw(z: f64, e: f64) -> Result<()> {
    if !(z > 0.0) {
        return Err(Error::invalid("z", format!("state must be > 0, got {z}")));
    }
    if !(e >= 0.0) {
        return Err(Error::NegativeInput { what: "e", value: e });
    }
    Ok(())
}

/// Additive flow with power rate `λ(x) = s x^δ`:
/// `Z' = κ (z^{δ+1} + (δ+1) c e / s)^{1/(δ+1)}`.
pub fn sample_next_tcp_power(model: &ModelSpec, z: f64, e: f64) -> Result<f64> {
    let (FlowSpec::Additive { c }, JumpRateSpec::Power { scale, exponent }) = (&model.flow, &model.rate)
    else {
        return Err(mismatch("tcp_power", model));
    };
    check_draw(z, e)?;
    let p = exponent + 1.0;
    let pre = if *exponent == 0.0 {
        z + c * e / scale
    } else {
        (z.powf(p) + p * c * e / scale).powf(1.0 / p)
    };
    Ok(model.map.apply(pre.max(z)))
}

/// Additive flow with `λ(x) = (x - a)² + b`. Writing `w = Z'/κ - a`, the next
/// state solves `w³ + 3 b w = Q` with `Q = 3 c e + (z - a)³ + 3 b (z - a)`,
/// whose unique real root is given by Cardano's formula.
pub fn sample_next_tcp_quadratic(model: &ModelSpec, z: f64, e: f64) -> Result<f64> {
    let (FlowSpec::Additive { c }, JumpRateSpec::ShiftedQuadratic { center, offset }) =
        (&model.flow, &model.rate)
    else {
        return Err(mismatch("tcp_quadratic", model));
    };
    check_draw(z, e)?;
    let d = z - center;
    let q = 3.0 * c * e + d * d * d + 3.0 * offset * d;
    let w = depressed_cubic_root(*offset, q);
    Ok(model.map.apply((center + w).max(z)))
}

/// Real root of `w³ + 3 b w = q` for `b ≥ 0`.
///
/// With `p = q/2` and `s = √(p² + b³)` the root is `∛(p + s) + ∛(p - s)`. The two
/// cube roots multiply to `-b`, so the smaller one is recovered from the larger
/// to avoid cancellation in `p - s`.
pub fn depressed_cubic_root(b: f64, q: f64) -> f64 {
    let p = 0.5 * q;
    let s = (p * p + b * b * b).sqrt();
    let big = if p >= 0.0 { (p + s).cbrt() } else { (p - s).cbrt() };
    if big == 0.0 {
        return 0.0;
    }
    big - b / big
}

/// Exponential flow with power rate `λ(x) = s x^δ`, `δ > 0`:
/// `Z' = κ (δ c e / s + z^δ)^{1/δ}` (`κ = 1/2` for the bacterial model).
pub fn sample_next_bacterial_power(model: &ModelSpec, z: f64, e: f64) -> Result<f64> {
    let (FlowSpec::Exponential { c }, JumpRateSpec::Power { scale, exponent }) = (&model.flow, &model.rate)
    else {
        return Err(mismatch("bacterial_power", model));
    };
    if *exponent <= 0.0 {
        return Err(Error::invalid(
            "rate.exponent",
            format!("bacterial sampler needs exponent > 0, got {exponent}"),
        ));
    }
    check_draw(z, e)?;
    let d = *exponent;
    let pre = if d == 1.0 {
        c * e / scale + z
    } else {
        (d * c * e / scale + z.powf(d)).powf(1.0 / d)
    };
    Ok(model.map.apply(pre.max(z)))
}

/// Tuning for [`sample_next_generic_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericOptions {
    /// Largest state the bracketing search may reach; defaults to `1e3 · max(z, 1)`.
    pub cap: Option<f64>,
    pub quad_rel_tol: f64,
    pub bisect_rel_tol: f64,
}

impl Default for GenericOptions {
    fn default() -> Self {
        GenericOptions {
            cap: None,
            quad_rel_tol: 1e-10,
            bisect_rel_tol: 1e-12,
        }
    }
}

/// Numerically inverts the accumulated hazard: returns `y ≥ f(z)` with
/// `∫_{f(z)}^{y} λ(f⁻¹(u)) g_z(u) du = e`.
pub fn sample_next_generic(model: &ModelSpec, z: f64, e: f64) -> Result<f64> {
    sample_next_generic_with(model, z, e, &GenericOptions::default())
}

pub fn sample_next_generic_with(model: &ModelSpec, z: f64, e: f64, opts: &GenericOptions) -> Result<f64> {
    check_draw(z, e)?;
    let start = model.map.apply(z);
    if e == 0.0 {
        return Ok(start);
    }
    let cap = opts.cap.unwrap_or(1e3 * z.max(1.0));
    let hazard = |u: f64| model.state_hazard(u);
    let seg = |a: f64, b: f64| adaptive_simpson(&hazard, a, b, opts.quad_rel_tol);

    // expanding bracket with the hazard accumulated up to `lo`
    let mut lo = start;
    let mut acc = 0.0;
    let mut width = 0.5 * start.max(1.0);
    let mut hi;
    loop {
        hi = (lo + width).min(cap);
        let inc = seg(lo, hi);
        if acc + inc >= e {
            break;
        }
        acc += inc;
        if hi >= cap {
            return Err(Error::CapExceeded {
                target: e,
                reached: acc,
                cap,
            });
        }
        lo = hi;
        width *= 2.0;
    }

    // bisection, moving the left end together with its accumulated hazard
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= opts.bisect_rel_tol * hi {
            break;
        }
        let at_mid = acc + seg(lo, mid);
        if at_mid < e {
            lo = mid;
            acc = at_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mixes `(base, n, replicate)` into a replicate seed (SplitMix64 finalizer,
/// stable across platforms and releases).
pub fn derive_seed(base: u64, n: u64, replicate: u64) -> u64 {
    let mut h = splitmix(base ^ 0x5044_4d50_5345_4544);
    h = splitmix(h ^ n);
    splitmix(h ^ replicate)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The RNG behind every chain.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The first `n` unit-exponential draws of the stream for `seed`; exactly the
/// draws consumed by [`simulate_chain`].
pub fn exponential_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_for(seed);
    (0..n).map(|_| Exp1.sample(&mut rng)).collect()
}

/// Observed jump chain `Z₀, …, Z_n` with optional jump times `T₁, …, T_n`.
#[derive(Debug, Clone)]
pub struct JumpChain {
    pub z: Vec<f64>,
    /// `T₀ = 0, T₁, …, T_n` when reconstructed.
    pub times: Option<Vec<f64>>,
    pub seed: u64,
    pub model: ModelSpec,
}

impl JumpChain {
    /// Wraps observed states; `z` must contain at least two positive values.
    pub fn from_states(model: ModelSpec, z: Vec<f64>, seed: u64) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::SampleTooSmall {
                n: z.len().saturating_sub(1),
                min: 1,
            });
        }
        if let Some(bad) = z.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("z", format!("states must be finite and > 0, got {bad}")));
        }
        Ok(JumpChain {
            z,
            times: None,
            seed,
            model,
        })
    }

    /// Number of transitions.
    pub fn n(&self) -> usize {
        self.z.len() - 1
    }

    /// Post-jump states `Z₁, …, Z_n`.
    pub fn observations(&self) -> &[f64] {
        &self.z[1..]
    }

    pub fn with_times(mut self) -> Result<Self> {
        self.times = Some(reconstruct_times(&self.z, &self.model)?);
        Ok(self)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "# pdmp-chain v1").unwrap();
        writeln!(buf, "# model: {}", self.model.descriptor()?).unwrap();
        writeln!(buf, "# seed: {}", self.seed).unwrap();
        writeln!(buf, "# n: {}", self.n()).unwrap();
        match &self.times {
            Some(t) => {
                writeln!(buf, "# columns: z t").unwrap();
                for (z, t) in self.z.iter().zip(t) {
                    writeln!(buf, "{z:.16e}\t{t:.16e}").unwrap();
                }
            }
            None => {
                writeln!(buf, "# columns: z").unwrap();
                for z in &self.z {
                    writeln!(buf, "{z:.16e}").unwrap();
                }
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut model = None;
        let mut seed = 0;
        let mut z = Vec::new();
        let mut t = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim();
                if let Some(d) = h.strip_prefix("model:") {
                    model = Some(ModelSpec::from_descriptor(d.trim()).map_err(|e| Error::Parse {
                        line: lineno,
                        msg: e.to_string(),
                    })?);
                } else if let Some(s) = h.strip_prefix("seed:") {
                    seed = s.trim().parse().map_err(|e| Error::Parse {
                        line: lineno,
                        msg: format!("bad seed: {e}"),
                    })?;
                }
                continue;
            }
            let mut cols = line.split_whitespace().map(|c| {
                c.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad number `{c}`: {e}"),
                })
            });
            z.push(cols.next().expect("non-empty line")?);
            if let Some(tv) = cols.next() {
                t.push(tv?);
            }
        }
        let model = model.ok_or(Error::Parse {
            line: 0,
            msg: "missing `# model:` header".into(),
        })?;
        let mut chain = JumpChain::from_states(model, z, seed)?;
        if !t.is_empty() {
            if t.len() != chain.z.len() {
                return Err(Error::Parse {
                    line: 0,
                    msg: "time column present on some rows only".into(),
                });
            }
            chain.times = Some(t);
        }
        Ok(chain)
    }
}

/// Simulates `n` transitions from `z0` with the model's closed-form sampler.
pub fn simulate_chain(model: &ModelSpec, z0: f64, n: usize, seed: u64) -> Result<JumpChain> {
    simulate_chain_with(model, z0, n, seed, SamplerKind::for_model(model))
}

pub fn simulate_chain_with(
    model: &ModelSpec,
    z0: f64,
    n: usize,
    seed: u64,
    kind: SamplerKind,
) -> Result<JumpChain> {
    if n == 0 {
        return Err(Error::SampleTooSmall { n, min: 1 });
    }
    let mut z = Vec::with_capacity(n + 1);
    z.push(z0);
    for state in ChainStream::with_sampler(model, z0, seed, kind)?.take(n) {
        z.push(state?);
    }
    Ok(JumpChain {
        z,
        times: None,
        seed,
        model: model.clone(),
    })
}

/// Lazily generated post-jump states `Z₁, Z₂, …`; yields the same values as
/// [`simulate_chain`] without storing them.
pub struct ChainStream<'a> {
    model: &'a ModelSpec,
    kind: SamplerKind,
    opts: GenericOptions,
    rng: ChaCha8Rng,
    current: f64,
    step: usize,
    failed: bool,
}

impl<'a> ChainStream<'a> {
    pub fn new(model: &'a ModelSpec, z0: f64, seed: u64) -> Result<Self> {
        Self::with_sampler(model, z0, seed, SamplerKind::for_model(model))
    }

    pub fn with_sampler(model: &'a ModelSpec, z0: f64, seed: u64, kind: SamplerKind) -> Result<Self> {
        if !(z0 > 0.0) || !z0.is_finite() {
            return Err(Error::invalid("z0", format!("must be finite and > 0, got {z0}")));
        }
        Ok(ChainStream {
            model,
            kind,
            opts: GenericOptions {
                cap: Some(1e3 * z0.max(1.0)),
                ..GenericOptions::default()
            },
            rng: rng_for(seed),
            current: z0,
            step: 0,
            failed: false,
        })
    }

    /// The most recently emitted state (`Z₀` before the first call to `next`).
    pub fn current(&self) -> f64 {
        self.current
    }
}

impl Iterator for ChainStream<'_> {
    type Item = Result<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        self.step += 1;
        let e: f64 = Exp1.sample(&mut self.rng);
        match self.kind.sample(self.model, self.current, e, &self.opts) {
            Ok(z) => {
                self.current = z;
                Some(Ok(z))
            }
            Err(err) => {
                self.failed = true;
                Some(Err(Error::Sampler {
                    index: self.step,
                    source: Box::new(err),
                }))
            }
        }
    }
}

/// Jump times `T₀ = 0, T₁, …, T_n` from `T_k - T_{k-1} = (f ∘ φ_{Z_{k-1}})⁻¹(Z_k)`.
pub fn reconstruct_times(z: &[f64], model: &ModelSpec) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::SampleTooSmall {
            n: z.len().saturating_sub(1),
            min: 1,
        });
    }
    let mut times = Vec::with_capacity(z.len());
    times.push(0.0);
    let mut t = 0.0;
    for (k, w) in z.windows(2).enumerate() {
        let (prev, next) = (w[0], w[1]);
        let mut pre = model.map.inverse(next);
        if pre < prev {
            // f⁻¹ is not exact in floating point when κ is not a power of two
            if pre < prev * (1.0 - 1e-12) {
                return Err(Error::InconsistentChain { index: k + 1 });
            }
            pre = prev;
        }
        t += model.flow.time_to(prev, pre)?;
        times.push(t);
    }
    Ok(times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CustomRate;

    fn tcp(kappa: f64, rate: JumpRateSpec) -> ModelSpec {
        ModelSpec::tcp(kappa, 1.0, rate).unwrap()
    }

    #[test]
    fn tcp_power_examples() {
        let m = tcp(0.5, JumpRateSpec::power(1.0, 0.0).unwrap());
        assert_eq!(sample_next_tcp_power(&m, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(sample_next_tcp_power(&m, 3.0, 0.0).unwrap(), 1.5);
        let m = tcp(0.5, JumpRateSpec::power(2.0, 1.0).unwrap());
        let z = sample_next_tcp_power(&m, 2.0, 3.0).unwrap();
        assert!((z - 7f64.sqrt() / 2.0).abs() < 1e-15);
        // oracle: Λ(Z/κ) = Λ(z) + c e
        let r = &m.rate;
        assert!((r.primitive(z / 0.5) - (r.primitive(2.0) + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn tcp_quadratic_examples() {
        let m = tcp(0.2, JumpRateSpec::shifted_quadratic(1.0, 0.5).unwrap());
        assert!((sample_next_tcp_quadratic(&m, 1.0, 0.0).unwrap() - 0.2).abs() < 1e-15);
        let m = tcp(0.5, JumpRateSpec::shifted_quadratic(1.0, 0.0).unwrap());
        let z = sample_next_tcp_quadratic(&m, 1.0, 9.0).unwrap();
        assert!((z - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bacterial_examples() {
        let m = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(sample_next_bacterial_power(&m, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(sample_next_bacterial_power(&m, 3.0, 0.0).unwrap(), 1.5);
        let m = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, 2.0).unwrap()).unwrap();
        assert!((sample_next_bacterial_power(&m, 2.0, 6.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn samplers_reject_other_families() {
        let bac = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(sample_next_tcp_power(&bac, 1.0, 1.0), Err(Error::FamilyMismatch { .. })));
        assert!(matches!(sample_next_tcp_quadratic(&bac, 1.0, 1.0), Err(Error::FamilyMismatch { .. })));
        let t = tcp(0.5, JumpRateSpec::power(1.0, 1.0).unwrap());
        assert!(matches!(sample_next_bacterial_power(&t, 1.0, 1.0), Err(Error::FamilyMismatch { .. })));
        let b0 = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, -0.5).unwrap()).unwrap();
        assert!(sample_next_bacterial_power(&b0, 1.0, 1.0).is_err());
        assert_eq!(SamplerKind::for_model(&b0), SamplerKind::Generic);
    }

    #[test]
    fn generic_matches_closed_form() {
        let m = tcp(0.5, JumpRateSpec::power(1.0, 0.0).unwrap());
        let z = sample_next_generic(&m, 1.0, 1.0).unwrap();
        assert!((z - 1.0).abs() < 1e-10);
        assert_eq!(sample_next_generic(&m, 1.7, 0.0).unwrap(), 0.85);
        let m = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, 2.0).unwrap()).unwrap();
        let z = sample_next_generic(&m, 2.0, 6.0).unwrap();
        assert!((z - 2.0).abs() < 1e-9);
    }

    #[test]
    fn generic_cap_exceeded() {
        // λ(x) = 1/(1+x)² has finite total hazard
        let rate = CustomRate::new("1/(1+x)^2", |x| 1.0 / ((1.0 + x) * (1.0 + x)), |x| x / (1.0 + x));
        let m = tcp(0.5, JumpRateSpec::custom(rate));
        let err = sample_next_generic(&m, 1.0, 5.0).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn chains_are_deterministic() {
        let m = tcp(0.5, JumpRateSpec::power(1.0, 0.5).unwrap());
        let a = simulate_chain(&m, 1.0, 500, 42).unwrap();
        let b = simulate_chain(&m, 1.0, 500, 42).unwrap();
        assert_eq!(a.z, b.z);
        let c = simulate_chain(&m, 1.0, 500, 43).unwrap();
        assert_ne!(a.z, c.z);
        let one = simulate_chain(&m, 1.0, 1, 9).unwrap();
        let e = exponential_draws(9, 1)[0];
        assert_eq!(one.z.len(), 2);
        assert_eq!(one.z[1], sample_next_tcp_power(&m, 1.0, e).unwrap());
    }

    #[test]
    fn reconstruct_time_examples() {
        let m = tcp(0.5, JumpRateSpec::power(1.0, 0.0).unwrap());
        assert_eq!(reconstruct_times(&[1.0, 1.0], &m).unwrap(), vec![0.0, 1.0]);
        let b = ModelSpec::bacterial(1.0, JumpRateSpec::power(1.0, 1.0).unwrap()).unwrap();
        let t = reconstruct_times(&[2.0, 2.0], &b).unwrap();
        assert!((t[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            reconstruct_times(&[4.0, 1.0], &m),
            Err(Error::InconsistentChain { index: 1 })
        ));
    }

    #[test]
    fn sampler_error_carries_index() {
        let rate = CustomRate::new("1/(1+x)^2", |x| 1.0 / ((1.0 + x) * (1.0 + x)), |x| x / (1.0 + x));
        let m = tcp(0.5, JumpRateSpec::custom(rate));
        let err = simulate_chain(&m, 1.0, 1000, 1).unwrap_err();
        assert!(matches!(err, Error::Sampler { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(0, 1000, 0), derive_seed(0, 1000, 0));
        assert_ne!(derive_seed(0, 1000, 0), derive_seed(0, 1000, 1));
        assert_ne!(derive_seed(0, 1000, 0), derive_seed(0, 10000, 0));
    }
}
