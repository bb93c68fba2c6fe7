//! PDMP instances: the flow between jumps, the post-jump map and the jump rate.
//!
//! A process started at `x` moves along `φ(x, t)` until it jumps with hazard
//! `λ(φ(x, t))`, and is then relocated to `f(φ(x, T))`. The embedded chain of
//! post-jump states has the transition density
//!
//! ```text
//! P(Z₁ ∈ dy | Z₀ = x) = λ(f⁻¹(y)) g_x(y) exp(-∫_{f(x)}^{y} λ(f⁻¹(u)) g_x(u) du) 1{y ≥ f(x)} dy
//! ```
//!
//! with `g_x = [(f ∘ φ_x)⁻¹]'`. Everything downstream consumes these quantities.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Deterministic motion between jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowSpec {
    /// `φ(x, t) = x + c t`
    Additive { c: f64 },
    /// `φ(x, t) = x e^{c t}`
    Exponential { c: f64 },
}

impl FlowSpec {
    pub fn additive(c: f64) -> Result<Self> {
        check_positive("flow.c", c)?;
        Ok(FlowSpec::Additive { c })
    }

    pub fn exponential(c: f64) -> Result<Self> {
        check_positive("flow.c", c)?;
        Ok(FlowSpec::Exponential { c })
    }

    pub fn speed(&self) -> f64 {
        match *self {
            FlowSpec::Additive { c } | FlowSpec::Exponential { c } => c,
        }
    }

    /// `φ(x, t)`.
    pub fn eval(&self, x: f64, t: f64) -> Result<f64> {
        check_nonnegative("x", x)?;
        check_nonnegative("t", t)?;
        Ok(self.eval_unchecked(x, t))
    }

    pub(crate) fn eval_unchecked(&self, x: f64, t: f64) -> f64 {
        match *self {
            FlowSpec::Additive { c } => x + c * t,
            FlowSpec::Exponential { c } => x * (c * t).exp(),
        }
    }

    /// The time needed to travel from `x` to `y` along the flow.
    pub fn time_to(&self, x: f64, y: f64) -> Result<f64> {
        check_nonnegative("x", x)?;
        if y < x {
            return Err(Error::Unreachable { from: x, to: y });
        }
        match *self {
            FlowSpec::Additive { c } => Ok((y - x) / c),
            FlowSpec::Exponential { c } => {
                if x == 0.0 {
                    // zero is a fixed point of the exponential flow
                    return if y == 0.0 {
                        Ok(0.0)
                    } else {
                        Err(Error::Unreachable { from: x, to: y })
                    };
                }
                Ok((y / x).ln() / c)
            }
        }
    }

    /// `∂φ/∂t (x, t)`.
    pub fn velocity(&self, x: f64, t: f64) -> f64 {
        match *self {
            FlowSpec::Additive { c } => c,
            FlowSpec::Exponential { c } => c * x * (c * t).exp(),
        }
    }
}

/// The post-jump relocation `f(x) = κ x` with `0 < κ < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMap {
    kappa: f64,
}

impl TransitionMap {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::invalid(
                "f.kappa",
                format!("must lie in (0, 1), got {kappa}"),
            ));
        }
        Ok(TransitionMap { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.kappa * x
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        y / self.kappa
    }

    #[inline]
    pub fn derivative(&self, _x: f64) -> f64 {
        self.kappa
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A caller-supplied jump rate with its primitive (normalized so that `Λ(0) = 0`)
/// and, optionally, the inverse of that primitive.
#[derive(Clone)]
pub struct CustomRate {
    pub label: String,
    rate: ScalarFn,
    primitive: ScalarFn,
    inverse: Option<ScalarFn>,
}

impl CustomRate {
    pub fn new(
        label: impl Into<String>,
        rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
        primitive: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomRate {
            label: label.into(),
            rate: Arc::new(rate),
            primitive: Arc::new(primitive),
            inverse: None,
        }
    }

    pub fn with_inverse(mut self, inverse: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }
}

impl fmt::Debug for CustomRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRate")
            .field("label", &self.label)
            .field("has_inverse", &self.inverse.is_some())
            .finish()
    }
}

/// Jump rate `λ` together with its primitive `Λ` (with `Λ(0) = 0`).
#[derive(Debug, Clone)]
pub enum JumpRateSpec {
    /// `λ(x) = scale · x^exponent`, `exponent > -1`.
    Power { scale: f64, exponent: f64 },
    /// `λ(x) = (x - center)² + offset`.
    ShiftedQuadratic { center: f64, offset: f64 },
    Custom(CustomRate),
}

impl JumpRateSpec {
    pub fn power(scale: f64, exponent: f64) -> Result<Self> {
        check_positive("rate.scale", scale)?;
        if !(exponent > -1.0) || !exponent.is_finite() {
            return Err(Error::invalid(
                "rate.exponent",
                format!("must be finite and > -1, got {exponent}"),
            ));
        }
        Ok(JumpRateSpec::Power { scale, exponent })
    }

    pub fn shifted_quadratic(center: f64, offset: f64) -> Result<Self> {
        check_positive("rate.center", center)?;
        if !(offset >= 0.0) || !offset.is_finite() {
            return Err(Error::invalid(
                "rate.offset",
                format!("must be finite and >= 0, got {offset}"),
            ));
        }
        Ok(JumpRateSpec::ShiftedQuadratic { center, offset })
    }

    pub fn custom(rate: CustomRate) -> Self {
        JumpRateSpec::Custom(rate)
    }

    /// `λ(x)`.
    pub fn rate(&self, x: f64) -> f64 {
        match self {
            JumpRateSpec::Power { scale, exponent } => {
                if *exponent == 0.0 {
                    *scale
                } else {
                    scale * x.powf(*exponent)
                }
            }
            JumpRateSpec::ShiftedQuadratic { center, offset } => {
                let d = x - center;
                d * d + offset
            }
            JumpRateSpec::Custom(c) => (c.rate)(x),
        }
    }

    /// `Λ(x) = ∫₀ˣ λ`.
    pub fn primitive(&self, x: f64) -> f64 {
        match self {
            JumpRateSpec::Power { scale, exponent } => {
                let p = exponent + 1.0;
                scale * x.powf(p) / p
            }
            JumpRateSpec::ShiftedQuadratic { center, offset } => {
                let d = x - center;
                (d * d * d + center * center * center) / 3.0 + offset * x
            }
            JumpRateSpec::Custom(c) => (c.primitive)(x),
        }
    }

    /// `Λ⁻¹(u)` when a closed form is available.
    pub fn primitive_inverse(&self, u: f64) -> Option<f64> {
        match self {
            JumpRateSpec::Power { scale, exponent } => {
                let p = exponent + 1.0;
                Some((p * u / scale).powf(1.0 / p))
            }
            JumpRateSpec::ShiftedQuadratic { .. } => None,
            JumpRateSpec::Custom(c) => c.inverse.as_ref().map(|inv| inv(u)),
        }
    }

    /// `(λ(x), Λ(x))`.
    pub fn hazard_eval(&self, x: f64) -> Result<(f64, f64)> {
        check_nonnegative("x", x)?;
        Ok((self.rate(x), self.primitive(x)))
    }

    /// Stable short label, e.g. `x^0.5` or `(x-1)^2+0.5`.
    pub fn label(&self) -> String {
        match self {
            JumpRateSpec::Power { scale, exponent } => {
                let body = if *exponent == 0.0 {
                    "1".to_string()
                } else if *exponent == 1.0 {
                    "x".to_string()
                } else {
                    format!("x^{exponent}")
                };
                if *scale == 1.0 {
                    body
                } else {
                    format!("{scale}*{body}")
                }
            }
            JumpRateSpec::ShiftedQuadratic { center, offset } => {
                format!("(x-{center})^2+{offset}")
            }
            JumpRateSpec::Custom(c) => c.label.clone(),
        }
    }
}

/// The two model families with closed-form change-of-variable factor `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Additive flow: `g_x(y) = 1 / (κ c)`.
    Tcp,
    /// Exponential flow: `g_x(y) = 1 / (c y)`.
    Bacterial,
}

/// A complete PDMP instance.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub flow: FlowSpec,
    pub map: TransitionMap,
    pub rate: JumpRateSpec,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, flow: FlowSpec, map: TransitionMap, rate: JumpRateSpec) -> Self {
        ModelSpec {
            name: name.into(),
            flow,
            map,
            rate,
        }
    }

    /// Additive flow `x + c t`, `f(x) = κ x`.
    pub fn tcp(kappa: f64, c: f64, rate: JumpRateSpec) -> Result<Self> {
        let name = format!("tcp kappa={kappa} c={c} rate={}", rate.label());
        Ok(ModelSpec::new(name, FlowSpec::additive(c)?, TransitionMap::new(kappa)?, rate))
    }

    /// Exponential flow `x e^{c t}`, `f(x) = x / 2`.
    pub fn bacterial(c: f64, rate: JumpRateSpec) -> Result<Self> {
        let name = format!("bacterial c={c} rate={}", rate.label());
        Ok(ModelSpec::new(name, FlowSpec::exponential(c)?, TransitionMap::new(0.5)?, rate))
    }

    pub fn family(&self) -> Family {
        match self.flow {
            FlowSpec::Additive { .. } => Family::Tcp,
            FlowSpec::Exponential { .. } => Family::Bacterial,
        }
    }

    /// `g_x(y) = [(f ∘ φ_x)⁻¹]'(y)` from the closed forms of the two families.
    pub fn g_eval(&self, x: f64, y: f64) -> Result<f64> {
        self.check_support(x, y)?;
        Ok(self.g_closed(y))
    }

    /// In the linear-map families `g_x(y)` does not depend on `x`.
    #[inline]
    pub(crate) fn g_closed(&self, y: f64) -> f64 {
        match self.flow {
            FlowSpec::Additive { c } => 1.0 / (self.map.kappa() * c),
            FlowSpec::Exponential { c } => 1.0 / (c * y),
        }
    }

    /// `g_x(y)` by the inverse-function rule `1 / (f'(φ_x(t)) ∂ₜφ(x, t))` at the
    /// time `t` at which `f(φ_x(t)) = y`.
    pub fn g_eval_generic(&self, x: f64, y: f64) -> Result<f64> {
        self.check_support(x, y)?;
        let pre = self.map.inverse(y).max(x);
        let t = self.flow.time_to(x, pre)?;
        let at = self.flow.eval_unchecked(x, t);
        Ok(1.0 / (self.map.derivative(at) * self.flow.velocity(x, t)))
    }

    /// `λ(f⁻¹(u)) g_x(u)`, the hazard density of the next state in state coordinates.
    pub(crate) fn state_hazard(&self, u: f64) -> f64 {
        self.rate.rate(self.map.inverse(u)) * self.g_closed(u)
    }

    fn check_support(&self, x: f64, y: f64) -> Result<()> {
        check_nonnegative("x", x)?;
        let lower = self.map.apply(x);
        if y < lower {
            return Err(Error::OutOfSupport { y, lower });
        }
        Ok(())
    }

    /// One-line `key=value;...` descriptor used in chain file headers.
    pub fn descriptor(&self) -> Result<String> {
        let flow = match self.flow {
            FlowSpec::Additive { c } => format!("flow=additive;c={c}"),
            FlowSpec::Exponential { c } => format!("flow=exponential;c={c}"),
        };
        let rate = match &self.rate {
            JumpRateSpec::Power { scale, exponent } => {
                format!("rate=power;scale={scale};exponent={exponent}")
            }
            JumpRateSpec::ShiftedQuadratic { center, offset } => {
                format!("rate=shifted_quadratic;center={center};offset={offset}")
            }
            JumpRateSpec::Custom(c) => {
                return Err(Error::invalid(
                    "rate",
                    format!("custom rate `{}` cannot be serialized", c.label),
                ))
            }
        };
        if self.name.contains(';') || self.name.contains('\n') {
            return Err(Error::invalid("name", "must not contain ';' or newlines"));
        }
        Ok(format!(
            "name={};{flow};kappa={};{rate}",
            self.name,
            self.map.kappa()
        ))
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let mut name = None;
        let mut kv = std::collections::HashMap::new();
        for part in s.trim().split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid("descriptor", format!("malformed entry `{part}`")))?;
            if k == "name" {
                name = Some(v.to_string());
            } else {
                kv.insert(k, v);
            }
        }
        let num = |key: &'static str| -> Result<f64> {
            kv.get(key)
                .ok_or_else(|| Error::invalid(key, "missing from descriptor"))?
                .parse::<f64>()
                .map_err(|e| Error::invalid(key, e.to_string()))
        };
        let c = num("c")?;
        let flow = match kv.get("flow").copied() {
            Some("additive") => FlowSpec::additive(c)?,
            Some("exponential") => FlowSpec::exponential(c)?,
            other => return Err(Error::invalid("flow", format!("unknown variant {other:?}"))),
        };
        let map = TransitionMap::new(num("kappa")?)?;
        let rate = match kv.get("rate").copied() {
            Some("power") => JumpRateSpec::power(num("scale")?, num("exponent")?)?,
            Some("shifted_quadratic") => {
                JumpRateSpec::shifted_quadratic(num("center")?, num("offset")?)?
            }
            other => return Err(Error::invalid("rate", format!("unknown variant {other:?}"))),
        };
        Ok(ModelSpec::new(name.unwrap_or_default(), flow, map, rate))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
    }
    Ok(())
}

fn check_nonnegative(what: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0) {
        return Err(Error::NegativeInput { what, value });
    }
    Ok(())
}
