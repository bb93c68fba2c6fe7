use pdmp::basis::{coefficients, BasisSpec};
use pdmp::density::{select_model, Penalty};
use pdmp::jumprate::{
    d_hat, estimate_rate, quotient, threshold, DHatIndex, EvalGrid, Interval, RateCurves,
};
use pdmp::model::{FlowSpec, JumpRateSpec, ModelSpec};
use pdmp::simulate::{
    depressed_cubic_root, sample_next_bacterial_power, sample_next_generic, sample_next_tcp_power,
    sample_next_tcp_quadratic, simulate_chain,
};
use proptest::prelude::*;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Adaptive Simpson written independently of the library quadrature.
fn oracle_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, 1e-13, 60)
}

fn flow() -> impl Strategy<Value = FlowSpec> {
    prop_oneof![
        (0.1f64..5.0).prop_map(|c| FlowSpec::additive(c).unwrap()),
        (0.1f64..3.0).prop_map(|c| FlowSpec::exponential(c).unwrap()),
    ]
}

fn power_rate() -> impl Strategy<Value = JumpRateSpec> {
    (0.2f64..3.0, 0.0f64..3.0).prop_map(|(s, d)| JumpRateSpec::power(s, d).unwrap())
}

fn any_model() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        (0.1f64..0.9, 0.2f64..3.0, power_rate()).prop_map(|(k, c, r)| ModelSpec::tcp(k, c, r).unwrap()),
        (0.1f64..0.9, 0.2f64..3.0, 0.0f64..3.0, 0.0f64..2.0).prop_map(|(k, c, a, b)| {
            ModelSpec::tcp(k, c, JumpRateSpec::shifted_quadratic(a, b).unwrap()).unwrap()
        }),
        (0.2f64..3.0, 0.2f64..3.0, 0.5f64..3.0)
            .prop_map(|(c, s, d)| ModelSpec::bacterial(c, JumpRateSpec::power(s, d).unwrap()).unwrap()),
    ]
}

fn tcp_one() -> ModelSpec {
    ModelSpec::tcp(0.5, 1.0, JumpRateSpec::power(1.0, 0.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn flow_semigroup(flow in flow(), x in 0.0f64..10.0, s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let lhs = flow.eval(flow.eval(x, s).unwrap(), t).unwrap();
        let rhs = flow.eval(x, s + t).unwrap();
        prop_assert!(lhs == rhs || rel_err(lhs, rhs) < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn time_to_inverts_flow(flow in flow(), x in 0.01f64..10.0, gain in 0.0f64..10.0) {
        let y = x + gain;
        let back = flow.eval(x, flow.time_to(x, y).unwrap()).unwrap();
        prop_assert!(rel_err(back, y) < 1e-12, "{back} vs {y}");
    }

    #[test]
    fn generic_g_matches_closed_form(model in any_model(), x in 0.01f64..5.0, gain in 0.0f64..5.0) {
        let y = model.map.apply(x) + gain;
        let closed = model.g_eval(x, y).unwrap();
        let generic = model.g_eval_generic(x, y).unwrap();
        prop_assert!(rel_err(generic, closed) < 1e-8, "{generic} vs {closed}");
    }

    #[test]
    fn cumulative_hazard_matches_quadrature(model in any_model(), x in 0.0f64..10.0) {
        let (_, big_lambda) = model.rate.hazard_eval(x).unwrap();
        let r = model.rate.clone();
        let oracle = oracle_integral(&move |u| r.rate(u), 0.0, x);
        prop_assert!((big_lambda - oracle).abs() <= 1e-8 * oracle.abs().max(1.0), "{big_lambda} vs {oracle}");
    }

    #[test]
    fn cardan_residual(b in 0.0f64..5.0, q in -100.0f64..100.0) {
        let w = depressed_cubic_root(b, q);
        let residual = w * w * w + 3.0 * b * w - q;
        prop_assert!(residual.abs() < 1e-9, "w = {w}, residual {residual}");
    }

    #[test]
    fn samplers_land_above_the_jump_image(model in any_model(), z in 0.01f64..8.0, e in 0.0f64..20.0) {
        let floor = model.map.apply(z);
        let next = sample_next_generic(&model, z, e).unwrap();
        prop_assert!(next >= floor);
        let analytic = match (&model.rate, model.flow) {
            (JumpRateSpec::Power { .. }, FlowSpec::Additive { .. }) => sample_next_tcp_power(&model, z, e),
            (JumpRateSpec::ShiftedQuadratic { .. }, _) => sample_next_tcp_quadratic(&model, z, e),
            _ => sample_next_bacterial_power(&model, z, e),
        }
        .unwrap();
        prop_assert!(analytic >= floor);
        prop_assert!(rel_err(analytic, next) < 1e-8, "{analytic} vs {next}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chains_replay_bit_exactly(model in any_model(), seed in any::<u64>(), n in 1usize..400) {
        let a = simulate_chain(&model, 1.0, n, seed).unwrap();
        let b = simulate_chain(&model, 1.0, n, seed).unwrap();
        let bits = |c: &pdmp::simulate::JumpChain| c.z.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert_eq!(a.z.len(), n + 1);
    }

    #[test]
    fn coefficients_nest_as_prefixes(seed in any::<u64>(), n in 50usize..2000) {
        let chain = simulate_chain(&tcp_one(), 1.0, n, seed).unwrap();
        let basis = BasisSpec::default();
        let max_m = BasisSpec::max_model_index(n).unwrap();
        let full = coefficients(chain.observations(), &basis, max_m).unwrap();
        for m in 0..max_m {
            let part = coefficients(chain.observations(), &basis, m).unwrap();
            prop_assert_eq!(&full[..part.len()], &part[..]);
        }
    }

    #[test]
    fn contrast_and_selection_invariants(seed in any::<u64>(), n in 50usize..3000, sigma in 0.0f64..6.0) {
        let chain = simulate_chain(&tcp_one(), 1.0, n, seed).unwrap();
        let fit = select_model(chain.observations(), &BasisSpec::default(), Penalty::new(sigma, 0.0).unwrap()).unwrap();
        for m in 0..=fit.max_m() {
            let direct = -fit.coeffs_of(m).iter().fold(0.0, |s, a| s + a * a);
            prop_assert_eq!(fit.contrast[m], direct);
            if m > 0 {
                prop_assert!(fit.contrast[m] <= fit.contrast[m - 1]);
            }
            prop_assert!(fit.criterion(fit.m_hat) <= fit.criterion(m));
            if m < fit.m_hat {
                prop_assert!(fit.criterion(fit.m_hat) < fit.criterion(m), "ties go to the smallest m");
            }
        }
    }

    #[test]
    fn selected_model_shrinks_as_penalty_grows(seed in any::<u64>(), n in 100usize..5000) {
        let chain = simulate_chain(&tcp_one(), 1.0, n, seed).unwrap();
        let fit = select_model(chain.observations(), &BasisSpec::default(), Penalty::default()).unwrap();
        let mut last = usize::MAX;
        for i in 0..40 {
            let m = fit.reselect(Penalty::new(0.25 * i as f64, 0.0).unwrap()).m_hat;
            prop_assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn rate_estimator_invariants(model in any_model(), seed in any::<u64>(), n in 9usize..3000) {
        let chain = simulate_chain(&model, 1.0, n, seed).unwrap();
        let fit = select_model(chain.observations(), &BasisSpec::default(), Penalty::default()).unwrap();
        let grid = EvalGrid::new(Interval::new(0.1, 3.0).unwrap(), 257).unwrap();
        let curves = RateCurves::new(&fit, &chain, &grid).unwrap();
        let index = DHatIndex::new(&chain).unwrap();
        let top = chain.z.iter().cloned().fold(0.0, f64::max) / model.map.kappa();
        for m in 0..=fit.max_m() {
            let est = curves.estimate(m);
            for i in 0..grid.len() {
                let (v, nu, d) = (est.values[i], est.nu_f[i], est.d_hat[i]);
                prop_assert!(v >= 0.0);
                if nu >= 0.0 && d >= est.threshold {
                    prop_assert!(rel_err(v * d, nu) <= 4.0 * f64::EPSILON || nu == 0.0, "{} vs {}", v * d, nu);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
        for &y in &grid.points {
            let direct = d_hat(&chain, y);
            prop_assert_eq!(index.eval(y).to_bits(), direct.to_bits());
            if y > top {
                prop_assert_eq!(direct, 0.0);
            }
        }
        let sel = estimate_rate(&fit, &chain, &grid).unwrap();
        prop_assert_eq!(sel.values, curves.estimate(fit.m_hat).values);
    }

    #[test]
    fn zero_set_shrinks_as_threshold_drops(nu in -1.0f64..3.0, d in 0.0f64..1.0, n1 in 9usize..1000, extra in 0usize..100_000) {
        let n2 = n1 + extra;
        prop_assert!(threshold(n2) <= threshold(n1));
        if quotient(nu, d, n1) > 0.0 {
            prop_assert!(quotient(nu, d, n2) > 0.0);
        }
    }
}
