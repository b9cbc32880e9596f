//! End-to-end properties of synthesized networks: path agreement, oracle
//! fidelity at random interior points, digit-depth monotonicity, and the
//! budget solver's own guarantees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsx::builder::{
    assemble, sample_digits, solve_hyperparams, BudgetMode, HolderBudget,
};
use rsx::eval::{forward, EvalPath, ExactEvaluator};
use rsx::grid::{base_architecture, in_trifling_region, Hyperparams, PNorm};
use rsx::net::audit_architecture;
use rsx::target::parse_target;
use rsx::verify::truncation_oracle;

#[test]
fn float_and_exact_paths_agree_away_from_the_slabs() {
    // Inside the excluded slabs the shift exponent is mid-transition and
    // the paths resolve it differently by design, so only cell points are
    // compared.
    for n in [2u64, 3, 4] {
        for m in [3u32, 5] {
            let f = parse_target("sq", 1).unwrap();
            let params = Hyperparams::new(1, n, m, 0.04, PNorm::Infinity).unwrap();
            let net = assemble(&f, &params).unwrap();
            let mut exact = ExactEvaluator::new(&net).unwrap();
            let mut compared = 0u32;
            for k in 0..=500u64 {
                let x = [k as f64 / 500.0];
                if in_trifling_region(&x, &params).unwrap() {
                    continue;
                }
                let e = exact.eval(&x).unwrap();
                let fl = forward(&net, &x, EvalPath::Float).unwrap();
                assert!(!fl.overflow, "n={n} m={m} x={x:?}");
                assert!(
                    (e.value - fl.value).abs() <= 1e-9,
                    "n={n} m={m} x={x:?}: exact {} float {}",
                    e.value,
                    fl.value
                );
                compared += 1;
            }
            assert!(compared > 400, "grid barely sampled: {compared}");
        }
    }
}

#[test]
fn network_equals_oracle_at_random_interior_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cases = [("x", 1, 5u64, 4u32), ("sq", 1, 7, 6), ("norm", 2, 3, 5), ("cosmix", 2, 4, 4)];
    for (name, d, n, m) in cases {
        let f = parse_target(name, d).unwrap();
        let delta = 1.0 / (4.0 * n as f64);
        let params = Hyperparams::new(d, n, m, delta, PNorm::Infinity).unwrap();
        let table = sample_digits(&f, &params).unwrap();
        let net = assemble(&f, &params).unwrap();
        let mut exact = ExactEvaluator::new(&net).unwrap();

        let cells = n.pow(d as u32);
        for c in 0..cells {
            let cell: Vec<u64> = (0..d).map(|i| (c / n.pow(i as u32)) % n).collect();
            for _ in 0..3 {
                let x: Vec<f64> = cell
                    .iter()
                    .map(|&a| {
                        let lo = a as f64 / n as f64;
                        let width = 1.0 / n as f64 - delta;
                        lo + rng.gen_range(0.05..0.95) * width
                    })
                    .collect();
                let want = truncation_oracle(&f, &params, &table, &x).unwrap();
                let got = exact.eval(&x).unwrap();
                assert!(!got.overflow);
                assert_eq!(got.value, want, "{name} d={d} cell {cell:?} x {x:?}");
            }
        }
    }
}

#[test]
fn more_digits_only_raise_the_readout() {
    // Deeper digit tables extend the binary expansion of each cell value,
    // so the readout grows toward the target monotonically in M.
    let f = parse_target("cosmix", 1).unwrap();
    let n = 6u64;
    let delta = 0.03;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let points: Vec<f64> = (0..200)
        .map(|_| rng.gen::<f64>())
        .collect();

    let mut prev: Option<Vec<f64>> = None;
    for m in [2u32, 5, 9] {
        let params = Hyperparams::new(1, n, m, delta, PNorm::Infinity).unwrap();
        let table = sample_digits(&f, &params).unwrap();
        let mut vals = Vec::new();
        for &x in &points {
            match truncation_oracle(&f, &params, &table, &[x]) {
                Ok(v) => vals.push(v),
                Err(_) => vals.push(f64::NAN),
            }
        }
        if let Some(p) = &prev {
            for (i, (&a, &b)) in p.iter().zip(&vals).enumerate() {
                if a.is_nan() || b.is_nan() {
                    continue;
                }
                assert!(b >= a - 1e-15, "point {i}: M step lowered {a} to {b}");
            }
        }
        prev = Some(vals);
    }
}

#[test]
fn solved_budgets_build_networks_that_meet_their_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let d = rng.gen_range(1..=2usize);
        let mu = rng.gen_range(0.5..2.0);
        let alpha = rng.gen_range(0.4..=1.0);
        let epsilon = rng.gen_range(0.1..0.6);
        let budget = HolderBudget::new(mu, alpha, epsilon, BudgetMode::OffRegion).unwrap();
        let solved = match solve_hyperparams(&budget, d, None, None) {
            Ok(s) => s,
            Err(e) => panic!("desk-scale budget refused: {e}"),
        };
        let params = solved.params;
        let rd = d as f64;

        if !solved.degenerate {
            let bound = mu * rd.powf(alpha / 2.0) * 2f64.powi(-(params.m() as i32))
                + mu * (rd.sqrt() / params.n() as f64).powf(alpha);
            assert!(
                bound <= epsilon * (1.0 + 1e-12),
                "d={d} mu={mu} alpha={alpha} eps={epsilon}: bound {bound}"
            );
        }

        let f = parse_target("const:0.5", d).unwrap();
        let net = assemble(&f, &params).unwrap();
        assert_eq!(audit_architecture(&net), base_architecture(&params));
        let arch = base_architecture(&params);
        assert_eq!(arch.depth, 6);
        assert_eq!(
            arch.width,
            (2 * d as usize * params.n1() as usize).max(2 * params.m() as usize)
        );
    }
}

#[test]
fn lp_budgets_pin_the_slab_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..30 {
        let d = rng.gen_range(1..=3usize);
        let mu = rng.gen_range(0.5..2.0);
        let epsilon = rng.gen_range(0.05..0.5);
        let p = rng.gen_range(1.0..4.0);
        let budget = HolderBudget::new(mu, 1.0, epsilon, BudgetMode::Lp).unwrap();
        let solved = solve_hyperparams(&budget, d, Some(PNorm::Finite(p)), None).unwrap();
        let params = solved.params;

        let rd = d as f64;
        let q = (epsilon / (3.0 * mu * rd.powf(0.5))).powf(p).min(1.0);
        let mass =
            1.0 - (1.0 - params.n() as f64 * params.delta()).powi(d as i32);
        assert!(
            mass <= q * (1.0 + 1e-9),
            "d={d} mu={mu} eps={epsilon} p={p}: mass {mass} vs allowance {q}"
        );
        assert!(params.delta() > 0.0 && params.delta() * params.n() as f64 <= 1.0 / 3.0 + 1e-12);
    }
}
