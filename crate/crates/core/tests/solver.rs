mod common;

use common::{example1, example2, example2_with_prior, random_small_problem};
use msse::oracle::{direct_policy_solve, finite_diff_grad, gradient_discrepancy, grid_solve, OracleConfig};
use msse::solver::{
    corollary_gradient, corollary_objective, policy_bias, ru_bias, solve, verify_fixed_point, Method, Policy,
    SolverOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixed_point() -> SolverOptions {
    SolverOptions {
        method: Method::FixedPoint,
        ..SolverOptions::default()
    }
}

#[test]
fn shannon_example2_solution() {
    let p = example2(1.0, 1.0);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    let e = std::f64::consts::E;
    let pol = &sol.policy;
    assert!((pol.unconditional()[0] - 0.5).abs() < 1e-8);
    assert!((pol.prob(0, 1) - e / (e + 1.0)).abs() < 1e-8);
    assert!((pol.prob(0, 0) - 0.5).abs() < 1e-8);
    assert!(sol.residual < 1e-8);
}

#[test]
fn uniform_point_objective() {
    let p = example2(1.0, 1.0);
    let x = vec![0.5; p.n_free()];
    let e = std::f64::consts::E;
    // w1: ln(e) ; w2, w3: ln((e+1)/2) ; w4: ln(1)
    let expected = 0.25 * (1.0 + 2.0 * ((e + 1.0) / 2.0).ln());
    assert!((corollary_objective(&p, &x).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn layered_example2_pattern() {
    let p = example2(0.25, 1.0);
    for opts in [SolverOptions::default(), fixed_point()] {
        let sol = solve(&p, &opts).unwrap();
        assert!(sol.converged, "{:?}", opts.method);
        let pol = &sol.policy;
        assert!((pol.unconditional()[0] - 0.5).abs() < 1e-8);
        let a = pol.level_probs(1);
        assert!(a[0][0] > 0.5 && a[1][0] < 0.5);
        let bias = ru_bias(&sol, &p);
        let b = |o: usize, s: usize| bias.iter().find(|r| r.option == o && r.state == s).unwrap().alpha;
        assert!(b(0, 0) > 0.0 && b(0, 2) < 0.0);
    }
}

#[test]
fn no_learning_with_huge_multiplier() {
    let p = example2(1e6, 2e6);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let u = sol.policy.unconditional().to_vec();
    for s in 0..4 {
        for n in 0..2 {
            assert!((sol.policy.prob(n, s) - u[n]).abs() < 1e-5);
        }
    }
}

#[test]
fn methods_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = random_small_problem(&mut rng);
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &fixed_point()).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        if a.converged && b.converged {
            let (xa, xb) = (a.policy.cell_probs(), b.policy.cell_probs());
            let gap = xa.iter().zip(&xb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-6, "gap {gap}");
        }
    }
}

#[test]
fn oracles_agree_with_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = OracleConfig::default();
    for _ in 0..5 {
        let p = random_small_problem(&mut rng);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let (g, _) = grid_solve(&p, &cfg).unwrap();
        let (d, _) = direct_policy_solve(&p, &cfg).unwrap();
        assert!((sol.objective - g).abs() < 1e-5, "grid {g} solver {}", sol.objective);
        assert!((sol.objective - d).abs() < 1e-5, "direct {d} solver {}", sol.objective);
    }
}

#[test]
fn objective_identity_at_fixed_point() {
    for p in [example2(0.25, 1.0), example2(1.0, 1.0), example1(0.3, 1.0)] {
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let v = sol.policy.value(&p).unwrap();
        assert!((v - sol.objective).abs() < 1e-8, "{v} vs {}", sol.objective);
    }
}

#[test]
fn compression_invariance() {
    let p = example1(1.0, 1.0);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    for n in 0..2 {
        assert!((sol.policy.prob(n, 0) - sol.policy.prob(n, 1)).abs() < 1e-8);
        assert!((sol.policy.prob(n, 2) - sol.policy.prob(n, 3)).abs() < 1e-8);
    }
}

#[test]
fn example1_monotone() {
    let p = example1(0.3, 1.0);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    for s in 0..3 {
        assert!(sol.policy.prob(0, s) > sol.policy.prob(0, s + 1));
    }
}

#[test]
fn correlated_prior_keeps_unconditional() {
    let base = solve(&example2(0.25, 1.0), &SolverOptions::default()).unwrap();
    let q = 0.4;
    let p = example2_with_prior(0.25, 1.0, vec![q, 0.5 - q, 0.5 - q, q]);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!((sol.policy.unconditional()[0] - 0.5).abs() < 1e-8);
    let moved = (0..4).map(|s| (sol.policy.prob(0, s) - base.policy.prob(0, s)).abs()).fold(0.0, f64::max);
    assert!(moved > 1e-4);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in [example2(0.25, 1.0), example1(0.3, 1.0)] {
        let n = p.n_options();
        for _ in 0..10 {
            let x: Vec<f64> = (0..p.n_free() / n)
                .flat_map(|_| {
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(move |v| v / z)
                })
                .collect();
            let g = corollary_gradient(&p, &x).unwrap();
            let fd = finite_diff_grad(|y| msse_objective_unchecked(&p, y), &x, 1e-6, n).unwrap();
            assert!(gradient_discrepancy(&g, &fd, n) < 1e-5);
        }
    }
}

fn msse_objective_unchecked(p: &msse::ChoiceProblem, y: &[f64]) -> f64 {
    // probes leave the simplex by one step; renormalize each cell
    let n = p.n_options();
    let z: Vec<f64> = y
        .chunks(n)
        .flat_map(|c| {
            let t: f64 = c.iter().sum();
            c.iter().map(move |v| v / t)
        })
        .collect();
    corollary_objective(p, &z).unwrap()
}

#[test]
fn perturbed_policy_is_not_fixed_point() {
    let p = example2(0.25, 1.0);
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!(verify_fixed_point(&sol.policy, &p).unwrap().max() < 1e-8);
    let mut probs = sol.policy.state_probs().to_vec();
    probs[1][1] += 0.01;
    let t: f64 = probs[1].iter().sum();
    probs[1].iter_mut().for_each(|v| *v /= t);
    let bent = Policy::from_state_probs(&p, probs).unwrap();
    assert!(verify_fixed_point(&bent, &p).unwrap().max() > 1e-3);
    let _ = policy_bias(&bent, &p);
}
