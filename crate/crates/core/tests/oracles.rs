mod common;

use common::{power_iteration, sup, toy, truncated_visitation, truncation_horizon, value_iteration};
use d2ope_core::environments::{random_mdp, RandomMdpSpec};
use d2ope_core::oracles::{
    bellman_residual, discounted_visitation, efficiency_bound, exact_omega, exact_q, exact_tau, exact_value,
    moment_check_omega, moment_check_tau, stationary_distribution, OracleSet,
};
use d2ope_core::rng::{sample_categorical, stream};
use d2ope_core::{ConditionalTable, Error, Policy, ReferenceDistribution, SaTable, TabularMdp};
use rand::Rng;

const TOY_Q: [(f64, f64); 6] = [
    (215.0, 22.0),
    (215.0, 22.0),
    (855.0, 88.0),
    (225.0, 22.0),
    (225.0, 22.0),
    (855.0, 88.0),
];
const TOY_ETA: f64 = 665.0 / 66.0;
const TOY_OMEGA: [f64; 6] = [523.0 / 352.0, 523.0 / 352.0, 0.0, 533.0 / 352.0, 533.0 / 352.0, 0.0];
const TOY_SIGMA2: f64 = 522_766_875.0 / 29_984_768.0;

fn single_state(gamma: f64) -> TabularMdp {
    TabularMdp::new(1, 1, vec![1.0], vec![1.0], gamma).unwrap()
}

#[test]
fn toy_q_matches_value_iteration_and_rational_solution() {
    let env = toy();
    let q = exact_q(&env.mdp, &env.target).unwrap();
    let vi = value_iteration(&env.mdp, &env.target, 1e-12);
    assert!(sup(q.0.as_slice(), &vi) < 1e-10);
    for (got, (num, den)) in q.0.as_slice().iter().zip(TOY_Q) {
        assert!((got - num / den).abs() < 1e-12);
    }
    assert!(bellman_residual(&env.mdp, &env.target, &q.0) < 1e-9);
}

#[test]
fn gamma_zero_q_is_mean_reward() {
    let env = toy().with_gamma(0.0).unwrap();
    let q = exact_q(&env.mdp, &env.target).unwrap();
    assert!(q.0.sup_distance(&env.mdp.mean_reward_table()) < 1e-15);
}

#[test]
fn absorbing_single_state_values() {
    let mdp = single_state(0.95);
    let pi = Policy::uniform(1, 1);
    let g = ReferenceDistribution::uniform(1);
    assert!((exact_q(&mdp, &pi).unwrap().0.get(0, 0) - 20.0).abs() < 1e-12);
    assert!((exact_value(&mdp, &pi, &g).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(stationary_distribution(&mdp, &pi).unwrap().probs(), &[1.0]);
}

#[test]
fn value_of_point_mass_at_gamma_zero() {
    let env = toy().with_gamma(0.0).unwrap();
    let g = ReferenceDistribution::point_mass(3, 1).unwrap();
    let pi = Policy::deterministic(2, &[0, 1, 0]).unwrap();
    let v = exact_value(&env.mdp, &pi, &g).unwrap();
    assert!((v - env.mdp.mean_reward(1, 1)).abs() < 1e-15);
}

#[test]
fn toy_value_agrees_with_monte_carlo() {
    let env = toy();
    let eta = exact_value(&env.mdp, &env.target, &env.reference).unwrap();
    assert!((eta - TOY_ETA).abs() < 1e-12);

    let gamma = env.mdp.gamma();
    let horizon = 250;
    let reps = 100_000;
    let mut r = stream(2024, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..reps {
        let mut s = sample_categorical(&mut r, env.reference.weights());
        let (mut ret, mut disc) = (0.0, 1.0);
        for _ in 0..horizon {
            let a = sample_categorical(&mut r, env.target.row(s));
            let s2 = sample_categorical(&mut r, env.mdp.next_states(s, a));
            ret += disc * env.mdp.reward(s, a, s2);
            disc *= gamma;
            s = s2;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / reps as f64;
    let sd = (sum_sq / reps as f64 - mean * mean).sqrt();
    let tail = gamma.powi(horizon as i32) / (1.0 - gamma);
    assert!(
        (mean - eta).abs() <= 3.0 * sd / (reps as f64).sqrt() + tail,
        "MC {mean} vs exact {eta}"
    );
}

#[test]
fn toy_stationary_distribution_matches_power_iteration() {
    let env = toy();
    let p = stationary_distribution(&env.mdp, &env.behavior).unwrap();
    let pw = power_iteration(&env.mdp, &env.behavior, 1e-15);
    assert!(sup(p.probs(), &pw) < 1e-10);
    // the uniform-behavior circle is doubly stochastic
    assert!(p.probs().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-12));
}

#[test]
fn random_stationary_distributions_match_power_iteration() {
    for seed in 0..10 {
        let env = random_mdp(RandomMdpSpec::new(4, 3, seed)).unwrap();
        let p = stationary_distribution(&env.mdp, &env.behavior).unwrap();
        let pw = power_iteration(&env.mdp, &env.behavior, 1e-15);
        assert!(sup(p.probs(), &pw) < 1e-10, "seed {seed}");
    }
}

#[test]
fn reducible_chain_is_rejected() {
    // two absorbing states
    let mdp = TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 4], 0.9).unwrap();
    let err = stationary_distribution(&mdp, &Policy::uniform(2, 1)).unwrap_err();
    assert!(matches!(err, Error::NotErgodic(_)));
}

#[test]
fn missing_behavior_support_is_a_coverage_error() {
    let env = toy();
    let always_clockwise = Policy::deterministic(2, &[0, 0, 0]).unwrap();
    let err = exact_omega(&env.mdp, &env.target, &always_clockwise, &env.reference).unwrap_err();
    assert!(matches!(err, Error::Coverage { .. }), "{err:?}");
}

#[test]
fn visitation_matches_truncated_sums() {
    let env = toy();
    let start = env.reference.with_policy(&env.target);
    let d = discounted_visitation(&env.mdp, &env.target, &start).unwrap();
    let h = truncation_horizon(env.mdp.gamma(), 1e-12);
    let tr = truncated_visitation(&env.mdp, &env.target, &start, h);
    let tail = env.mdp.gamma().powi(h as i32 + 1);
    assert!(sup(&d, &tr) <= tail + 1e-12);
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn visitation_at_gamma_zero_is_the_start() {
    let env = toy().with_gamma(0.0).unwrap();
    let start = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
    let d = discounted_visitation(&env.mdp, &env.target, &start).unwrap();
    assert!(sup(&d, &start) < 1e-15);
}

#[test]
fn visitation_from_target_stationary_is_a_fixed_point() {
    let env = toy();
    let p = stationary_distribution(&env.mdp, &env.target).unwrap();
    let d = discounted_visitation(&env.mdp, &env.target, p.probs()).unwrap();
    assert!(sup(&d, p.probs()) < 1e-12);
}

#[test]
fn toy_omega_matches_truncated_sums_and_rationals() {
    let env = toy();
    let omega = exact_omega(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    assert!(sup(omega.0.as_slice(), &TOY_OMEGA) < 1e-12);
    let h = truncation_horizon(env.mdp.gamma(), 1e-12);
    let tr = truncated_visitation(&env.mdp, &env.target, &env.reference.with_policy(&env.target), h);
    let ratio: Vec<f64> = tr.iter().map(|d| d * 6.0).collect();
    assert!(sup(omega.0.as_slice(), &ratio) < 1e-9);
}

#[test]
fn omega_is_one_on_policy_from_stationarity() {
    let env = toy().on_policy();
    let p = stationary_distribution(&env.mdp, &env.target).unwrap();
    let g = ReferenceDistribution::new(p.state_marginal()).unwrap();
    let omega = exact_omega(&env.mdp, &env.target, &env.target, &g).unwrap();
    // pairs the target never visits carry no mass and a zero ratio
    for (w, &m) in omega.0.as_slice().iter().zip(p.probs()) {
        let expected = if m > 1e-12 { 1.0 } else { 0.0 };
        assert!((w - expected).abs() < 1e-10, "{omega:?}");
    }
}

#[test]
fn omega_at_gamma_zero_is_start_over_stationary() {
    let env = toy().with_gamma(0.0).unwrap();
    let omega = exact_omega(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    let start = env.reference.with_policy(&env.target);
    let p = stationary_distribution(&env.mdp, &env.behavior).unwrap();
    for x in 0..6 {
        assert!((omega.0.as_slice()[x] - start[x] / p.probs()[x]).abs() < 1e-14);
    }
}

#[test]
fn toy_tau_matches_truncated_sums_per_start_pair() {
    let env = toy();
    let tau = exact_tau(&env.mdp, &env.target, &env.behavior).unwrap();
    let h = truncation_horizon(env.mdp.gamma(), 1e-12);
    for x0 in 0..6 {
        let mut start = vec![0.0; 6];
        start[x0] = 1.0;
        let tr = truncated_visitation(&env.mdp, &env.target, &start, h);
        for x in 0..6 {
            assert!((tau.0.at(x, x0) - 6.0 * tr[x]).abs() < 1e-9);
        }
    }
    // two frozen entries of the rational solution
    assert!((tau.0.at(0, 0) - 2979.0 / 1760.0).abs() < 1e-12);
    assert!((tau.0.at(3, 5) - 2_027_889.0 / 1_274_240.0).abs() < 1e-12);
}

#[test]
fn tau_at_gamma_zero_is_a_scaled_indicator() {
    let env = toy().with_gamma(0.0).unwrap();
    let tau = exact_tau(&env.mdp, &env.target, &env.behavior).unwrap();
    for x in 0..6 {
        for x0 in 0..6 {
            let expected = if x == x0 { 6.0 } else { 0.0 };
            assert!((tau.0.at(x, x0) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_identities_on_the_toy() {
    let env = toy();
    let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    let p = o.p_inf.probs();
    let start = env.reference.with_policy(&env.target);
    for x in 0..6 {
        let marginal: f64 = (0..6).map(|x0| start[x0] * o.tau.0.at(x, x0)).sum();
        assert!((marginal - o.omega.0.as_slice()[x]).abs() < 1e-9);
    }
    let mean: f64 = p.iter().zip(o.omega.0.as_slice()).map(|(p, w)| p * w).sum();
    assert!((mean - 1.0).abs() < 1e-9);
    for x0 in 0..6 {
        let m: f64 = (0..6).map(|x| p[x] * o.tau.0.at(x, x0)).sum();
        assert!((m - 1.0).abs() < 1e-9);
    }
    let d = discounted_visitation(&env.mdp, &env.target, &start).unwrap();
    let r = env.mdp.mean_reward_table();
    let via_d: f64 = d.iter().zip(r.as_slice()).map(|(d, r)| d * r).sum::<f64>() / (1.0 - env.mdp.gamma());
    assert!((via_d - o.eta).abs() < 1e-9);
}

#[test]
fn toy_efficiency_bound_matches_rational_and_monte_carlo() {
    let env = toy();
    let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    assert!((o.sigma2 - TOY_SIGMA2).abs() < 1e-9);
    let gamma = env.mdp.gamma();
    let v = env.target.state_values(&o.q.0);
    let draws = 1_000_000;
    let mut r = stream(77, 1);
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let x = sample_categorical(&mut r, o.p_inf.probs());
        let (s, a) = (x / 2, x % 2);
        let next = sample_categorical(&mut r, env.mdp.next_states(s, a));
        let td = env.mdp.reward(s, a, next) + gamma * v[next] - o.q.0.get(s, a);
        let z = o.omega.0.get(s, a) * td / (1.0 - gamma);
        s1 += z;
        s2 += z * z;
        s4 += z.powi(4);
    }
    let n = draws as f64;
    let var = s2 / n - (s1 / n).powi(2);
    let se = ((s4 / n - (s2 / n).powi(2)) / n).sqrt();
    assert!((var - o.sigma2).abs() < 4.0 * se, "MC {var} vs {} (se {se})", o.sigma2);
}

#[test]
fn deterministic_mdp_has_zero_bound() {
    // A -> B -> A deterministically, reward on entering A
    let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], 0.9).unwrap();
    let pi = Policy::uniform(2, 1);
    let g = ReferenceDistribution::uniform(2);
    assert!(efficiency_bound(&mdp, &pi, &pi, &g).unwrap().abs() < 1e-20);
}

fn random_table(seed: u64, n: usize) -> Vec<f64> {
    let mut r = stream(seed, 99);
    (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect()
}

#[test]
fn moment_conditions_hold_for_random_test_functions() {
    let env = toy();
    let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    for seed in 0..100 {
        let f = SaTable::from_vec(3, 2, random_table(seed, 6)).unwrap();
        let m = moment_check_omega(&env.mdp, &env.target, &env.behavior, &env.reference, &o.omega.0, &f).unwrap();
        assert!(m.abs() < 1e-9);
        let f2 = ConditionalTable::from_vec(3, 2, random_table(seed + 1000, 36)).unwrap();
        let m2 = moment_check_tau(&env.mdp, &env.target, &env.behavior, &o.tau.0, &f2).unwrap();
        assert!(m2.abs() < 1e-9);
    }
}

#[test]
fn zero_ratio_with_unit_test_function_leaves_one_minus_gamma() {
    let env = toy();
    let one = SaTable::filled(3, 2, 1.0);
    let m = moment_check_omega(&env.mdp, &env.target, &env.behavior, &env.reference, &SaTable::zeros(3, 2), &one)
        .unwrap();
    assert!((m - 0.05).abs() < 1e-12);
    let m2 = moment_check_tau(
        &env.mdp,
        &env.target,
        &env.behavior,
        &ConditionalTable::zeros(3, 2),
        &ConditionalTable::filled(3, 2, 1.0),
    )
    .unwrap();
    assert!((m2 - 0.05).abs() < 1e-12);
}

#[test]
fn perturbed_ratios_leave_the_linear_residual() {
    let env = toy();
    let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    let gamma = env.mdp.gamma();
    let p = o.p_inf.probs();
    let f = SaTable::from_vec(3, 2, random_table(5, 6)).unwrap();
    let (u, delta) = (3, 0.25);
    let mut omega = o.omega.0.clone();
    omega.as_mut_slice()[u] += delta;
    let m = moment_check_omega(&env.mdp, &env.target, &env.behavior, &env.reference, &omega, &f).unwrap();
    let next = common::next_expectation(&env.mdp, &env.target, f.as_slice(), u);
    let expected = delta * p[u] * (gamma * next - f.as_slice()[u]);
    assert!((m - expected).abs() < 1e-12, "{m} vs {expected}");

    let f2 = ConditionalTable::from_vec(3, 2, random_table(6, 36)).unwrap();
    let (x, x0) = (1, 4);
    let mut tau = o.tau.0.clone();
    tau.set_at(x, x0, tau.at(x, x0) + delta);
    let m2 = moment_check_tau(&env.mdp, &env.target, &env.behavior, &tau, &f2).unwrap();
    let column: Vec<f64> = (0..6).map(|y| f2.at(y, x0)).collect();
    let next = common::next_expectation(&env.mdp, &env.target, &column, x);
    let expected = -delta * p[x0] * p[x] * (f2.at(x, x0) - gamma * next);
    assert!((m2 - expected).abs() < 1e-12, "{m2} vs {expected}");
}
