mod common;

use common::toy;
use d2ope_core::environments::{random_mdp, RandomMdpSpec};
use d2ope_core::mdp::simulate;
use d2ope_core::nuisance::{
    contaminate, exact_nuisances, fit_fqe, fit_omega, fit_omega_exact, fit_tau, fit_tau_exact, FqeSpec, KernelSpec,
    NoiseSpec, NuisanceSet, OptSpec,
};
use d2ope_core::oracles::{exact_omega, exact_q, exact_tau, stationary_distribution};
use d2ope_core::rng::stream;
use d2ope_core::{ReferenceDistribution, SaTable, Transition};
use rand::Rng;

#[test]
fn fqe_recovers_q_when_frequencies_equal_the_kernel() {
    let env = toy();
    let mut tuples = Vec::new();
    for s in 0..3 {
        for a in 0..2 {
            for (s2, &p) in env.mdp.next_states(s, a).iter().enumerate() {
                for _ in 0..(p * 10.0).round() as usize {
                    tuples.push(Transition {
                        traj: 0,
                        t: 0,
                        state: s,
                        action: a,
                        reward: env.mdp.reward(s, a, s2),
                        next_state: s2,
                    });
                }
            }
        }
    }
    let spec = FqeSpec::default();
    let q = fit_fqe(&tuples, &env.target, 3, 2, env.mdp.gamma(), spec).unwrap();
    let exact = exact_q(&env.mdp, &env.target).unwrap();
    assert!(q.table.sup_distance(&exact.0) < spec.tol / (1.0 - env.mdp.gamma()));
    assert_eq!(q.unvisited_count(), 0);
}

#[test]
fn fqe_error_shrinks_with_more_trajectories() {
    let env = toy();
    let exact = exact_q(&env.mdp, &env.target).unwrap();
    let mut errors = Vec::new();
    for n in [20, 40, 80] {
        let mut total = 0.0;
        for seed in 0..50 {
            let data = simulate(&env.mdp, &env.behavior, &env.reference, n, 50, seed).unwrap();
            let q = fit_fqe(data.tuples(), &env.target, 3, 2, 0.95, FqeSpec::default()).unwrap();
            total += q.table.sup_distance(&exact.0);
        }
        errors.push(total / 50.0);
    }
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn exact_objective_recovers_omega_and_tau_on_the_toy() {
    let env = toy();
    let opt = OptSpec::default();
    let om = fit_omega_exact(&env.mdp, &env.behavior, &env.target, &env.reference, KernelSpec::default(), &opt)
        .unwrap();
    let truth = exact_omega(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    assert!(om.table.sup_distance(&truth.0) < 1e-2);
    let report = om.report.as_ref().unwrap();
    assert!(report.checkpoints.windows(2).all(|w| w[1] <= w[0]));

    let tau = fit_tau_exact(&env.mdp, &env.behavior, &env.target, KernelSpec::default(), &opt).unwrap();
    let truth = exact_tau(&env.mdp, &env.target, &env.behavior).unwrap();
    assert!(tau.table.sup_distance(&truth.0) < 5e-2);
}

#[test]
fn on_policy_stationary_start_gives_unit_ratio() {
    let env = random_mdp(RandomMdpSpec::new(3, 2, 4)).unwrap().on_policy();
    let p = stationary_distribution(&env.mdp, &env.behavior).unwrap();
    let g = ReferenceDistribution::new(p.state_marginal()).unwrap();
    let om = fit_omega_exact(&env.mdp, &env.behavior, &env.target, &g, KernelSpec::default(), &OptSpec::default())
        .unwrap();
    assert!(om.table.as_slice().iter().all(|&w| (w - 1.0).abs() < 1e-3), "{:?}", om.table);
}

#[test]
fn tau_at_gamma_zero_sits_on_the_diagonal() {
    let env = toy().with_gamma(0.0).unwrap();
    let tau = fit_tau_exact(&env.mdp, &env.behavior, &env.target, KernelSpec::default(), &OptSpec::default())
        .unwrap();
    for x in 0..6 {
        for x0 in 0..6 {
            if x != x0 {
                assert!(tau.table.at(x, x0) < 1e-2, "tau({x}; {x0}) = {}", tau.table.at(x, x0));
            }
        }
    }
}

/// Sample moment `L(omega, f)` over the tuples.
fn sample_moment(env: &d2ope_core::environments::EnvBundle, tuples: &[Transition], omega: &SaTable, f: &SaTable) -> f64 {
    let gamma = env.mdp.gamma();
    let body: f64 = tuples
        .iter()
        .map(|t| omega.get(t.state, t.action) * (gamma * env.target.expect(f, t.next_state) - f.get(t.state, t.action)))
        .sum::<f64>()
        / tuples.len() as f64;
    body + (1.0 - gamma) * env.reference.plug_in(&env.target, f)
}

#[test]
fn fitted_omega_beats_the_unit_ratio_on_sample_moments() {
    let env = toy();
    let data = simulate(&env.mdp, &env.behavior, &env.reference, 80, 50, 11).unwrap();
    let est = fit_omega(
        data.tuples(),
        &env.target,
        &env.reference,
        (3, 2),
        0.95,
        KernelSpec::default(),
        &OptSpec::default(),
    )
    .unwrap();
    let ones = SaTable::filled(3, 2, 1.0);
    let mut r = stream(3, 3);
    for _ in 0..20 {
        let f = SaTable::from_fn(3, 2, |_, _| r.random::<f64>() * 2.0 - 1.0);
        let fitted = sample_moment(&env, data.tuples(), &est.table, &f).abs();
        let unit = sample_moment(&env, data.tuples(), &ones, &f).abs();
        assert!(fitted < unit, "{fitted} vs {unit}");
    }
}

#[test]
fn fitted_tau_is_normalised_per_conditioning_pair() {
    let env = toy();
    let data = simulate(&env.mdp, &env.behavior, &env.reference, 20, 20, 2).unwrap();
    let opt = OptSpec {
        iters: 2000,
        ..OptSpec::default()
    };
    let tau = fit_tau(data.tuples(), &env.target, (3, 2), 0.95, KernelSpec::default(), &opt).unwrap();
    for x0 in 0..6 {
        let mean: f64 = data
            .tuples()
            .iter()
            .map(|t| tau.table.at(t.state * 2 + t.action, x0))
            .sum::<f64>()
            / data.len() as f64;
        assert!((mean - 1.0).abs() < 1e-8);
    }
    assert!(tau.table.as_slice().iter().all(|&v| v >= 0.0));

    // marginal consistency is only a diagnostic
    let om = fit_omega(data.tuples(), &env.target, &env.reference, (3, 2), 0.95, KernelSpec::default(), &opt).unwrap();
    let start = env.reference.with_policy(&env.target);
    let gap = (0..6)
        .map(|x| {
            let m: f64 = (0..6).map(|x0| start[x0] * tau.table.at(x, x0)).sum();
            (m - om.table.as_slice()[x]).abs()
        })
        .fold(0.0, f64::max);
    println!("tau/omega marginal gap: {gap:.4}");
    assert!(gap.is_finite());
}

#[test]
fn noise_has_the_requested_scale() {
    let env = toy();
    let clean = exact_nuisances(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
    let draws = 10_000;
    let spec = NoiseSpec {
        rate: 0.25,
        ..NoiseSpec::default()
    };
    let expected = 0.2 * 1000f64.powf(-0.25);
    let mut sum_sq = vec![0.0; 6];
    for seed in 0..draws {
        let noisy = contaminate(
            clean.clone(),
            NuisanceSet {
                q: true,
                ..NuisanceSet::NONE
            },
            &NoiseSpec { seed, ..spec },
            20,
            50,
        );
        for (x, (a, b)) in noisy.q.table.as_slice().iter().zip(clean.q.table.as_slice()).enumerate() {
            sum_sq[x] += (a - b).powi(2);
        }
    }
    for s in sum_sq {
        let sd = (s / draws as f64).sqrt();
        // standard error of a normal-theory sd estimate
        let se = expected / (2.0 * draws as f64).sqrt();
        assert!((sd - expected).abs() < 3.0 * se, "{sd} vs {expected}");
    }
}
