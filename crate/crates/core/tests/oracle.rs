use csma_mpr::model::*;
use csma_mpr::oracle::*;
use csma_mpr::sim::{run_simulation, SimConfig};

#[test]
fn single_queue_matches_birth_death_law() {
    let (lam, p, b) = (0.3, 0.5, 5u32);
    let s = Scenario::finite(vec![ClassSpec::count(1, lam, p)], 1, AllOrNothingMpr::collision());
    let sol = stationary_distribution(&TinySystem::new(s, b)).unwrap();

    // queue length at the start of a slot
    let up = lam * (1.0 - p);
    let down = |n: u32| if n == b { p } else { (1.0 - lam) * p };
    let mut law = vec![1.0];
    for n in 1..=b {
        law.push(law[n as usize - 1] * up / down(n));
    }
    let z: f64 = law.iter().sum();
    law.iter_mut().for_each(|x| *x /= z);

    let mut by_len = vec![0.0; b as usize + 1];
    for (st, pi) in sol.states.iter().zip(&sol.pi) {
        by_len[st.queues[0] as usize] += pi;
    }
    for (a, c) in by_len.iter().zip(&law) {
        assert!((a - c).abs() < 1e-12, "{by_len:?} vs {law:?}");
    }
    let m = exact_metrics(&sol);
    let util = 1.0 - law[0] * (1.0 - lam);
    assert!((m.classes[0].utilization - util).abs() < 1e-12);
    let served = lam * (1.0 - law[b as usize]);
    assert!((m.classes[0].throughput - served).abs() < 1e-12);
}

#[test]
fn always_transmitting_single_user_carries_all_traffic() {
    let s = Scenario::finite(vec![ClassSpec::count(1, 0.3, 1.0)], 1, AllOrNothingMpr::collision());
    let m = exact_metrics(&stationary_distribution(&TinySystem::new(s, 5)).unwrap());
    assert!((m.classes[0].throughput - 0.3).abs() < 1e-12);
    assert_eq!(m.classes[0].drop_rate, 0.0);
}

/// Two-user slotted ALOHA on the collision channel, enumerated directly on
/// the queue pair and solved by power iteration.
fn aloha_pair(lam: f64, p: f64, b: u32) -> Vec<Vec<f64>> {
    let n = b as usize + 1;
    let idx = |a: usize, c: usize| a * n + c;
    let mut pmat = vec![vec![0.0; n * n]; n * n];
    for q1 in 0..n {
        for q2 in 0..n {
            for a1 in 0..2 {
                for a2 in 0..2 {
                    let pa = [1.0 - lam, lam][a1] * [1.0 - lam, lam][a2];
                    let r1 = (q1 + a1).min(n - 1);
                    let r2 = (q2 + a2).min(n - 1);
                    for t1 in 0..2 {
                        for t2 in 0..2 {
                            if (t1 == 1 && r1 == 0) || (t2 == 1 && r2 == 0) {
                                continue;
                            }
                            let pt1 = if r1 == 0 { 1.0 } else { [1.0 - p, p][t1] };
                            let pt2 = if r2 == 0 { 1.0 } else { [1.0 - p, p][t2] };
                            let (mut e1, mut e2) = (r1, r2);
                            if t1 + t2 == 1 {
                                if t1 == 1 {
                                    e1 -= 1;
                                } else {
                                    e2 -= 1;
                                }
                            }
                            pmat[idx(q1, q2)][idx(e1, e2)] += pa * pt1 * pt2;
                        }
                    }
                }
            }
        }
    }
    let mut pi = vec![0.0; n * n];
    pi[0] = 1.0;
    for _ in 0..200_000 {
        let mut next = vec![0.0; n * n];
        for i in 0..n * n {
            for j in 0..n * n {
                next[j] += pi[i] * pmat[i][j];
            }
        }
        // lazy step removes any periodicity
        for i in 0..n * n {
            pi[i] = 0.5 * (pi[i] + next[i]);
        }
    }
    (0..n).map(|a| (0..n).map(|c| pi[idx(a, c)]).collect()).collect()
}

#[test]
fn two_user_aloha_matches_enumeration() {
    let (lam, p, b) = (0.1, 0.4, 3);
    let s = Scenario::finite(vec![ClassSpec::count(2, lam, p)], 1, AllOrNothingMpr::new(vec![1.0, 0.0]));
    let sol = stationary_distribution(&TinySystem::new(s, b)).unwrap();
    let oracle = aloha_pair(lam, p, b);
    let mut got = vec![vec![0.0; b as usize + 1]; b as usize + 1];
    for (st, pi) in sol.states.iter().zip(&sol.pi) {
        got[st.queues[0] as usize][st.queues[1] as usize] += pi;
    }
    for (r1, r2) in got.iter().zip(&oracle) {
        for (a, c) in r1.iter().zip(r2) {
            assert!((a - c).abs() < 1e-10, "{got:?}\n{oracle:?}");
        }
    }
}

#[test]
fn two_user_system_agrees_with_long_simulation() {
    let s = Scenario::finite(vec![ClassSpec::count(2, 0.05, 0.3)], 3, AllOrNothingMpr::new(vec![0.95, 0.6]));
    let m = exact_metrics(&stationary_distribution(&TinySystem::new(s.clone(), 4)).unwrap());
    let mut cfg = SimConfig::new(s, 100_000_000, 21);
    cfg.buffer_cap = Some(4);
    let r = run_simulation(&cfg).unwrap();
    let c = &r.classes[0];
    let e = &m.classes[0];
    let z = |exact: f64, stat: &csma_mpr::sim::Stat| (exact - stat.mean).abs() / stat.stderr;
    assert!(z(e.throughput, &c.throughput) < 4.0);
    assert!(z(e.utilization, &c.utilization) < 4.0);
    assert!(z(e.mean_service_delay, &c.mean_service_delay) < 4.0);
    assert!(z(e.mean_total_delay, &c.mean_total_delay) < 4.0);
}

#[test]
fn buffer_cap_has_little_influence_when_stable() {
    let s = Scenario::finite(
        vec![ClassSpec::count(1, 0.02, 0.3), ClassSpec::count(1, 0.03, 0.4)],
        3,
        AllOrNothingMpr::new(vec![0.9, 0.5]),
    );
    let small = exact_metrics(&stationary_distribution(&TinySystem::new(s.clone(), 4)).unwrap());
    let large = exact_metrics(&stationary_distribution(&TinySystem::new(s, 6)).unwrap());
    for (a, b) in small.classes.iter().zip(&large.classes) {
        for (x, y) in [
            (a.throughput, b.throughput),
            (a.utilization, b.utilization),
            (a.mean_total_delay, b.mean_total_delay),
        ] {
            assert!((x - y).abs() < 0.01 * y, "{x} vs {y}");
        }
    }
    assert!(large.states > small.states);
}

#[test]
fn general_law_chain_is_a_probability_vector() {
    let g = GeneralSymmetricMpr::new(vec![vec![0.9], vec![0.5, 0.3]]).unwrap();
    let s = Scenario::finite(vec![ClassSpec::count(2, 0.05, 0.3)], 2, g);
    let sol = stationary_distribution(&TinySystem::new(s, 3)).unwrap();
    assert!(sol.pi.iter().all(|&x| x >= 0.0));
    assert!((sol.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(sol.residual <= RESIDUAL_TOLERANCE);
}

#[test]
fn large_chain_uses_iterative_solver() {
    let s = Scenario::finite(vec![ClassSpec::count(3, 0.01, 0.2)], 4, AllOrNothingMpr::new(vec![0.9, 0.6, 0.3]));
    let sol = stationary_distribution(&TinySystem::new(s, 5)).unwrap();
    assert!(sol.num_states() > DENSE_LIMIT);
    assert!((sol.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(sol.residual <= RESIDUAL_TOLERANCE);
}
