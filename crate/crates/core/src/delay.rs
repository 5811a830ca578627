//! Service and total delay, and the delay-driven choice of transmission
//! probabilities.
//!
//! All delays are in slots. Service delay is the time a packet spends at the
//! head of its queue; total delay adds the queueing time in front of it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::meanfield::{
    self, conditional_service_rate_finite, p_idle_finite, Region, VALIDITY_SLACK,
};
use crate::model::{Mode, Scenario, UtilizationVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayReport {
    pub class: usize,
    pub lambda: f64,
    pub rho: f64,
    pub service_delay: f64,
    pub total_delay: f64,
    pub p_idle: f64,
    /// Per-super-slot success probability of a backlogged user, `P_v / rho_v`.
    pub p_succ: f64,
}

fn check_stable(rho: &UtilizationVector) -> Result<()> {
    match rho.as_slice().iter().position(|&r| !(r < 1.0)) {
        Some(class) => Err(Error::UnstableInput { class, rho: rho[class] }),
        None => Ok(()),
    }
}

fn arrival(s: &Scenario, v: usize) -> Result<f64> {
    let lam = s.classes[v].arrival_rate;
    if lam == 0.0 {
        Err(Error::ZeroArrival(v))
    } else {
        Ok(lam)
    }
}

/// Mean service delay `rho_v / lambda_v`.
///
/// For limiting scenarios the scaled rate `lambda~_v` is used, which gives the
/// delay divided by `N`.
pub fn service_delay(s: &Scenario, rho: &UtilizationVector, v: usize) -> Result<f64> {
    check_stable(rho)?;
    Ok(rho[v] / arrival(s, v)?)
}

/// Service delay from the channel statistics alone: expected super-slot
/// length over the per-super-slot success probability of a backlogged user.
/// Coincides with [`service_delay`] at an equilibrium `rho`.
pub fn service_delay_recursive(s: &Scenario, rho: &UtilizationVector, v: usize) -> Result<f64> {
    check_stable(rho)?;
    arrival(s, v)?;
    let rate = match s.mode {
        Mode::Finite => conditional_service_rate_finite(s, rho, v),
        Mode::Limiting => meanfield::service_rate(s, meanfield::gamma_of_rho(s, rho), v),
    };
    Ok(1.0 / rate)
}

/// Mean total delay of a class-`v` packet (finite scenario).
pub fn total_delay(s: &Scenario, rho: &UtilizationVector, v: usize) -> Result<f64> {
    check_stable(rho)?;
    let lam = arrival(s, v)?;
    let idle = p_idle_finite(s, rho);
    Ok(total_delay_formula(rho[v], lam, s.tau, idle))
}

fn total_delay_formula(rho: f64, lambda: f64, tau: u32, p_idle: f64) -> f64 {
    let tau = tau as f64;
    (rho * (1.0 / lambda - 1.0 / tau) + 0.5 * (tau - 1.0) * (1.0 - p_idle)) / (1.0 - rho)
}

/// Full delay record for every class with positive arrival rate.
pub fn delay_reports(s: &Scenario, rho: &UtilizationVector) -> Result<Vec<DelayReport>> {
    check_stable(rho)?;
    let idle = p_idle_finite(s, rho);
    let denom = idle + s.tau as f64 * (1.0 - idle);
    (0..s.num_classes())
        .filter(|&v| s.classes[v].arrival_rate > 0.0)
        .map(|v| {
            Ok(DelayReport {
                class: v,
                lambda: s.classes[v].arrival_rate,
                rho: rho[v],
                service_delay: service_delay(s, rho, v)?,
                total_delay: total_delay(s, rho, v)?,
                p_idle: idle,
                p_succ: conditional_service_rate_finite(s, rho, v) * denom,
            })
        })
        .collect()
}

/// Equilibrium utilization of a finite scenario taken from the limiting
/// solver (`rho* = lambda~ / mu(gamma_lower)`).
pub fn limiting_utilization(s: &Scenario) -> Result<UtilizationVector> {
    let eq = meanfield::solve_equilibrium(s)?;
    match eq.state {
        Region::Stable => Ok(eq.rho_solutions[0].clone()),
        _ => Err(Error::Infeasible(format!(
            "arrival rates are not in the stability region ({}; lambda={:.6}, f_max={:.6})",
            eq.state, eq.lambda_total, eq.f_max
        ))),
    }
}

/// Solves `lambda_v = R_v(x)` for the attempt probabilities `x_v = rho_v p_v`.
///
/// The limiting lower root seeds a damped fixed-point iteration on the
/// finite-N formulas.
pub fn solve_attempt_probabilities(s: &Scenario) -> Result<Vec<f64>> {
    let n_classes = s.num_classes();
    let lam: Vec<f64> = s.classes.iter().map(|c| c.arrival_rate).collect();
    if lam.iter().all(|&l| l == 0.0) {
        return Ok(vec![0.0; n_classes]);
    }
    let n = s.total_users() as f64;
    let lim = s.to_limiting();
    let law = s.mpr.effective_all_or_nothing();
    let lambda: f64 = lim
        .fractions()
        .iter()
        .zip(lim.scaled_arrivals())
        .map(|(b, l)| b * l)
        .sum();
    let (g_star, f_max) = meanfield::global_gamma_star(&law, s.tau, true)?;
    if lambda >= f_max {
        return Err(Error::Infeasible(format!(
            "total arrival rate {lambda:.6} (scaled) exceeds the peak rate {f_max:.6}"
        )));
    }
    // lower root of f(g) = lambda by bisection
    let (mut lo, mut hi) = (0.0, g_star);
    for _ in 0..meanfield::MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if meanfield::f_gamma(&law, s.tau, mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    let mut x: Vec<f64> = lim
        .scaled_arrivals()
        .iter()
        .map(|&l| (l * g / lambda / n).min(0.999))
        .collect();

    // With p_v = 1 the utilization equals x_v, so the finite formulas can be
    // evaluated on a scenario with unit transmission probabilities.
    let unit = s.with_tx_probs(&vec![1.0; n_classes]);
    const DAMPING: f64 = 0.5;
    for _ in 0..10_000 {
        let xv = UtilizationVector(x.clone());
        let next: Vec<f64> = (0..n_classes)
            .map(|v| {
                if lam[v] == 0.0 {
                    return 0.0;
                }
                let mu = conditional_service_rate_finite(&unit, &xv, v);
                let target = if mu > 0.0 { (lam[v] / mu).min(1.0) } else { 1.0 };
                DAMPING * x[v] + (1.0 - DAMPING) * target
            })
            .collect();
        let diff = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if diff < 1e-13 {
            if let Some(v) = x.iter().position(|&xv| xv >= 1.0 - VALIDITY_SLACK) {
                return Err(Error::Infeasible(format!(
                    "class {v} would need an attempt probability of 1"
                )));
            }
            return Ok(x);
        }
    }
    Err(Error::Infeasible("attempt-probability fixed point did not converge".into()))
}

/// Smallest transmission probabilities meeting the per-class total-delay
/// targets `targets[v]` (slots). Infinite targets give `p_v = x_v*`.
pub fn design_tx_probs(s: &Scenario, targets: &[f64]) -> Result<Vec<f64>> {
    if s.mode != Mode::Finite {
        return Err(Error::InvalidArgument("design requires a finite scenario".into()));
    }
    if targets.len() != s.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} delay targets for {} classes",
            targets.len(),
            s.num_classes()
        )));
    }
    let x = solve_attempt_probabilities(s)?;
    let unit = s.with_tx_probs(&vec![1.0; s.num_classes()]);
    let idle = p_idle_finite(&unit, &UtilizationVector(x.clone()));
    let kappa = s.kappa as f64;
    let overhead = 0.5 * (kappa - 1.0) * (1.0 - idle);
    (0..s.num_classes())
        .map(|v| {
            let lam = s.classes[v].arrival_rate;
            if lam == 0.0 {
                return Ok(0.0);
            }
            let t = targets[v];
            if t.is_infinite() {
                return Ok(x[v]);
            }
            let slack = t - overhead;
            if !(slack > 0.0) {
                return Err(Error::Infeasible(format!(
                    "class {v}: delay target {t} is below the contention overhead {overhead:.3}"
                )));
            }
            let p = x[v] * (1.0 / lam - 1.0 / kappa + t) / slack;
            if p > 1.0 {
                return Err(Error::Infeasible(format!(
                    "class {v}: delay target {t} needs transmission probability {p:.4} > 1"
                )));
            }
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AllOrNothingMpr, ClassSpec};

    #[test]
    fn service_delay_ratio() {
        let s = Scenario::finite(vec![ClassSpec::count(4, 0.01, 0.1)], 10, AllOrNothingMpr::collision());
        let d = service_delay(&s, &UtilizationVector(vec![0.2]), 0).unwrap();
        assert!((d - 20.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_always_served() {
        let s = Scenario::finite(vec![ClassSpec::count(1, 0.5, 1.0)], 1, AllOrNothingMpr::collision());
        let rho = UtilizationVector(vec![0.5]);
        assert_eq!(service_delay_recursive(&s, &rho, 0).unwrap(), 1.0);
        assert_eq!(service_delay(&s, &rho, 0).unwrap(), 1.0);
    }

    #[test]
    fn errors_on_unstable_or_idle_class() {
        let s = Scenario::finite(
            vec![ClassSpec::count(1, 0.5, 1.0), ClassSpec::count(1, 0.0, 1.0)],
            1,
            AllOrNothingMpr::collision(),
        );
        assert_eq!(
            total_delay(&s, &UtilizationVector(vec![1.0, 0.0]), 0),
            Err(Error::UnstableInput { class: 0, rho: 1.0 })
        );
        assert_eq!(
            service_delay(&s, &UtilizationVector(vec![0.5, 0.0]), 1),
            Err(Error::ZeroArrival(1))
        );
    }

    #[test]
    fn total_delay_tau_one_reduces() {
        let (rho, lam) = (0.4, 0.1);
        let d = total_delay_formula(rho, lam, 1, 0.3);
        assert!((d - rho * (1.0 / lam - 1.0) / (1.0 - rho)).abs() < 1e-12);
    }

    #[test]
    fn total_delay_blows_up_near_saturation() {
        let a = total_delay_formula(0.99, 0.01, 10, 0.5);
        let b = total_delay_formula(0.9999, 0.01, 10, 0.5);
        assert!(b > 50.0 * a);
    }

    #[test]
    fn zero_traffic_design_is_zero() {
        let s = Scenario::finite(
            vec![ClassSpec::count(20, 0.0, 0.1), ClassSpec::count(10, 0.0, 0.1)],
            10,
            AllOrNothingMpr::new(vec![0.78, 0.57]),
        );
        assert_eq!(design_tx_probs(&s, &[500.0, 500.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn infinite_target_returns_attempt_probability() {
        let s = Scenario::finite(
            vec![ClassSpec::count(20, 0.002, 0.1), ClassSpec::count(10, 0.002, 0.1)],
            10,
            AllOrNothingMpr::new(vec![0.78, 0.57]),
        );
        let x = solve_attempt_probabilities(&s).unwrap();
        let p = design_tx_probs(&s, &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert_eq!(p, x);
        let big = design_tx_probs(&s, &[1e12, 1e12]).unwrap();
        for v in 0..2 {
            assert!((big[v] - x[v]).abs() < 1e-6 * x[v]);
        }
    }

    #[test]
    fn overloaded_design_is_infeasible() {
        let s = Scenario::finite(
            vec![ClassSpec::count(20, 0.05, 0.1), ClassSpec::count(10, 0.05, 0.1)],
            10,
            AllOrNothingMpr::new(vec![0.78, 0.57]),
        );
        assert!(matches!(design_tx_probs(&s, &[500.0, 500.0]), Err(Error::Infeasible(_))));
    }
}
