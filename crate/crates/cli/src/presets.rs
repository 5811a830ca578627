//! Figure and table reproduction pipelines.
//!
//! Success probabilities are fixed per scheme (the tabulated Monte Carlo
//! values); `table1` recomputes them from the physical layer.

use csma_mpr::delay::{service_delay, total_delay};
use csma_mpr::exec::{map_slice, Execution};
use csma_mpr::meanfield::{
    aggregate_throughput, conditional_service_rate_finite, solve_equilibrium_with, throughput_finite, EquilibriumResult,
    Region, SolverOptions,
};
use csma_mpr::phy::{estimate_q_all, Decoder, PhyConfig};
use csma_mpr::sim::{run_seeds, SimConfig, SimReport, Stat};
use csma_mpr::{AllOrNothingMpr, ClassSpec, Result, Scenario, UtilizationVector};
use serde::{Deserialize, Serialize};

use crate::output::{int, num, opt, text, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
    Table1,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
            Preset::Fig8 => "fig8",
            Preset::Fig9 => "fig9",
            Preset::Fig10 => "fig10",
            Preset::Table1 => "table1",
        }
    }
}

/// Simulation and Monte Carlo effort for a preset run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effort {
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub samples: usize,
}

type Scheme = (&'static str, &'static [f64]);

const LOW_SNR: [Scheme; 5] = [
    ("conventional", &[0.78]),
    ("SIC", &[0.78, 0.46]),
    ("CF", &[0.78, 0.45]),
    ("SCF", &[0.78, 0.57]),
    ("JD", &[0.78, 0.60]),
];

const HIGH_SNR: [Scheme; 5] = [
    ("conventional", &[0.91]),
    ("SIC", &[0.91, 0.31]),
    ("CF", &[0.91, 0.61]),
    ("SCF", &[0.91, 0.66]),
    ("JD", &[0.91, 0.80]),
];

const TWO_ANTENNAS: [Scheme; 5] = [
    ("conventional", &[0.98]),
    ("SIC", &[0.98, 0.88, 0.32]),
    ("CF", &[0.98, 0.92, 0.70]),
    ("SCF", &[0.98, 0.93, 0.81]),
    ("JD", &[0.98, 0.95, 0.91]),
];

const KAPPA: u32 = 10;

fn two_class(n: [u32; 2], lam: [f64; 2], p: [f64; 2], q: &[f64]) -> Scenario {
    Scenario::finite(
        vec![ClassSpec::count(n[0], lam[0], p[0]), ClassSpec::count(n[1], lam[1], p[1])],
        KAPPA,
        AllOrNothingMpr::new(q.to_vec()),
    )
}

fn grid(step: f64, last: f64) -> Vec<f64> {
    let n = (last / step).round() as usize;
    (1..=n).map(|i| (i as f64 * step * 1e6).round() / 1e6).collect()
}

/// Equilibrium with the grid fallback for laws outside the unimodal class.
fn equilibrium(s: &Scenario) -> Result<EquilibriumResult> {
    solve_equilibrium_with(&s.to_limiting(), SolverOptions { allow_grid_fallback: true })
}

/// Largest common per-user arrival rate inside the stability region.
pub fn max_stable_rate(base: &Scenario) -> Result<f64> {
    let n = base.total_users() as f64;
    let v = base.num_classes();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if equilibrium(&base.to_limiting().with_arrivals(&vec![mid * n; v]))?.state == Region::Stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Utilization reached from an empty system when some queues may saturate:
/// damped iteration of `rho_v = min(1, lambda_v / service_v(rho))`.
pub fn carried_utilization(s: &Scenario) -> UtilizationVector {
    let v_count = s.num_classes();
    let mut rho = UtilizationVector::zeros(v_count);
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..v_count)
            .map(|v| {
                let lam = s.classes[v].arrival_rate;
                let target = if lam >= 1.0 {
                    1.0
                } else {
                    let mu = conditional_service_rate_finite(s, &rho, v);
                    if mu > 0.0 { (lam / mu).min(1.0) } else { 1.0 }
                };
                0.5 * rho[v] + 0.5 * target
            })
            .collect();
        let diff = next.iter().zip(rho.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rho = UtilizationVector(next);
        if diff < 1e-12 {
            break;
        }
    }
    rho
}

pub fn carried_throughput(s: &Scenario) -> f64 {
    let rho = carried_utilization(s);
    let counts = s.counts();
    (0..s.num_classes()).map(|v| counts[v] as f64 * throughput_finite(s, &rho, v)).sum()
}

/// Pools replications: mean of means, with the spread across seeds as the
/// error (or the batch-means error for a single seed).
fn pool(stats: &[Stat]) -> (f64, f64) {
    let n = stats.len() as f64;
    let mean = stats.iter().map(|s| s.mean).sum::<f64>() / n;
    if stats.len() < 2 {
        return (mean, stats[0].stderr);
    }
    let var = stats.iter().map(|s| (s.mean - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn simulate(s: &Scenario, effort: &Effort) -> Result<Vec<SimReport>> {
    run_seeds(&SimConfig::new(s.clone(), effort.horizon, 0), &effort.seeds, Execution::Sequential)
}

fn fig4_scenario(lam: f64, p1: f64) -> Scenario {
    two_class([10, 10], [lam, lam], [p1, 0.2], &[0.96, 0.89])
}

const FIG4_RATES: [f64; 4] = [0.005, 0.01, 0.02, 1.0];

fn fig4_points() -> Vec<(f64, f64)> {
    FIG4_RATES.iter().flat_map(|&l| grid(0.02, 0.3).into_iter().map(move |p| (l, p))).collect()
}

fn delay_schemes(preset: Preset) -> &'static [Scheme] {
    match preset {
        Preset::Fig10 => &HIGH_SNR,
        _ => &LOW_SNR,
    }
}

fn delay_base(q: &[f64]) -> Scenario {
    two_class([20, 10], [0.0, 0.0], [1.0 / 40.0, 1.0 / 20.0], q)
}

/// Common arrival-rate axis spanning the widest stability range.
fn delay_grid(schemes: &[Scheme]) -> Result<Vec<f64>> {
    let mut top: f64 = 0.0;
    for (_, q) in schemes {
        top = top.max(max_stable_rate(&delay_base(q))?);
    }
    Ok((1..=12).map(|k| top * k as f64 / 12.0).collect())
}

/// Analytical curves of a preset.
pub fn analytic(preset: Preset, effort: &Effort) -> Result<Table> {
    match preset {
        Preset::Fig4 => {
            let mut t = Table::new("analytic", vec!["arrival_rate", "saturated", "p1", "aggregate_throughput"]);
            for (lam, p1) in fig4_points() {
                let s = fig4_scenario(lam, p1);
                let thr = if lam >= 1.0 {
                    aggregate_throughput(&s, &UtilizationVector::ones(2))
                } else {
                    carried_throughput(&s)
                };
                t.push(vec![num(lam), (lam >= 1.0).into(), num(p1), num(thr)]);
            }
            Ok(t)
        }
        Preset::Fig5 => {
            let mut t = Table::new("analytic", vec!["scheme", "users", "max_rate_per_user", "max_aggregate_throughput"]);
            for (name, q) in TWO_ANTENNAS {
                for n in (10..=100).step_by(10) {
                    let s = fig5_scenario(n, 0.0, q);
                    let lam = max_stable_rate(&s)?;
                    t.push(vec![text(name), int(n as u64), num(lam), num(lam * n as f64)]);
                }
            }
            Ok(t)
        }
        Preset::Fig6 => {
            let mut t = Table::new("analytic", vec!["scheme", "users", "p1", "p2", "saturated_throughput"]);
            for (name, q) in LOW_SNR {
                for n in [5u32, 10] {
                    for p1 in grid(0.05, 1.0) {
                        let s = fig6_scenario(n, p1, q);
                        let thr = aggregate_throughput(&s, &UtilizationVector::ones(2));
                        t.push(vec![text(name), int(n as u64), num(p1), num(0.8 * p1), num(thr)]);
                    }
                }
            }
            Ok(t)
        }
        Preset::Fig7 => {
            let mut t = Table::new("analytic", vec!["scheme", "p1", "aggregate_throughput"]);
            for (name, q) in HIGH_SNR {
                for p1 in grid(0.05, 1.0) {
                    t.push(vec![text(name), num(p1), num(carried_throughput(&fig7_scenario(p1, q)))]);
                }
            }
            Ok(t)
        }
        Preset::Fig8 | Preset::Fig9 | Preset::Fig10 => {
            let schemes = delay_schemes(preset);
            let lambdas = delay_grid(schemes)?;
            let mut t = Table::new(
                "analytic",
                vec!["scheme", "lambda1", "lambda2", "class", "region", "rho", "service_delay", "total_delay"],
            );
            for (name, q) in schemes {
                for &lam in &lambdas {
                    let s = delay_base(q).with_arrivals(&[lam, lam]);
                    let eq = equilibrium(&s)?;
                    for v in 0..2 {
                        let (rho, sd, td) = if eq.state == Region::Stable {
                            let rho = &eq.rho_solutions[0];
                            (Some(rho[v]), service_delay(&s, rho, v).ok(), total_delay(&s, rho, v).ok())
                        } else {
                            (None, None, None)
                        };
                        t.push(vec![
                            text(*name),
                            num(lam),
                            num(lam),
                            int(v as u64 + 1),
                            text(eq.state.to_string()),
                            opt(rho),
                            opt(sd),
                            opt(td),
                        ]);
                    }
                }
            }
            Ok(t)
        }
        Preset::Table1 => {
            let mut t = table1(effort.samples, effort.seeds.first().copied().unwrap_or(1))?;
            t.name = "analytic".into();
            Ok(t)
        }
    }
}

fn fig5_scenario(n: u32, lam: f64, q: &[f64]) -> Scenario {
    let nf = n as f64;
    two_class([n / 2, n - n / 2], [lam, lam], [5.0 / (6.0 * nf), 7.0 / (6.0 * nf)], q)
}

fn fig6_scenario(n: u32, p1: f64, q: &[f64]) -> Scenario {
    let n1 = 3 * n / 5;
    two_class([n1, n - n1], [1.0, 1.0], [p1, 0.8 * p1], q)
}

fn fig7_scenario(p1: f64, q: &[f64]) -> Scenario {
    two_class([12, 8], [1.0 / 16.0, 1.0 / 64.0], [p1, 0.25], q)
}

fn aggregate(reports: &[SimReport]) -> (f64, f64) {
    pool(&reports.iter().map(|r| r.aggregate_throughput).collect::<Vec<_>>())
}

/// Simulated counterparts of [`analytic`] (same grid, same labels).
pub fn simulated(preset: Preset, effort: &Effort) -> Result<Table> {
    let exec = Execution::Parallel;
    match preset {
        Preset::Fig4 => {
            let points = fig4_points();
            let runs = map_slice(exec, &points, |&(lam, p1)| simulate(&fig4_scenario(lam, p1), effort));
            let mut t = Table::new(
                "simulated",
                vec!["arrival_rate", "saturated", "p1", "aggregate_throughput", "stderr"],
            );
            for ((lam, p1), r) in points.into_iter().zip(runs) {
                let (m, se) = aggregate(&r?);
                t.push(vec![num(lam), (lam >= 1.0).into(), num(p1), num(m), num(se)]);
            }
            Ok(t)
        }
        Preset::Fig5 => {
            let mut jobs = Vec::new();
            for (name, q) in TWO_ANTENNAS {
                for n in (10..=100).step_by(10) {
                    jobs.push((name, q, n));
                }
            }
            let runs = map_slice(exec, &jobs, |&(_, q, n)| -> Result<(f64, (f64, f64), u64)> {
                // offered load just inside the predicted boundary
                let lam = 0.95 * max_stable_rate(&fig5_scenario(n, 0.0, q))?;
                let r = simulate(&fig5_scenario(n, lam, q), effort)?;
                let backlog = r.iter().flat_map(|x| &x.classes).map(|c| c.final_backlog).max().unwrap_or(0);
                Ok((lam, aggregate(&r), backlog))
            });
            let mut t = Table::new(
                "simulated",
                vec!["scheme", "users", "offered_rate_per_user", "aggregate_throughput", "stderr", "max_final_backlog"],
            );
            for ((name, _, n), r) in jobs.into_iter().zip(runs) {
                let (lam, (m, se), backlog) = r?;
                t.push(vec![text(name), int(n as u64), num(lam), num(m), num(se), int(backlog)]);
            }
            Ok(t)
        }
        Preset::Fig6 => {
            let mut jobs = Vec::new();
            for (name, q) in LOW_SNR {
                for n in [5u32, 10] {
                    for p1 in grid(0.05, 1.0) {
                        jobs.push((name, q, n, p1));
                    }
                }
            }
            let runs = map_slice(exec, &jobs, |&(_, q, n, p1)| simulate(&fig6_scenario(n, p1, q), effort));
            let mut t = Table::new("simulated", vec!["scheme", "users", "p1", "p2", "saturated_throughput", "stderr"]);
            for ((name, _, n, p1), r) in jobs.into_iter().zip(runs) {
                let (m, se) = aggregate(&r?);
                t.push(vec![text(name), int(n as u64), num(p1), num(0.8 * p1), num(m), num(se)]);
            }
            Ok(t)
        }
        Preset::Fig7 => {
            let jobs: Vec<(&str, &[f64], f64)> =
                HIGH_SNR.iter().flat_map(|&(n, q)| grid(0.05, 1.0).into_iter().map(move |p| (n, q, p))).collect();
            let runs = map_slice(exec, &jobs, |&(_, q, p1)| simulate(&fig7_scenario(p1, q), effort));
            let mut t = Table::new("simulated", vec!["scheme", "p1", "aggregate_throughput", "stderr"]);
            for ((name, _, p1), r) in jobs.into_iter().zip(runs) {
                let (m, se) = aggregate(&r?);
                t.push(vec![text(name), num(p1), num(m), num(se)]);
            }
            Ok(t)
        }
        Preset::Fig8 | Preset::Fig9 | Preset::Fig10 => {
            let schemes = delay_schemes(preset);
            let lambdas = delay_grid(schemes)?;
            let mut jobs = Vec::new();
            for &(name, q) in schemes {
                for &lam in &lambdas {
                    let s = delay_base(q).with_arrivals(&[lam, lam]);
                    // only points the analysis classifies as stable
                    if equilibrium(&s)?.state == Region::Stable {
                        jobs.push((name, s, lam));
                    }
                }
            }
            let runs = map_slice(exec, &jobs, |(_, s, _)| simulate(s, effort));
            let mut t = Table::new(
                "simulated",
                vec![
                    "scheme",
                    "lambda1",
                    "lambda2",
                    "class",
                    "utilization",
                    "service_delay",
                    "service_delay_stderr",
                    "total_delay",
                    "total_delay_stderr",
                ],
            );
            for ((name, _, lam), r) in jobs.into_iter().zip(runs) {
                let r = r?;
                for v in 0..2 {
                    let col = |f: fn(&csma_mpr::sim::ClassReport) -> Stat| {
                        pool(&r.iter().map(|x| f(&x.classes[v])).collect::<Vec<_>>())
                    };
                    let util = col(|c| c.utilization);
                    let sd = col(|c| c.mean_service_delay);
                    let td = col(|c| c.mean_total_delay);
                    t.push(vec![
                        text(name),
                        num(lam),
                        num(lam),
                        int(v as u64 + 1),
                        num(util.0),
                        num(sd.0),
                        num(sd.1),
                        num(td.0),
                        num(td.1),
                    ]);
                }
            }
            Ok(t)
        }
        Preset::Table1 => analytic(preset, effort),
    }
}

/// Success probabilities for the three tabulated configurations, all four
/// decoders, `L = 1..=K+1`.
pub fn table1(samples: usize, seed: u64) -> Result<Table> {
    let mut t = qprob_table();
    for (snr_db, k, rate) in [(6.0, 1usize, 1.0), (15.0, 1, 2.0), (15.0, 2, 3.0)] {
        let mut cfg = PhyConfig::new(snr_db, k, rate, Decoder::Scf);
        cfg.samples = samples;
        cfg.seed = seed;
        for l in 1..=k + 1 {
            for e in estimate_q_all(&cfg, l, Execution::Parallel)? {
                push_estimate(&mut t, &cfg, &e);
            }
        }
    }
    Ok(t)
}

pub fn qprob_table() -> Table {
    Table::new(
        "qprob",
        vec![
            "decoder",
            "snr_db",
            "K",
            "R",
            "L",
            "q_hat",
            "ci_half_width",
            "samples",
            "seed",
            "successes",
            "failed",
            "degenerate_ci",
        ],
    )
}

pub fn push_estimate(t: &mut Table, cfg: &PhyConfig, e: &csma_mpr::phy::QEstimate) {
    t.push(vec![
        text(e.decoder.to_string()),
        num(cfg.snr_db),
        int(cfg.antennas as u64),
        num(cfg.message_rate),
        int(e.users as u64),
        num(e.q_hat),
        num(e.ci_half_width),
        int(e.samples as u64),
        int(cfg.seed),
        int(e.successes as u64),
        int(e.failed as u64),
        e.degenerate_ci().into(),
    ]);
}
