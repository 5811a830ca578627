//! Fully resolved requests and their execution into tables.
//!
//! A [`Request`] holds every input a run depends on, so it can be stored in
//! an output manifest and re-executed later.

use csma_mpr::config::{PhySection, ScenarioConfig};
use csma_mpr::delay::{design_tx_probs, service_delay, solve_attempt_probabilities, total_delay};
use csma_mpr::exec::Execution;
use csma_mpr::meanfield::{gamma_of_rho, solve_equilibrium, solve_equilibrium_with, Region, SolverOptions};
use csma_mpr::phy::{estimate_q_all, Decoder, PhyConfig};
use csma_mpr::sim::{run_seeds, ClassReport, OutcomeSource, SimConfig, Stat};
use csma_mpr::{Error, Mode, Result, Scenario};
use serde::{Deserialize, Serialize};

use crate::output::{int, num, opt, text, Table};
use crate::presets::{self, push_estimate, qprob_table, Effort, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Analytic,
    Simulated,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyParams {
    pub snr_db: f64,
    pub antennas: usize,
    pub message_rate: f64,
    pub decoder: String,
    pub samples: usize,
    pub seed: u64,
    pub a_radius: u32,
}

impl PhyParams {
    pub fn from_section(p: &PhySection) -> Self {
        Self {
            snr_db: p.snr_db.unwrap_or(6.0),
            antennas: p.antennas.unwrap_or(1),
            message_rate: p.message_rate.unwrap_or(1.0),
            decoder: p.decoder.clone().unwrap_or_else(|| "SCF".into()),
            samples: p.samples.unwrap_or(10_000),
            seed: p.seed.unwrap_or(1),
            a_radius: p.a_radius.unwrap_or(2),
        }
    }

    pub fn to_config(&self) -> Result<PhyConfig> {
        let mut cfg = PhyConfig::new(self.snr_db, self.antennas, self.message_rate, self.decoder.parse()?);
        cfg.samples = self.samples;
        cfg.seed = self.seed;
        cfg.a_radius = self.a_radius;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Request {
    Analyze {
        scenario: ScenarioConfig,
        /// Classify by a dense grid scan when the law is not unimodal.
        #[serde(default)]
        grid_fallback: bool,
    },
    Simulate {
        scenario: ScenarioConfig,
        horizon: u64,
        warmup: u64,
        seeds: Vec<u64>,
        /// Decide outcomes from sampled fading channels instead of the MPR law.
        phy_outcomes: Option<PhyParams>,
    },
    Qprob {
        phy: PhyParams,
        decoders: Vec<String>,
        users: Vec<usize>,
    },
    Table1 {
        samples: usize,
        seed: u64,
    },
    Design {
        scenario: ScenarioConfig,
        targets: Vec<f64>,
    },
    Reproduce {
        preset: Preset,
        part: Part,
        effort: Effort,
    },
}

impl Request {
    pub fn execute(&self) -> Result<Vec<Table>> {
        match self {
            Request::Analyze { scenario, grid_fallback } => analyze(scenario, *grid_fallback).map(|t| vec![t]),
            Request::Simulate { scenario, horizon, warmup, seeds, phy_outcomes } => {
                simulate(scenario, *horizon, *warmup, seeds, phy_outcomes.as_ref()).map(|t| vec![t])
            }
            Request::Qprob { phy, decoders, users } => qprob(phy, decoders, users).map(|t| vec![t]),
            Request::Table1 { samples, seed } => presets::table1(*samples, *seed).map(|t| vec![t]),
            Request::Design { scenario, targets } => design(scenario, targets).map(|t| vec![t]),
            Request::Reproduce { preset, part, effort } => {
                let mut out = Vec::new();
                if matches!(part, Part::Analytic | Part::Both) {
                    out.push(presets::analytic(*preset, effort)?);
                }
                if matches!(part, Part::Simulated | Part::Both) && *preset != Preset::Table1 {
                    out.push(presets::simulated(*preset, effort)?);
                }
                Ok(out)
            }
        }
    }
}

fn analyze(cfg: &ScenarioConfig, grid_fallback: bool) -> Result<Table> {
    let s = cfg.to_scenario()?;
    let eq = solve_equilibrium_with(&s, SolverOptions { allow_grid_fallback: grid_fallback })?;
    let mut t = Table::new(
        "analyze",
        vec![
            "solution",
            "state",
            "gamma_root",
            "class",
            "lambda",
            "rho",
            "service_delay",
            "total_delay",
            "lambda_total",
            "lambda_0",
            "f_max",
            "gamma_star",
            "gamma_0",
            "multimodal",
        ],
    );
    let diag = |row: &mut Vec<serde_json::Value>| {
        row.extend([
            num(eq.lambda_total),
            num(eq.lambda_0),
            num(eq.f_max),
            num(eq.gamma_star),
            num(eq.gamma_0),
            eq.multimodal.into(),
        ])
    };
    if eq.state == Region::Unstable {
        let mut row = vec![serde_json::Value::Null, text(eq.state.to_string())];
        row.extend(std::iter::repeat_n(serde_json::Value::Null, 6));
        diag(&mut row);
        t.push(row);
        return Ok(t);
    }
    for (k, rho) in eq.rho_solutions.iter().enumerate() {
        for v in 0..s.num_classes() {
            let (sd, td) = if eq.state == Region::Stable {
                let td = if s.mode == Mode::Finite { total_delay(&s, rho, v).ok() } else { None };
                (service_delay(&s, rho, v).ok(), td)
            } else {
                (None, None)
            };
            let mut row = vec![
                int(k as u64),
                text(eq.state.to_string()),
                num(gamma_of_rho(&s, rho)),
                int(v as u64 + 1),
                num(s.classes[v].arrival_rate),
                num(rho[v]),
                opt(sd),
                opt(td),
            ];
            diag(&mut row);
            t.push(row);
        }
    }
    Ok(t)
}

fn stat_cells(s: Stat) -> [serde_json::Value; 2] {
    [num(s.mean), num(s.stderr)]
}

fn pooled(stats: &[Stat]) -> Stat {
    let n = stats.len() as f64;
    let mean = stats.iter().map(|s| s.mean).sum::<f64>() / n;
    if stats.len() < 2 {
        return stats[0];
    }
    let var = stats.iter().map(|s| (s.mean - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Stat { mean, stderr: (var / n).sqrt() }
}

fn simulate(cfg: &ScenarioConfig, horizon: u64, warmup: u64, seeds: &[u64], phy: Option<&PhyParams>) -> Result<Table> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let s = cfg.to_scenario()?;
    let mut sim = SimConfig::new(s, horizon, seeds[0]);
    sim.warmup = warmup;
    if let Some(p) = phy {
        sim.outcomes = OutcomeSource::Phy(p.to_config()?);
    }
    sim.validate()?;
    let reports = run_seeds(&sim, seeds, Execution::Parallel)?;
    for r in &reports {
        for w in &r.warnings {
            eprintln!("warning (seed {}): {w}", r.seed);
        }
    }
    let mut t = Table::new(
        "simulate",
        vec![
            "seed",
            "class",
            "users",
            "saturated",
            "throughput",
            "throughput_stderr",
            "utilization",
            "utilization_stderr",
            "service_delay",
            "service_delay_stderr",
            "total_delay",
            "total_delay_stderr",
            "mean_backlog",
            "mean_backlog_stderr",
            "arrivals",
            "departures",
            "final_backlog",
            "dropped",
        ],
    );
    let stats = |c: &ClassReport| [c.throughput, c.utilization, c.mean_service_delay, c.mean_total_delay, c.mean_backlog];
    for r in &reports {
        for c in &r.classes {
            let mut row = vec![text(r.seed.to_string()), text((c.class + 1).to_string()), int(c.users), c.saturated.into()];
            row.extend(stats(c).into_iter().flat_map(stat_cells));
            row.extend([int(c.arrivals), int(c.departures), int(c.final_backlog), int(c.dropped)]);
            t.push(row);
        }
        let mut row = vec![text(r.seed.to_string()), text("total"), serde_json::Value::Null, serde_json::Value::Null];
        row.extend(stat_cells(r.aggregate_throughput));
        row.extend(std::iter::repeat_n(serde_json::Value::Null, 12));
        t.push(row);
    }
    let classes = reports[0].classes.len();
    for v in 0..classes {
        let c0 = &reports[0].classes[v];
        let mut row = vec![text("all"), text((v + 1).to_string()), int(c0.users), c0.saturated.into()];
        for k in 0..5 {
            let col: Vec<Stat> = reports.iter().map(|r| stats(&r.classes[v])[k]).collect();
            row.extend(stat_cells(pooled(&col)));
        }
        let sum = |f: fn(&ClassReport) -> u64| int(reports.iter().map(|r| f(&r.classes[v])).sum::<u64>());
        row.extend([sum(|c| c.arrivals), sum(|c| c.departures), sum(|c| c.final_backlog), sum(|c| c.dropped)]);
        t.push(row);
    }
    let agg: Vec<Stat> = reports.iter().map(|r| r.aggregate_throughput).collect();
    let mut row = vec![text("all"), text("total"), serde_json::Value::Null, serde_json::Value::Null];
    row.extend(stat_cells(pooled(&agg)));
    row.extend(std::iter::repeat_n(serde_json::Value::Null, 12));
    t.push(row);
    Ok(t)
}

fn qprob(phy: &PhyParams, decoders: &[String], users: &[usize]) -> Result<Table> {
    let cfg = phy.to_config()?;
    let wanted: Vec<Decoder> = decoders.iter().map(|d| d.parse()).collect::<Result<_>>()?;
    let mut t = qprob_table();
    for &l in users {
        for e in estimate_q_all(&cfg, l, Execution::Parallel)? {
            if wanted.contains(&e.decoder) {
                push_estimate(&mut t, &cfg, &e);
            }
        }
    }
    Ok(t)
}

fn design(cfg: &ScenarioConfig, targets: &[f64]) -> Result<Table> {
    let s = cfg.to_scenario()?;
    let p = design_tx_probs(&s, targets).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("{msg}\n{}", stability_diagnostics(&s))),
        other => other,
    })?;
    let x = solve_attempt_probabilities(&s)?;
    let mut t = Table::new("design", vec!["class", "lambda", "delay_target", "attempt_probability", "tx_prob"]);
    for v in 0..s.num_classes() {
        t.push(vec![int(v as u64 + 1), num(s.classes[v].arrival_rate), num(targets[v]), num(x[v]), num(p[v])]);
    }
    Ok(t)
}

fn stability_diagnostics(s: &Scenario) -> String {
    match solve_equilibrium(s) {
        Ok(eq) => format!(
            "stability diagnostics: state={} lambda_total={:.6} lambda_0={:.6} f_max={:.6} gamma_star={:.6} gamma_0={:.6}",
            eq.state, eq.lambda_total, eq.lambda_0, eq.f_max, eq.gamma_star, eq.gamma_0
        ),
        Err(e) => format!("stability diagnostics unavailable: {e}"),
    }
}
