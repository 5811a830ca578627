//! Slot-level simulator of persistent CSMA with symmetric MPR.
//!
//! Time advances in slots. At every super-slot boundary each backlogged user
//! transmits its head-of-line packet with probability `p_v`. No transmission
//! gives a one-slot idle super slot; `L >= 1` transmissions occupy the
//! channel for `tau` slots and the MPR law decides which packets leave at
//! the end of the last slot. Packets arrive in every slot, busy or not, and
//! arrivals in a boundary slot can be transmitted in that super slot.
//!
//! Delays include both endpoint slots, so a packet that arrives and leaves in
//! the same slot has delay 1. Users with `lambda_v >= 1` are saturated: they
//! always hold a packet and contribute no delay statistics.

use std::collections::{HashMap, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::model::{ensure_valid, Mode, MprModel, Scenario};
use crate::phy::{sample_channel, PhyConfig, RateEvaluator};

/// How the channel decides which simultaneous packets are decoded.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeSource {
    /// Draw from the scenario's MPR law.
    MprLaw,
    /// Draw a fresh fading channel per busy super slot and decode all packets
    /// iff the message rate is below the configured decoder's symmetric rate.
    Phy(PhyConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub trace: bool,
    pub outcomes: OutcomeSource,
    /// Batches used for the batch-means standard errors.
    pub batches: usize,
    /// Per-user queue capacity; arrivals to a full queue are dropped.
    pub buffer_cap: Option<u32>,
}

impl SimConfig {
    /// Fixed-law configuration with a 10% warmup and no trace.
    pub fn new(scenario: Scenario, horizon: u64, seed: u64) -> Self {
        Self {
            scenario,
            horizon,
            warmup: horizon / 10,
            seed,
            trace: false,
            outcomes: OutcomeSource::MprLaw,
            batches: 20,
            buffer_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_valid(&self.scenario)?;
        if self.scenario.mode != Mode::Finite {
            return Err(Error::InvalidArgument("simulation requires a finite scenario".into()));
        }
        if self.horizon <= self.warmup {
            return Err(Error::InvalidArgument(format!(
                "horizon ({}) must exceed warmup ({})",
                self.horizon, self.warmup
            )));
        }
        if self.batches < 2 {
            return Err(Error::InvalidArgument("at least two batches are needed".into()));
        }
        if self.buffer_cap == Some(0) {
            return Err(Error::InvalidArgument("buffer cap must be at least 1".into()));
        }
        if let OutcomeSource::Phy(p) = &self.outcomes {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotState {
    #[serde(rename = "IDLE")]
    Idle,
    #[serde(rename = "BUSY")]
    Busy,
}

impl std::fmt::Display for SlotState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SlotState::Idle => "IDLE",
            SlotState::Busy => "BUSY",
        })
    }
}

/// One super slot of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub slot_index: u64,
    pub state: SlotState,
    pub attempts: u32,
    pub decoded: u32,
    /// Packets queued by non-saturated users at the boundary.
    pub total_backlog: u64,
}

/// Estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    fn nan() -> Self {
        Stat { mean: f64::NAN, stderr: f64::NAN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub users: u32,
    pub saturated: bool,
    /// Packets delivered inside the measurement window (whole class).
    pub packets_delivered: u64,
    /// Per-user throughput, packets per slot.
    pub throughput: Stat,
    /// Fraction of (user, boundary) pairs with a non-empty queue.
    pub utilization: Stat,
    pub mean_service_delay: Stat,
    pub mean_total_delay: Stat,
    /// Time-averaged queue length per user (including the HOL packet).
    pub mean_backlog: Stat,
    /// Totals over the whole run, warmup included.
    pub arrivals: u64,
    pub departures: u64,
    pub final_backlog: u64,
    /// Arrivals lost to the buffer cap over the whole run.
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub classes: Vec<ClassReport>,
    /// Sum over classes of `users * throughput`.
    pub aggregate_throughput: Stat,
    pub fraction_idle_superslots: f64,
    /// `attempt_histogram[L]` counts measured super slots with `L` transmitters.
    pub attempt_histogram: Vec<u64>,
    pub measured_slots: u64,
    pub measured_superslots: u64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRecord>>,
}

struct User {
    class: usize,
    p: f64,
    saturated: bool,
    arrivals: Option<Geometric>,
    next_arrival: u64,
    queue: VecDeque<u64>,
    hol_entry: u64,
}

impl User {
    fn draw_next(&mut self, after: u64, rng: &mut ChaCha8Rng) {
        self.next_arrival = match &self.arrivals {
            Some(g) => after.saturating_add(g.sample(rng)),
            None => u64::MAX,
        };
    }
}

/// Accumulators for one measurement batch.
#[derive(Clone, Default)]
struct Batch {
    slots: u64,
    delivered: Vec<u64>,
    busy_boundaries: Vec<u64>,
    boundaries: u64,
    service_sum: Vec<f64>,
    total_sum: Vec<f64>,
    delay_count: Vec<u64>,
    backlog_area: Vec<f64>,
}

impl Batch {
    fn new(v: usize) -> Self {
        Self {
            delivered: vec![0; v],
            busy_boundaries: vec![0; v],
            service_sum: vec![0.0; v],
            total_sum: vec![0.0; v],
            delay_count: vec![0; v],
            backlog_area: vec![0.0; v],
            ..Default::default()
        }
    }
}

fn batch_stat(values: &[f64]) -> Stat {
    let vals: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if vals.is_empty() {
        return Stat::nan();
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return Stat { mean, stderr: f64::NAN };
    }
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Stat { mean, stderr: (var / n).sqrt() }
}

/// Ratio estimate over batches: pooled mean, stderr from per-batch ratios.
fn ratio_stat(num: &[f64], den: &[f64]) -> Stat {
    let total_den: f64 = den.iter().sum();
    if total_den == 0.0 {
        return Stat::nan();
    }
    let per_batch: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(n, d)| if *d > 0.0 { n / d } else { f64::NAN })
        .collect();
    let s = batch_stat(&per_batch);
    Stat { mean: num.iter().sum::<f64>() / total_den, stderr: s.stderr }
}

/// Runs one simulation.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let n_classes = s.num_classes();
    let counts = s.counts();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut users: Vec<User> = Vec::new();
    for (v, &n) in counts.iter().enumerate() {
        let lam = s.classes[v].arrival_rate;
        for _ in 0..n {
            let saturated = lam >= 1.0;
            let arrivals = if saturated || lam <= 0.0 {
                None
            } else {
                Some(Geometric::new(lam).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            };
            let mut u = User {
                class: v,
                p: s.classes[v].tx_prob,
                saturated,
                arrivals,
                next_arrival: 0,
                queue: VecDeque::new(),
                hol_entry: 0,
            };
            u.draw_next(0, &mut rng);
            users.push(u);
        }
    }

    let tau = s.tau as u64;
    let window = cfg.horizon - cfg.warmup;
    let batch_len = window.div_ceil(cfg.batches as u64);
    let batch_of = |t: u64| (((t - cfg.warmup) / batch_len) as usize).min(cfg.batches - 1);
    let mut batches = vec![Batch::new(n_classes); cfg.batches];

    let mut arrivals_total = vec![0u64; n_classes];
    let mut departures_total = vec![0u64; n_classes];
    let mut dropped_total = vec![0u64; n_classes];
    let cap = cfg.buffer_cap.map_or(usize::MAX, |c| c as usize);
    let mut histogram: Vec<u64> = Vec::new();
    let (mut superslots, mut idle_superslots) = (0u64, 0u64);
    let mut trace = cfg.trace.then(Vec::new);

    let mut phy_eval: HashMap<usize, RateEvaluator> = HashMap::new();
    let mpr = &s.mpr;
    let mut transmitters: Vec<usize> = Vec::new();
    let mut t: u64 = 0;

    // enqueue arrivals in slots <= upto
    let admit = |users: &mut [User], upto: u64, rng: &mut ChaCha8Rng, arrivals_total: &mut [u64], dropped: &mut [u64]| {
        for u in users.iter_mut() {
            while u.next_arrival <= upto {
                let a = u.next_arrival;
                if u.queue.len() >= cap {
                    dropped[u.class] += 1;
                    u.draw_next(a + 1, rng);
                    continue;
                }
                if u.queue.is_empty() {
                    u.hol_entry = a;
                }
                u.queue.push_back(a);
                arrivals_total[u.class] += 1;
                u.draw_next(a + 1, rng);
            }
        }
    };

    while t < cfg.horizon {
        admit(&mut users, t, &mut rng, &mut arrivals_total, &mut dropped_total);
        let measuring = t >= cfg.warmup;
        let backlog_now: Vec<u64> = {
            let mut b = vec![0u64; n_classes];
            for u in &users {
                b[u.class] += u.queue.len() as u64;
            }
            b
        };

        transmitters.clear();
        for (i, u) in users.iter().enumerate() {
            let backlogged = u.saturated || !u.queue.is_empty();
            if backlogged && rng.random::<f64>() < u.p {
                transmitters.push(i);
            }
        }
        if measuring {
            let b = &mut batches[batch_of(t)];
            b.boundaries += 1;
            for u in &users {
                if u.saturated || !u.queue.is_empty() {
                    b.busy_boundaries[u.class] += 1;
                }
            }
        }

        let l = transmitters.len();
        let len = if l == 0 { 1 } else { tau };
        let end = t + len - 1;

        // mid-period arrivals: present from their slot to the end of the period
        let mut mid_area = vec![0.0; n_classes];
        if len > 1 {
            for u in users.iter_mut() {
                while u.next_arrival <= end {
                    let a = u.next_arrival;
                    if u.queue.len() >= cap {
                        dropped_total[u.class] += 1;
                        u.draw_next(a + 1, &mut rng);
                        continue;
                    }
                    if u.queue.is_empty() {
                        u.hol_entry = a;
                    }
                    u.queue.push_back(a);
                    arrivals_total[u.class] += 1;
                    mid_area[u.class] += (t + len - a) as f64;
                    u.draw_next(a + 1, &mut rng);
                }
            }
        }

        let decoded: Vec<usize> = if l == 0 {
            Vec::new()
        } else {
            match &cfg.outcomes {
                OutcomeSource::MprLaw => match mpr {
                    MprModel::AllOrNothing(m) => {
                        if rng.random::<f64>() < m.q(l) {
                            transmitters.clone()
                        } else {
                            Vec::new()
                        }
                    }
                    MprModel::General(g) => {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut k = 0;
                        for kk in 1..=l {
                            acc += g.q(kk, l);
                            if u < acc {
                                k = kk;
                                break;
                            }
                        }
                        sample(&mut rng, l, k).into_iter().map(|i| transmitters[i]).collect()
                    }
                },
                OutcomeSource::Phy(p) => {
                    let eval = phy_eval
                        .entry(l)
                        .or_insert_with(|| RateEvaluator::new(p.snr_linear(), l, p.a_radius, p.lattice_loss));
                    let h = sample_channel(p.antennas, l, &mut rng);
                    match eval.rate(p.decoder, &h) {
                        Ok(r) if p.message_rate < r => transmitters.clone(),
                        _ => Vec::new(),
                    }
                }
            }
        };

        let mut delivered_now = vec![0u64; n_classes];
        for &i in &decoded {
            let u = &mut users[i];
            delivered_now[u.class] += 1;
            departures_total[u.class] += 1;
            if u.saturated {
                continue;
            }
            let a = u.queue.pop_front().expect("transmitter has a packet");
            if measuring {
                let b = &mut batches[batch_of(t)];
                b.total_sum[u.class] += (end - a + 1) as f64;
                b.service_sum[u.class] += (end - u.hol_entry + 1) as f64;
                b.delay_count[u.class] += 1;
            }
            if !u.queue.is_empty() {
                u.hol_entry = end + 1;
            }
        }

        if let Some(tr) = trace.as_mut() {
            tr.push(TraceRecord {
                slot_index: t,
                state: if l == 0 { SlotState::Idle } else { SlotState::Busy },
                attempts: l as u32,
                decoded: decoded.len() as u32,
                total_backlog: backlog_now.iter().sum(),
            });
        }

        if measuring {
            let b = &mut batches[batch_of(t)];
            b.slots += len;
            for v in 0..n_classes {
                b.delivered[v] += delivered_now[v];
                b.backlog_area[v] += (len * backlog_now[v]) as f64 + mid_area[v];
            }
            superslots += 1;
            if l == 0 {
                idle_superslots += 1;
            }
            if histogram.len() <= l {
                histogram.resize(l + 1, 0);
            }
            histogram[l] += 1;
        }
        t += len;
    }

    let measured_slots: u64 = batches.iter().map(|b| b.slots).sum();
    let mut warnings = Vec::new();
    let mut classes = Vec::new();
    let mut aggregate_batches = vec![0.0; cfg.batches];
    for v in 0..n_classes {
        let n_users = counts[v] as f64;
        let saturated = s.classes[v].arrival_rate >= 1.0;
        let col = |f: &dyn Fn(&Batch) -> f64| batches.iter().map(f).collect::<Vec<f64>>();
        let slots = col(&|b| b.slots as f64);
        let user_slots: Vec<f64> = slots.iter().map(|x| x * n_users).collect();
        let delivered = col(&|b| b.delivered[v] as f64);
        for (agg, (d, s)) in aggregate_batches.iter_mut().zip(delivered.iter().zip(&slots)) {
            if *s > 0.0 {
                *agg += d / s;
            }
        }
        let packets_delivered: u64 = batches.iter().map(|b| b.delivered[v]).sum();
        let final_backlog: u64 = users.iter().filter(|u| u.class == v).map(|u| u.queue.len() as u64).sum();
        let delay_n = col(&|b| b.delay_count[v] as f64);
        let (service, total, backlog) = if saturated || n_users == 0.0 {
            (Stat::nan(), Stat::nan(), Stat::nan())
        } else {
            (
                ratio_stat(&col(&|b| b.service_sum[v]), &delay_n),
                ratio_stat(&col(&|b| b.total_sum[v]), &delay_n),
                ratio_stat(&col(&|b| b.backlog_area[v]), &user_slots),
            )
        };
        if counts[v] > 0 && packets_delivered < 100 {
            warnings.push(format!(
                "class {v}: only {packets_delivered} packets delivered; statistics are unreliable"
            ));
        }
        classes.push(ClassReport {
            class: v,
            users: counts[v],
            saturated,
            packets_delivered,
            throughput: ratio_stat(&delivered, &user_slots),
            utilization: ratio_stat(
                &col(&|b| b.busy_boundaries[v] as f64),
                &col(&|b| b.boundaries as f64 * n_users),
            ),
            mean_service_delay: service,
            mean_total_delay: total,
            mean_backlog: backlog,
            arrivals: arrivals_total[v],
            departures: departures_total[v],
            final_backlog,
            dropped: dropped_total[v],
        });
    }
    let agg = batch_stat(&aggregate_batches);
    let total_delivered: u64 = classes.iter().map(|c| c.packets_delivered).sum();
    Ok(SimReport {
        seed: cfg.seed,
        classes,
        aggregate_throughput: Stat {
            mean: total_delivered as f64 / measured_slots as f64,
            stderr: agg.stderr,
        },
        fraction_idle_superslots: if superslots > 0 {
            idle_superslots as f64 / superslots as f64
        } else {
            f64::NAN
        },
        attempt_histogram: histogram,
        measured_slots,
        measured_superslots: superslots,
        warnings,
        trace,
    })
}

/// Runs one simulation per seed; results are in seed order.
pub fn run_seeds(cfg: &SimConfig, seeds: &[u64], exec: Execution) -> Result<Vec<SimReport>> {
    cfg.validate()?;
    map_slice(exec, seeds, |&seed| {
        let mut c = cfg.clone();
        c.seed = seed;
        run_simulation(&c)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BimodalitySummary {
    /// `(bin lower edge, bin width, count)` of the total backlog.
    pub histogram: Vec<(u64, u64, u64)>,
    pub bimodal: bool,
}

/// Histogram of the total backlog at super-slot boundaries, flagged when it
/// shows two modes separated by a valley lower than half the smaller mode.
pub fn detect_bimodality(trace: &[TraceRecord]) -> BimodalitySummary {
    const MAX_BINS: u64 = 50;
    if trace.is_empty() {
        return BimodalitySummary { histogram: Vec::new(), bimodal: false };
    }
    let lo = trace.iter().map(|r| r.total_backlog).min().unwrap_or(0);
    let hi = trace.iter().map(|r| r.total_backlog).max().unwrap_or(0);
    let width = ((hi - lo) / MAX_BINS + 1).max(1);
    let bins = ((hi - lo) / width + 1) as usize;
    let mut counts = vec![0u64; bins];
    for r in trace {
        counts[((r.total_backlog - lo) / width) as usize] += 1;
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + i as u64 * width, width, c))
        .collect();

    // three-point moving average to suppress sampling noise
    let smooth: Vec<f64> = (0..bins)
        .map(|i| {
            let a = i.saturating_sub(1);
            let b = (i + 1).min(bins - 1);
            counts[a..=b].iter().sum::<u64>() as f64 / (b - a + 1) as f64
        })
        .collect();
    let modes: Vec<usize> = (0..bins)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { smooth[i - 1] };
            let right = if i + 1 == bins { f64::NEG_INFINITY } else { smooth[i + 1] };
            smooth[i] > 0.0 && smooth[i] > left && smooth[i] >= right
        })
        .collect();
    let mut bimodal = false;
    if modes.len() >= 2 {
        let mut by_height = modes.clone();
        by_height.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]));
        let (m1, m2) = (by_height[0].min(by_height[1]), by_height[0].max(by_height[1]));
        let valley = smooth[m1..=m2].iter().copied().fold(f64::INFINITY, f64::min);
        bimodal = valley < 0.5 * smooth[m1].min(smooth[m2]);
    }
    BimodalitySummary { histogram, bimodal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AllOrNothingMpr, ClassSpec};

    fn one_user(lam: f64) -> Scenario {
        Scenario::finite(vec![ClassSpec::count(1, lam, 1.0)], 1, AllOrNothingMpr::collision())
    }

    #[test]
    fn no_traffic_means_idle_channel() {
        let s = Scenario::finite(vec![ClassSpec::count(5, 0.0, 0.3)], 10, AllOrNothingMpr::collision());
        let r = run_simulation(&SimConfig::new(s, 10_000, 1)).unwrap();
        assert_eq!(r.classes[0].packets_delivered, 0);
        assert_eq!(r.fraction_idle_superslots, 1.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn single_user_half_load() {
        let r = run_simulation(&SimConfig::new(one_user(0.5), 200_000, 3)).unwrap();
        let c = &r.classes[0];
        assert!((c.throughput.mean - 0.5).abs() < 0.01);
        assert!((c.utilization.mean - 0.5).abs() < 0.01);
        // every packet leaves in its arrival slot
        assert_eq!(c.mean_total_delay.mean, 1.0);
        assert_eq!(c.mean_service_delay.mean, 1.0);
    }

    #[test]
    fn conservation_and_reproducibility() {
        let s = Scenario::finite(
            vec![ClassSpec::count(3, 0.01, 0.2), ClassSpec::count(2, 0.02, 0.3)],
            5,
            AllOrNothingMpr::new(vec![0.9, 0.6]),
        );
        let cfg = SimConfig::new(s, 50_000, 11);
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a, b);
        for c in &a.classes {
            assert_eq!(c.arrivals - c.departures, c.final_backlog);
        }
    }

    #[test]
    fn horizon_must_exceed_warmup() {
        let mut cfg = SimConfig::new(one_user(0.1), 100, 1);
        cfg.warmup = 100;
        assert!(run_simulation(&cfg).is_err());
    }

    #[test]
    fn saturated_users_have_no_delay() {
        let s = Scenario::finite(vec![ClassSpec::count(2, 1.0, 0.5)], 1, AllOrNothingMpr::collision());
        let r = run_simulation(&SimConfig::new(s, 100_000, 5)).unwrap();
        let c = &r.classes[0];
        assert!(c.mean_total_delay.mean.is_nan());
        // two saturated users with p = 1/2 on a collision channel: 2 * 1/4 per slot
        assert!((r.aggregate_throughput.mean - 0.5).abs() < 0.01);
        assert_eq!(c.utilization.mean, 1.0);
    }

    #[test]
    fn general_law_decodes_uniform_subsets() {
        use crate::model::GeneralSymmetricMpr;
        // always exactly one of two decoded
        let g = GeneralSymmetricMpr::from_lower_triangle(&[1.0, 1.0, 0.0]).unwrap();
        let s = Scenario::finite(vec![ClassSpec::count(2, 1.0, 1.0)], 1, g);
        let r = run_simulation(&SimConfig::new(s, 20_000, 2)).unwrap();
        assert!((r.aggregate_throughput.mean - 1.0).abs() < 1e-12);
        assert!((r.classes[0].throughput.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bimodality_heuristic() {
        let rec = |b| TraceRecord { slot_index: 0, state: SlotState::Idle, attempts: 0, decoded: 0, total_backlog: b };
        let constant: Vec<_> = (0..1000).map(|_| rec(4)).collect();
        assert!(!detect_bimodality(&constant).bimodal);
        let mut two: Vec<_> = (0..500).map(|i| rec(i % 3)).collect();
        two.extend((0..500).map(|i| rec(100 + i % 3)));
        assert!(detect_bimodality(&two).bimodal);
        let one: Vec<_> = (0..1000).map(|i| rec([3, 4, 4, 5, 5, 5, 6, 6, 7][i % 9])).collect();
        assert!(!detect_bimodality(&one).bimodal);
    }
}
