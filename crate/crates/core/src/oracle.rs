//! Exact stationary analysis of tiny systems with capped buffers.
//!
//! The slot-level protocol is a finite Markov chain once every queue holds at
//! most `B` packets: the state is the vector of queue lengths together with
//! the channel phase (at a boundary, or inside a busy period with a known
//! number of remaining slots and a known set of packets that will be
//! decoded). Arrivals to a full buffer are dropped and reported.
//!
//! Per-slot conventions match [`crate::sim`]: arrivals of a slot are counted
//! before the boundary decision and departures happen at the end of the last
//! busy slot.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ensure_valid, Mode, MprModel, Scenario};

pub const MAX_USERS: usize = 4;
pub const MAX_BUFFER: u32 = 6;
/// Largest state-space bound accepted.
pub const STATE_CAP: usize = 1_000_000;
/// Chains up to this many reachable states are solved by dense LU.
pub const DENSE_LIMIT: usize = 1500;
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TinySystem {
    pub scenario: Scenario,
    pub buffer_cap: u32,
}

impl TinySystem {
    pub fn new(scenario: Scenario, buffer_cap: u32) -> Self {
        Self { scenario, buffer_cap }
    }

    /// `(B+1)^N (1 + tau 2^N)`, an upper bound on the reachable states.
    pub fn state_bound(&self) -> usize {
        let n = self.scenario.total_users() as u32;
        let queues = (self.buffer_cap as usize + 1).saturating_pow(n);
        queues.saturating_mul(phases(n as usize, self.scenario.tau))
    }

    fn validate(&self) -> Result<()> {
        ensure_valid(&self.scenario)?;
        if self.scenario.mode != Mode::Finite {
            return Err(Error::InvalidArgument("oracle requires a finite scenario".into()));
        }
        let n = self.scenario.total_users() as usize;
        if n > MAX_USERS {
            return Err(Error::TooManyUsers(n, MAX_USERS));
        }
        if self.buffer_cap < 1 || self.buffer_cap > MAX_BUFFER {
            return Err(Error::InvalidArgument(format!(
                "buffer cap must be in 1..={MAX_BUFFER}, got {}",
                self.buffer_cap
            )));
        }
        let bound = self.state_bound();
        if bound > STATE_CAP {
            return Err(Error::StateExplosion(bound, STATE_CAP));
        }
        Ok(())
    }
}

fn phases(n: usize, tau: u32) -> usize {
    1 + tau as usize * (1usize << n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Boundary,
    /// Inside a busy period: `remaining` slots are left (the current one
    /// included); `departing` is the bitmask of users decoded at its end.
    Busy { remaining: u32, departing: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    pub queues: Vec<u32>,
    pub phase: Phase,
}

/// Expected per-slot quantities accrued in a state.
#[derive(Debug, Clone, Default)]
struct Rewards {
    departures: Vec<f64>,
    queue: Vec<f64>,
    nonempty: Vec<f64>,
    dropped: Vec<f64>,
    boundary: f64,
    boundary_nonempty: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub states: Vec<State>,
    pub pi: Vec<f64>,
    /// `max_j |(pi P)_j - pi_j|`.
    pub residual: f64,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<Rewards>,
    classes: Vec<usize>,
    n_classes: usize,
}

impl StationarySolution {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Transition matrix as `row col probability` lines (zero-based indices
    /// into [`states`](Self::states)).
    pub fn transition_triplets(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.transitions.iter().enumerate() {
            for &(j, p) in row {
                let _ = writeln!(out, "{i} {j} {p:.17e}");
            }
        }
        out
    }
}

struct User {
    class: usize,
    lambda: f64,
    p: f64,
}

struct Chain<'a> {
    users: Vec<User>,
    cap: u32,
    tau: u32,
    mpr: &'a MprModel,
    n_classes: usize,
}

impl Chain<'_> {
    fn n(&self) -> usize {
        self.users.len()
    }

    /// Decoded-set distribution for the transmitter mask `tx`.
    fn outcomes(&self, tx: u32) -> Vec<(u32, f64)> {
        let members: Vec<usize> = (0..self.n()).filter(|&i| tx >> i & 1 == 1).collect();
        let l = members.len();
        match self.mpr {
            MprModel::AllOrNothing(m) => {
                let q = m.q(l);
                vec![(tx, q), (0, 1.0 - q)]
            }
            MprModel::General(g) => {
                let mut out = Vec::new();
                let mut decoded_mass = 0.0;
                for sub in 1u32..(1 << l) {
                    let k = sub.count_ones() as usize;
                    let prob = g.q(k, l) / binomial(l, k);
                    if prob > 0.0 {
                        let mask = members
                            .iter()
                            .enumerate()
                            .filter(|(b, _)| sub >> b & 1 == 1)
                            .fold(0u32, |acc, (_, &u)| acc | 1 << u);
                        out.push((mask, prob));
                        decoded_mass += prob;
                    }
                }
                out.push((0, 1.0 - decoded_mass));
                out
            }
        }
    }

    /// Successor distribution and per-slot rewards of `s`.
    fn step(&self, s: &State) -> (Vec<(State, f64)>, Rewards) {
        let n = self.n();
        let v = self.n_classes;
        let mut rw = Rewards {
            departures: vec![0.0; v],
            queue: vec![0.0; v],
            nonempty: vec![0.0; v],
            dropped: vec![0.0; v],
            boundary: 0.0,
            boundary_nonempty: vec![0.0; v],
        };
        let mut next: Vec<(State, f64)> = Vec::new();
        let at_boundary = s.phase == Phase::Boundary;
        if at_boundary {
            rw.boundary = 1.0;
        }
        for arr in 0u32..(1 << n) {
            let mut pa = 1.0;
            for (i, u) in self.users.iter().enumerate() {
                pa *= if arr >> i & 1 == 1 { u.lambda } else { 1.0 - u.lambda };
            }
            if pa == 0.0 {
                continue;
            }
            let mut q = s.queues.clone();
            for (i, u) in self.users.iter().enumerate() {
                if arr >> i & 1 == 1 {
                    if q[i] < self.cap {
                        q[i] += 1;
                    } else {
                        rw.dropped[u.class] += pa;
                    }
                }
            }
            for (i, u) in self.users.iter().enumerate() {
                rw.queue[u.class] += pa * q[i] as f64;
                if q[i] > 0 {
                    rw.nonempty[u.class] += pa;
                    if at_boundary {
                        rw.boundary_nonempty[u.class] += pa;
                    }
                }
            }
            match s.phase {
                Phase::Boundary => {
                    let backlogged: u32 = (0..n).filter(|&i| q[i] > 0).fold(0, |m, i| m | 1 << i);
                    // enumerate transmitter subsets of the backlogged set
                    let mut tx = backlogged;
                    loop {
                        let mut pt = pa;
                        for (i, u) in self.users.iter().enumerate() {
                            if backlogged >> i & 1 == 1 {
                                pt *= if tx >> i & 1 == 1 { u.p } else { 1.0 - u.p };
                            }
                        }
                        if pt > 0.0 {
                            if tx == 0 {
                                next.push((State { queues: q.clone(), phase: Phase::Boundary }, pt));
                            } else {
                                for (dep, po) in self.outcomes(tx) {
                                    let p = pt * po;
                                    if p <= 0.0 {
                                        continue;
                                    }
                                    if self.tau == 1 {
                                        let mut q2 = q.clone();
                                        self.depart(&mut q2, dep, p, &mut rw);
                                        next.push((State { queues: q2, phase: Phase::Boundary }, p));
                                    } else {
                                        next.push((
                                            State {
                                                queues: q.clone(),
                                                phase: Phase::Busy { remaining: self.tau - 1, departing: dep },
                                            },
                                            p,
                                        ));
                                    }
                                }
                            }
                        }
                        if tx == 0 {
                            break;
                        }
                        tx = (tx - 1) & backlogged;
                    }
                }
                Phase::Busy { remaining, departing } => {
                    if remaining == 1 {
                        let mut q2 = q.clone();
                        self.depart(&mut q2, departing, pa, &mut rw);
                        next.push((State { queues: q2, phase: Phase::Boundary }, pa));
                    } else {
                        next.push((
                            State { queues: q, phase: Phase::Busy { remaining: remaining - 1, departing } },
                            pa,
                        ));
                    }
                }
            }
        }
        (next, rw)
    }

    fn depart(&self, q: &mut [u32], dep: u32, p: f64, rw: &mut Rewards) {
        for (i, u) in self.users.iter().enumerate() {
            if dep >> i & 1 == 1 {
                q[i] -= 1;
                rw.departures[u.class] += p;
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Stationary law of the chain restricted to the states reachable from the
/// empty system.
pub fn stationary_distribution(t: &TinySystem) -> Result<StationarySolution> {
    t.validate()?;
    let s = &t.scenario;
    let mut users = Vec::new();
    for (v, &n) in s.counts().iter().enumerate() {
        for _ in 0..n {
            users.push(User { class: v, lambda: s.classes[v].arrival_rate.min(1.0), p: s.classes[v].tx_prob });
        }
    }
    let chain = Chain { users, cap: t.buffer_cap, tau: s.tau, mpr: &s.mpr, n_classes: s.num_classes() };

    let start = State { queues: vec![0; chain.n()], phase: Phase::Boundary };
    let mut index: HashMap<State, usize> = HashMap::new();
    let mut states = vec![start.clone()];
    index.insert(start, 0);
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rewards = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    let mut expanded = 0;
    while let Some(i) = queue.pop_front() {
        debug_assert_eq!(i, expanded);
        expanded += 1;
        let (next, rw) = chain.step(&states[i]);
        let mut row: HashMap<usize, f64> = HashMap::new();
        for (st, p) in next {
            let j = match index.get(&st) {
                Some(&j) => j,
                None => {
                    let j = states.len();
                    index.insert(st.clone(), j);
                    states.push(st);
                    queue.push_back(j);
                    j
                }
            };
            *row.entry(j).or_insert(0.0) += p;
        }
        let mut row: Vec<(usize, f64)> = row.into_iter().collect();
        row.sort_by_key(|e| e.0);
        transitions.push(row);
        rewards.push(rw);
    }

    // every reachable state must lead back to the empty system
    let n = states.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in transitions.iter().enumerate() {
        for &(j, p) in row {
            incoming[j].push((i, p));
        }
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        for &(i, _) in &incoming[j] {
            if !seen[i] {
                seen[i] = true;
                stack.push(i);
            }
        }
    }
    if seen.iter().any(|&x| !x) {
        return Err(Error::Reducible);
    }

    let pi = if n <= DENSE_LIMIT {
        dense_solve(&transitions)?
    } else {
        gauss_seidel(&incoming)?
    };
    let residual = residual(&transitions, &pi);
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::NoConvergence(0));
    }
    Ok(StationarySolution {
        states,
        pi,
        residual,
        transitions,
        rewards,
        classes: chain.users.iter().map(|u| u.class).collect(),
        n_classes: chain.n_classes,
    })
}

fn residual(transitions: &[Vec<(usize, f64)>], pi: &[f64]) -> f64 {
    let mut next = vec![0.0; pi.len()];
    for (i, row) in transitions.iter().enumerate() {
        for &(j, p) in row {
            next[j] += pi[i] * p;
        }
    }
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn dense_solve(transitions: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = transitions.len();
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in transitions.iter().enumerate() {
        for &(j, p) in row {
            a[(j, i)] += p;
        }
    }
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(Error::Reducible)?;
    Ok(x.iter().map(|&v| v.max(0.0)).collect())
}

fn gauss_seidel(incoming: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    const SWEEPS: usize = 200_000;
    let n = incoming.len();
    let mut pi = vec![1.0 / n as f64; n];
    let self_loop: Vec<f64> = (0..n)
        .map(|j| incoming[j].iter().filter(|e| e.0 == j).map(|e| e.1).sum())
        .collect();
    for sweep in 0..SWEEPS {
        let mut change: f64 = 0.0;
        for j in 0..n {
            let inflow: f64 = incoming[j].iter().filter(|e| e.0 != j).map(|&(i, p)| pi[i] * p).sum();
            let new = inflow / (1.0 - self_loop[j]);
            change = change.max((new - pi[j]).abs());
            pi[j] = new;
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= total);
        if sweep % 16 == 0 && change < 1e-15 {
            break;
        }
    }
    Ok(pi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleClassMetrics {
    pub class: usize,
    /// Per-user throughput, packets per slot.
    pub throughput: f64,
    /// Fraction of boundaries at which a user's queue is non-empty.
    pub utilization: f64,
    /// Little's-law service delay (HOL occupancy over throughput); NaN
    /// without traffic.
    pub mean_service_delay: f64,
    /// Little's-law total delay (queue content over throughput); NaN without
    /// traffic.
    pub mean_total_delay: f64,
    /// Mean number of queued packets per user.
    pub mean_queue: f64,
    /// Per-user rate of arrivals lost to the buffer cap.
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleMetrics {
    pub classes: Vec<OracleClassMetrics>,
    pub states: usize,
    pub residual: f64,
}

/// Per-class expectations under the stationary law.
pub fn exact_metrics(sol: &StationarySolution) -> OracleMetrics {
    let v = sol.n_classes;
    let mut users = vec![0usize; v];
    for &c in &sol.classes {
        users[c] += 1;
    }
    let mut acc = Rewards {
        departures: vec![0.0; v],
        queue: vec![0.0; v],
        nonempty: vec![0.0; v],
        dropped: vec![0.0; v],
        boundary: 0.0,
        boundary_nonempty: vec![0.0; v],
    };
    for (p, r) in sol.pi.iter().zip(&sol.rewards) {
        acc.boundary += p * r.boundary;
        for c in 0..v {
            acc.departures[c] += p * r.departures[c];
            acc.queue[c] += p * r.queue[c];
            acc.nonempty[c] += p * r.nonempty[c];
            acc.dropped[c] += p * r.dropped[c];
            acc.boundary_nonempty[c] += p * r.boundary_nonempty[c];
        }
    }
    let classes = (0..v)
        .map(|c| {
            let n = users[c].max(1) as f64;
            let tput = acc.departures[c];
            let delay = |x: f64| if tput > 0.0 { x / tput } else { f64::NAN };
            OracleClassMetrics {
                class: c,
                throughput: tput / n,
                utilization: acc.boundary_nonempty[c] / (acc.boundary * n),
                mean_service_delay: delay(acc.nonempty[c]),
                mean_total_delay: delay(acc.queue[c]),
                mean_queue: acc.queue[c] / n,
                drop_rate: acc.dropped[c] / n,
            }
        })
        .collect();
    OracleMetrics { classes, states: sol.num_states(), residual: sol.residual }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AllOrNothingMpr, ClassSpec};

    fn single(lam: f64, p: f64, tau: u32, b: u32) -> TinySystem {
        TinySystem::new(
            Scenario::finite(vec![ClassSpec::count(1, lam, p)], tau, AllOrNothingMpr::collision()),
            b,
        )
    }

    #[test]
    fn zero_arrivals_is_point_mass() {
        let sol = stationary_distribution(&single(0.0, 0.5, 1, 1)).unwrap();
        assert_eq!(sol.num_states(), 1);
        assert_eq!(sol.pi, vec![1.0]);
        let m = exact_metrics(&sol);
        assert_eq!(m.classes[0].throughput, 0.0);
        assert!(m.classes[0].mean_total_delay.is_nan());
    }

    #[test]
    fn single_user_serves_every_slot() {
        let m = exact_metrics(&stationary_distribution(&single(0.3, 1.0, 1, 5)).unwrap());
        let c = &m.classes[0];
        assert!((c.throughput - 0.3).abs() < 1e-12);
        assert!((c.utilization - 0.3).abs() < 1e-12);
        assert!((c.mean_total_delay - 1.0).abs() < 1e-12);
        assert_eq!(c.drop_rate, 0.0);
    }

    #[test]
    fn never_transmitting_user_is_reducible() {
        assert_eq!(stationary_distribution(&single(0.3, 0.0, 1, 2)).unwrap_err(), Error::Reducible);
    }

    #[test]
    fn state_explosion_and_limits() {
        let s = Scenario::finite(vec![ClassSpec::count(4, 0.1, 0.5)], 200, AllOrNothingMpr::collision());
        assert!(matches!(
            stationary_distribution(&TinySystem::new(s, 6)),
            Err(Error::StateExplosion(_, _))
        ));
        let s = Scenario::finite(vec![ClassSpec::count(5, 0.1, 0.5)], 1, AllOrNothingMpr::collision());
        assert_eq!(stationary_distribution(&TinySystem::new(s, 2)).unwrap_err(), Error::TooManyUsers(5, 4));
    }

    #[test]
    fn distribution_is_normalized() {
        let s = Scenario::finite(
            vec![ClassSpec::count(1, 0.05, 0.4), ClassSpec::count(1, 0.08, 0.3)],
            3,
            AllOrNothingMpr::new(vec![0.9, 0.5]),
        );
        let sol = stationary_distribution(&TinySystem::new(s, 3)).unwrap();
        let total: f64 = sol.pi.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(sol.pi.iter().all(|&p| p >= 0.0));
        assert!(sol.residual <= RESIDUAL_TOLERANCE);
        assert!(sol.transition_triplets().lines().count() > sol.num_states());
    }
}
