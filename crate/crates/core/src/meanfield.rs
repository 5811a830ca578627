//! Mean-field throughput analysis and equilibrium classification.
//!
//! The limiting system is governed by the rate function
//! `f(g) = g chi(g) e^{-g} / (e^{-g} + tau (1 - e^{-g}))`, where `g` is the
//! aggregate attempt intensity `sum_v beta_v p~_v rho_v`. An arrival vector is
//! classified by counting the admissible solutions of `f(g) = lambda`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AllOrNothingMpr, Mode, Scenario, UtilizationVector};

/// Iteration cap shared by every bisection and golden-section loop.
pub const MAX_ITERATIONS: usize = 200;
/// Slack applied to the `rho < 1` admissibility test.
pub const VALIDITY_SLACK: f64 = 1e-9;
/// Tolerance under which `lambda` counts as equal to `lambda_0`.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Grid resolution of the non-unimodal fallback.
pub const FALLBACK_GRID: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Region {
    Stable,
    Bistable,
    Unstable,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Stable => "STABLE",
            Region::Bistable => "BISTABLE",
            Region::Unstable => "UNSTABLE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub state: Region,
    /// Roots of `f(g) = lambda` that were examined, ascending.
    pub gamma_roots: Vec<f64>,
    /// Admissible utilization vectors, in the order of `gamma_roots`.
    pub rho_solutions: Vec<UtilizationVector>,
    /// `lambda = sum_v beta_v lambda~_v`.
    pub lambda_total: f64,
    pub gamma_star: f64,
    /// `f(gamma_star)`, the largest sustainable total rate.
    pub f_max: f64,
    /// `gamma_0 = sum_v beta_v p~_v`.
    pub gamma_0: f64,
    /// `f(gamma_0)`.
    pub lambda_0: f64,
    /// Set when the grid fallback replaced the unimodal procedure.
    pub multimodal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolverOptions {
    /// Scan a dense grid instead of failing when the unimodality condition
    /// does not hold.
    pub allow_grid_fallback: bool,
}

fn denominator(tau: u32, e: f64) -> f64 {
    e + tau as f64 * (1.0 - e)
}

/// The limiting rate function `f(gamma)`.
pub fn f_gamma(m: &AllOrNothingMpr, tau: u32, gamma: f64) -> f64 {
    if gamma <= 0.0 {
        return 0.0;
    }
    let e = (-gamma).exp();
    gamma * m.chi(gamma) * e / denominator(tau, e)
}

/// Sign-carrying numerator of `f'(gamma)`; positive where `f` increases.
fn f_slope_sign(m: &AllOrNothingMpr, tau: u32, gamma: f64) -> f64 {
    let e = (-gamma).exp();
    let chi = m.chi(gamma);
    let g_prime = chi + gamma * m.chi_prime(gamma) - gamma * chi;
    g_prime * denominator(tau, e) - gamma * chi * (tau as f64 - 1.0) * e
}

/// Per-user service rate `mu_v(gamma)` in the limiting scale.
pub fn service_rate(s: &Scenario, gamma: f64, v: usize) -> f64 {
    let m = s.mpr.effective_all_or_nothing();
    let p = s.scaled_tx()[v];
    let e = (-gamma).exp();
    p * m.chi(gamma) * e / denominator(s.tau, e)
}

/// `gamma(rho) = sum_u beta_u p~_u rho_u`.
pub fn gamma_of_rho(s: &Scenario, rho: &UtilizationVector) -> f64 {
    let beta = s.fractions();
    let p = s.scaled_tx();
    (0..s.num_classes()).map(|u| beta[u] * p[u] * rho[u]).sum()
}

fn all_zero(m: &AllOrNothingMpr) -> bool {
    m.as_slice().iter().all(|&q| q == 0.0)
}

/// Smallest `h >= 1` with `f` non-increasing at `h`: the maximizer lies in `[0, h]`.
fn upper_bracket(m: &AllOrNothingMpr, tau: u32) -> f64 {
    let mut hi = 1.0;
    while f_slope_sign(m, tau, hi) > 0.0 && hi < 1e6 {
        hi *= 2.0;
    }
    hi
}

/// Maximizer of `f` on `[0, gamma_max]` and the maximum value.
///
/// Under the unimodality condition the sign of `f'` changes once, so the
/// maximizer is located by bisection on that sign, after a golden-section
/// pass has narrowed the bracket. Without the condition a dense grid scan
/// is used when `allow_grid_fallback` is set.
pub fn find_gamma_star_with(
    m: &AllOrNothingMpr,
    tau: u32,
    gamma_max: f64,
    allow_grid_fallback: bool,
) -> Result<(f64, f64)> {
    if !(gamma_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma_max must be >= 0, got {gamma_max}")));
    }
    if all_zero(m) || gamma_max == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !m.unimodality_condition_holds() {
        if !allow_grid_fallback {
            return Err(Error::NonUnimodal);
        }
        return Ok(grid_argmax(m, tau, gamma_max));
    }
    let (lo, hi) = golden_bracket(m, tau, 0.0, gamma_max)?;
    let g = bisect_slope(m, tau, lo, hi)?;
    Ok((g, f_gamma(m, tau, g)))
}

/// [`find_gamma_star_with`] without the fallback.
pub fn find_gamma_star(m: &AllOrNothingMpr, tau: u32, gamma_max: f64) -> Result<(f64, f64)> {
    find_gamma_star_with(m, tau, gamma_max, false)
}

/// Global maximizer of `f` over `[0, inf)`.
pub fn global_gamma_star(m: &AllOrNothingMpr, tau: u32, allow_grid_fallback: bool) -> Result<(f64, f64)> {
    find_gamma_star_with(m, tau, upper_bracket(m, tau), allow_grid_fallback)
}

fn golden_bracket(m: &AllOrNothingMpr, tau: u32, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let f = |g| f_gamma(m, tau, g);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..MAX_ITERATIONS {
        if b - a < 1e-4 * (1.0 + b) {
            return Ok((a, b));
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}

/// Refines the maximizer inside `[lo, hi]` by bisecting on the sign of `f'`.
fn bisect_slope(m: &AllOrNothingMpr, tau: u32, mut lo: f64, mut hi: f64) -> Result<f64> {
    // The golden bracket may sit entirely on one side of a boundary maximizer.
    if f_slope_sign(m, tau, hi) > 0.0 {
        return Ok(hi);
    }
    if lo > 0.0 && f_slope_sign(m, tau, lo) < 0.0 {
        return Ok(lo);
    }
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(mid);
        }
        if f_slope_sign(m, tau, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}

fn grid_argmax(m: &AllOrNothingMpr, tau: u32, gamma_max: f64) -> (f64, f64) {
    let step = gamma_max / FALLBACK_GRID as f64;
    let (mut best_g, mut best_f) = (0.0, 0.0);
    for i in 0..=FALLBACK_GRID {
        let g = i as f64 * step;
        let v = f_gamma(m, tau, g);
        if v > best_f {
            best_g = g;
            best_f = v;
        }
    }
    // Local refinement around the best grid point.
    let lo = (best_g - step).max(0.0);
    let hi = (best_g + step).min(gamma_max);
    if let Ok((a, b)) = golden_bracket(m, tau, lo, hi) {
        if let Ok(g) = bisect_slope(m, tau, a, b) {
            let v = f_gamma(m, tau, g);
            if v >= best_f {
                return (g, v);
            }
        }
    }
    (best_g, best_f)
}

/// Solves `f(g) = target` on `[lo, hi]`, where `f - target` changes sign
/// monotonically (`increasing` tells the direction).
fn bisect_level(
    m: &AllOrNothingMpr,
    tau: u32,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    increasing: bool,
) -> Result<f64> {
    let below = |g: f64| (f_gamma(m, tau, g) < target) == increasing;
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}

fn rho_at(s: &Scenario, m: &AllOrNothingMpr, gamma: f64) -> UtilizationVector {
    let lam = s.scaled_arrivals();
    let p = s.scaled_tx();
    let e = (-gamma).exp();
    let per_attempt = m.chi(gamma) * e / denominator(s.tau, e);
    UtilizationVector(
        (0..s.num_classes())
            .map(|v| {
                if lam[v] == 0.0 {
                    0.0
                } else {
                    lam[v] / (p[v] * per_attempt)
                }
            })
            .collect(),
    )
}

/// Classifies the arrival vector of `s` (Algorithm 1). Finite scenarios are
/// converted to the limiting scale first.
pub fn solve_equilibrium(s: &Scenario) -> Result<EquilibriumResult> {
    solve_equilibrium_with(s, SolverOptions::default())
}

pub fn solve_equilibrium_with(s: &Scenario, opts: SolverOptions) -> Result<EquilibriumResult> {
    let s = s.to_limiting();
    let m = s.mpr.effective_all_or_nothing();
    let beta = s.fractions();
    let lam = s.scaled_arrivals();
    let p = s.scaled_tx();
    let lambda: f64 = (0..s.num_classes()).map(|v| beta[v] * lam[v]).sum();
    let gamma_0: f64 = (0..s.num_classes()).map(|v| beta[v] * p[v]).sum();
    let lambda_0 = f_gamma(&m, s.tau, gamma_0);

    let unimodal = m.unimodality_condition_holds();
    if !unimodal && !opts.allow_grid_fallback {
        return Err(Error::NonUnimodal);
    }
    let (gamma_star, f_max) = global_gamma_star(&m, s.tau, opts.allow_grid_fallback)?;
    let mut out = EquilibriumResult {
        state: Region::Unstable,
        gamma_roots: Vec::new(),
        rho_solutions: Vec::new(),
        lambda_total: lambda,
        gamma_star,
        f_max,
        gamma_0,
        lambda_0,
        multimodal: !unimodal,
    };
    if lambda == 0.0 {
        out.state = Region::Stable;
        out.gamma_roots.push(0.0);
        out.rho_solutions.push(UtilizationVector::zeros(s.num_classes()));
        return Ok(out);
    }
    if !unimodal {
        return classify_by_grid(&s, &m, out);
    }

    let admissible = |rho: &UtilizationVector| rho.all_below_one(VALIDITY_SLACK);
    if lambda < lambda_0 - TIE_TOLERANCE {
        let g = bisect_level(&m, s.tau, lambda, 0.0, gamma_0.min(gamma_star), true)?;
        let rho = rho_at(&s, &m, g);
        out.gamma_roots.push(g);
        if admissible(&rho) {
            out.state = Region::Stable;
            out.rho_solutions.push(rho);
        }
        return Ok(out);
    }
    if gamma_0 <= gamma_star || lambda > f_max {
        return Ok(out);
    }
    let g_lo = bisect_level(&m, s.tau, lambda, 0.0, gamma_star, true)?;
    let g_hi = bisect_level(&m, s.tau, lambda, gamma_star, gamma_0, false)?;
    out.gamma_roots = vec![g_lo, g_hi];
    let valid: Vec<UtilizationVector> = [g_lo, g_hi]
        .iter()
        .map(|&g| rho_at(&s, &m, g))
        .filter(admissible)
        .collect();
    out.state = match valid.len() {
        2 => Region::Bistable,
        1 => Region::Stable,
        _ => Region::Unstable,
    };
    out.rho_solutions = valid;
    Ok(out)
}

fn classify_by_grid(
    s: &Scenario,
    m: &AllOrNothingMpr,
    mut out: EquilibriumResult,
) -> Result<EquilibriumResult> {
    let lambda = out.lambda_total;
    let step = out.gamma_0 / FALLBACK_GRID as f64;
    let mut prev = f_gamma(m, s.tau, 0.0) - lambda;
    for i in 1..=FALLBACK_GRID {
        let g = i as f64 * step;
        let cur = f_gamma(m, s.tau, g) - lambda;
        if cur == 0.0 || (prev < 0.0) != (cur < 0.0) {
            let root = if cur == 0.0 {
                g
            } else {
                bisect_level(m, s.tau, lambda, g - step, g, prev < 0.0)?
            };
            out.gamma_roots.push(root);
        }
        prev = cur;
    }
    out.rho_solutions = out
        .gamma_roots
        .iter()
        .map(|&g| rho_at(s, m, g))
        .filter(|r| r.all_below_one(VALIDITY_SLACK))
        .collect();
    out.state = match out.rho_solutions.len() {
        0 => Region::Unstable,
        1 => Region::Stable,
        _ => Region::Bistable,
    };
    Ok(out)
}

/// True iff `lambda_tilde` (limiting scale) yields a unique admissible equilibrium.
pub fn stability_region_contains(s: &Scenario, lambda_tilde: &[f64]) -> Result<bool> {
    let s = s.to_limiting().with_arrivals(lambda_tilde);
    Ok(solve_equilibrium(&s)?.state == Region::Stable)
}

/// Per-user throughput in the limiting scale (`N R_v`).
pub fn throughput_limiting(s: &Scenario, rho: &UtilizationVector, v: usize) -> f64 {
    let g = gamma_of_rho(s, rho);
    rho[v] * service_rate(s, g, v)
}

/// Limiting throughput computed from the general MPR law by enumerating the
/// class composition of each collision (truncated at `M` packets).
pub fn throughput_general_mpr(s: &Scenario, rho: &UtilizationVector, v: usize) -> f64 {
    let beta = s.fractions();
    let p = s.scaled_tx();
    let big_m = s.mpr.max_multiplicity();
    let intensity: Vec<f64> = (0..s.num_classes()).map(|u| beta[u] * p[u] * rho[u]).collect();
    let gamma: f64 = intensity.iter().sum();
    if beta[v] == 0.0 || intensity[v] == 0.0 {
        return 0.0;
    }
    let e = (-gamma).exp();
    let mut acc = 0.0;
    for_each_composition(&vec![big_m; s.num_classes()], big_m, &mut |n| {
        let total: usize = n.iter().sum();
        if total == 0 || n[v] == 0 {
            return;
        }
        let mut prob = e;
        for (u, &k) in n.iter().enumerate() {
            prob *= poisson_unnormalized(intensity[u], k);
        }
        // per-user average of decoded class-v packets
        let r_bar = n[v] as f64 / total as f64 * s.mpr.expected_decoded(total) / beta[v];
        acc += prob * r_bar;
    });
    acc / denominator(s.tau, e)
}

/// `x^k / k!`.
fn poisson_unnormalized(x: f64, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * x / i as f64)
}

/// Calls `visit` for every vector `n` with `n_u <= caps[u]` and `sum n <= total_cap`.
pub(crate) fn for_each_composition(caps: &[usize], total_cap: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(
        caps: &[usize],
        left: usize,
        cur: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        let u = cur.len();
        if u == caps.len() {
            visit(cur);
            return;
        }
        for k in 0..=caps[u].min(left) {
            cur.push(k);
            rec(caps, left - k, cur, visit);
            cur.pop();
        }
    }
    rec(caps, total_cap, &mut Vec::with_capacity(caps.len()), visit);
}

/// Binomial pmf `P(Bin(n, x) = k)` for `k = 0..=kmax`.
pub(crate) fn binomial_pmf(n: u32, x: f64, kmax: usize) -> Vec<f64> {
    let kmax = kmax.min(n as usize);
    let mut out = vec![0.0; kmax + 1];
    if x >= 1.0 {
        if kmax == n as usize {
            out[kmax] = 1.0;
        }
        return out;
    }
    if x <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    out[0] = (1.0 - x).powi(n as i32);
    let ratio = x / (1.0 - x);
    for k in 0..kmax {
        out[k + 1] = out[k] * (n as usize - k) as f64 / (k + 1) as f64 * ratio;
    }
    out
}

fn assert_finite(s: &Scenario) {
    assert_eq!(s.mode, Mode::Finite, "finite-mode formula applied to a limiting scenario");
}

/// Probability that a super slot is idle, `prod_u (1 - rho_u p_u)^{N_u}`.
pub fn p_idle_finite(s: &Scenario, rho: &UtilizationVector) -> f64 {
    assert_finite(s);
    s.counts()
        .iter()
        .zip(&s.classes)
        .enumerate()
        .map(|(u, (&n, c))| (1.0 - rho[u] * c.tx_prob).powi(n as i32))
        .product()
}

/// Probability that a given class-`v` user delivers a packet in a super slot.
pub fn p_succ_finite(s: &Scenario, rho: &UtilizationVector, v: usize) -> f64 {
    assert_finite(s);
    let counts = s.counts();
    if counts[v] == 0 {
        return 0.0;
    }
    let big_m = s.mpr.max_multiplicity();
    let pmfs: Vec<Vec<f64>> = counts
        .iter()
        .zip(&s.classes)
        .enumerate()
        .map(|(u, (&n, c))| binomial_pmf(n, rho[u] * c.tx_prob, big_m))
        .collect();
    let caps: Vec<usize> = pmfs.iter().map(|p| p.len() - 1).collect();
    let mut acc = 0.0;
    for_each_composition(&caps, big_m, &mut |n| {
        let total: usize = n.iter().sum();
        if n[v] == 0 {
            return;
        }
        let prob: f64 = n.iter().enumerate().map(|(u, &k)| pmfs[u][k]).product();
        acc += n[v] as f64 / counts[v] as f64 * s.mpr.per_packet_success(total) * prob;
    });
    acc
}

/// Per-user throughput `R_v(rho)` in packets per slot.
pub fn throughput_finite(s: &Scenario, rho: &UtilizationVector, v: usize) -> f64 {
    let idle = p_idle_finite(s, rho);
    p_succ_finite(s, rho, v) / denominator(s.tau, idle)
}

/// Throughput of a class-`v` user conditioned on a non-empty queue,
/// `R_v(rho) / rho_v`, evaluated through a tagged user so that it stays
/// well defined at `rho_v = 0`.
pub fn conditional_service_rate_finite(s: &Scenario, rho: &UtilizationVector, v: usize) -> f64 {
    assert_finite(s);
    let counts = s.counts();
    if counts[v] == 0 {
        return 0.0;
    }
    let big_m = s.mpr.max_multiplicity();
    let pmfs: Vec<Vec<f64>> = counts
        .iter()
        .zip(&s.classes)
        .enumerate()
        .map(|(u, (&n, c))| {
            let n = if u == v { n - 1 } else { n };
            binomial_pmf(n, rho[u] * c.tx_prob, big_m)
        })
        .collect();
    let caps: Vec<usize> = pmfs.iter().map(|p| p.len() - 1).collect();
    let mut acc = 0.0;
    for_each_composition(&caps, big_m.saturating_sub(1), &mut |n| {
        let others: usize = n.iter().sum();
        let prob: f64 = n.iter().enumerate().map(|(u, &k)| pmfs[u][k]).product();
        acc += s.mpr.per_packet_success(others + 1) * prob;
    });
    s.classes[v].tx_prob * acc / denominator(s.tau, p_idle_finite(s, rho))
}

/// Network throughput `sum_v N_v R_v(rho)`; the saturated throughput at `rho = 1`.
pub fn aggregate_throughput(s: &Scenario, rho: &UtilizationVector) -> f64 {
    s.counts()
        .iter()
        .enumerate()
        .map(|(v, &n)| n as f64 * throughput_finite(s, rho, v))
        .sum()
}

/// Finite-N equilibrium by damped fixed-point iteration
/// `rho_v <- lambda_v / (R_v(rho) / rho_v)`, started from the empty system.
pub fn finite_fixed_point(s: &Scenario) -> Result<UtilizationVector> {
    assert_finite(s);
    const DAMPING: f64 = 0.5;
    const TOL: f64 = 1e-9;
    const CAP: usize = 10_000;
    let v_count = s.num_classes();
    let mut rho = UtilizationVector::zeros(v_count);
    for _ in 0..CAP {
        let next: Vec<f64> = (0..v_count)
            .map(|v| {
                let lam = s.classes[v].arrival_rate;
                if lam == 0.0 {
                    return 0.0;
                }
                let mu = conditional_service_rate_finite(s, &rho, v);
                let target = if mu > 0.0 { (lam / mu).min(1.0) } else { 1.0 };
                DAMPING * rho[v] + (1.0 - DAMPING) * target
            })
            .collect();
        let diff = next
            .iter()
            .zip(rho.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rho = UtilizationVector(next);
        if diff < TOL {
            if let Some((class, &r)) = rho
                .as_slice()
                .iter()
                .enumerate()
                .find(|(_, &r)| r >= 1.0 - VALIDITY_SLACK)
            {
                return Err(Error::UnstableInput { class, rho: r });
            }
            return Ok(rho);
        }
    }
    Err(Error::NoConvergence(CAP))
}
