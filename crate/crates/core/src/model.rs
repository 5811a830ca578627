//! Domain types: multi-packet reception laws, user classes and scenarios.
//!
//! A [`Scenario`] is either *finite* (integer user counts, per-slot
//! probabilities) or *limiting* (class fractions with the scaled rates
//! `N * lambda` and `N * p`). Finite scenarios convert to their limiting
//! counterpart with [`Scenario::to_limiting`].

use std::fmt;

use crate::error::{Error, Result};

/// "All-or-nothing" symmetric MPR: with `L` simultaneous packets either all of
/// them are decoded (probability `q_L`) or none.
#[derive(Debug, Clone, PartialEq)]
pub struct AllOrNothingMpr {
    q: Vec<f64>,
}

impl AllOrNothingMpr {
    /// `q[0]` is `q_1`. Values are not checked here; see [`validate_scenario`].
    pub fn new(q: Vec<f64>) -> Self {
        Self { q }
    }

    /// Classical collision channel, `q = (1)`.
    pub fn collision() -> Self {
        Self { q: vec![1.0] }
    }

    /// Largest decodable multiplicity `M`.
    pub fn max_multiplicity(&self) -> usize {
        self.q.len()
    }

    /// `q_L`, zero for `L = 0` and `L > M`.
    pub fn q(&self, l: usize) -> f64 {
        if l == 0 {
            return 0.0;
        }
        self.q.get(l - 1).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// Generating function `q_1 + q_2 x / 1! + ... + q_M x^{M-1} / (M-1)!`.
    pub fn chi(&self, x: f64) -> f64 {
        let mut term = 1.0;
        let mut acc = 0.0;
        for (i, &q) in self.q.iter().enumerate() {
            if i > 0 {
                term *= x / i as f64;
            }
            acc += q * term;
        }
        acc
    }

    /// Derivative of [`chi`](Self::chi) with respect to `x`.
    pub fn chi_prime(&self, x: f64) -> f64 {
        let mut term = 1.0;
        let mut acc = 0.0;
        for (i, &q) in self.q.iter().enumerate().skip(1) {
            if i > 1 {
                term *= x / (i - 1) as f64;
            }
            acc += q * term;
        }
        acc
    }

    /// The literal chain `q_1 <= 2 q_2 <= ... <= M q_M`.
    pub fn coefficient_chain_holds(&self) -> bool {
        self.q
            .iter()
            .enumerate()
            .map(|(i, &q)| (i + 1) as f64 * q)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[0] <= w[1])
    }

    /// Sufficient condition for the rate function to be unimodal: `M <= 2`
    /// or the coefficient chain holds.
    pub fn unimodality_condition_holds(&self) -> bool {
        self.max_multiplicity() <= 2 || self.coefficient_chain_holds()
    }
}

/// General symmetric MPR: `q_{k,L}` is the probability that exactly `k` of
/// `L` simultaneous packets are decoded; the decoded packets are a uniformly
/// random subset of the transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSymmetricMpr {
    /// `rows[L-1][k-1] = q_{k,L}`.
    rows: Vec<Vec<f64>>,
}

impl GeneralSymmetricMpr {
    /// Builds from explicit rows; row `L-1` must hold `L` entries.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "row for L={} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    i + 1
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Parses the row-major lower triangle `q_{1,1}, q_{1,2}, q_{2,2}, q_{1,3}, ...`.
    pub fn from_lower_triangle(flat: &[f64]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut rest = flat;
        let mut l = 1;
        while !rest.is_empty() {
            if rest.len() < l {
                return Err(Error::InvalidArgument(format!(
                    "q_matrix length {} is not a triangular number",
                    flat.len()
                )));
            }
            let (row, tail) = rest.split_at(l);
            rows.push(row.to_vec());
            rest = tail;
            l += 1;
        }
        Ok(Self { rows })
    }

    pub fn from_all_or_nothing(m: &AllOrNothingMpr) -> Self {
        let rows = (1..=m.max_multiplicity())
            .map(|l| {
                let mut row = vec![0.0; l];
                row[l - 1] = m.q(l);
                row
            })
            .collect();
        Self { rows }
    }

    pub fn max_multiplicity(&self) -> usize {
        self.rows.len()
    }

    /// `q_{k,L}`; zero outside `1 <= k <= L <= M`.
    pub fn q(&self, k: usize, l: usize) -> f64 {
        if k == 0 || k > l || l == 0 {
            return 0.0;
        }
        self.rows.get(l - 1).map_or(0.0, |r| r[k - 1])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn to_lower_triangle(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MprModel {
    AllOrNothing(AllOrNothingMpr),
    General(GeneralSymmetricMpr),
}

impl MprModel {
    pub fn max_multiplicity(&self) -> usize {
        match self {
            MprModel::AllOrNothing(m) => m.max_multiplicity(),
            MprModel::General(m) => m.max_multiplicity(),
        }
    }

    /// Expected number of decoded packets when `L` are sent.
    pub fn expected_decoded(&self, l: usize) -> f64 {
        match self {
            MprModel::AllOrNothing(m) => l as f64 * m.q(l),
            MprModel::General(m) => (1..=l).map(|k| k as f64 * m.q(k, l)).sum(),
        }
    }

    /// Probability that one particular transmitter out of `L` is decoded.
    pub fn per_packet_success(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.expected_decoded(l) / l as f64
        }
    }

    pub fn as_all_or_nothing(&self) -> Option<&AllOrNothingMpr> {
        match self {
            MprModel::AllOrNothing(m) => Some(m),
            MprModel::General(_) => None,
        }
    }

    /// All-or-nothing law with the same per-packet success probabilities.
    /// Throughput formulas only see `E[decoded | L] / L`, so both laws yield
    /// identical throughput.
    pub fn effective_all_or_nothing(&self) -> AllOrNothingMpr {
        match self {
            MprModel::AllOrNothing(m) => m.clone(),
            MprModel::General(_) => AllOrNothingMpr::new(
                (1..=self.max_multiplicity())
                    .map(|l| self.per_packet_success(l))
                    .collect(),
            ),
        }
    }
}

impl From<AllOrNothingMpr> for MprModel {
    fn from(m: AllOrNothingMpr) -> Self {
        MprModel::AllOrNothing(m)
    }
}

impl From<GeneralSymmetricMpr> for MprModel {
    fn from(m: GeneralSymmetricMpr) -> Self {
        MprModel::General(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Population {
    /// Number of users `N_v` (finite mode).
    Count(u32),
    /// Fraction `beta_v` of the population (limiting mode).
    Fraction(f64),
}

/// One class of statistically identical users.
///
/// In finite mode `arrival_rate` and `tx_prob` are per-slot probabilities.
/// In limiting mode they are the scaled quantities `N * lambda_v` and
/// `N * p_v`, which may exceed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub population: Population,
    pub arrival_rate: f64,
    pub tx_prob: f64,
}

impl ClassSpec {
    pub fn count(n: u32, arrival_rate: f64, tx_prob: f64) -> Self {
        Self {
            population: Population::Count(n),
            arrival_rate,
            tx_prob,
        }
    }

    pub fn fraction(beta: f64, arrival_rate: f64, tx_prob: f64) -> Self {
        Self {
            population: Population::Fraction(beta),
            arrival_rate,
            tx_prob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Finite,
    Limiting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub classes: Vec<ClassSpec>,
    /// Packet length in slots.
    pub kappa: u32,
    /// Busy super-slot length in slots.
    pub tau: u32,
    pub mode: Mode,
    pub mpr: MprModel,
}

impl Scenario {
    /// Finite scenario with `kappa = tau`.
    pub fn finite(classes: Vec<ClassSpec>, tau: u32, mpr: impl Into<MprModel>) -> Self {
        Self {
            classes,
            kappa: tau,
            tau,
            mode: Mode::Finite,
            mpr: mpr.into(),
        }
    }

    /// Limiting scenario with `kappa = tau`.
    pub fn limiting(classes: Vec<ClassSpec>, tau: u32, mpr: impl Into<MprModel>) -> Self {
        Self {
            classes,
            kappa: tau,
            tau,
            mode: Mode::Limiting,
            mpr: mpr.into(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// User counts `N_v`.
    ///
    /// # Panics
    ///
    /// Panics if a class carries a fraction instead of a count.
    pub fn counts(&self) -> Vec<u32> {
        self.classes
            .iter()
            .map(|c| match c.population {
                Population::Count(n) => n,
                Population::Fraction(_) => panic!("finite-mode operation on a limiting scenario"),
            })
            .collect()
    }

    /// Total number of users `N` (finite mode).
    pub fn total_users(&self) -> u32 {
        self.counts().iter().sum()
    }

    /// Class fractions `beta_v`; `N_v / N` for finite scenarios.
    pub fn fractions(&self) -> Vec<f64> {
        match self.mode {
            Mode::Limiting => self
                .classes
                .iter()
                .map(|c| match c.population {
                    Population::Fraction(b) => b,
                    Population::Count(_) => panic!("limiting scenario with a count population"),
                })
                .collect(),
            Mode::Finite => {
                let n = self.total_users() as f64;
                self.counts().iter().map(|&c| c as f64 / n).collect()
            }
        }
    }

    /// Scaled arrival rates `lambda~_v` (`N * lambda_v` in finite mode).
    pub fn scaled_arrivals(&self) -> Vec<f64> {
        let scale = self.scale();
        self.classes.iter().map(|c| c.arrival_rate * scale).collect()
    }

    /// Scaled transmission probabilities `p~_v` (`N * p_v` in finite mode).
    pub fn scaled_tx(&self) -> Vec<f64> {
        let scale = self.scale();
        self.classes.iter().map(|c| c.tx_prob * scale).collect()
    }

    fn scale(&self) -> f64 {
        match self.mode {
            Mode::Finite => self.total_users() as f64,
            Mode::Limiting => 1.0,
        }
    }

    /// The limiting-regime counterpart: `beta = N_v / N`, `lambda~ = N lambda`,
    /// `p~ = N p`. Limiting scenarios are returned unchanged.
    pub fn to_limiting(&self) -> Scenario {
        if self.mode == Mode::Limiting {
            return self.clone();
        }
        let beta = self.fractions();
        let lam = self.scaled_arrivals();
        let p = self.scaled_tx();
        Scenario {
            classes: (0..self.num_classes())
                .map(|v| ClassSpec::fraction(beta[v], lam[v], p[v]))
                .collect(),
            kappa: self.kappa,
            tau: self.tau,
            mode: Mode::Limiting,
            mpr: self.mpr.clone(),
        }
    }

    /// Copy of this scenario with replaced per-class arrival rates.
    pub fn with_arrivals(&self, rates: &[f64]) -> Scenario {
        let mut s = self.clone();
        for (c, &r) in s.classes.iter_mut().zip(rates) {
            c.arrival_rate = r;
        }
        s
    }

    /// Copy of this scenario with replaced per-class transmission probabilities.
    pub fn with_tx_probs(&self, probs: &[f64]) -> Scenario {
        let mut s = self.clone();
        for (c, &p) in s.classes.iter_mut().zip(probs) {
            c.tx_prob = p;
        }
        s
    }
}

/// Probability that each class's queue is non-empty at a super-slot boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationVector(pub Vec<f64>);

impl UtilizationVector {
    pub fn zeros(v: usize) -> Self {
        Self(vec![0.0; v])
    }

    pub fn ones(v: usize) -> Self {
        Self(vec![1.0; v])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True if every component is below `1 - slack`.
    pub fn all_below_one(&self, slack: f64) -> bool {
        self.0.iter().all(|&r| r < 1.0 - slack)
    }
}

impl std::ops::Index<usize> for UtilizationVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn is_probability(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Checks every structural invariant of a scenario. An empty list means the
/// scenario is valid.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.kappa < 1 {
        out.push(Violation::new("kappa", "kappa < 1"));
    }
    if s.tau < s.kappa {
        out.push(Violation::new("tau", "tau < kappa"));
    }
    if s.classes.is_empty() {
        out.push(Violation::new("classes", "no user classes"));
    }

    let mut fraction_sum = 0.0;
    let mut user_sum = 0u64;
    for (v, c) in s.classes.iter().enumerate() {
        let field = |name: &str| format!("classes[{v}].{name}");
        match (s.mode, c.population) {
            (Mode::Finite, Population::Count(n)) => user_sum += n as u64,
            (Mode::Limiting, Population::Fraction(b)) => {
                if !is_probability(b) {
                    out.push(Violation::new(field("fraction"), "fraction out of [0,1]"));
                }
                fraction_sum += b;
            }
            (Mode::Finite, Population::Fraction(_)) => {
                out.push(Violation::new(field("fraction"), "finite mode requires a count"))
            }
            (Mode::Limiting, Population::Count(_)) => {
                out.push(Violation::new(field("count"), "limiting mode requires a fraction"))
            }
        }
        match s.mode {
            Mode::Finite => {
                if !is_probability(c.arrival_rate) {
                    out.push(Violation::new(field("arrival_rate"), "arrival_rate out of [0,1]"));
                }
                if !is_probability(c.tx_prob) {
                    out.push(Violation::new(field("tx_prob"), "tx_prob out of [0,1]"));
                }
            }
            Mode::Limiting => {
                if !(c.arrival_rate >= 0.0 && c.arrival_rate.is_finite()) {
                    out.push(Violation::new(field("arrival_rate"), "scaled arrival_rate must be finite and >= 0"));
                }
                if !(c.tx_prob >= 0.0 && c.tx_prob.is_finite()) {
                    out.push(Violation::new(field("tx_prob"), "scaled tx_prob must be finite and >= 0"));
                }
            }
        }
    }
    match s.mode {
        Mode::Finite if !s.classes.is_empty() && user_sum == 0 => {
            out.push(Violation::new("classes", "total user count is zero"))
        }
        Mode::Limiting if !s.classes.is_empty() && (fraction_sum - 1.0).abs() > 1e-9 => {
            out.push(Violation::new("classes", "fractions do not sum to 1"))
        }
        _ => {}
    }

    match &s.mpr {
        MprModel::AllOrNothing(m) => {
            if m.max_multiplicity() == 0 {
                out.push(Violation::new("mpr.q", "M < 1"));
            }
            for (i, &q) in m.as_slice().iter().enumerate() {
                if !is_probability(q) {
                    out.push(Violation::new(format!("mpr.q[{}]", i + 1), "q out of [0,1]"));
                }
            }
        }
        MprModel::General(m) => {
            if m.max_multiplicity() == 0 {
                out.push(Violation::new("mpr.q_matrix", "M < 1"));
            }
            for (i, row) in m.rows().iter().enumerate() {
                let l = i + 1;
                for (j, &q) in row.iter().enumerate() {
                    if !is_probability(q) {
                        out.push(Violation::new(
                            format!("mpr.q_matrix[{},{}]", j + 1, l),
                            "q out of [0,1]",
                        ));
                    }
                }
                if row.iter().sum::<f64>() > 1.0 + 1e-12 {
                    out.push(Violation::new(
                        format!("mpr.q_matrix[L={l}]"),
                        "row sum exceeds 1",
                    ));
                }
            }
        }
    }
    out
}

/// Same as [`validate_scenario`] but as a `Result`.
pub fn ensure_valid(s: &Scenario) -> Result<()> {
    let v = validate_scenario(s);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigInvalid(v))
    }
}

pub fn chi(m: &AllOrNothingMpr, x: f64) -> f64 {
    m.chi(x)
}

pub fn unimodality_condition_holds(m: &AllOrNothingMpr) -> bool {
    m.unimodality_condition_holds()
}

/// Sufficient condition for avoiding metastability: total attempt intensity
/// `sum_v N_v p_v` below `gamma_bar` and the literal coefficient chain on `q`.
///
/// `gamma_bar` is the caller's upper root of `f(gamma) = lambda`.
pub fn metastability_condition_holds(s: &Scenario, gamma_bar: f64) -> Result<bool> {
    if !(gamma_bar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma_bar must be positive, got {gamma_bar}"
        )));
    }
    let m = s.mpr.as_all_or_nothing().ok_or_else(|| {
        Error::InvalidArgument("metastability condition is stated for all-or-nothing MPR".into())
    })?;
    let loading: f64 = match s.mode {
        Mode::Finite => s
            .counts()
            .iter()
            .zip(&s.classes)
            .map(|(&n, c)| n as f64 * c.tx_prob)
            .sum(),
        Mode::Limiting => s
            .fractions()
            .iter()
            .zip(&s.classes)
            .map(|(&b, c)| b * c.tx_prob)
            .sum(),
    };
    Ok(loading < gamma_bar && m.coefficient_chain_holds())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_limiting() -> Scenario {
        Scenario::limiting(
            vec![ClassSpec::fraction(0.5, 0.1, 1.0), ClassSpec::fraction(0.5, 0.2, 1.0)],
            10,
            AllOrNothingMpr::new(vec![0.96, 0.89]),
        )
    }

    #[test]
    fn tau_below_kappa_is_flagged() {
        let mut s = two_class_limiting();
        s.kappa = 10;
        s.tau = 5;
        let v = validate_scenario(&s);
        assert!(v.iter().any(|x| x.message == "tau < kappa"), "{v:?}");
    }

    #[test]
    fn valid_scenario_has_no_violations() {
        assert!(validate_scenario(&two_class_limiting()).is_empty());
    }

    #[test]
    fn q_out_of_range_is_flagged() {
        let mut s = two_class_limiting();
        s.mpr = AllOrNothingMpr::new(vec![0.9, 1.3]).into();
        let v = validate_scenario(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "q out of [0,1]");
        assert_eq!(v[0].field, "mpr.q[2]");
    }

    #[test]
    fn finite_mode_checks_probabilities_and_counts() {
        let s = Scenario::finite(
            vec![ClassSpec::count(0, 1.5, 0.1), ClassSpec::fraction(0.5, 0.1, 0.1)],
            1,
            AllOrNothingMpr::collision(),
        );
        let msgs: Vec<_> = validate_scenario(&s).into_iter().map(|v| v.message).collect();
        assert!(msgs.contains(&"arrival_rate out of [0,1]".to_string()));
        assert!(msgs.contains(&"finite mode requires a count".to_string()));
    }

    #[test]
    fn general_row_sum_above_one() {
        let m = GeneralSymmetricMpr::from_lower_triangle(&[1.0, 0.6, 0.5]).unwrap();
        let s = Scenario::finite(vec![ClassSpec::count(2, 0.1, 0.1)], 1, m);
        let v = validate_scenario(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "row sum exceeds 1");
    }

    #[test]
    fn validation_is_idempotent() {
        let mut s = two_class_limiting();
        s.tau = 3;
        assert_eq!(validate_scenario(&s), validate_scenario(&s));
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi(&AllOrNothingMpr::collision(), 7.3), 1.0);
        let m = AllOrNothingMpr::new(vec![0.96, 0.89]);
        assert!((chi(&m, 1.0) - 1.85).abs() < 1e-12);
        let m = AllOrNothingMpr::new(vec![0.5, 0.5, 0.5]);
        assert!((chi(&m, 2.0) - 2.5).abs() < 1e-12);
        assert_eq!(chi(&m, 0.0), 0.5);
    }

    #[test]
    fn chi_prime_matches_finite_difference() {
        let m = AllOrNothingMpr::new(vec![0.3, 0.5, 0.9, 0.7]);
        let x = 1.7;
        let h = 1e-6;
        let fd = (m.chi(x + h) - m.chi(x - h)) / (2.0 * h);
        assert!((m.chi_prime(x) - fd).abs() < 1e-8);
    }

    #[test]
    fn out_of_range_q_is_zero() {
        let m = AllOrNothingMpr::new(vec![0.9, 0.8]);
        assert_eq!(m.q(0), 0.0);
        assert_eq!(m.q(3), 0.0);
        let g = GeneralSymmetricMpr::from_all_or_nothing(&m);
        assert_eq!(g.q(1, 5), 0.0);
        assert_eq!(g.q(2, 2), 0.8);
        assert_eq!(g.q(1, 2), 0.0);
    }

    #[test]
    fn unimodality_examples() {
        assert!(unimodality_condition_holds(&AllOrNothingMpr::new(vec![0.96, 0.89])));
        assert!(!unimodality_condition_holds(&AllOrNothingMpr::new(vec![1.0, 0.4, 0.1])));
        assert!(unimodality_condition_holds(&AllOrNothingMpr::new(vec![0.78, 0.57])));
        // M <= 2 always qualifies even when the chain itself is broken
        assert!(unimodality_condition_holds(&AllOrNothingMpr::new(vec![1.0, 0.4])));
    }

    #[test]
    fn unimodality_always_true_for_m_at_most_two() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for &a in &grid {
            assert!(unimodality_condition_holds(&AllOrNothingMpr::new(vec![a])));
            for &b in &grid {
                assert!(unimodality_condition_holds(&AllOrNothingMpr::new(vec![a, b])));
            }
        }
    }

    #[test]
    fn metastability_examples() {
        let s = Scenario::finite(
            vec![ClassSpec::count(4, 0.0, 0.0)],
            10,
            AllOrNothingMpr::new(vec![0.5, 0.5]),
        );
        assert!(metastability_condition_holds(&s, 1.0).unwrap());

        let mut broken = s.clone();
        broken.mpr = AllOrNothingMpr::new(vec![1.0, 0.4]).into();
        assert!(!metastability_condition_holds(&broken, 100.0).unwrap());

        let loaded = Scenario::finite(
            vec![ClassSpec::count(4, 0.0, 0.3)],
            10,
            AllOrNothingMpr::new(vec![0.5, 0.5]),
        );
        // 4 * 0.3 = 1.2 > 1.0
        assert!(!metastability_condition_holds(&loaded, 1.0).unwrap());
        assert!(metastability_condition_holds(&loaded, 0.0).is_err());
    }

    #[test]
    fn to_limiting_scales_rates() {
        let s = Scenario::finite(
            vec![ClassSpec::count(10, 0.01, 0.05), ClassSpec::count(30, 0.02, 0.1)],
            10,
            AllOrNothingMpr::collision(),
        );
        let l = s.to_limiting();
        assert_eq!(l.mode, Mode::Limiting);
        assert_eq!(l.fractions(), vec![0.25, 0.75]);
        assert!((l.classes[0].arrival_rate - 0.4).abs() < 1e-12);
        assert!((l.classes[1].tx_prob - 4.0).abs() < 1e-12);
        assert!(validate_scenario(&l).is_empty());
    }

    #[test]
    fn lower_triangle_round_trip() {
        let flat = [1.0, 0.3, 0.6, 0.1, 0.2, 0.5];
        let g = GeneralSymmetricMpr::from_lower_triangle(&flat).unwrap();
        assert_eq!(g.max_multiplicity(), 3);
        assert_eq!(g.q(2, 3), 0.2);
        assert_eq!(g.to_lower_triangle(), flat.to_vec());
        assert!(GeneralSymmetricMpr::from_lower_triangle(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn effective_law_matches_expected_decoded() {
        let g = GeneralSymmetricMpr::from_lower_triangle(&[1.0, 0.4, 0.3]).unwrap();
        let m = MprModel::General(g);
        // E[decoded | 2] = 0.4 + 2 * 0.3 = 1.0
        assert!((m.expected_decoded(2) - 1.0).abs() < 1e-12);
        let eff = m.effective_all_or_nothing();
        assert_eq!(eff.as_slice(), &[1.0, 0.5]);
    }
}
