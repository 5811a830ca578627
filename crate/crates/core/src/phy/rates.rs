//! Symmetric achievable rates of the four multi-user decoders.
//!
//! With `M = (I + snr H^H H)^{-1}`, an integer coefficient row `a` decoded by
//! compute-and-forward supports the rate `-log2(a M a^H)`. Successive
//! compute-and-forward replaces `a M a^H` by the Gram-Schmidt residual of `a`
//! in the `M` metric given the rows decoded before it. All rates are in bits
//! per complex symbol and clamped at zero.

use nalgebra::{Cholesky, Complex, DMatrix, Dyn};

use super::lattice::{canonical_vectors, completion_gcd, GaussInt};
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Coefficient vectors kept per row for `L >= 3`.
pub const CANDIDATES_PER_ROW: usize = 200;
/// Largest user count for permutation enumeration.
pub const MAX_SIC_USERS: usize = 6;
/// Largest user count for subset enumeration.
pub const MAX_JD_USERS: usize = 16;
/// Largest integer box (vector count) enumerated per channel.
const MAX_BOX: usize = 2_000_000;

/// Cholesky factorization, retried once with `1e-12 I` added.
pub fn cholesky(mat: DMatrix<C64>) -> Result<Cholesky<C64, Dyn>> {
    if let Some(c) = mat.clone().cholesky() {
        return Ok(c);
    }
    let n = mat.nrows();
    let jittered = mat + DMatrix::<C64>::identity(n, n) * C64::new(1e-12, 0.0);
    jittered.cholesky().ok_or(Error::CholeskyFail)
}

/// `I + snr H^H H` and its inverse for one channel realization.
#[derive(Debug, Clone)]
pub struct Gram {
    l: usize,
    g: DMatrix<C64>,
    /// Row-major inverse.
    m: Vec<C64>,
    det_m: f64,
}

impl Gram {
    pub fn new(h: &DMatrix<C64>, snr: f64) -> Result<Self> {
        let l = h.ncols();
        let g = DMatrix::<C64>::identity(l, l) + h.adjoint() * h * C64::new(snr, 0.0);
        let chol = cholesky(g.clone())?;
        let inv = chol.inverse();
        let det_g = chol.determinant();
        let m = (0..l * l).map(|k| inv[(k / l, k % l)]).collect();
        Ok(Self { l, g, m, det_m: 1.0 / det_g })
    }

    pub fn users(&self) -> usize {
        self.l
    }

    /// `a M a^H`, using that `M` is Hermitian.
    pub fn quad(&self, a: &[C64]) -> f64 {
        let l = self.l;
        let mut acc = 0.0;
        for i in 0..l {
            acc += self.m[i * l + i].re * a[i].norm_sqr();
            for j in i + 1..l {
                acc += 2.0 * (a[i] * self.m[i * l + j] * a[j].conj()).re;
            }
        }
        acc
    }

    /// `M conj(w)`, so that `<a, w>_M = a . (M conj(w))`.
    fn project_vector(&self, w: &[C64]) -> Vec<C64> {
        (0..self.l)
            .map(|i| (0..self.l).map(|j| self.m[i * self.l + j] * w[j].conj()).sum())
            .collect()
    }
}

fn rate_from_noise(noise: f64) -> f64 {
    if noise > 0.0 {
        (-noise.log2()).max(0.0)
    } else {
        f64::INFINITY
    }
}

fn to_complex(v: &[GaussInt]) -> Vec<C64> {
    v.iter().map(|g| C64::new(g.re as f64, g.im as f64)).collect()
}

/// Enumerated coefficient vectors for a fixed user count and search radius.
#[derive(Debug, Clone)]
pub struct Candidates {
    l: usize,
    radius: u32,
    ints: Vec<Vec<GaussInt>>,
    vecs: Vec<Vec<C64>>,
}

impl Candidates {
    pub fn new(l: usize, radius: u32) -> Result<Self> {
        if radius < 1 {
            return Err(Error::SearchExhausted(radius));
        }
        let side = (2 * radius as usize + 1).pow(2);
        let too_big = (0..l).try_fold(1usize, |acc, _| acc.checked_mul(side).filter(|&v| v <= MAX_BOX));
        if too_big.is_none() {
            let max_l = (1..).take_while(|&k| side.checked_pow(k).is_some_and(|v| v <= MAX_BOX)).count();
            return Err(Error::TooManyUsers(l, max_l));
        }
        let ints = canonical_vectors(l, radius as i64);
        let vecs = ints.iter().map(|v| to_complex(v)).collect();
        Ok(Self { l, radius, ints, vecs })
    }

    pub fn len(&self) -> usize {
        self.ints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ints.is_empty()
    }

    /// Candidate indices sorted by `a M a^H`, truncated for `L >= 3`.
    fn ranked(&self, gram: &Gram) -> Vec<(f64, usize)> {
        let mut scored: Vec<(f64, usize)> = self
            .vecs
            .iter()
            .enumerate()
            .map(|(i, a)| (gram.quad(a), i))
            .collect();
        if self.l >= 3 && scored.len() > CANDIDATES_PER_ROW {
            scored.select_nth_unstable_by(CANDIDATES_PER_ROW - 1, |a, b| a.0.total_cmp(&b.0));
            scored.truncate(CANDIDATES_PER_ROW);
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored
    }
}

/// Euclidean Gram-Schmidt used for the linear-independence test.
struct Span {
    basis: Vec<Vec<C64>>,
}

impl Span {
    fn residual(&self, a: &[C64]) -> Vec<C64> {
        let mut r = a.to_vec();
        for b in &self.basis {
            let c: C64 = r.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
            for (x, y) in r.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        r
    }

    fn try_add(&mut self, a: &[C64]) -> bool {
        let r = self.residual(a);
        let n2: f64 = r.iter().map(|x| x.norm_sqr()).sum();
        let a2: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        if n2 <= 1e-10 * a2 {
            return false;
        }
        let n = n2.sqrt();
        self.basis.push(r.into_iter().map(|x| x / n).collect());
        true
    }
}

/// Compute-and-forward rate with a precomputed candidate set.
pub fn rate_cf_with(gram: &Gram, cands: &Candidates) -> Result<f64> {
    let ranked = cands.ranked(gram);
    let mut span = Span { basis: Vec::new() };
    let pick = |list: &[(f64, usize)], span: &mut Span| {
        for &(q, i) in list {
            if span.try_add(&cands.vecs[i]) && span.basis.len() == gram.l {
                return Some(q);
            }
        }
        None
    };
    if let Some(q) = pick(&ranked, &mut span) {
        return Ok(rate_from_noise(q));
    }
    // the truncated list was rank deficient: fall back to every candidate
    let mut all: Vec<(f64, usize)> = cands.vecs.iter().enumerate().map(|(i, a)| (gram.quad(a), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut span = Span { basis: Vec::new() };
    pick(&all, &mut span)
        .map(rate_from_noise)
        .ok_or(Error::SearchExhausted(cands.radius))
}

/// Compute-and-forward symmetric rate: best invertible integer matrix with
/// entries bounded by `a_radius`, each row decoded independently.
pub fn rate_cf(h: &DMatrix<C64>, snr: f64, a_radius: u32) -> Result<f64> {
    let gram = Gram::new(h, snr)?;
    rate_cf_with(&gram, &Candidates::new(h.ncols(), a_radius)?)
}

struct ScfSearch<'a> {
    gram: &'a Gram,
    cands: &'a Candidates,
    ranked: Vec<(f64, usize)>,
    /// Smallest worst-row residual found so far.
    best: f64,
}

struct Row {
    w: Vec<C64>,
    z: Vec<C64>,
    norm: f64,
}

impl ScfSearch<'_> {
    fn dfs(&mut self, chosen: &mut Vec<usize>, rows: &mut Vec<Row>, prod: f64, worst: f64) {
        let l = self.gram.l;
        if chosen.len() == l - 1 {
            let ints: Vec<Vec<GaussInt>> = chosen.iter().map(|&i| self.cands.ints[i].clone()).collect();
            let g = completion_gcd(&ints);
            if g.is_zero() {
                return;
            }
            let last = g.norm() as f64 * self.gram.det_m / prod;
            let val = worst.max(last);
            if val < self.best {
                self.best = val;
            }
            return;
        }
        let depth = chosen.len();
        let penultimate = depth + 2 == l;
        let mut coeffs = [C64::new(0.0, 0.0); MAX_SIC_USERS];
        for k in 0..self.ranked.len() {
            let (q, i) = self.ranked[k];
            if depth == 0 && q >= self.best {
                break;
            }
            let a = &self.cands.vecs[i];
            let mut resid = q;
            for (c, r) in coeffs.iter_mut().zip(rows.iter()) {
                *c = a.iter().zip(&r.z).map(|(x, y)| x * y).sum::<C64>() / r.norm;
                resid -= c.norm_sqr() * r.norm;
            }
            if resid >= self.best || resid <= 1e-12 * q {
                continue;
            }
            // the completed last row leaves at least det M / (product of residuals)
            if penultimate && self.gram.det_m / (prod * resid) >= self.best {
                continue;
            }
            let mut w = a.clone();
            for (c, r) in coeffs.iter().zip(rows.iter()) {
                for (x, y) in w.iter_mut().zip(&r.w) {
                    *x -= c * y;
                }
            }
            let z = self.gram.project_vector(&w);
            chosen.push(i);
            rows.push(Row { w, z, norm: resid });
            self.dfs(chosen, rows, prod * resid, worst.max(resid));
            rows.pop();
            chosen.pop();
        }
    }
}

/// Largest worst-row residual of the Gram-Schmidt process on `M` taken in
/// the order `perm` (the squared Cholesky diagonal of the permuted `M`).
fn permuted_worst_residual(gram: &Gram, perm: &[usize]) -> f64 {
    let l = gram.l;
    let sub = DMatrix::<C64>::from_fn(l, l, |i, j| gram.m[perm[i] * l + perm[j]]);
    match sub.cholesky() {
        Some(c) => {
            let lm = c.l();
            (0..l).map(|i| lm[(i, i)].norm_sqr()).fold(0.0, f64::max)
        }
        None => f64::INFINITY,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn sic_worst_residual(gram: &Gram) -> Result<f64> {
    if gram.l > MAX_SIC_USERS {
        return Err(Error::TooManyUsers(gram.l, MAX_SIC_USERS));
    }
    Ok(permutations(gram.l)
        .iter()
        .map(|p| permuted_worst_residual(gram, p))
        .fold(f64::INFINITY, f64::min))
}

pub fn rate_sic_with(gram: &Gram) -> Result<f64> {
    Ok(rate_from_noise(sic_worst_residual(gram)?))
}

/// Successive interference cancellation: successive compute-and-forward
/// restricted to permutation matrices, maximized over decoding orders.
pub fn rate_sic(h: &DMatrix<C64>, snr: f64) -> Result<f64> {
    rate_sic_with(&Gram::new(h, snr)?)
}

pub fn rate_scf_with(gram: &Gram, cands: &Candidates) -> Result<f64> {
    // permutation matrices are admissible, so the SIC value seeds the bound
    let seed = if gram.l <= MAX_SIC_USERS {
        sic_worst_residual(gram)?
    } else {
        f64::INFINITY
    };
    let mut search = ScfSearch {
        gram,
        cands,
        ranked: cands.ranked(gram),
        best: seed,
    };
    search.dfs(&mut Vec::new(), &mut Vec::new(), 1.0, 0.0);
    if search.best.is_infinite() {
        return Err(Error::SearchExhausted(cands.radius));
    }
    Ok(rate_from_noise(search.best))
}

/// Successive compute-and-forward symmetric rate. The first `L-1` rows are
/// searched over the bounded candidate set; the last row is the completion
/// with the smallest determinant.
pub fn rate_scf(h: &DMatrix<C64>, snr: f64, a_radius: u32) -> Result<f64> {
    let gram = Gram::new(h, snr)?;
    rate_scf_with(&gram, &Candidates::new(h.ncols(), a_radius)?)
}

pub fn rate_jd_with(gram: &Gram) -> Result<f64> {
    let l = gram.l;
    if l > MAX_JD_USERS {
        return Err(Error::TooManyUsers(l, MAX_JD_USERS));
    }
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
        let sub = DMatrix::<C64>::from_fn(idx.len(), idx.len(), |i, j| gram.g[(idx[i], idx[j])]);
        let ld = cholesky(sub)?.ln_determinant() / std::f64::consts::LN_2;
        best = best.min(ld / idx.len() as f64);
    }
    Ok(best.max(0.0))
}

/// Joint decoding: the largest symmetric rate inside the multiple-access
/// capacity region.
pub fn rate_jd(h: &DMatrix<C64>, snr: f64) -> Result<f64> {
    rate_jd_with(&Gram::new(h, snr)?)
}

/// Rate after the shaping loss `log2(2 pi e G)` and coding loss
/// `log2(mu / (2 pi e))` of a practical lattice code, clamped at zero.
pub fn practical_rate_adjustment(rate: f64, shaping_g: f64, vnr_mu: f64) -> f64 {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    (rate - (two_pi_e * shaping_g).log2() - (vnr_mu / two_pi_e).log2()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(entries: &[(f64, f64)]) -> DMatrix<C64> {
        DMatrix::from_fn(entries.len(), 1, |i, _| C64::new(entries[i].0, entries[i].1))
    }

    #[test]
    fn single_user_reduces_to_capacity() {
        let snr = 10f64.powf(1.5);
        let h = col(&[(1.0, 0.0)]);
        let cap = (1.0 + snr).log2();
        assert!((cap - 5.028).abs() < 1e-3);
        for r in [
            rate_cf(&h, snr, 2).unwrap(),
            rate_scf(&h, snr, 2).unwrap(),
            rate_sic(&h, snr).unwrap(),
            rate_jd(&h, snr).unwrap(),
        ] {
            assert!((r - cap).abs() < 1e-9, "{r} vs {cap}");
        }
    }

    #[test]
    fn multi_antenna_single_user_uses_column_norm() {
        let snr = 4.0;
        let h = col(&[(0.3, -0.2), (1.1, 0.4)]);
        let norm2: f64 = h.iter().map(|x| x.norm_sqr()).sum();
        let cap = (1.0 + snr * norm2).log2();
        assert!((rate_scf(&h, snr, 1).unwrap() - cap).abs() < 1e-9);
        assert!((rate_jd(&h, snr).unwrap() - cap).abs() < 1e-9);
    }

    #[test]
    fn two_user_identical_channels() {
        // h = (1, 1): joint decoding gets log2(1 + 2 snr) / 2; the sum
        // equation a = (1, 1) alone is decodable at log2(1/2 + snr).
        let snr = 100.0;
        let h = DMatrix::from_row_slice(1, 2, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let jd = rate_jd(&h, snr).unwrap();
        assert!((jd - (1.0 + 2.0 * snr).log2() / 2.0).abs() < 1e-9);
        let sic = rate_sic(&h, snr).unwrap();
        let scf = rate_scf(&h, snr, 2).unwrap();
        let cf = rate_cf(&h, snr, 2).unwrap();
        assert!(sic <= scf + 1e-9 && scf <= jd + 1e-9 && cf <= scf + 1e-9);
        // a = (1, 1) first leaves a residual of 1/2 for the second equation
        assert!((scf - 1.0).abs() < 1e-9, "{scf}");
        let sum_eq = (0.5 + snr).log2();
        assert!(sum_eq > 6.0);
        // C&F pairs (1, 1) with a unit vector of noise (1 + snr) / (1 + 2 snr)
        assert!((cf - ((1.0 + 2.0 * snr) / (1.0 + snr)).log2()).abs() < 1e-9, "{cf}");
    }

    #[test]
    fn too_many_users() {
        let h = DMatrix::<C64>::from_element(1, 7, C64::new(1.0, 0.0));
        assert_eq!(rate_sic(&h, 1.0), Err(Error::TooManyUsers(7, 6)));
        assert!(matches!(Candidates::new(6, 2), Err(Error::TooManyUsers(6, 4))));
    }

    #[test]
    fn practical_adjustment_constants() {
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        assert!((practical_rate_adjustment(3.0, 1.0 / two_pi_e, two_pi_e) - 3.0).abs() < 1e-12);
        let loss = 3.0 - practical_rate_adjustment(3.0, 1.0 / 12.0, two_pi_e);
        assert!((loss - (two_pi_e / 12.0).log2()).abs() < 1e-12);
        assert!((loss - 0.5092).abs() < 1e-3);
        assert_eq!(practical_rate_adjustment(0.2, 1.0 / 12.0, two_pi_e), 0.0);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
