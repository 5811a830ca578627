//! Gaussian-integer arithmetic and coefficient-vector enumeration.

use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GaussInt {
    pub re: i64,
    pub im: i64,
}

impl GaussInt {
    pub const ZERO: GaussInt = GaussInt { re: 0, im: 0 };

    pub fn new(re: i64, im: i64) -> Self {
        Self { re, im }
    }

    /// Field norm `re^2 + im^2`.
    pub fn norm(self) -> i64 {
        self.re * self.re + self.im * self.im
    }

    pub fn is_zero(self) -> bool {
        self.re == 0 && self.im == 0
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    /// Remainder of division by `d`, with the quotient rounded to the
    /// nearest Gaussian integer so that `N(r) <= N(d) / 2`.
    fn rem(self, d: GaussInt) -> GaussInt {
        let num = self * d.conj();
        let n = d.norm();
        let q = GaussInt::new(div_round(num.re, n), div_round(num.im, n));
        self - q * d
    }
}

fn div_round(a: i64, b: i64) -> i64 {
    // b > 0
    (2 * a + b).div_euclid(2 * b)
}

impl Add for GaussInt {
    type Output = GaussInt;
    fn add(self, o: GaussInt) -> GaussInt {
        GaussInt::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for GaussInt {
    type Output = GaussInt;
    fn sub(self, o: GaussInt) -> GaussInt {
        GaussInt::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for GaussInt {
    type Output = GaussInt;
    fn mul(self, o: GaussInt) -> GaussInt {
        GaussInt::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Greatest common divisor (up to a unit) by the Euclidean algorithm.
pub fn gcd(mut a: GaussInt, mut b: GaussInt) -> GaussInt {
    while !b.is_zero() {
        let r = a.rem(b);
        a = b;
        b = r;
    }
    a
}

/// Determinant of a square Gaussian-integer matrix given by rows.
pub fn det(rows: &[Vec<GaussInt>]) -> GaussInt {
    let n = rows.len();
    match n {
        0 => GaussInt::new(1, 0),
        1 => rows[0][0],
        _ => {
            let mut acc = GaussInt::ZERO;
            for j in 0..n {
                if rows[0][j].is_zero() {
                    continue;
                }
                let minor: Vec<Vec<GaussInt>> = rows[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &x)| x).collect())
                    .collect();
                let term = rows[0][j] * det(&minor);
                acc = if j % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}

/// Gcd of the maximal minors of an `(L-1) x L` matrix. Every completion to
/// an `L x L` matrix has determinant in the ideal generated by this value,
/// and the ideal is attained, so `N(result)` is the smallest achievable
/// `|det|^2`. Zero when the rows are dependent.
pub fn completion_gcd(rows: &[Vec<GaussInt>]) -> GaussInt {
    let l = rows.len() + 1;
    let mut g = GaussInt::ZERO;
    for j in 0..l {
        let minor: Vec<Vec<GaussInt>> = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &x)| x).collect())
            .collect();
        g = gcd(g, det(&minor));
    }
    g
}

/// All non-zero vectors in `Z[i]^len` with coordinates bounded by `radius`
/// in both real and imaginary part, one representative per unit orbit
/// (the first non-zero coordinate has `re > 0, im >= 0`).
pub fn canonical_vectors(len: usize, radius: i64) -> Vec<Vec<GaussInt>> {
    let side = 2 * radius + 1;
    let per_coord: Vec<GaussInt> = (0..side * side)
        .map(|i| GaussInt::new(i / side - radius, i % side - radius))
        .collect();
    let total = per_coord.len().pow(len as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(per_coord[idx % per_coord.len()]);
            idx /= per_coord.len();
        }
        if let Some(first) = v.iter().find(|g| !g.is_zero()) {
            if first.re > 0 && first.im >= 0 {
                out.push(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(re: i64, im: i64) -> GaussInt {
        GaussInt::new(re, im)
    }

    #[test]
    fn gcd_of_associates_and_primes() {
        // 1 + i divides 2
        assert_eq!(gcd(g(2, 0), g(1, 1)).norm(), 2);
        // 3 is a Gaussian prime, coprime with 2 + i
        assert_eq!(gcd(g(3, 0), g(2, 1)).norm(), 1);
        // (2+i)(1+i) = 1 + 3i and (2+i)(2-i) = 5 share 2+i
        assert_eq!(gcd(g(1, 3), g(5, 0)).norm(), 5);
        assert_eq!(gcd(g(0, 0), g(0, 2)).norm(), 4);
    }

    #[test]
    fn determinant_expansion() {
        let rows = vec![vec![g(1, 0), g(2, 0)], vec![g(0, 1), g(1, 1)]];
        // 1*(1+i) - 2*i = 1 - i
        assert_eq!(det(&rows), g(1, -1));
        let id3: Vec<Vec<GaussInt>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { g(1, 0) } else { g(0, 0) }).collect())
            .collect();
        assert_eq!(det(&id3), g(1, 0));
    }

    #[test]
    fn completion_of_non_primitive_row() {
        // (2, 2) = 2 (1, 1): every completion has det divisible by 2
        assert_eq!(completion_gcd(&[vec![g(2, 0), g(2, 0)]]).norm(), 4);
        assert_eq!(completion_gcd(&[vec![g(1, 0), g(1, 1)]]).norm(), 1);
        // dependent rows
        let dep = vec![vec![g(1, 0), g(0, 0), g(1, 0)], vec![g(2, 0), g(0, 0), g(2, 0)]];
        assert!(completion_gcd(&dep).is_zero());
    }

    #[test]
    fn canonical_count() {
        // (5^2)^L - 1 non-zero vectors, four units each
        assert_eq!(canonical_vectors(1, 2).len(), 24 / 4);
        assert_eq!(canonical_vectors(2, 2).len(), 624 / 4);
        assert_eq!(canonical_vectors(2, 1).len(), 80 / 4);
    }
}
