//! Banded LU factorization with partial pivoting.

use crate::error::{Error, Result};

/// General band matrix with `kl` sub- and `ku` super-diagonals. Storage
/// leaves room for the `kl` extra super-diagonals created by row pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    a: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            a: vec![0.0; n * ld],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ld + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn clear(&mut self) {
        self.a.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.a[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` at `(i, j)`.
    ///
    /// # Panics
    /// If the entry lies outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku + 1).min(self.n);
            *yi = (lo..hi).map(|j| self.a[self.idx(i, j)] * x[j]).sum();
        }
        y
    }

    /// Factors in place.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let mut piv = vec![0usize; n];
        let scale = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        for k in 0..n {
            let last = (k + kl + 1).min(n);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].abs();
            for i in k + 1..last {
                let v = self.a[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            piv[k] = p;
            let jend = (k + reach + 1).min(n);
            if p != k {
                for j in k..jend {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.a.swap(a, b);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            for i in k + 1..last {
                let ik = self.idx(i, k);
                let l = self.a[ik] / pivot;
                self.a[ik] = l;
                if l != 0.0 {
                    let ri = self.idx(i, k + 1);
                    let rk = self.idx(k, k + 1);
                    for t in 0..jend - (k + 1) {
                        self.a[ri + t] -= l * self.a[rk + t];
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        let reach = m.kl + m.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..(k + m.kl + 1).min(n) {
                    b[i] -= m.a[m.idx(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + reach + 1).min(n) {
                s -= m.a[m.idx(i, j)] * b[j];
            }
            b[i] = s / m.a[m.idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = crate::stream::seeded(5);
        for &(n, kl, ku) in &[(1, 0, 0), (6, 1, 1), (20, 3, 2), (40, 5, 5), (15, 0, 4)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                    let v: f64 = rng.random_range(-1.0..1.0) + if i == j { 0.1 } else { 0.0 };
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = band.mul_vec(&b);
            let yd = &dense * DVector::from_vec(b.clone());
            for i in 0..n {
                assert!((y[i] - yd[i]).abs() < 1e-12);
            }
            let x = band.factor().unwrap().solve(&b);
            let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-8 * (1.0 + xd[i].abs()), "n={n}");
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        let x = m.factor().unwrap().solve(&[2.0, 3.0]);
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn singular_detected() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        assert!(matches!(m.factor(), Err(Error::Singular(_))));
    }
}
