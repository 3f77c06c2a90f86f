//! Dense matrices over exact rationals, machine integers, and doubles,
//! with the small amount of linear algebra the verification needs:
//! symmetric eigenvalues (Householder tridiagonalization + implicit QL),
//! spectral norm by power iteration, and an exact rational PSD test.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::scalar::rat_to_f64;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Mat<T> {
    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Mat { rows, cols, data: vec![v; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.at(r, c).clone());
            }
        }
        Mat { rows: self.cols, cols: self.rows, data: out }
    }
}

pub type RMat = Mat<BigRational>;
pub type FMat = Mat<f64>;
pub type IMat = Mat<i64>;

impl RMat {
    pub fn zeros_rat(rows: usize, cols: usize) -> Self {
        Mat::filled(rows, cols, BigRational::zero())
    }

    pub fn to_f64(&self) -> FMat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(rat_to_f64).collect() }
    }

    pub fn matmul(&self, other: &RMat) -> RMat {
        assert_eq!(self.cols, other.rows);
        let mut out = RMat::zeros_rat(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.at(k, j);
                    if b.is_zero() {
                        continue;
                    }
                    let cur = out.at_mut(i, j);
                    *cur = &*cur + a * b;
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> BigRational {
        let mut m = BigRational::zero();
        for v in &self.data {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self.at(i, j) != self.at(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Exact PSD test for a symmetric rational matrix via pivoted LDL^T.
    ///
    /// Picks a nonzero diagonal pivot at each step; if the remaining
    /// diagonal is all zero, the block must be entirely zero for the
    /// matrix to be PSD.
    pub fn is_psd_exact(&self) -> bool {
        assert!(self.is_symmetric(), "PSD test requires a symmetric matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut active: Vec<usize> = (0..n).collect();
        while !active.is_empty() {
            let pivot = active.iter().position(|&i| !a.at(i, i).is_zero());
            match pivot {
                None => {
                    // Zero diagonal: PSD iff all remaining entries vanish.
                    return active
                        .iter()
                        .all(|&i| active.iter().all(|&j| a.at(i, j).is_zero()));
                }
                Some(p) => {
                    let i = active.remove(p);
                    let d = a.at(i, i).clone();
                    if d.is_negative() {
                        return false;
                    }
                    for (ai, &r) in active.iter().enumerate() {
                        let f = a.at(r, i) / &d;
                        if f.is_zero() {
                            continue;
                        }
                        for &c in &active[ai..] {
                            let delta = &f * a.at(i, c);
                            let cur = a.at(r, c).clone() - delta;
                            *a.at_mut(r, c) = cur.clone();
                            if r != c {
                                *a.at_mut(c, r) = cur;
                            }
                        }
                    }
                }
            }
        }
        true
    }
}

impl IMat {
    pub fn zeros_int(rows: usize, cols: usize) -> Self {
        Mat::filled(rows, cols, 0i64)
    }

    pub fn matmul(&self, other: &IMat) -> IMat {
        assert_eq!(self.cols, other.rows);
        let mut out = IMat::zeros_int(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = *self.at(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn to_f64(&self) -> FMat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl FMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat::filled(rows, cols, 0.0)
    }

    pub fn matmul(&self, other: &FMat) -> FMat {
        assert_eq!(self.cols, other.rows);
        let mut out = FMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = *self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Eigenvalues of a symmetric matrix: Householder reduction to
    /// tridiagonal form followed by QL with implicit shifts.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return vec![];
        }
        let mut a = self.clone();
        let mut d = vec![0.0f64; n];
        let mut e = vec![0.0f64; n];
        tred2(&mut a, &mut d, &mut e);
        tql2(&mut d, &mut e);
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        d
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Largest singular value via power iteration on `M^T M`.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm_sparse(
            self.rows,
            self.cols,
            &self
                .data
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i / self.cols, i % self.cols, *v))
                .collect::<Vec<_>>(),
        )
    }
}

/// Largest singular value of a sparse matrix given as COO triplets.
pub fn spectral_norm_sparse(rows: usize, cols: usize, coo: &[(usize, usize, f64)]) -> f64 {
    if rows == 0 || cols == 0 || coo.is_empty() {
        return 0.0;
    }
    let mut v = vec![0.0f64; cols];
    // Deterministic pseudo-random start to avoid orthogonal unlucky starts.
    for (i, x) in v.iter_mut().enumerate() {
        *x = 1.0 + 0.37 * ((i as f64 * 0.7391 + 0.1).sin());
    }
    normalize(&mut v);
    let mut estimate = 0.0f64;
    let mut tmp = vec![0.0f64; rows];
    for _ in 0..300 {
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for &(r, c, val) in coo {
            tmp[r] += val * v[c];
        }
        let mut next = vec![0.0f64; cols];
        for &(r, c, val) in coo {
            next[c] += val * tmp[r];
        }
        // For unit v, ||M^T M v|| converges to the top eigenvalue of
        // M^T M, i.e. the squared top singular value.
        let s2 = norm2(&next).sqrt();
        if s2 == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= s2);
        let new_estimate = s2.sqrt();
        if (new_estimate - estimate).abs() <= 1e-11 * new_estimate.max(1.0) {
            return new_estimate;
        }
        estimate = new_estimate;
        v = next;
    }
    estimate
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Householder reduction of a real symmetric matrix to tridiagonal form.
/// Ported from the EISPACK tred2 routine (eigenvectors not accumulated).
fn tred2(a: &mut FMat, d: &mut [f64], e: &mut [f64]) {
    let n = a.rows;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += a.at(i, k).abs();
            }
            if scale == 0.0 {
                e[i] = *a.at(i, l);
            } else {
                for k in 0..=l {
                    *a.at_mut(i, k) /= scale;
                    h += a.at(i, k) * a.at(i, k);
                }
                let mut f = *a.at(i, l);
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                *a.at_mut(i, l) = f - g;
                f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a.at(j, k) * a.at(i, k);
                    }
                    for k in (j + 1)..=l {
                        g += a.at(k, j) * a.at(i, k);
                    }
                    e[j] = g / h;
                    f += e[j] * a.at(i, j);
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = *a.at(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * a.at(i, k);
                        *a.at_mut(j, k) -= delta;
                    }
                }
            }
        } else {
            e[i] = *a.at(i, l);
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = *a.at(i, i);
    }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix (EISPACK tql2,
/// eigenvalues only).
fn tql2(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n <= 1 {
        return;
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "QL iteration failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = 0.0;
                let _ = f;
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, rat_int};

    #[test]
    fn eigenvalues_of_known_matrix() {
        // [[2,1],[1,2]] -> {1,3}
        let m = Mat { rows: 2, cols: 2, data: vec![2.0, 1.0, 1.0, 2.0] };
        let ev = m.sym_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_trace_and_det() {
        // Fixed 5x5 symmetric matrix.
        let n = 5;
        let mut m = FMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = ((i * 7 + j * 3) % 11) as f64 / 3.0;
                *m.at_mut(i, j) += v;
                *m.at_mut(j, i) += v;
            }
        }
        let ev = m.sym_eigenvalues();
        let trace: f64 = (0..n).map(|i| m.at(i, i)).sum();
        assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_all_ones_offdiag() {
        // J - I on 3 indices has spectral norm 2.
        let mut m = FMat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    *m.at_mut(i, j) = 1.0;
                }
            }
        }
        assert!((m.spectral_norm() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn exact_psd_on_rank_one_and_indefinite() {
        // vv^T with v = (1, 1/2, -3)
        let v = [rat_int(1), rat(1, 2), rat_int(-3)];
        let mut m = RMat::zeros_rat(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                *m.at_mut(i, j) = &v[i] * &v[j];
            }
        }
        assert!(m.is_psd_exact());
        *m.at_mut(0, 0) = rat_int(-1);
        assert!(!m.is_psd_exact());
        // Zero diagonal with nonzero off-diagonal is not PSD.
        let mut z = RMat::zeros_rat(2, 2);
        *z.at_mut(0, 1) = rat_int(1);
        *z.at_mut(1, 0) = rat_int(1);
        assert!(!z.is_psd_exact());
    }
}
