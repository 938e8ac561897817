//! Banded storage, banded Cholesky and Jacobi-preconditioned conjugate gradients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square matrix storing every entry with `|i - j| ≤ kd`, both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    kd: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, kd: usize) -> Self {
        Self { dim, kd, data: vec![0.0; dim * (2 * kd + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.dim || j >= self.dim || i.abs_diff(j) > self.kd {
            return None;
        }
        Some(i * (2 * self.kd + 1) + (j + self.kd - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j).expect("entry outside the band");
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let lo = i.saturating_sub(self.kd);
                let hi = (i + self.kd).min(self.dim - 1);
                (lo..=hi).map(|j| self.data[i * (2 * self.kd + 1) + j + self.kd - i] * x[j]).sum()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks_exact(2 * self.kd + 1)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn symmetry_error(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i + 1..=(i + self.kd).min(self.dim.saturating_sub(1)) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Banded Cholesky factor of the lower triangle.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, kd) = (self.dim, self.kd);
        let w = kd + 1;
        // l[i * w + (j + kd - i)] holds L_ij for i - kd ≤ j ≤ i.
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(kd);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                let klo = lo.max(j.saturating_sub(kd));
                for k in klo..j {
                    sum -= l[i * w + k + kd - i] * l[j * w + k + kd - j];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(Error::LinearSolve(format!(
                            "matrix not positive definite at row {i} (pivot {sum:e})"
                        )));
                    }
                    l[i * w + kd] = sum.sqrt();
                } else {
                    l[i * w + j + kd - i] = sum / l[j * w + kd];
                }
            }
        }
        Ok(BandCholesky { dim: n, kd, l })
    }

    /// Jacobi-preconditioned conjugate gradients to `‖r‖ ≤ tol ‖b‖`.
    pub fn conjugate_gradient(&self, b: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let n = self.dim;
        let bnorm = norm(b);
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let inv_diag: Vec<f64> = self
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..max_iters {
            let ap = self.matvec(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::LinearSolve("conjugate gradients hit a non-positive curvature".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= tol * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolve(format!("conjugate gradients did not converge in {max_iters} iterations")))
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    dim: usize,
    kd: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kd) = (self.dim, self.kd);
        let w = kd + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(kd);
            let mut sum = y[i];
            for k in lo..i {
                sum -= self.l[i * w + k + kd - i] * y[k];
            }
            y[i] = sum / self.l[i * w + kd];
        }
        for i in (0..n).rev() {
            let hi = (i + kd).min(n - 1);
            let mut sum = y[i];
            for k in i + 1..=hi {
                sum -= self.l[k * w + i + kd - k] * y[k];
            }
            y[i] = sum / self.l[i * w + kd];
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, kd: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(dim, kd);
        for i in 0..dim {
            for j in i + 1..=(i + kd).min(dim - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a.add(i, j, v);
                a.add(j, i, v);
            }
            a.add(i, i, 2.0 * kd as f64 + rng.gen_range(0.5..1.5));
        }
        a
    }

    #[test]
    fn cholesky_matches_dense_oracle() {
        let a = random_spd(45, 5, 7);
        let b: Vec<f64> = (0..45).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let dense = a.to_dense().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b.clone()));
        for (u, v) in x.iter().zip(dense.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) < 1e-12 * norm(&b));
    }

    #[test]
    fn cg_matches_cholesky() {
        let a = random_spd(60, 3, 11);
        let b: Vec<f64> = (0..60).map(|i| 1.0 + i as f64).collect();
        let x = a.conjugate_gradient(&b, 1e-13, 500).unwrap();
        let y = a.cholesky().unwrap().solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_is_reported() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::LinearSolve(_))));
    }

    #[test]
    fn symmetry_error_detects_asymmetry() {
        let mut a = random_spd(10, 2, 3);
        assert_eq!(a.symmetry_error(), 0.0);
        a.add(0, 2, 0.5);
        assert!(a.symmetry_error() > 0.0);
    }
}
