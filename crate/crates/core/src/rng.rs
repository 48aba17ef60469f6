//! Seeded random streams and the shared samplers.
//!
//! A [`RngStream`] wraps a ChaCha8 generator keyed by a 64-bit seed. Child
//! streams are derived from the parent *seed* and a label, never from the
//! parent's state, so the sequence a child produces does not depend on how
//! many draws the parent or its siblings have made.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{norm2, Mat};

pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, label)`.
    pub fn child(&self, label: &str) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Independent stream keyed by `(seed, label, index)`, e.g. one per trial.
    pub fn child_indexed(&self, label: &str, index: u64) -> RngStream {
        let base = splitmix64(self.seed ^ fnv1a(label.as_bytes()));
        RngStream::new(splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream").field("seed", &self.seed).finish()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("dimension must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// `n` i.i.d. standard normal draws.
pub fn sample_gaussian_vector(n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    check_dim(n)?;
    Ok((0..n).map(|_| rng.normal()).collect())
}

/// Uniform draw from the unit sphere in ℝⁿ (normalized Gaussian).
pub fn sample_unit_sphere(n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    check_dim(n)?;
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let r = norm2(&g);
        if r > 0.0 {
            return Ok(g.into_iter().map(|v| v / r).collect());
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn sample_orthogonal(n: usize, rng: &mut RngStream) -> Result<Mat> {
    check_dim(n)?;
    loop {
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let qr = g.qr();
        let r = qr.r();
        let min_diag = (0..n).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if !(min_diag > 1e-12 * max_diag) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return Ok(Mat::from_nalgebra(&q));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::axpy;

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = RngStream::new(1);
        assert!(sample_gaussian_vector(0, &mut rng).is_err());
        assert!(sample_unit_sphere(0, &mut rng).is_err());
        assert!(sample_orthogonal(0, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let a = sample_gaussian_vector(7, &mut RngStream::new(42)).unwrap();
        let b = sample_gaussian_vector(7, &mut RngStream::new(42)).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian_vector(7, &mut RngStream::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_mean_concentrates() {
        let n = 4;
        let draws = 100_000;
        let mut rng = RngStream::new(7);
        let mut mean = vec![0.0; n];
        for _ in 0..draws {
            let g = sample_gaussian_vector(n, &mut rng).unwrap();
            axpy(1.0 / draws as f64, &g, &mut mean);
        }
        assert!(norm2(&mean) <= 4.0 * (n as f64 / draws as f64).sqrt());
    }

    #[test]
    fn children_are_order_insensitive() {
        let parent = RngStream::new(99);
        let mut a1 = parent.child("a");
        let mut b1 = parent.child("b");
        let mut interleaved_a = Vec::new();
        let mut interleaved_b = Vec::new();
        for _ in 0..50 {
            interleaved_a.push(a1.normal());
            interleaved_b.push(b1.normal());
        }
        let mut a2 = parent.child("a");
        let sep_a: Vec<f64> = (0..50).map(|_| a2.normal()).collect();
        let mut b2 = parent.child("b");
        let sep_b: Vec<f64> = (0..50).map(|_| b2.normal()).collect();
        assert_eq!(interleaved_a, sep_a);
        assert_eq!(interleaved_b, sep_b);
        assert_ne!(sep_a, sep_b);

        // Drawing from the parent does not perturb its children.
        let mut p = RngStream::new(99);
        p.normal();
        let mut a3 = p.child("a");
        assert_eq!(a3.normal(), sep_a[0]);
        assert_ne!(
            parent.child_indexed("trial", 0).normal(),
            parent.child_indexed("trial", 1).normal()
        );
    }

    #[test]
    fn sphere_samples() {
        let mut rng = RngStream::new(3);
        for _ in 0..100 {
            let s = sample_unit_sphere(1, &mut rng).unwrap();
            assert!(s[0] == 1.0 || s[0] == -1.0);
        }
        for n in 1..8 {
            let s = sample_unit_sphere(n, &mut rng).unwrap();
            assert!((norm2(&s) - 1.0).abs() <= 1e-12);
        }
        let draws = 100_000;
        let mut mean = vec![0.0; 3];
        for _ in 0..draws {
            let s = sample_unit_sphere(3, &mut rng).unwrap();
            axpy(1.0 / draws as f64, &s, &mut mean);
        }
        assert!(norm2(&mean) <= 0.02);
    }

    #[test]
    fn circle_sectors_are_uniform() {
        let mut rng = RngStream::new(11);
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..draws {
            let s = sample_unit_sphere(2, &mut rng).unwrap();
            let angle = s[1].atan2(s[0]).rem_euclid(std::f64::consts::TAU);
            let k = ((angle / std::f64::consts::TAU) * 8.0) as usize;
            counts[k.min(7)] += 1;
        }
        for c in counts {
            let frac = c as f64 / draws as f64;
            assert!((frac - 0.125).abs() <= 0.015, "sector fraction {frac}");
        }
    }

    #[test]
    fn orthogonal_samples() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let q = sample_orthogonal(1, &mut rng).unwrap();
            assert!(q[(0, 0)] == 1.0 || q[(0, 0)] == -1.0);
        }
        for _ in 0..20 {
            let q = sample_orthogonal(5, &mut rng).unwrap();
            let qtq = q.transpose().matmul(&q);
            assert!(qtq.sub(&Mat::identity(5)).max_abs() <= 1e-10);
            let det = q.determinant();
            assert!((det.abs() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn orthogonal_is_not_sign_biased() {
        // Without sign correction, QR of a Gaussian has a deterministic
        // diagonal sign pattern; with it, Q[0][0] is symmetric about 0.
        let mut rng = RngStream::new(8);
        let trials = 4000;
        let positive = (0..trials)
            .filter(|_| sample_orthogonal(3, &mut rng).unwrap()[(0, 0)] > 0.0)
            .count();
        let frac = positive as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.04, "fraction {frac}");
    }
}
