use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LtvSystem;

/// Spectral radius bound of generated state matrices.
pub const STABLE_RADIUS: f64 = 0.95;

/// Random time-invariant system with `ρ(A) ≤ 0.95` and dense standard-normal
/// `B`, `D`. Deterministic in `seed`.
///
/// Eigenvalues are drawn uniformly from the disk of radius 0.95 in conjugate
/// pairs (plus one real eigenvalue when `n` is odd), assembled in real block
/// form and rotated by a random orthogonal matrix.
pub fn random_stable_system(n: usize, p: usize, q: usize, horizon: usize, seed: u64) -> LtvSystem {
    assert!(n >= 1 && p >= 1 && q >= 1 && horizon >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut block = DMatrix::zeros(n, n);
    let mut i = 0;
    if n % 2 == 1 {
        // keep the real eigenvalue away from zero so A stays well conditioned
        let mag = STABLE_RADIUS * rng.random::<f64>().sqrt().max(1e-3);
        block[(0, 0)] = if rng.random::<bool>() { mag } else { -mag };
        i = 1;
    }
    while i < n {
        let r = STABLE_RADIUS * rng.random::<f64>().sqrt().max(1e-3);
        let theta = std::f64::consts::PI * rng.random::<f64>();
        let (re, im) = (r * theta.cos(), r * theta.sin());
        block[(i, i)] = re;
        block[(i, i + 1)] = im;
        block[(i + 1, i)] = -im;
        block[(i + 1, i + 1)] = re;
        i += 2;
    }

    let g = DMatrix::from_fn(n, n, |_, _| normal(&mut rng));
    let qr = g.qr();
    let mut orth = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            orth.column_mut(j).neg_mut();
        }
    }
    let a = &orth * block * orth.transpose();
    let b = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let d = DMatrix::from_fn(n, q, |_, _| normal(&mut rng));
    LtvSystem::time_invariant(a, b, d, horizon).expect("generated system is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectral_radius(a: &DMatrix<f64>) -> f64 {
        a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn deterministic_in_seed() {
        let a = random_stable_system(4, 2, 4, 3, 7);
        let b = random_stable_system(4, 2, 4, 3, 7);
        assert_eq!(a, b);
        let c = random_stable_system(4, 2, 4, 3, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn spectral_radius_bound_over_many_seeds() {
        for seed in 0..1000 {
            let n = 1 + (seed as usize % 8);
            let sys = random_stable_system(n, 1, n, 1, seed);
            let rho = spectral_radius(sys.a(0));
            assert!(rho <= STABLE_RADIUS + 1e-9, "seed {seed}: rho = {rho}");
        }
    }

    #[test]
    fn benchmark_convention_dimensions() {
        let sys = random_stable_system(8, 4, 8, 5, 1);
        assert_eq!((sys.n(), sys.p(), sys.q(), sys.horizon()), (8, 4, 8, 5));
    }
}
