//! Random unitaries, measurements and states for property tests and the
//! `random` scenario.

use nalgebra::linalg::QR;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::assemblage::{Povm, WeightedAssemblage};
use crate::linalg::{c64, ComplexMatrix, Hermitian};

fn ginibre(n: usize, k: usize, rng: &mut impl Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, k, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Haar-distributed unitary.
pub fn haar_unitary(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let qr = QR::new(ginibre(n, n, rng));
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Projective measurement onto the columns of a Haar-random unitary.
pub fn random_projective(d: usize, rng: &mut impl Rng) -> Povm {
    Povm::from_basis(&haar_unitary(d, rng)).expect("unitary columns form a basis")
}

/// Generic POVM with `outcomes` full-rank effects: `S^{-1/2} A_a S^{-1/2}`
/// for Wishart `A_a` and `S = Σ A_a`.
pub fn random_povm(d: usize, outcomes: usize, rng: &mut impl Rng) -> Povm {
    let raw: Vec<Hermitian> = (0..outcomes)
        .map(|_| {
            let g = ginibre(d, d, rng);
            Hermitian::new(&g * g.adjoint()).expect("finite")
        })
        .collect();
    let s = crate::linalg::sum(d, &raw);
    let isqrt = s.map_spectrum(|v| 1.0 / v.sqrt());
    let effects = raw.iter().map(|a| a.sandwich(&isqrt)).collect();
    Povm::new(effects).expect("normalized by construction")
}

/// Uniformly weighted assemblage of `m` random POVMs (projective when
/// `projective`).
pub fn random_assemblage(d: usize, m: usize, outcomes: usize, projective: bool, rng: &mut impl Rng) -> WeightedAssemblage {
    let ms = (0..m)
        .map(|_| if projective { random_projective(d, rng) } else { random_povm(d, outcomes, rng) })
        .collect();
    WeightedAssemblage::uniform(ms).expect("same dimension")
}

/// Random probability vector from a flat Dirichlet distribution.
pub fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Random mixed state of dimension `d` with rank `rank` (induced measure).
pub fn random_state(d: usize, rank: usize, rng: &mut impl Rng) -> Hermitian {
    let g = ginibre(d, rank, rng);
    let rho = Hermitian::new(&g * g.adjoint()).expect("finite");
    let t = rho.trace();
    rho.scale(1.0 / t)
}

/// Random unit vector in R³.
pub fn random_bloch(rng: &mut impl Rng) -> [f64; 3] {
    let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
