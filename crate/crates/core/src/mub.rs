//! Mutually unbiased bases from Heisenberg–Weyl operators in prime dimension.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assemblage::{Povm, WeightedAssemblage};
use crate::error::{Error, Result};
use crate::incompat::DualCertificate;
use crate::linalg::{c64, spectral_norm, sum, ComplexMatrix, Hermitian};
use crate::strategy::DeterministicStrategySet;

/// Tolerance for orthonormality and unbiasedness checks.
pub const MUB_TOL: f64 = 1e-10;

pub fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|k| k * k <= n).all(|k| n % k != 0)
}

/// The first `m` bases of the ordered family: eigenbases of `X̂`, `Ẑ`, then
/// `X̂Ẑ^k` for `k = 1, …, d−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MubFamily {
    d: usize,
    /// Basis vectors as columns; column `a` is outcome `a`.
    bases: Vec<ComplexMatrix>,
}

/// Column `a` is the eigenvector of `X̂Ẑ^k` with eigenvalue `μ₀ω^a`,
/// `μ₀ = e^{iπk(d−1)/d}`: `c_n = μ^{−n} ω^{k n(n−1)/2}/√d`.
fn xz_basis(d: usize, k: usize) -> ComplexMatrix {
    let df = d as f64;
    let norm = 1.0 / df.sqrt();
    ComplexMatrix::from_fn(d, d, |n, a| {
        let nn = n as f64;
        // Phase of μ^{−n}: −n(πk(d−1)/d + 2πa/d); of ω^{k n(n−1)/2}: 2πk·n(n−1)/(2d).
        let tri = ((n * n.saturating_sub(1) / 2) * k) % d;
        let phase = -nn * (PI * (k * (d - 1)) as f64 / df + 2.0 * PI * a as f64 / df) + 2.0 * PI * tri as f64 / df;
        c64(norm * phase.cos(), norm * phase.sin())
    })
}

fn z_basis(d: usize) -> ComplexMatrix {
    ComplexMatrix::identity(d, d)
}

impl MubFamily {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[ComplexMatrix] {
        &self.bases
    }

    /// Projective measurements `Π_{a|x}`.
    pub fn povms(&self) -> Vec<Povm> {
        self.bases.iter().map(|b| Povm::from_basis(b).expect("orthonormal basis")).collect()
    }

    /// Uniformly weighted assemblage of the projective measurements.
    pub fn assemblage(&self) -> WeightedAssemblage {
        WeightedAssemblage::uniform(self.povms()).expect("non-empty family")
    }

    /// Projective measurements under white noise of visibility `eta`.
    pub fn noisy(&self, eta: f64) -> Result<WeightedAssemblage> {
        self.assemblage().depolarize(eta)
    }

    /// Largest deviation from orthonormality within a basis and from
    /// `|⟨v|w⟩| = 1/√d` across bases.
    pub fn unbiasedness_error(&self) -> f64 {
        let target = 1.0 / (self.d as f64).sqrt();
        let mut err: f64 = 0.0;
        for (i, b) in self.bases.iter().enumerate() {
            let gram = b.adjoint() * b;
            err = err.max((gram - ComplexMatrix::identity(self.d, self.d)).iter().map(|z| z.norm()).fold(0.0, f64::max));
            for c in &self.bases[i + 1..] {
                let ov = b.adjoint() * c;
                err = err.max(ov.iter().map(|z| (z.norm() - target).abs()).fold(0.0, f64::max));
            }
        }
        err
    }
}

pub fn build_mub(d: usize, m: usize) -> Result<MubFamily> {
    if !is_prime(d) {
        return Err(Error::NotPrime(d));
    }
    if !(2..=d + 1).contains(&m) {
        return Err(Error::OutOfRange(format!("m = {m} not in [2, {}]", d + 1)));
    }
    let bases = (0..m)
        .map(|x| match x {
            0 => xz_basis(d, 0),
            1 => z_basis(d),
            k => xz_basis(d, k - 1),
        })
        .collect();
    Ok(MubFamily { d, bases })
}

/// `max_λ ‖Σ_x M_{λ(x)|x}‖_∞` over all deterministic strategies.
pub fn max_strategy_norm(a: &WeightedAssemblage) -> Result<f64> {
    let strategies = DeterministicStrategySet::new(&a.outcome_counts())?;
    let d = a.dim();
    Ok((0..strategies.len())
        .map(|l| {
            let s = sum(d, a.measurements().iter().enumerate().map(|(x, p)| p.effect(strategies.outcome(l, x))));
            spectral_norm(&s)
        })
        .fold(0.0, f64::max))
}

pub fn compute_t(fam: &MubFamily) -> Result<f64> {
    max_strategy_norm(&fam.assemblage())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessData {
    pub d: usize,
    pub m: usize,
    pub t: f64,
    pub eta_star: f64,
    /// `m ∉ {2, d, d+1}`: the closed form is not known to give the
    /// robustness and `eta_star` is only the formula evaluated at `T`.
    pub heuristic: bool,
}

impl RobustnessData {
    pub fn from_t(d: usize, m: usize, t: f64) -> Self {
        let (df, mf) = (d as f64, m as f64);
        Self { d, m, t, eta_star: (df * t - mf) / (df * mf - mf), heuristic: !(m == 2 || m == d || m == d + 1) }
    }

    /// `max(0, ((d−1)/d)(η − η*))`.
    pub fn analytic_incompatibility(&self, eta: f64) -> f64 {
        let d = self.d as f64;
        ((d - 1.0) / d * (eta - self.eta_star)).max(0.0)
    }
}

pub fn white_noise_robustness(fam: &MubFamily) -> Result<RobustnessData> {
    let t = compute_t(fam)?;
    let r = RobustnessData::from_t(fam.dim(), fam.count(), t);
    if r.heuristic {
        log::warn!("d = {}, m = {}: white-noise robustness formula is heuristic here", r.d, r.m);
    }
    Ok(r)
}

pub fn analytic_incompatibility(fam: &MubFamily, eta: f64) -> Result<f64> {
    Ok(white_noise_robustness(fam)?.analytic_incompatibility(eta))
}

/// Dual feasible point `C = Π/2`, `ρ_x = 𝟙/2`, `L = (T/2m) 𝟙` for a qubit
/// family; its objective on the noisy family is `η + (1−η)/2 − T/m`.
pub fn qubit_certificate(fam: &MubFamily) -> Result<DualCertificate> {
    if fam.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: fam.dim() });
    }
    let t = compute_t(fam)?;
    let m = fam.count();
    Ok(DualCertificate {
        c: fam.povms().iter().map(|p| p.effects().iter().map(|e| e.scale(0.5)).collect()).collect(),
        rho: vec![Hermitian::identity(2).scale(0.5); m],
        l: Hermitian::identity(2).scale(t / (2.0 * m as f64)),
    })
}
