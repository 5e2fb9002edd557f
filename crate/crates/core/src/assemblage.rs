//! POVMs, weighted measurement assemblages and their structural operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sum, ComplexMatrix, Hermitian};
use crate::random::random_simplex;
use crate::strategy::DeterministicStrategySet;

/// Validation tolerance for effects and weights.
pub const POVM_TOL: f64 = 1e-9;

/// A finite-outcome POVM `{M_a}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PovmRepr", into = "PovmRepr")]
pub struct Povm {
    effects: Vec<Hermitian>,
}

#[derive(Serialize, Deserialize)]
struct PovmRepr {
    effects: Vec<Hermitian>,
}

impl TryFrom<PovmRepr> for Povm {
    type Error = Error;
    fn try_from(r: PovmRepr) -> Result<Self> {
        Povm::new(r.effects)
    }
}

impl From<Povm> for PovmRepr {
    fn from(p: Povm) -> Self {
        PovmRepr { effects: p.effects }
    }
}

impl Povm {
    pub fn new(effects: Vec<Hermitian>) -> Result<Self> {
        Self::with_tolerance(effects, POVM_TOL)
    }

    pub fn with_tolerance(effects: Vec<Hermitian>, tol: f64) -> Result<Self> {
        let Some(first) = effects.first() else {
            return Err(Error::InvalidPovm("no effects".into()));
        };
        let d = first.dim();
        if let Some(e) = effects.iter().find(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: e.dim() });
        }
        for (a, e) in effects.iter().enumerate() {
            let ev = e.eigenvalues();
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            if lo < -tol || hi > 1.0 + tol {
                return Err(Error::InvalidPovm(format!("effect {a} has spectrum [{lo:.3e}, {hi:.3e}]")));
            }
        }
        let dev = (&sum(d, &effects) - &Hermitian::identity(d)).max_abs_entry();
        if dev > tol {
            return Err(Error::InvalidPovm(format!("effects sum to identity only within {dev:.3e}")));
        }
        Ok(Self { effects })
    }

    pub(crate) fn from_effects_unchecked(effects: Vec<Hermitian>) -> Self {
        Self { effects }
    }

    /// Rank-one projective measurement onto the columns of `basis`.
    pub fn from_basis(basis: &ComplexMatrix) -> Result<Self> {
        let effects = basis.column_iter().map(|c| Hermitian::outer(&c.into_owned())).collect();
        Self::new(effects)
    }

    /// Single-outcome measurement `{𝟙}`.
    pub fn trivial(dim: usize) -> Self {
        Self { effects: vec![Hermitian::identity(dim)] }
    }

    /// Measurement in the computational basis.
    pub fn computational(dim: usize) -> Self {
        Self {
            effects: (0..dim)
                .map(|a| {
                    let mut v = vec![0.0; dim];
                    v[a] = 1.0;
                    Hermitian::diag(&v)
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.effects[0].dim()
    }

    pub fn num_outcomes(&self) -> usize {
        self.effects.len()
    }

    pub fn effects(&self) -> &[Hermitian] {
        &self.effects
    }

    pub fn effect(&self, a: usize) -> &Hermitian {
        &self.effects[a]
    }

    /// `η M_a + (1−η) Tr[M_a] 𝟙/d`.
    pub fn depolarize(&self, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let d = self.dim();
        let id = Hermitian::identity(d);
        let effects = self
            .effects
            .iter()
            .map(|m| &m.scale(eta) + &id.scale((1.0 - eta) * m.trace() / d as f64))
            .collect();
        Ok(Self { effects })
    }

    /// Effects `U M_a U†`.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        Self { effects: self.effects.iter().map(|m| m.conjugate_by(u)).collect() }
    }

    /// Largest entry-wise deviation between effects; `∞` when the outcome
    /// counts differ.
    pub fn max_deviation(&self, other: &Povm) -> f64 {
        if self.num_outcomes() != other.num_outcomes() || self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.effects
            .iter()
            .zip(&other.effects)
            .map(|(a, b)| (a - b).max_abs_entry())
            .fold(0.0, f64::max)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("eta = {eta} not in [0, 1]")))
    }
}

fn check_distribution(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|&p| !p.is_finite() || p < -POVM_TOL) {
        return Err(Error::InvalidWeights(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > POVM_TOL {
        return Err(Error::InvalidWeights(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Ordered list of POVMs together with an input distribution `p(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssemblageRepr", into = "AssemblageRepr")]
pub struct WeightedAssemblage {
    dim: usize,
    measurements: Vec<Povm>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AssemblageRepr {
    dim: usize,
    measurements: Vec<Povm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl TryFrom<AssemblageRepr> for WeightedAssemblage {
    type Error = Error;
    fn try_from(r: AssemblageRepr) -> Result<Self> {
        if let Some(m) = r.measurements.iter().find(|m| m.dim() != r.dim) {
            return Err(Error::DimensionMismatch { expected: r.dim, got: m.dim() });
        }
        let weights = r.weights.unwrap_or_else(|| {
            let m = r.measurements.len();
            vec![1.0 / m as f64; m]
        });
        WeightedAssemblage::with_dim(r.dim, r.measurements, weights)
    }
}

impl From<WeightedAssemblage> for AssemblageRepr {
    fn from(a: WeightedAssemblage) -> Self {
        AssemblageRepr { dim: a.dim, measurements: a.measurements, weights: Some(a.weights) }
    }
}

impl WeightedAssemblage {
    pub fn new(measurements: Vec<Povm>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = measurements.first() else {
            return Err(Error::ShapeMismatch("an assemblage needs at least one measurement".into()));
        };
        Self::with_dim(first.dim(), measurements, weights)
    }

    fn with_dim(dim: usize, measurements: Vec<Povm>, weights: Vec<f64>) -> Result<Self> {
        if let Some(m) = measurements.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
        }
        if weights.len() != measurements.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} measurements",
                weights.len(),
                measurements.len()
            )));
        }
        if !measurements.is_empty() {
            check_distribution(&weights, "p(x)")?;
        }
        Ok(Self { dim, measurements, weights })
    }

    /// Uniform weights `p(x) = 1/m`.
    pub fn uniform(measurements: Vec<Povm>) -> Result<Self> {
        let m = measurements.len();
        Self::new(measurements, vec![1.0 / m as f64; m])
    }

    /// The empty assemblage on a `dim`-dimensional system.
    pub fn empty(dim: usize) -> Self {
        Self { dim, measurements: Vec::new(), weights: Vec::new() }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn measurements(&self) -> &[Povm] {
        &self.measurements
    }

    pub fn measurement(&self, x: usize) -> &Povm {
        &self.measurements[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn outcome_counts(&self) -> Vec<usize> {
        self.measurements.iter().map(Povm::num_outcomes).collect()
    }

    /// Rejects assemblages with a vanishing input probability.
    pub fn require_positive_weights(&self) -> Result<()> {
        match self.weights.iter().position(|&p| p <= 0.0) {
            Some(x) => Err(Error::ZeroWeight { setting: x }),
            None => Ok(()),
        }
    }

    /// Same measurements with new weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::with_dim(self.dim, self.measurements.clone(), weights)
    }

    /// Sub-assemblage on the settings in `subset`, weights renormalized.
    pub fn select(&self, subset: &[usize]) -> Result<Self> {
        self.check_indices(subset)?;
        let total: f64 = subset.iter().map(|&x| self.weights[x]).sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("selected settings carry zero weight".into()));
        }
        Self::with_dim(
            self.dim,
            subset.iter().map(|&x| self.measurements[x].clone()).collect(),
            subset.iter().map(|&x| self.weights[x] / total).collect(),
        )
    }

    /// Reorders settings: output setting `i` is input setting `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let mut seen = order.to_vec();
        seen.sort_unstable();
        if seen != (0..self.len()).collect::<Vec<_>>() {
            return Err(Error::ShapeMismatch(format!("{order:?} is not a permutation of the settings")));
        }
        Ok(Self {
            dim: self.dim,
            measurements: order.iter().map(|&x| self.measurements[x].clone()).collect(),
            weights: order.iter().map(|&x| self.weights[x]).collect(),
        })
    }

    fn check_indices(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::ShapeMismatch("empty subset".into()));
        }
        if let Some(&x) = subset.iter().find(|&&x| x >= self.len()) {
            return Err(Error::OutOfRange(format!("setting {x} of {}", self.len())));
        }
        let mut s = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.len() != subset.len() {
            return Err(Error::ShapeMismatch("repeated setting in subset".into()));
        }
        Ok(())
    }

    /// `a ⧺ b` with weights `(mix·p_a, (1−mix)·p_b)`.
    pub fn concat(a: &Self, b: &Self, mix: f64) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
        }
        if b.is_empty() {
            return Ok(a.clone());
        }
        if a.is_empty() {
            return Ok(b.clone());
        }
        if !(mix > 0.0 && mix < 1.0) {
            return Err(Error::OutOfRange(format!("mix = {mix} not in (0, 1)")));
        }
        let weights = a.weights.iter().map(|p| mix * p).chain(b.weights.iter().map(|p| (1.0 - mix) * p)).collect();
        let measurements = a.measurements.iter().chain(&b.measurements).cloned().collect();
        Self::with_dim(a.dim, measurements, weights)
    }

    /// Concatenation with `mix = m_a/(m_a + m_b)`.
    pub fn concat_uniform(a: &Self, b: &Self) -> Result<Self> {
        let mix = a.len() as f64 / (a.len() + b.len()).max(1) as f64;
        Self::concat(a, b, mix)
    }

    /// Appends one measurement with the uniform re-weighting.
    pub fn push(&self, m: Povm) -> Result<Self> {
        let single = Self::with_dim(self.dim, vec![m], vec![1.0])?;
        Self::concat_uniform(self, &single)
    }

    /// Duplicates setting `x` into `copies[x]` equal-weight copies.
    pub fn split(&self, copies: &[usize]) -> Result<Self> {
        if copies.len() != self.len() || copies.contains(&0) {
            return Err(Error::ShapeMismatch("need copies ≥ 1 for every setting".into()));
        }
        let fractions: Vec<Vec<f64>> = copies.iter().map(|&c| vec![1.0 / c as f64; c]).collect();
        self.split_with(&fractions)
    }

    /// Duplicates setting `x` once per entry of `fractions[x]`, the copy
    /// receiving weight `p(x)·fraction`.
    pub fn split_with(&self, fractions: &[Vec<f64>]) -> Result<Self> {
        if fractions.len() != self.len() {
            return Err(Error::ShapeMismatch("one fraction list per setting".into()));
        }
        let mut ms = Vec::new();
        let mut ws = Vec::new();
        for (x, f) in fractions.iter().enumerate() {
            if f.is_empty() {
                return Err(Error::ShapeMismatch(format!("setting {x} split into zero copies")));
            }
            check_distribution(f, "split fractions")?;
            for &fr in f {
                ms.push(self.measurements[x].clone());
                ws.push(self.weights[x] * fr);
            }
        }
        Self::with_dim(self.dim, ms, ws)
    }

    /// `M'_{b|y} = Σ_x p(x|y) Σ_a q(b|y,x,a) M_{a|x}` with weights `q(y)`.
    pub fn simulate(&self, map: &SimulationMap) -> Result<Self> {
        map.check_against(self)?;
        let d = self.dim;
        let mut out = Vec::with_capacity(map.num_outputs());
        for y in 0..map.num_outputs() {
            let nb = map.output_outcomes(y);
            let mut effects = vec![Hermitian::zeros(d); nb];
            for (x, m) in self.measurements.iter().enumerate() {
                let pxy = map.mix[y][x];
                if pxy == 0.0 {
                    continue;
                }
                for (a, e) in m.effects().iter().enumerate() {
                    for (b, eff) in effects.iter_mut().enumerate() {
                        let w = pxy * map.relabel[y][x][a][b];
                        if w != 0.0 {
                            *eff = &*eff + &e.scale(w);
                        }
                    }
                }
            }
            out.push(Povm::new(effects)?);
        }
        Self::with_dim(d, out, map.input_weights.clone())
    }

    /// White noise of visibility `eta` on every effect.
    pub fn depolarize(&self, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let measurements = self.measurements.iter().map(|m| m.depolarize(eta)).collect::<Result<_>>()?;
        Ok(Self { dim: self.dim, measurements, weights: self.weights.clone() })
    }

    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        Self {
            dim: self.dim,
            measurements: self.measurements.iter().map(|m| m.conjugate_by(u)).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Replaces the measurements at `subset` (in order) by `replacement`,
    /// keeping weights.
    pub fn replace(&self, subset: &[usize], replacement: &[Povm]) -> Result<Self> {
        self.check_indices(subset)?;
        if replacement.len() != subset.len() {
            return Err(Error::ShapeMismatch("replacement count differs from subset size".into()));
        }
        let mut ms = self.measurements.clone();
        for (&x, m) in subset.iter().zip(replacement) {
            if m.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: m.dim() });
            }
            ms[x] = m.clone();
        }
        Ok(Self { dim: self.dim, measurements: ms, weights: self.weights.clone() })
    }

    /// Largest entry-wise effect deviation, `∞` on shape mismatch.
    pub fn max_deviation(&self, other: &Self) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.measurements.iter().zip(&other.measurements).map(|(a, b)| a.max_deviation(b)).fold(0.0, f64::max)
    }
}

/// Jointly measurable assemblage `M_{a|x} = Σ_λ v(a|x,λ) G_λ` with uniform
/// weights.
pub fn parent_povm_simulation(parent: &Povm, strategies: &DeterministicStrategySet) -> Result<WeightedAssemblage> {
    if parent.num_outcomes() != strategies.len() {
        return Err(Error::ShapeMismatch(format!(
            "parent has {} outcomes but there are {} strategies",
            parent.num_outcomes(),
            strategies.len()
        )));
    }
    let d = parent.dim();
    let ms = strategies
        .outcome_counts()
        .iter()
        .enumerate()
        .map(|(x, &o)| {
            let effects =
                (0..o).map(|a| sum(d, strategies.with_outcome(x, a).map(|l| parent.effect(l)))).collect();
            Povm::from_effects_unchecked(effects)
        })
        .collect();
    WeightedAssemblage::uniform(ms)
}

/// Classical simulation: mixing `p(x|y)`, relabeling `q(b|y,x,a)` and the
/// output input-distribution `q(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMap {
    /// `mix[y][x] = p(x|y)`.
    pub mix: Vec<Vec<f64>>,
    /// `relabel[y][x][a][b] = q(b|y,x,a)`.
    pub relabel: Vec<Vec<Vec<Vec<f64>>>>,
    /// `q(y)`.
    pub input_weights: Vec<f64>,
}

impl SimulationMap {
    pub fn num_outputs(&self) -> usize {
        self.mix.len()
    }

    pub fn output_outcomes(&self, y: usize) -> usize {
        self.relabel[y].first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    /// Shape, stochasticity and `p(x) = Σ_y q(y) p(x|y)`.
    pub fn check_against(&self, a: &WeightedAssemblage) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSimulation(msg));
        let ny = self.mix.len();
        if self.relabel.len() != ny || self.input_weights.len() != ny || ny == 0 {
            return bad("inconsistent number of output settings".into());
        }
        check_distribution(&self.input_weights, "q(y)").map_err(|e| Error::InvalidSimulation(e.to_string()))?;
        let counts = a.outcome_counts();
        for y in 0..ny {
            if self.mix[y].len() != a.len() || self.relabel[y].len() != a.len() {
                return bad(format!("output setting {y} does not cover every input setting"));
            }
            check_distribution(&self.mix[y], "p(·|y)").map_err(|e| Error::InvalidSimulation(e.to_string()))?;
            let nb = self.output_outcomes(y);
            if nb == 0 {
                return bad(format!("output setting {y} has no outcomes"));
            }
            for (x, &o) in counts.iter().enumerate() {
                if self.relabel[y][x].len() != o {
                    return bad(format!("relabeling for (y={y}, x={x}) has wrong outcome count"));
                }
                for q in &self.relabel[y][x] {
                    if q.len() != nb {
                        return bad(format!("output setting {y} has ragged outcome count"));
                    }
                    check_distribution(q, "q(·|y,x,a)").map_err(|e| Error::InvalidSimulation(e.to_string()))?;
                }
            }
        }
        for x in 0..a.len() {
            let px: f64 = (0..ny).map(|y| self.input_weights[y] * self.mix[y][x]).sum();
            if (px - a.weights()[x]).abs() > POVM_TOL {
                return bad(format!("p({x}) = {} but Σ_y q(y)p({x}|y) = {px}", a.weights()[x]));
            }
        }
        Ok(())
    }

    fn identity_relabel(counts: &[usize], x: usize) -> Vec<Vec<f64>> {
        (0..counts[x])
            .map(|a| {
                let mut r = vec![0.0; counts[x]];
                r[a] = 1.0;
                r
            })
            .collect()
    }

    /// Map that reproduces `a` itself.
    pub fn identity(a: &WeightedAssemblage) -> Self {
        let counts = a.outcome_counts();
        let m = a.len();
        let mix = (0..m).map(|y| (0..m).map(|x| if x == y { 1.0 } else { 0.0 }).collect()).collect();
        let relabel = (0..m)
            .map(|y| {
                (0..m)
                    .map(|x| {
                        if x == y {
                            Self::identity_relabel(&counts, x)
                        } else {
                            vec![vec![1.0 / counts[y] as f64; counts[y]]; counts[x]]
                        }
                    })
                    .collect()
            })
            .collect();
        Self { mix, relabel, input_weights: a.weights().to_vec() }
    }

    /// Map realizing [`WeightedAssemblage::split`].
    pub fn splitting(a: &WeightedAssemblage, copies: &[usize]) -> Result<Self> {
        if copies.len() != a.len() || copies.contains(&0) {
            return Err(Error::ShapeMismatch("need copies ≥ 1 for every setting".into()));
        }
        let base = Self::identity(a);
        let mut out = Self { mix: vec![], relabel: vec![], input_weights: vec![] };
        for (x, &c) in copies.iter().enumerate() {
            for _ in 0..c {
                out.mix.push(base.mix[x].clone());
                out.relabel.push(base.relabel[x].clone());
                out.input_weights.push(a.weights()[x] / c as f64);
            }
        }
        Ok(out)
    }

    /// Every outcome relabeled to a single one.
    pub fn merge_all(a: &WeightedAssemblage) -> Self {
        let counts = a.outcome_counts();
        let m = a.len();
        let mut s = Self::identity(a);
        s.relabel = (0..m).map(|_| counts.iter().map(|&o| vec![vec![1.0]; o]).collect()).collect();
        s
    }

    /// Random map with `outputs` settings of `outcomes` outcomes each: joint
    /// `J(x,y) = p(x)K(y|x)` for random stochastic `K`, random relabelings.
    pub fn random(a: &WeightedAssemblage, outputs: usize, outcomes: usize, rng: &mut impl Rng) -> Self {
        let m = a.len();
        let counts = a.outcome_counts();
        let k: Vec<Vec<f64>> = (0..m).map(|_| random_simplex(outputs, rng)).collect();
        let input_weights: Vec<f64> = (0..outputs).map(|y| (0..m).map(|x| a.weights()[x] * k[x][y]).sum()).collect();
        let mix = (0..outputs)
            .map(|y| (0..m).map(|x| a.weights()[x] * k[x][y] / input_weights[y]).collect())
            .collect();
        let relabel = (0..outputs)
            .map(|_| (0..m).map(|x| (0..counts[x]).map(|_| random_simplex(outcomes, rng)).collect()).collect())
            .collect();
        Self { mix, relabel, input_weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_assemblage, random_povm};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli_basis(k: usize) -> Povm {
        let p = &crate::linalg::paulis()[k];
        let id = Hermitian::identity(2);
        Povm::new(vec![(&id + p).scale(0.5), (&id - p).scale(0.5)]).unwrap()
    }

    fn single(p: Povm) -> WeightedAssemblage {
        WeightedAssemblage::uniform(vec![p]).unwrap()
    }

    #[test]
    fn povm_validation() {
        assert!(Povm::new(vec![Hermitian::identity(2).scale(0.5)]).is_err());
        assert!(Povm::new(vec![Hermitian::diag(&[1.5, 0.]), Hermitian::diag(&[-0.5, 1.])]).is_err());
        assert!(Povm::new(vec![]).is_err());
        assert_eq!(Povm::computational(3).num_outcomes(), 3);
    }

    #[test]
    fn concat_examples() {
        let m12 = WeightedAssemblage::uniform(vec![pauli_basis(0), pauli_basis(2)]).unwrap();
        let m123 = WeightedAssemblage::concat_uniform(&m12, &single(pauli_basis(1))).unwrap();
        assert_eq!(m123.len(), 3);
        for &w in m123.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = WeightedAssemblage::concat(&m12, &single(pauli_basis(1)), 2.0 / 3.0).unwrap();
        assert!(m.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(WeightedAssemblage::concat(&m12, &WeightedAssemblage::empty(2), 0.5).unwrap(), m12);
        assert!(WeightedAssemblage::concat(&m12, &single(Povm::trivial(3)), 0.5).is_err());
    }

    #[test]
    fn split_examples() {
        let m = WeightedAssemblage::uniform(vec![pauli_basis(0), pauli_basis(2), pauli_basis(1)]).unwrap();
        let s = m.split(&[2, 2, 2]).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.weights().iter().all(|w| (w - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(s.measurement(1), m.measurement(0));
        assert_eq!(m.split(&[1, 1, 1]).unwrap(), m);
        let u = m.split_with(&[vec![0.25, 0.75], vec![1.0], vec![0.5, 0.5]]).unwrap();
        assert!((u.weights()[0] + u.weights()[1] - 1.0 / 3.0).abs() < 1e-15);
        let via_map = m.simulate(&SimulationMap::splitting(&m, &[2, 2, 2]).unwrap()).unwrap();
        assert!(via_map.max_deviation(&s) < 1e-15);
        assert_eq!(via_map.weights(), s.weights());
    }

    #[test]
    fn simulate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_assemblage(3, 3, 3, false, &mut rng);
        let same = m.simulate(&SimulationMap::identity(&m)).unwrap();
        assert!(same.max_deviation(&m) < 1e-14);
        let merged = m.simulate(&SimulationMap::merge_all(&m)).unwrap();
        for p in merged.measurements() {
            assert!(p.max_deviation(&Povm::trivial(3)) < 1e-13);
        }
        let mut bad = SimulationMap::identity(&m);
        bad.input_weights = vec![0.5, 0.25, 0.25];
        assert!(matches!(m.simulate(&bad), Err(Error::InvalidSimulation(_))));
    }

    #[test]
    fn depolarize_examples() {
        let m = WeightedAssemblage::uniform(vec![pauli_basis(0), pauli_basis(2)]).unwrap();
        assert_eq!(m.depolarize(1.0).unwrap(), m);
        let z = m.depolarize(0.0).unwrap();
        for p in z.measurements() {
            for e in p.effects() {
                assert!((e - &Hermitian::identity(2).scale(0.5)).max_abs_entry() < 1e-15);
            }
        }
        assert!(m.depolarize(1.1).is_err());
    }

    #[test]
    fn parent_simulation_examples() {
        let s = DeterministicStrategySet::new(&[2, 2]).unwrap();
        // G_λ supported only on the "copy" strategies (0,0) and (1,1).
        let parent = Povm::new(vec![
            Hermitian::diag(&[1., 0.]),
            Hermitian::zeros(2),
            Hermitian::zeros(2),
            Hermitian::diag(&[0., 1.]),
        ])
        .unwrap();
        let a = parent_povm_simulation(&parent, &s).unwrap();
        assert_eq!(a.measurement(0), &Povm::computational(2));
        assert_eq!(a.measurement(1), &Povm::computational(2));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_povm(2, 4, &mut rng);
        let a = parent_povm_simulation(&g, &s).unwrap();
        for p in a.measurements() {
            Povm::new(p.effects().to_vec()).unwrap();
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_assemblage(3, 2, 3, false, &mut rng).reweighted(vec![0.3, 0.7]).unwrap();
        let back = WeightedAssemblage::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let no_w = r#"{"dim":2,"measurements":[{"effects":[{"re":[[1,0],[0,0]],"im":[[0,0],[0,0]]},
            {"re":[[0,0],[0,1]],"im":[[0,0],[0,0]]}]}]}"#;
        assert_eq!(WeightedAssemblage::from_json(no_w).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn zero_weight_is_rejected() {
        let m = WeightedAssemblage::new(vec![pauli_basis(0), pauli_basis(2)], vec![1.0, 0.0]).unwrap();
        assert!(matches!(m.require_positive_weights(), Err(Error::ZeroWeight { setting: 1 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn operations_preserve_validity(seed in any::<u64>(), eta in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_assemblage(2, 3, 3, false, &mut rng);
            let map = SimulationMap::random(&m, 2, 2, &mut rng);
            let outs = [
                m.depolarize(eta).unwrap(),
                m.simulate(&map).unwrap(),
                m.split(&[1, 2, 3]).unwrap(),
                m.select(&[2, 0]).unwrap(),
            ];
            for o in outs {
                for p in o.measurements() {
                    prop_assert!(Povm::new(p.effects().to_vec()).is_ok());
                }
                prop_assert!((o.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn depolarizing_composes(seed in any::<u64>(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_assemblage(3, 2, 3, true, &mut rng);
            let twice = m.depolarize(a).unwrap().depolarize(b).unwrap();
            let once = m.depolarize(a * b).unwrap();
            prop_assert!(twice.max_deviation(&once) < 1e-14);
        }
    }
}
