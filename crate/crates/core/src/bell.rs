//! Steering and Bell-nonlocality analogs: consistent steering distance,
//! consistent trace distance of behaviors, their splitting bounds, and
//! averaged CHSH values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assemblage::WeightedAssemblage;
use crate::conic::{HermExpr, HermVar, LinExpr, ProgramBuilder, SolutionView, Var};
use crate::error::{Error, Result};
use crate::incompat::{clamp_value, parent_effects, solve_checked, Diagnostics, IncompatOptions};
use crate::linalg::{
    bloch_operator, paulis, partial_trace_first_general, partial_trace_second_general, sum, trace_norm, ComplexMatrix, Hermitian,
};
use crate::random::random_bloch;
use crate::strategy::DeterministicStrategySet;
use crate::structures::subsets;

/// Tolerance for positivity and consistency of assemblages and behaviors.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// `(4√2 + 2)/3`, the largest quantum value of the averaged CHSH functional.
pub const AVG_CHSH_QUANTUM_BOUND: f64 = (4.0 * std::f64::consts::SQRT_2 + 2.0) / 3.0;

/// `10/3`, the no-signaling value of the averaged CHSH functional.
pub const AVG_CHSH_NS_BOUND: f64 = 10.0 / 3.0;

/// Settings-indexed objects that support the splitting bounds: selection,
/// replacement, weighted concatenation and a distance to the free set.
pub trait SettingResource: Sized + Clone {
    fn num_settings(&self) -> usize;
    fn setting_weights(&self) -> Vec<f64>;
    /// Sub-object on `subset`, weights renormalized.
    fn select_settings(&self, subset: &[usize]) -> Result<Self>;
    /// Replaces the settings in `subset` by those of `with`, keeping weights.
    fn replace_settings(&self, subset: &[usize], with: &Self) -> Result<Self>;
    /// Concatenation, part `i` scaled by total weight `w_i`.
    fn concat_settings(parts: &[(Self, f64)]) -> Result<Self>;
    /// Quantifier value and the closest free object.
    fn distance_to_free(&self, opts: &IncompatOptions) -> Result<(f64, Self)>;
}

/// `Σ_C w_C R(σ_C) ≤ R(σ) ≤ Σ_C w_C R(σ_C) + R(τ)` over the `(m−1)`-subsets
/// `C`, `τ = ⧺_C σ_C^#`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSandwich {
    pub value: f64,
    pub subsets: Vec<Vec<usize>>,
    pub subset_values: Vec<f64>,
    pub subset_weights: Vec<f64>,
    pub average: f64,
    pub concat_value: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
}

pub fn resource_sandwich<R: SettingResource>(r: &R, opts: &IncompatOptions) -> Result<ResourceSandwich> {
    let k = r.num_settings();
    if k < 2 {
        return Err(Error::ShapeMismatch("the splitting sandwich needs at least two settings".into()));
    }
    let weights = r.setting_weights();
    let value = r.distance_to_free(opts)?.0;
    let subs = subsets(k, k - 1);
    let mut subset_values = Vec::with_capacity(subs.len());
    let mut subset_weights = Vec::with_capacity(subs.len());
    let mut parts = Vec::with_capacity(subs.len());
    for c in &subs {
        let w = c.iter().map(|&x| weights[x]).sum::<f64>() / (k - 1) as f64;
        let (v, closest) = r.select_settings(c)?.distance_to_free(opts)?;
        subset_values.push(v);
        subset_weights.push(w);
        parts.push((closest, w));
    }
    let concat_value = R::concat_settings(&parts)?.distance_to_free(opts)?.0;
    let average: f64 = subset_values.iter().zip(&subset_weights).map(|(v, w)| v * w).sum();
    Ok(ResourceSandwich {
        value,
        subsets: subs,
        subset_values,
        subset_weights,
        average,
        concat_value,
        lower_slack: value - average,
        upper_slack: average + concat_value - value,
    })
}

/// `p(C) R(σ_C) ≤ R(σ) ≤ p(C) R(σ_C) + R(σ^{#C})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSubsetBound {
    pub subset: Vec<usize>,
    pub value: f64,
    pub subset_value: f64,
    pub subset_weight: f64,
    pub replaced_value: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
}

pub fn resource_subset_bound<R: SettingResource>(r: &R, subset: &[usize], opts: &IncompatOptions) -> Result<ResourceSubsetBound> {
    if subset.is_empty() || subset.len() >= r.num_settings() || subset.iter().any(|&x| x >= r.num_settings()) {
        return Err(Error::ShapeMismatch("subset must be non-empty and proper".into()));
    }
    let value = r.distance_to_free(opts)?.0;
    let (subset_value, closest) = r.select_settings(subset)?.distance_to_free(opts)?;
    let replaced_value = r.replace_settings(subset, &closest)?.distance_to_free(opts)?.0;
    let subset_weight: f64 = subset.iter().map(|&x| r.setting_weights()[x]).sum();
    let lower = subset_weight * subset_value;
    Ok(ResourceSubsetBound {
        subset: subset.to_vec(),
        value,
        subset_value,
        subset_weight,
        replaced_value,
        lower_slack: value - lower,
        upper_slack: lower + replaced_value - value,
    })
}

fn check_weights(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len || weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("expected {len} nonnegative weights summing to one")));
    }
    Ok(())
}

/// Conditional states `σ_{a|x}` on Bob's side with setting weights `p(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringAssemblage {
    sigma: Vec<Vec<Hermitian>>,
    weights: Vec<f64>,
    rho_b: Hermitian,
}

impl SteeringAssemblage {
    pub fn new(sigma: Vec<Vec<Hermitian>>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, sigma.len())?;
        let first = sigma.first().and_then(|s| s.first()).ok_or_else(|| Error::InvalidState("empty assemblage".into()))?;
        let d = first.dim();
        let rho_b = sum(d, &sigma[0]);
        for (x, sx) in sigma.iter().enumerate() {
            for s in sx {
                if s.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
                }
                if !s.is_psd(CONSISTENCY_TOL) {
                    return Err(Error::InvalidState(format!("σ[·|{x}] is not positive semidefinite")));
                }
            }
            if (&sum(d, sx) - &rho_b).max_abs_entry() > CONSISTENCY_TOL {
                return Err(Error::InvalidState(format!("setting {x} has a different reduced state")));
            }
        }
        Ok(Self { sigma, weights, rho_b })
    }

    pub fn uniform(sigma: Vec<Vec<Hermitian>>) -> Result<Self> {
        let m = sigma.len();
        Self::new(sigma, vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.rho_b.dim()
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[Vec<Hermitian>] {
        &self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rho_b(&self) -> &Hermitian {
        &self.rho_b
    }

    pub fn outcome_counts(&self) -> Vec<usize> {
        self.sigma.iter().map(Vec::len).collect()
    }

    /// `(1/2) Σ_{a,x} p(x) ‖σ_{a|x} − τ_{a|x}‖₁`.
    pub fn distance(&self, other: &SteeringAssemblage) -> Result<f64> {
        if self.outcome_counts() != other.outcome_counts() || self.dim() != other.dim() {
            return Err(Error::ShapeMismatch("steering assemblages differ in shape".into()));
        }
        Ok(self
            .sigma
            .iter()
            .zip(&other.sigma)
            .zip(&self.weights)
            .map(|((s, t), p)| 0.5 * p * s.iter().zip(t).map(|(a, b)| trace_norm(&(a - b))).sum::<f64>())
            .sum())
    }
}

impl SettingResource for SteeringAssemblage {
    fn num_settings(&self) -> usize {
        self.len()
    }

    fn setting_weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn select_settings(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() || subset.iter().any(|&x| x >= self.len()) {
            return Err(Error::OutOfRange("subset index".into()));
        }
        let total: f64 = subset.iter().map(|&x| self.weights[x]).sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("subset has zero total weight".into()));
        }
        Self::new(subset.iter().map(|&x| self.sigma[x].clone()).collect(), subset.iter().map(|&x| self.weights[x] / total).collect())
    }

    fn replace_settings(&self, subset: &[usize], with: &Self) -> Result<Self> {
        if with.len() != subset.len() {
            return Err(Error::ShapeMismatch("replacement has a different number of settings".into()));
        }
        let mut sigma = self.sigma.clone();
        for (i, &x) in subset.iter().enumerate() {
            sigma[x] = with.sigma[i].clone();
        }
        Self::new(sigma, self.weights.clone())
    }

    fn concat_settings(parts: &[(Self, f64)]) -> Result<Self> {
        let mut sigma = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in parts {
            sigma.extend(p.sigma.iter().cloned());
            weights.extend(p.weights.iter().map(|q| q * w));
        }
        Self::new(sigma, weights)
    }

    fn distance_to_free(&self, opts: &IncompatOptions) -> Result<(f64, Self)> {
        let r = steering_distance_with(self, opts)?;
        Ok((r.value, r.closest))
    }
}

/// `σ_{a|x} = Tr_A[(M_{a|x} ⊗ 𝟙) ρ]`, Alice's system first.
pub fn steer_from_state(state: &Hermitian, m: &WeightedAssemblage) -> Result<SteeringAssemblage> {
    let da = m.dim();
    let n = state.dim();
    if da == 0 || n % da != 0 {
        return Err(Error::DimensionMismatch { expected: da, got: n });
    }
    check_state(state)?;
    let db = n / da;
    let id_b = Hermitian::identity(db);
    let sigma = m
        .measurements()
        .iter()
        .map(|p| {
            p.effects()
                .iter()
                .map(|e| {
                    let prod: ComplexMatrix = e.kron(&id_b).matrix() * state.matrix();
                    let red = partial_trace_first_general(&prod, da)?;
                    Ok(Hermitian::from_hermitian_unchecked(red))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    SteeringAssemblage::new(sigma, m.weights().to_vec())
}

/// Values within the solver's gap tolerance below zero are treated as zero.
fn clamp_to_gap(v: f64, opts: &IncompatOptions) -> Result<f64> {
    clamp_value(if v < 0.0 && v >= -opts.solver.gap { 0.0 } else { v })
}

fn check_state(state: &Hermitian) -> Result<()> {
    if (state.trace() - 1.0).abs() > CONSISTENCY_TOL || !state.is_psd(CONSISTENCY_TOL) {
        return Err(Error::InvalidState("state must be positive semidefinite with unit trace".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub value: f64,
    /// Closest consistent unsteerable assemblage `τ`.
    pub closest: SteeringAssemblage,
    /// Hidden states `σ_λ`, indexed by deterministic strategy.
    pub hidden_states: Vec<Hermitian>,
    pub diagnostics: Diagnostics,
}

pub fn steering_distance(sa: &SteeringAssemblage) -> Result<SteeringReport> {
    steering_distance_with(sa, &IncompatOptions::default())
}

/// Minimizes `(1/2) Σ p(x) Tr(P + Q)` over `σ − τ = P − Q`, `P, Q ⪰ 0`,
/// `τ_{a|x} = Σ_λ v(a|x,λ) σ_λ`, `σ_λ ⪰ 0`, `Σ_λ σ_λ = ρ_B`.
pub fn steering_distance_with(sa: &SteeringAssemblage, opts: &IncompatOptions) -> Result<SteeringReport> {
    let d = sa.dim();
    let strategies = DeterministicStrategySet::with_cap(&sa.outcome_counts(), opts.strategy_cap)?;
    let mut b = ProgramBuilder::new();
    let hidden: Vec<HermVar> = (0..strategies.len()).map(|l| b.psd_var(d, &format!("sigma[{l}]")).0).collect();
    let mut total = HermExpr::zero(d);
    for &h in &hidden {
        total.add_var(h, 1.0);
    }
    total.add_const(sa.rho_b(), -1.0);
    b.add_eq_herm(&total, "sum sigma = rho_B");
    let tau = parent_effects(d, &strategies, &hidden);
    let mut objective = LinExpr::default();
    for (x, sx) in sa.sigma().iter().enumerate() {
        let px = sa.weights()[x];
        for (a, s) in sx.iter().enumerate() {
            let (p, _) = b.psd_var(d, &format!("P[{x},{a}]"));
            // Q = P − σ + τ.
            let mut q = HermExpr::var(p);
            q.add_const(s, -1.0);
            q.add_expr(&tau[x][a], 1.0);
            b.add_psd(&q, &format!("Q[{x},{a}]"));
            objective.add_expr(&HermExpr::var(p).trace(), 0.5 * px);
            objective.add_expr(&q.trace(), 0.5 * px);
        }
    }
    b.minimize(&objective);
    let prog = b.build();
    let r = solve_checked(&prog, &opts.solver, "steering distance")?;
    let value = clamp_to_gap(r.primal_objective, opts)?;
    let hidden_states: Vec<Hermitian> = hidden.iter().map(|&h| r.herm_value(h).psd_part()).collect();
    let closest = hidden_to_assemblage(sa, &strategies, &hidden_states)?;
    Ok(SteeringReport { value, closest, hidden_states, diagnostics: Diagnostics::new(&prog, &r) })
}

/// `τ_{a|x} = Σ_λ v(a|x,λ) σ_λ` after rescaling the hidden states to sum to `ρ_B`.
fn hidden_to_assemblage(
    like: &SteeringAssemblage,
    strategies: &DeterministicStrategySet,
    hidden: &[Hermitian],
) -> Result<SteeringAssemblage> {
    let d = like.dim();
    let total = sum(d, hidden);
    // S^{-1/2} on the support of S, then ρ_B^{1/2} S^{-1/2} σ_λ S^{-1/2} ρ_B^{1/2}.
    let isqrt = total.map_spectrum(|v| if v > 1e-14 { 1.0 / v.sqrt() } else { 0.0 });
    let rsqrt = like.rho_b().map_spectrum(|v| v.max(0.0).sqrt());
    let fixed: Vec<Hermitian> = hidden.iter().map(|h| h.sandwich(&isqrt).sandwich(&rsqrt)).collect();
    let sigma = like
        .outcome_counts()
        .iter()
        .enumerate()
        .map(|(x, &o)| (0..o).map(|a| sum(d, strategies.with_outcome(x, a).map(|l| &fixed[l]))).collect())
        .collect();
    Ok(SteeringAssemblage { sigma, weights: like.weights().to_vec(), rho_b: like.rho_b().clone() })
}

/// Probabilities `q(a,b|x,y)` indexed `[x][y][a][b]`; settings are uniformly
/// weighted on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BehaviorRepr", into = "BehaviorRepr")]
pub struct BehaviorTable {
    probs: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Serialize, Deserialize)]
struct BehaviorRepr {
    probs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<BehaviorRepr> for BehaviorTable {
    type Error = Error;
    fn try_from(r: BehaviorRepr) -> Result<Self> {
        BehaviorTable::new(r.probs)
    }
}

impl From<BehaviorTable> for BehaviorRepr {
    fn from(b: BehaviorTable) -> Self {
        BehaviorRepr { probs: b.probs }
    }
}

impl BehaviorTable {
    pub fn new(probs: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidBehavior(msg));
        let ma = probs.len();
        let mb = probs.first().map_or(0, Vec::len);
        if ma == 0 || mb == 0 {
            return bad("empty behavior".into());
        }
        let oa: Vec<usize> = probs.iter().map(|px| px[0].len()).collect();
        let ob: Vec<usize> = probs[0].iter().map(|pxy| pxy.first().map_or(0, Vec::len)).collect();
        for (x, px) in probs.iter().enumerate() {
            if px.len() != mb {
                return bad(format!("setting {x} has {} Bob settings", px.len()));
            }
            for (y, pxy) in px.iter().enumerate() {
                if pxy.len() != oa[x] || pxy.iter().any(|row| row.len() != ob[y]) || ob[y] == 0 || oa[x] == 0 {
                    return bad(format!("inconsistent outcome counts at ({x},{y})"));
                }
                let total: f64 = pxy.iter().flatten().sum();
                if pxy.iter().flatten().any(|&v| !(v >= -CONSISTENCY_TOL)) || (total - 1.0).abs() > CONSISTENCY_TOL {
                    return bad(format!("q(·,·|{x},{y}) is not a probability distribution"));
                }
            }
        }
        let t = Self { probs };
        for x in 0..ma {
            let base = t.marginal_a(x, 0);
            for y in 1..mb {
                if t.marginal_a(x, y).iter().zip(&base).any(|(u, v)| (u - v).abs() > CONSISTENCY_TOL) {
                    return bad(format!("Alice's marginal for setting {x} depends on y"));
                }
            }
        }
        for y in 0..mb {
            let base = t.marginal_b(0, y);
            for x in 1..ma {
                if t.marginal_b(x, y).iter().zip(&base).any(|(u, v)| (u - v).abs() > CONSISTENCY_TOL) {
                    return bad(format!("Bob's marginal for setting {y} depends on x"));
                }
            }
        }
        Ok(t)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: BehaviorRepr = serde_json::from_str(s)?;
        Self::new(repr.probs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn settings_a(&self) -> usize {
        self.probs.len()
    }

    pub fn settings_b(&self) -> usize {
        self.probs[0].len()
    }

    pub fn outcomes_a(&self) -> Vec<usize> {
        self.probs.iter().map(|px| px[0].len()).collect()
    }

    pub fn outcomes_b(&self) -> Vec<usize> {
        self.probs[0].iter().map(|pxy| pxy[0].len()).collect()
    }

    pub fn prob(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.probs[x][y][a][b]
    }

    pub fn probs(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.probs
    }

    pub fn marginal_a(&self, x: usize, y: usize) -> Vec<f64> {
        self.probs[x][y].iter().map(|row| row.iter().sum()).collect()
    }

    pub fn marginal_b(&self, x: usize, y: usize) -> Vec<f64> {
        let ob = self.probs[x][y][0].len();
        (0..ob).map(|b| self.probs[x][y].iter().map(|row| row[b]).sum()).collect()
    }

    /// `⟨A_x B_y⟩` for two-outcome settings with outcome 0 ↦ +1.
    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        let mut e = 0.0;
        for (a, row) in self.probs[x][y].iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                let sa = if a == 0 { 1.0 } else { -1.0 };
                let sb = if b == 0 { 1.0 } else { -1.0 };
                e += sa * sb * p;
            }
        }
        e
    }

    /// `(1/2) Σ (1/(m_A m_B)) |q − t|`.
    pub fn distance(&self, other: &BehaviorTable) -> Result<f64> {
        if self.outcomes_a() != other.outcomes_a() || self.outcomes_b() != other.outcomes_b() || self.settings_b() != other.settings_b() {
            return Err(Error::ShapeMismatch("behaviors differ in shape".into()));
        }
        let w = 1.0 / (self.settings_a() * self.settings_b()) as f64;
        let l1: f64 = self
            .probs
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .zip(other.probs.iter().flatten().flatten().flatten())
            .map(|(p, q)| (p - q).abs())
            .sum();
        Ok(0.5 * w * l1)
    }
}

impl SettingResource for BehaviorTable {
    fn num_settings(&self) -> usize {
        self.settings_a()
    }

    fn setting_weights(&self) -> Vec<f64> {
        vec![1.0 / self.settings_a() as f64; self.settings_a()]
    }

    fn select_settings(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() || subset.iter().any(|&x| x >= self.settings_a()) {
            return Err(Error::OutOfRange("subset index".into()));
        }
        Self::new(subset.iter().map(|&x| self.probs[x].clone()).collect())
    }

    fn replace_settings(&self, subset: &[usize], with: &Self) -> Result<Self> {
        if with.settings_a() != subset.len() {
            return Err(Error::ShapeMismatch("replacement has a different number of settings".into()));
        }
        let mut probs = self.probs.clone();
        for (i, &x) in subset.iter().enumerate() {
            probs[x] = with.probs[i].clone();
        }
        Self::new(probs)
    }

    fn concat_settings(parts: &[(Self, f64)]) -> Result<Self> {
        let total: usize = parts.iter().map(|(p, _)| p.settings_a()).sum();
        let uniform = parts.iter().all(|(p, w)| (w / p.settings_a() as f64 - 1.0 / total as f64).abs() < 1e-12);
        if !uniform {
            return Err(Error::InvalidWeights("behaviors only support uniform setting weights".into()));
        }
        Self::new(parts.iter().flat_map(|(p, _)| p.probs.iter().cloned()).collect())
    }

    fn distance_to_free(&self, opts: &IncompatOptions) -> Result<(f64, Self)> {
        let r = nonlocality_distance_with(self, opts)?;
        Ok((r.value, r.closest))
    }
}

/// `q(a,b|x,y) = Tr[ρ (M_{a|x} ⊗ N_{b|y})]`.
pub fn behavior_from_state(state: &Hermitian, alice: &WeightedAssemblage, bob: &WeightedAssemblage) -> Result<BehaviorTable> {
    let n = alice.dim() * bob.dim();
    if state.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: state.dim() });
    }
    check_state(state)?;
    let probs = alice
        .measurements()
        .iter()
        .map(|ma| {
            bob.measurements()
                .iter()
                .map(|nb| {
                    ma.effects()
                        .iter()
                        .map(|e| nb.effects().iter().map(|f| state.inner(&e.kron(f)).max(0.0)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    BehaviorTable::new(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalityReport {
    pub value: f64,
    /// Closest consistent local behavior `t`.
    pub closest: BehaviorTable,
    /// Weights `π(λ_A, λ_B)`, Alice's strategy the slower index.
    pub hidden_weights: Vec<f64>,
    pub diagnostics: Diagnostics,
}

pub fn nonlocality_distance(q: &BehaviorTable) -> Result<NonlocalityReport> {
    nonlocality_distance_with(q, &IncompatOptions::default())
}

/// LP over `π ≥ 0` on product deterministic strategies with `t(a|x) = q(a|x)`
/// and `t(b|y) = q(b|y)`; `|q − t|` through slack variables.
pub fn nonlocality_distance_with(q: &BehaviorTable, opts: &IncompatOptions) -> Result<NonlocalityReport> {
    let (oa, ob) = (q.outcomes_a(), q.outcomes_b());
    let sa = DeterministicStrategySet::with_cap(&oa, opts.strategy_cap)?;
    let sb = DeterministicStrategySet::with_cap(&ob, opts.strategy_cap)?;
    let count = sa.len() as u128 * sb.len() as u128;
    if count > opts.strategy_cap as u128 {
        return Err(Error::CapExceeded { count, cap: opts.strategy_cap as u128 });
    }
    let mut b = ProgramBuilder::new();
    let pi: Vec<Var> = (0..sa.len() * sb.len()).map(|i| b.nonneg_var(&format!("pi[{i}]"))).collect();
    let idx = |la: usize, lb: usize| la * sb.len() + lb;
    let mut norm = LinExpr::constant(-1.0);
    for &p in &pi {
        norm.add_var(p, 1.0);
    }
    let mut eqs = vec![norm];
    for (x, &o) in oa.iter().enumerate() {
        for a in 0..o - 1 {
            let mut e = LinExpr::constant(-q.marginal_a(x, 0)[a]);
            for la in sa.with_outcome(x, a) {
                for lb in 0..sb.len() {
                    e.add_var(pi[idx(la, lb)], 1.0);
                }
            }
            eqs.push(e);
        }
    }
    for (y, &o) in ob.iter().enumerate() {
        for bb in 0..o - 1 {
            let mut e = LinExpr::constant(-q.marginal_b(0, y)[bb]);
            for lb in sb.with_outcome(y, bb) {
                for la in 0..sa.len() {
                    e.add_var(pi[idx(la, lb)], 1.0);
                }
            }
            eqs.push(e);
        }
    }
    b.add_eq(&eqs, "consistency");
    let w = 1.0 / (q.settings_a() * q.settings_b()) as f64;
    let mut objective = LinExpr::default();
    for x in 0..q.settings_a() {
        for y in 0..q.settings_b() {
            let mut rows = vec![vec![LinExpr::default(); ob[y]]; oa[x]];
            for la in 0..sa.len() {
                for lb in 0..sb.len() {
                    rows[sa.outcome(la, x)][sb.outcome(lb, y)].add_var(pi[idx(la, lb)], 1.0);
                }
            }
            for (a, row) in rows.iter().enumerate() {
                for (bb, t) in row.iter().enumerate() {
                    let e = b.nonneg_var(&format!("e[{a},{bb}|{x},{y}]"));
                    // e ≥ q − t and e ≥ t − q.
                    let mut up = LinExpr::var(e);
                    up.add_expr(t, 1.0);
                    up.constant -= q.prob(a, bb, x, y);
                    let mut down = LinExpr::var(e);
                    down.add_expr(t, -1.0);
                    down.constant += q.prob(a, bb, x, y);
                    b.add_nonneg(&[up, down], "slack");
                    objective.add_var(e, 0.5 * w);
                }
            }
        }
    }
    b.minimize(&objective);
    let prog = b.build();
    let r = solve_checked(&prog, &opts.solver, "nonlocality distance")?;
    let value = clamp_to_gap(r.primal_objective, opts)?;
    let mut hidden_weights: Vec<f64> = pi.iter().map(|&p| r.value(p).max(0.0)).collect();
    let s: f64 = hidden_weights.iter().sum();
    hidden_weights.iter_mut().for_each(|v| *v /= s);
    let closest = local_behavior(&sa, &sb, &hidden_weights, q.settings_a(), q.settings_b())?;
    Ok(NonlocalityReport { value, closest, hidden_weights, diagnostics: Diagnostics::new(&prog, &r) })
}

fn local_behavior(
    sa: &DeterministicStrategySet,
    sb: &DeterministicStrategySet,
    pi: &[f64],
    ma: usize,
    mb: usize,
) -> Result<BehaviorTable> {
    let (oa, ob) = (sa.outcome_counts(), sb.outcome_counts());
    let mut probs: Vec<Vec<Vec<Vec<f64>>>> =
        (0..ma).map(|x| (0..mb).map(|y| vec![vec![0.0; ob[y]]; oa[x]]).collect()).collect();
    for la in 0..sa.len() {
        for lb in 0..sb.len() {
            let p = pi[la * sb.len() + lb];
            if p == 0.0 {
                continue;
            }
            for (x, px) in probs.iter_mut().enumerate() {
                for (y, pxy) in px.iter_mut().enumerate() {
                    pxy[sa.outcome(la, x)][sb.outcome(lb, y)] += p;
                }
            }
        }
    }
    BehaviorTable::new(probs)
}

/// `⟨A ⊗ B⟩_ρ`.
pub fn correlator(state: &Hermitian, a: &Hermitian, b: &Hermitian) -> f64 {
    state.inner(&a.kron(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshValues {
    pub chsh_12: f64,
    pub chsh_13: f64,
    pub chsh_23: f64,
    pub average: f64,
}

/// `CHSH_(i,j) = ⟨A_i B_1⟩ + ⟨A_i B_2⟩ + ⟨A_j B_1⟩ − ⟨A_j B_2⟩` from a
/// correlator table `e[x][y]`.
pub fn chsh_from_correlators(e: &[[f64; 2]; 3]) -> ChshValues {
    let pair = |i: usize, j: usize| e[i][0] + e[i][1] + e[j][0] - e[j][1];
    let (chsh_12, chsh_13, chsh_23) = (pair(0, 1), pair(0, 2), pair(1, 2));
    ChshValues { chsh_12, chsh_13, chsh_23, average: (chsh_12 + chsh_13 + chsh_23) / 3.0 }
}

fn check_observable(o: &Hermitian) -> Result<()> {
    let ev = o.eigenvalues();
    if ev.iter().any(|&v| v.abs() > 1.0 + CONSISTENCY_TOL) {
        return Err(Error::OutOfRange("observable eigenvalues must lie in [-1, 1]".into()));
    }
    Ok(())
}

pub fn chsh_values(state: &Hermitian, alice: &[Hermitian; 3], bob: &[Hermitian; 2]) -> Result<ChshValues> {
    for o in alice.iter().chain(bob) {
        check_observable(o)?;
    }
    if state.dim() != alice[0].dim() * bob[0].dim() {
        return Err(Error::DimensionMismatch { expected: alice[0].dim() * bob[0].dim(), got: state.dim() });
    }
    check_state(state)?;
    let mut e = [[0.0; 2]; 3];
    for (x, a) in alice.iter().enumerate() {
        for (y, b) in bob.iter().enumerate() {
            e[x][y] = correlator(state, a, b);
        }
    }
    Ok(chsh_from_correlators(&e))
}

/// Coefficients `c[x][y]` of `Σ c_xy ⟨A_x B_y⟩` for the averaged functional.
pub fn avg_chsh_coefficients() -> Vec<[f64; 2]> {
    vec![[2.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 0.0], [2.0 / 3.0, -2.0 / 3.0]]
}

/// Coefficients of `CHSH_(1,2)` with two settings per side.
pub fn chsh_pair_coefficients() -> Vec<[f64; 2]> {
    vec![[1.0, 1.0], [1.0, -1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshOptimum {
    pub value: f64,
    /// Pure two-qubit state as a density operator.
    pub state: Hermitian,
    pub alice: Vec<Hermitian>,
    pub bob: Vec<Hermitian>,
    /// Coefficients `(c, v)` of each observable `c𝟙 + v·σ`.
    pub alice_bloch: Vec<(f64, [f64; 3])>,
    pub bob_bloch: Vec<(f64, [f64; 3])>,
    /// Best value of each restart.
    pub restart_values: Vec<f64>,
}

const SEESAW_MAX_ROUNDS: usize = 2000;
const SEESAW_TOL: f64 = 1e-14;

fn sign_operator(k: &Hermitian) -> Hermitian {
    k.map_spectrum(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

fn bloch_coords(o: &Hermitian) -> (f64, [f64; 3]) {
    let [x, y, z] = paulis();
    (o.trace() / 2.0, [o.inner(&x) / 2.0, o.inner(&y) / 2.0, o.inner(&z) / 2.0])
}

fn bell_operator(c: &[[f64; 2]], alice: &[Hermitian], bob: &[Hermitian]) -> Hermitian {
    let mut op = Hermitian::zeros(4);
    for (x, cx) in c.iter().enumerate() {
        for (y, &cxy) in cx.iter().enumerate() {
            if cxy != 0.0 {
                op = &op + &alice[x].kron(&bob[y]).scale(cxy);
            }
        }
    }
    op
}

fn top_state(op: &Hermitian) -> Hermitian {
    let e = op.eigh();
    let v = e.vectors.column(e.values.len() - 1).into_owned();
    Hermitian::outer(&v)
}

/// Seesaw maximization of `Σ c_xy ⟨A_x ⊗ B_y⟩` over two-qubit states and
/// dichotomic observables; restart `r` uses seed `seed + r`.
pub fn seesaw_maximize(c: &[[f64; 2]], seed: u64, restarts: usize) -> Result<ChshOptimum> {
    if restarts == 0 || c.is_empty() {
        return Err(Error::OutOfRange("need at least one restart and one setting".into()));
    }
    let mut best: Option<ChshOptimum> = None;
    let mut restart_values = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let mut alice: Vec<Hermitian> = c.iter().map(|_| bloch_operator(0.0, random_bloch(&mut rng))).collect();
        let mut bob: Vec<Hermitian> = (0..2).map(|_| bloch_operator(0.0, random_bloch(&mut rng))).collect();
        let mut state = top_state(&bell_operator(c, &alice, &bob));
        let mut value = state.inner(&bell_operator(c, &alice, &bob));
        for _ in 0..SEESAW_MAX_ROUNDS {
            for (x, cx) in c.iter().enumerate() {
                let mut k = Hermitian::zeros(2);
                for (y, &cxy) in cx.iter().enumerate() {
                    let prod: ComplexMatrix = Hermitian::identity(2).kron(&bob[y]).matrix() * state.matrix();
                    k = &k + &Hermitian::from_hermitian_unchecked(partial_trace_second_general(&prod, 2)?).scale(cxy);
                }
                alice[x] = sign_operator(&k);
            }
            for y in 0..2 {
                let mut k = Hermitian::zeros(2);
                for (x, cx) in c.iter().enumerate() {
                    let prod: ComplexMatrix = alice[x].kron(&Hermitian::identity(2)).matrix() * state.matrix();
                    k = &k + &Hermitian::from_hermitian_unchecked(partial_trace_first_general(&prod, 2)?).scale(cx[y]);
                }
                bob[y] = sign_operator(&k);
            }
            let op = bell_operator(c, &alice, &bob);
            state = top_state(&op);
            let next = state.inner(&op);
            let done = (next - value).abs() <= SEESAW_TOL;
            value = next;
            if done {
                break;
            }
        }
        restart_values.push(value);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(ChshOptimum {
                value,
                alice_bloch: alice.iter().map(bloch_coords).collect(),
                bob_bloch: bob.iter().map(bloch_coords).collect(),
                state: state.clone(),
                alice: alice.clone(),
                bob: bob.clone(),
                restart_values: Vec::new(),
            });
        }
    }
    let mut out = best.expect("at least one restart");
    out.restart_values = restart_values;
    Ok(out)
}

/// Best averaged CHSH value found by [`seesaw_maximize`].
pub fn maximize_avg_chsh(seed: u64, restarts: usize) -> Result<ChshOptimum> {
    seesaw_maximize(&avg_chsh_coefficients(), seed, restarts)
}

/// Best single `CHSH_(1,2)` value found by [`seesaw_maximize`].
pub fn maximize_chsh_pair(seed: u64, restarts: usize) -> Result<ChshOptimum> {
    seesaw_maximize(&chsh_pair_coefficients(), seed, restarts)
}

/// Largest `Σ c_xy ⟨A_x B_y⟩` over no-signaling behaviors with two outcomes
/// per setting.
pub fn no_signaling_value(c: &[[f64; 2]], opts: &IncompatOptions) -> Result<f64> {
    let ma = c.len();
    let mb = 2;
    let mut b = ProgramBuilder::new();
    // p[x][y][a][b]
    let p: Vec<Vec<Vec<Vec<Var>>>> = (0..ma)
        .map(|x| {
            (0..mb)
                .map(|y| (0..2).map(|a| (0..2).map(|bb| b.nonneg_var(&format!("p[{a}{bb}|{x}{y}]"))).collect()).collect())
                .collect()
        })
        .collect();
    let mut eqs = Vec::new();
    for px in &p {
        for pxy in px {
            let mut e = LinExpr::constant(-1.0);
            for v in pxy.iter().flatten() {
                e.add_var(*v, 1.0);
            }
            eqs.push(e);
        }
    }
    for px in &p {
        for y in 1..mb {
            let mut e = LinExpr::default();
            e.add_var(px[y][0][0], 1.0).add_var(px[y][0][1], 1.0);
            e.add_var(px[0][0][0], -1.0).add_var(px[0][0][1], -1.0);
            eqs.push(e);
        }
    }
    for y in 0..mb {
        for px in &p[1..] {
            let mut e = LinExpr::default();
            e.add_var(px[y][0][0], 1.0).add_var(px[y][1][0], 1.0);
            e.add_var(p[0][y][0][0], -1.0).add_var(p[0][y][1][0], -1.0);
            eqs.push(e);
        }
    }
    b.add_eq(&eqs, "normalization and no-signaling");
    let mut objective = LinExpr::default();
    for (x, cx) in c.iter().enumerate() {
        for (y, &cxy) in cx.iter().enumerate() {
            for a in 0..2 {
                for bb in 0..2 {
                    let sign = if a == bb { 1.0 } else { -1.0 };
                    objective.add_var(p[x][y][a][bb], -cxy * sign);
                }
            }
        }
    }
    b.minimize(&objective);
    let prog = b.build();
    let r = solve_checked(&prog, &opts.solver, "no-signaling value")?;
    Ok(-r.primal_objective)
}

/// Random two-qubit state with a random number of nonzero eigenvalues.
pub fn random_two_qubit_state(rng: &mut impl Rng) -> Hermitian {
    let rank = rng.random_range(1..=4);
    crate::random::random_state(4, rank, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incompat::incompatibility;
    use crate::linalg::{c64, ComplexVector};
    use crate::mub::build_mub;
    use approx::assert_abs_diff_eq;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn phi_plus() -> Hermitian {
        let v = ComplexVector::from_vec(vec![c64(1.0 / S2, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0 / S2, 0.0)]);
        Hermitian::outer(&v)
    }

    fn pauli_pair() -> WeightedAssemblage {
        build_mub(2, 2).unwrap().assemblage()
    }

    #[test]
    fn maximally_mixed_state_is_unsteerable() {
        let sa = steer_from_state(&Hermitian::identity(4).scale(0.25), &pauli_pair()).unwrap();
        for sx in sa.sigma() {
            for s in sx {
                assert!((s - &Hermitian::identity(2).scale(0.25)).max_abs_entry() < 1e-15);
            }
        }
        assert!(steering_distance(&sa).unwrap().value < 1e-7);
    }

    #[test]
    fn product_state_is_unsteerable() {
        let rho = bloch_operator(0.5, [0.3, 0.0, 0.2]).kron(&bloch_operator(0.5, [0.0, 0.4, -0.1]));
        let sa = steer_from_state(&rho, &pauli_pair()).unwrap();
        assert!(steering_distance(&sa).unwrap().value < 1e-7);
    }

    #[test]
    fn maximally_entangled_steering_matches_incompatibility() {
        let sa = steer_from_state(&phi_plus(), &pauli_pair()).unwrap();
        let r = steering_distance(&sa).unwrap();
        assert!(r.value > 1e-3);
        assert_abs_diff_eq!(r.value, 0.5 * (1.0 - 1.0 / S2), epsilon = 1e-7);
        assert!(r.value <= incompatibility(&pauli_pair()).unwrap().value + 1e-7);
        assert_abs_diff_eq!(sa.distance(&r.closest).unwrap(), r.value, epsilon = 1e-6);
    }

    #[test]
    fn tsirelson_behavior_distance() {
        let z = bloch_operator(0.0, [0.0, 0.0, 1.0]);
        let x = bloch_operator(0.0, [1.0, 0.0, 0.0]);
        let alice = WeightedAssemblage::uniform(vec![
            crate::assemblage::Povm::from_basis(&z.eigh().vectors).unwrap(),
            crate::assemblage::Povm::from_basis(&x.eigh().vectors).unwrap(),
        ])
        .unwrap();
        let u = |v: [f64; 3]| crate::assemblage::Povm::from_basis(&bloch_operator(0.0, v).eigh().vectors).unwrap();
        let bob = WeightedAssemblage::uniform(vec![u([1.0 / S2, 0.0, 1.0 / S2]), u([-1.0 / S2, 0.0, 1.0 / S2])]).unwrap();
        let q = behavior_from_state(&phi_plus(), &alice, &bob).unwrap();
        let chsh: f64 = (q.correlator(0, 0) + q.correlator(0, 1) + q.correlator(1, 0) - q.correlator(1, 1)).abs();
        assert_abs_diff_eq!(chsh, 2.0 * S2, epsilon = 1e-12);
        let r = nonlocality_distance(&q).unwrap();
        // Unbiased marginals: (1/8) Σ|E − F| ≥ (CHSH − 2)/8, attained by
        // shrinking the correlators.
        assert_abs_diff_eq!(r.value, (2.0 * S2 - 2.0) / 8.0, epsilon = 1e-7);
        assert_abs_diff_eq!(q.distance(&r.closest).unwrap(), r.value, epsilon = 1e-6);
    }

    #[test]
    fn local_behavior_has_zero_distance() {
        let sa = DeterministicStrategySet::new(&[2, 2, 2]).unwrap();
        let sb = DeterministicStrategySet::new(&[2, 2]).unwrap();
        let mut pi = vec![0.0; sa.len() * sb.len()];
        pi[5] = 0.4;
        pi[17] = 0.6;
        let q = local_behavior(&sa, &sb, &pi, 3, 2).unwrap();
        assert!(nonlocality_distance(&q).unwrap().value < 1e-7);
    }

    #[test]
    fn behavior_json_roundtrip_and_validation() {
        let q = behavior_from_state(&phi_plus(), &pauli_pair(), &pauli_pair()).unwrap();
        assert_eq!(BehaviorTable::from_json(&q.to_json().unwrap()).unwrap(), q);
        let signaling = r#"{"probs": [[[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]]}"#;
        assert!(matches!(BehaviorTable::from_json(signaling), Err(Error::InvalidBehavior(_))));
    }

    #[test]
    fn chsh_rewrite_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let rho = random_two_qubit_state(&mut rng);
            let a: [Hermitian; 3] = std::array::from_fn(|_| bloch_operator(0.0, random_bloch(&mut rng)));
            let b: [Hermitian; 2] = std::array::from_fn(|_| bloch_operator(0.0, random_bloch(&mut rng)));
            let v = chsh_values(&rho, &a, &b).unwrap();
            let e = |x: usize, y: usize| correlator(&rho, &a[x], &b[y]);
            let rewritten = (2.0 * (e(0, 0) + e(0, 1) + e(2, 0) - e(2, 1)) + 2.0 * e(1, 0)) / 3.0;
            assert_abs_diff_eq!(v.average, rewritten, epsilon = 1e-10);
        }
    }

    #[test]
    fn chsh_deterministic_is_local() {
        let id = Hermitian::identity(2);
        let m = id.scale(-1.0);
        let rho = Hermitian::identity(4).scale(0.25);
        let v = chsh_values(&rho, &[id.clone(), m.clone(), id.clone()], &[id.clone(), m]).unwrap();
        for c in [v.chsh_12, v.chsh_13, v.chsh_23] {
            assert!(c <= 2.0 + 1e-12);
        }
        let bad = bloch_operator(0.0, [2.0, 0.0, 0.0]);
        assert!(chsh_values(&rho, &[bad, id.clone(), id.clone()], &[id.clone(), id]).is_err());
    }

    #[test]
    fn seesaw_reaches_quantum_bounds() {
        let avg = maximize_avg_chsh(1, 20).unwrap();
        assert!(avg.value <= AVG_CHSH_QUANTUM_BOUND + 1e-6);
        assert!(avg.value >= AVG_CHSH_QUANTUM_BOUND - 1e-4, "{}", avg.value);
        let pair = maximize_chsh_pair(1, 5).unwrap();
        assert_abs_diff_eq!(pair.value, 2.0 * S2, epsilon = 1e-6);
    }

    #[test]
    fn no_signaling_values() {
        let opts = IncompatOptions::default();
        assert_abs_diff_eq!(no_signaling_value(&avg_chsh_coefficients(), &opts).unwrap(), AVG_CHSH_NS_BOUND, epsilon = 1e-7);
        assert_abs_diff_eq!(no_signaling_value(&chsh_pair_coefficients(), &opts).unwrap(), 4.0, epsilon = 1e-7);
    }

    #[test]
    fn steering_sandwich_for_pauli_triple() {
        let sa = steer_from_state(&phi_plus(), &build_mub(2, 3).unwrap().assemblage()).unwrap();
        let opts = IncompatOptions::default();
        let s = resource_sandwich(&sa, &opts).unwrap();
        assert!(s.lower_slack >= -1e-7 && s.upper_slack >= -1e-7, "{s:?}");
        let b = resource_subset_bound(&sa, &[0, 1], &opts).unwrap();
        assert!(b.lower_slack >= -1e-7 && b.upper_slack >= -1e-7, "{b:?}");
    }
}
