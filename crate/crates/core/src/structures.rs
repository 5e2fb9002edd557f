//! Incompatibility gain, subset bounds and the genuine/pairwise/hollow
//! decomposition for three measurements.

use serde::{Deserialize, Serialize};

use crate::assemblage::{Povm, WeightedAssemblage};
use crate::conic::{HermExpr, LinExpr, ProgramBuilder, SolutionView};
use crate::error::{Error, Result};
use crate::incompat::{
    add_distance, add_parent, clamp_value, diamond_distance_with, incompatibility_with, solve_checked, IncompatOptions,
};
use crate::linalg::Hermitian;
use crate::strategy::DeterministicStrategySet;

/// Largest strategy count for which `I(G)` of the parent assemblage is
/// computed.
pub const PARENT_STRATEGY_LIMIT: usize = 1024;

/// Largest strategy count of `N` accepted by [`split_sandwich`].
pub const SANDWICH_STRATEGY_LIMIT: usize = 4096;

/// Tolerance used to decide whether a bound hypothesis holds or a
/// decomposition is tight.
pub const TIGHTNESS_TOL: f64 = 1e-6;

/// All `k`-element subsets of `0..m` in lexicographic order.
pub fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Splitting sandwich over all `(m−1)`-subsets `C`:
/// `Σ_C w_C I(M_C) ≤ I(M) ≤ Σ_C w_C I(M_C) + I(N)` with
/// `w_C = Σ_{x∈C} p(x)/(m−1)` and `N = ⧺_C M_C^#`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSandwich {
    pub value: f64,
    pub subsets: Vec<Vec<usize>>,
    pub subset_values: Vec<f64>,
    pub subset_weights: Vec<f64>,
    /// `Σ_C w_C I(M_C)`.
    pub average: f64,
    pub n: WeightedAssemblage,
    pub n_value: f64,
    /// Parent POVMs of the `M_C^#`, concatenated with weights `w_C`.
    pub g: WeightedAssemblage,
    /// `I(G)`, skipped when it needs more than [`PARENT_STRATEGY_LIMIT`]
    /// strategies.
    pub g_value: Option<f64>,
    /// `I(M) − average`.
    pub lower_slack: f64,
    /// `average + I(N) − I(M)`.
    pub upper_slack: f64,
}

pub fn split_sandwich(m: &WeightedAssemblage, opts: &IncompatOptions) -> Result<SplitSandwich> {
    let k = m.len();
    if k < 2 {
        return Err(Error::ShapeMismatch("the splitting sandwich needs at least two settings".into()));
    }
    m.require_positive_weights()?;
    let subs = subsets(k, k - 1);
    let n_count: u128 = subs
        .iter()
        .flat_map(|c| c.iter().map(|&x| m.outcome_counts()[x] as u128))
        .try_fold(1u128, |acc, o| acc.checked_mul(o))
        .unwrap_or(u128::MAX);
    if n_count > SANDWICH_STRATEGY_LIMIT as u128 {
        return Err(Error::CapExceeded { count: n_count, cap: SANDWICH_STRATEGY_LIMIT as u128 });
    }
    let value = incompatibility_with(m, opts)?.value;
    let mut subset_values = Vec::with_capacity(subs.len());
    let mut subset_weights = Vec::with_capacity(subs.len());
    let mut n_parts: Vec<(WeightedAssemblage, f64)> = Vec::with_capacity(subs.len());
    let mut g_parts: Vec<Povm> = Vec::with_capacity(subs.len());
    for c in &subs {
        let w: f64 = c.iter().map(|&x| m.weights()[x]).sum::<f64>() / (k - 1) as f64;
        let rep = incompatibility_with(&m.select(c)?, opts)?;
        subset_values.push(rep.value);
        subset_weights.push(w);
        n_parts.push((rep.closest, w));
        g_parts.push(rep.parent);
    }
    let n = weighted_concat(m.dim(), &n_parts)?;
    let n_value = incompatibility_with(&n, opts)?.value;
    let g = WeightedAssemblage::new(g_parts, subset_weights.clone())?;
    let g_count: u128 = g.outcome_counts().iter().map(|&o| o as u128).product();
    let g_value = if g_count <= PARENT_STRATEGY_LIMIT as u128 {
        Some(incompatibility_with(&g, opts)?.value)
    } else {
        log::info!("skipping I(G): {g_count} strategies");
        None
    };
    let average: f64 = subset_values.iter().zip(&subset_weights).map(|(v, w)| v * w).sum();
    Ok(SplitSandwich {
        value,
        subsets: subs,
        subset_values,
        subset_weights,
        average,
        lower_slack: value - average,
        upper_slack: average + n_value - value,
        n,
        n_value,
        g,
        g_value,
    })
}

/// Concatenates parts, part `i` scaled by total weight `w_i`.
fn weighted_concat(dim: usize, parts: &[(WeightedAssemblage, f64)]) -> Result<WeightedAssemblage> {
    let mut ms = Vec::new();
    let mut ws = Vec::new();
    for (a, w) in parts {
        ms.extend(a.measurements().iter().cloned());
        ws.extend(a.weights().iter().map(|p| p * w));
    }
    if let Some(p) = ms.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
    }
    WeightedAssemblage::new(ms, ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    /// `I_after − I_before`.
    pub delta: f64,
    pub before: f64,
    pub after: f64,
    /// `I(base) ≥ I(M_C)` for every other `C` of the same size.
    pub hypothesis_holds: bool,
    pub sandwich: SplitSandwich,
    /// `I(N) − ΔI`.
    pub gain_slack: f64,
    /// `I(G) − I(N)`.
    pub parent_slack: Option<f64>,
}

impl GainReport {
    pub fn n_value(&self) -> f64 {
        self.sandwich.n_value
    }

    pub fn g_value(&self) -> Option<f64> {
        self.sandwich.g_value
    }
}

/// Gain from appending `added` to `base` with uniform re-weighting.
pub fn incompatibility_gain(base: &WeightedAssemblage, added: &Povm) -> Result<GainReport> {
    incompatibility_gain_with(base, added, &IncompatOptions::default())
}

pub fn incompatibility_gain_with(base: &WeightedAssemblage, added: &Povm, opts: &IncompatOptions) -> Result<GainReport> {
    let combined = base.push(added.clone())?;
    gain_of_last(&combined, opts)
}

/// Gain of the last setting of `combined` over the others.
fn gain_of_last(combined: &WeightedAssemblage, opts: &IncompatOptions) -> Result<GainReport> {
    let k = combined.len();
    let sandwich = split_sandwich(combined, opts)?;
    let base_subset: Vec<usize> = (0..k - 1).collect();
    let base_idx = sandwich.subsets.iter().position(|c| *c == base_subset).expect("lexicographic first subset");
    let before = sandwich.subset_values[base_idx];
    let after = sandwich.value;
    let others = sandwich.subset_values.iter().enumerate().filter(|&(i, _)| i != base_idx).map(|(_, v)| *v);
    let hypothesis_holds = others.fold(f64::NEG_INFINITY, f64::max) <= before + TIGHTNESS_TOL;
    let delta = after - before;
    Ok(GainReport {
        delta,
        before,
        after,
        hypothesis_holds,
        gain_slack: sandwich.n_value - delta,
        parent_slack: sandwich.g_value.map(|g| g - sandwich.n_value),
        sandwich,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedGainReport {
    /// Settings of the input in the order used: the most incompatible pair
    /// first.
    pub order: Vec<usize>,
    pub gain: GainReport,
}

/// `ΔI ≤ I(N) ≤ I(G)` for three measurements, after reordering so that the
/// first pair is the most incompatible one.
pub fn check_ordered_gain(m3: &WeightedAssemblage) -> Result<OrderedGainReport> {
    check_ordered_gain_with(m3, &IncompatOptions::default())
}

pub fn check_ordered_gain_with(m3: &WeightedAssemblage, opts: &IncompatOptions) -> Result<OrderedGainReport> {
    if m3.len() != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 settings, got {}", m3.len())));
    }
    let mut best = (f64::NEG_INFINITY, vec![0, 1, 2]);
    for (pair, rest) in [([0, 1], 2), ([0, 2], 1), ([1, 2], 0)] {
        let v = incompatibility_with(&m3.select(&pair)?, opts)?.value;
        if v > best.0 + TIGHTNESS_TOL {
            best = (v, vec![pair[0], pair[1], rest]);
        }
    }
    let order = best.1;
    let permuted = m3.permute(&order)?;
    Ok(OrderedGainReport { gain: gain_of_last(&permuted, opts)?, order })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetBound {
    pub subset: Vec<usize>,
    pub value: f64,
    /// `I(M_C)` with weights renormalized within `C`.
    pub subset_value: f64,
    /// `Σ_{x∈C} p(x)`.
    pub subset_weight: f64,
    /// `I(M^{#C})`.
    pub replaced_value: f64,
    /// `I(M) − p(C) I(M_C)`.
    pub lower_slack: f64,
    /// `p(C) I(M_C) + I(M^{#C}) − I(M)`.
    pub upper_slack: f64,
}

/// `p(C) I(M_C) ≤ I(M) ≤ p(C) I(M_C) + I(M^{#C})`.
pub fn subset_bound_with(m: &WeightedAssemblage, subset: &[usize], opts: &IncompatOptions) -> Result<SubsetBound> {
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != subset.len() || subset.is_empty() || subset.len() >= m.len() {
        return Err(Error::ShapeMismatch("subset must be non-empty, proper and without repeats".into()));
    }
    m.require_positive_weights()?;
    let value = incompatibility_with(m, opts)?.value;
    let (replaced, sub_rep) = crate::incompat::closest_jm_subset_with(m, subset, opts)?;
    let replaced_value = incompatibility_with(&replaced, opts)?.value;
    let subset_weight: f64 = subset.iter().map(|&x| m.weights()[x]).sum();
    let lower = subset_weight * sub_rep.value;
    Ok(SubsetBound {
        subset: subset.to_vec(),
        value,
        subset_value: sub_rep.value,
        subset_weight,
        replaced_value,
        lower_slack: value - lower,
        upper_slack: lower + replaced_value - value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetBounds {
    pub bound: SubsetBound,
    /// Average-pair sandwich, for three settings.
    pub sandwich: Option<SplitSandwich>,
}

impl SubsetBounds {
    pub fn min_slack(&self) -> f64 {
        let mut s = self.bound.lower_slack.min(self.bound.upper_slack);
        if let Some(sw) = &self.sandwich {
            s = s.min(sw.lower_slack).min(sw.upper_slack);
        }
        s
    }
}

pub fn check_subset_bounds(m: &WeightedAssemblage, subset: &[usize]) -> Result<SubsetBounds> {
    check_subset_bounds_with(m, subset, &IncompatOptions::default())
}

/// [`subset_bound_with`], plus the average-pair sandwich when `m` has three
/// settings.
pub fn check_subset_bounds_with(m: &WeightedAssemblage, subset: &[usize], opts: &IncompatOptions) -> Result<SubsetBounds> {
    let bound = subset_bound_with(m, subset, opts)?;
    let sandwich = if m.len() == 3 {
        match split_sandwich(m, opts) {
            Ok(s) => Some(s),
            Err(Error::CapExceeded { count, .. }) => {
                log::info!("skipping the average-pair sandwich: {count} strategies");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(SubsetBounds { bound, sandwich })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub total: f64,
    pub genuine: f64,
    pub pairwise: f64,
    pub hollow: f64,
    /// `genuine + pairwise + hollow − total`; never below `−tol` in theory.
    pub slack: f64,
    /// `|slack| ≤` [`TIGHTNESS_TOL`].
    pub tight: bool,
    pub m_conv: WeightedAssemblage,
    pub m_pair: WeightedAssemblage,
    /// Hull weights `w_(1,2), w_(1,3), w_(2,3)` of `m_conv`.
    pub hull_weights: [f64; 3],
}

const PAIRS: [([usize; 2], usize); 3] = [([0, 1], 2), ([0, 2], 1), ([1, 2], 0)];

fn require_three(m: &WeightedAssemblage) -> Result<()> {
    if m.len() != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 settings, got {}", m.len())));
    }
    m.require_positive_weights()
}

/// Distance from `m` to the convex hull of the three sets `JM^(s,t)`.
/// Each hull component is absorbed into subnormalized effects `J̃^(s,t)` with
/// completeness `w_(s,t) 𝟙`.
fn genuine(m: &WeightedAssemblage, opts: &IncompatOptions) -> Result<(f64, WeightedAssemblage, [f64; 3])> {
    let d = m.dim();
    let counts = m.outcome_counts();
    let id = Hermitian::identity(d);
    let mut b = ProgramBuilder::new();
    let w: Vec<_> = PAIRS.iter().map(|_| b.nonneg_var("w")).collect();
    let mut wsum = LinExpr::constant(-1.0);
    for &wi in &w {
        wsum.add_var(wi, 1.0);
    }
    b.add_eq(&[wsum], "sum w = 1");
    let mut f: Vec<Vec<HermExpr>> = counts.iter().map(|&o| vec![HermExpr::zero(d); o]).collect();
    for (k, &(pair, rest)) in PAIRS.iter().enumerate() {
        let mut norm = HermExpr::zero(d);
        norm.add_scalar(w[k], &id);
        let strategies = DeterministicStrategySet::with_cap(&[counts[pair[0]], counts[pair[1]]], opts.strategy_cap)?;
        let parent = add_parent(&mut b, d, &strategies, &norm, &format!("J{k}"));
        for (i, &x) in pair.iter().enumerate() {
            for (a, e) in parent.f[i].iter().enumerate() {
                f[x][a].add_expr(e, 1.0);
            }
        }
        let mut total = HermExpr::zero(d);
        for a in 0..counts[rest] {
            let (e, _) = b.psd_var(d, &format!("J{k} E[{a}]"));
            total.add_var(e, 1.0);
            f[rest][a].add_var(e, 1.0);
        }
        total.add_expr(&norm, -1.0);
        b.add_eq_herm(&total, &format!("J{k} sum E"));
    }
    let terms = add_distance(&mut b, m, &f);
    b.minimize(&terms.objective);
    let prog = b.build();
    let r = solve_checked(&prog, &opts.solver, "genuine incompatibility")?;
    let value = clamp_value(r.primal_objective)?;
    let ms = f
        .iter()
        .map(|fx| Povm::with_tolerance(fx.iter().map(|e| r.expr_value(e)).collect(), 1e-6))
        .collect::<Result<Vec<_>>>()?;
    let weights = [r.value(w[0]), r.value(w[1]), r.value(w[2])];
    Ok((value, m.replace(&[0, 1, 2], &ms)?, weights))
}

/// Closest pairwise-compatible assemblage to `target`: effects of settings 0
/// and 1 come from the parent of pair (0,1); the parents of (0,2) and (1,2)
/// reproduce the shared marginals, the last outcome following from
/// completeness.
fn closest_pairwise(target: &WeightedAssemblage, opts: &IncompatOptions) -> Result<(f64, WeightedAssemblage)> {
    let d = target.dim();
    let counts = target.outcome_counts();
    let id = HermExpr::constant(&Hermitian::identity(d));
    let mut b = ProgramBuilder::new();
    let mk = |p: [usize; 2]| DeterministicStrategySet::with_cap(&[counts[p[0]], counts[p[1]]], opts.strategy_cap);
    let s01 = mk([0, 1])?;
    let p01 = add_parent(&mut b, d, &s01, &id, "P01");
    let s02 = mk([0, 2])?;
    let p02 = add_parent(&mut b, d, &s02, &id, "P02");
    let s12 = mk([1, 2])?;
    let p12 = add_parent(&mut b, d, &s12, &id, "P12");
    let f = vec![p01.f[0].clone(), p01.f[1].clone(), p02.f[1].clone()];
    let mut tie = |lhs: &[HermExpr], rhs: &[HermExpr], label: &str| {
        for (a, (l, r)) in lhs.iter().zip(rhs).enumerate().take(lhs.len() - 1) {
            let mut e = l.clone();
            e.add_expr(r, -1.0);
            b.add_eq_herm(&e, &format!("{label}[{a}]"));
        }
    };
    tie(&p02.f[0], &f[0], "P02 marginal 0");
    tie(&p12.f[0], &f[1], "P12 marginal 1");
    tie(&p12.f[1], &f[2], "P12 marginal 2");
    let terms = add_distance(&mut b, target, &f);
    b.minimize(&terms.objective);
    let prog = b.build();
    let r = solve_checked(&prog, &opts.solver, "pairwise incompatibility")?;
    let value = clamp_value(r.primal_objective)?;
    let ms = f
        .iter()
        .map(|fx| Povm::with_tolerance(fx.iter().map(|e| r.expr_value(e)).collect(), 1e-6))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, target.replace(&[0, 1, 2], &ms)?))
}

/// `I(M) ≤ I_gen + I_pair + I_hol` for three measurements.
pub fn decompose(m3: &WeightedAssemblage) -> Result<DecompositionReport> {
    decompose_with(m3, &IncompatOptions::default())
}

pub fn decompose_with(m3: &WeightedAssemblage, opts: &IncompatOptions) -> Result<DecompositionReport> {
    require_three(m3)?;
    let total = incompatibility_with(m3, opts)?.value;
    let (genuine, m_conv, hull_weights) = genuine(m3, opts)?;
    let (pairwise, m_pair) = closest_pairwise(&m_conv, opts)?;
    let pairwise = pairwise.min(diamond_distance_with(&m_conv, &m_pair, &opts.solver)?);
    let hollow = incompatibility_with(&m_pair, opts)?.value;
    let slack = genuine + pairwise + hollow - total;
    Ok(DecompositionReport {
        total,
        genuine,
        pairwise,
        hollow,
        slack,
        tight: slack.abs() <= TIGHTNESS_TOL,
        m_conv,
        m_pair,
        hull_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mub::build_mub;
    use approx::assert_abs_diff_eq;

    const S2: f64 = std::f64::consts::SQRT_2;
    const S3: f64 = 1.732_050_807_568_877_2;

    fn paulis(m: usize, eta: f64) -> WeightedAssemblage {
        build_mub(2, m).unwrap().noisy(eta).unwrap()
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(4, 3).len(), 4);
    }

    #[test]
    fn pauli_gain_is_constant() {
        for eta in [0.75, 0.9, 1.0] {
            let m = paulis(3, eta);
            let base = m.select(&[0, 1]).unwrap();
            let g = incompatibility_gain(&base, m.measurement(2)).unwrap();
            assert_abs_diff_eq!(g.delta, 0.5 * (1.0 / S2 - 1.0 / S3), epsilon = 1e-6);
            assert!(g.hypothesis_holds);
            assert!(g.gain_slack >= -1e-7 && g.gain_slack < 1e-6, "{}", g.gain_slack);
            assert!(g.parent_slack.unwrap() >= -1e-7);
        }
    }

    #[test]
    fn trivial_added_measurement_does_not_gain() {
        let base = paulis(2, 1.0);
        let g = incompatibility_gain(&base, &Povm::trivial(2)).unwrap();
        assert!(g.delta <= 1e-9);
    }

    #[test]
    fn jointly_measurable_base_gain() {
        let eta = 0.65;
        let m = paulis(3, eta);
        let g = incompatibility_gain(&m.select(&[0, 1]).unwrap(), m.measurement(2)).unwrap();
        assert!(g.before < 1e-7);
        assert_abs_diff_eq!(g.delta, g.after, epsilon = 1e-7);
        assert_abs_diff_eq!(g.delta, g.n_value(), epsilon = 1e-6);
    }

    #[test]
    fn ordered_gain_equal_measurements() {
        let z = paulis(2, 1.0).measurement(1).clone();
        let m = WeightedAssemblage::uniform(vec![z.clone(), z.clone(), z]).unwrap();
        let r = check_ordered_gain(&m).unwrap();
        assert!(r.gain.delta <= 1e-7);
        assert!(r.gain.n_value() <= 1e-7);
    }

    #[test]
    fn ordered_gain_reorders_to_satisfy_hypothesis() {
        // Most incompatible pair is (X, Y) = settings 0 and 2 after noise on Z.
        let fam = build_mub(2, 3).unwrap();
        let ms = vec![
            fam.povms()[0].clone(),
            fam.povms()[1].depolarize(0.6).unwrap(),
            fam.povms()[2].clone(),
        ];
        let r = check_ordered_gain(&WeightedAssemblage::uniform(ms).unwrap()).unwrap();
        assert_eq!(&r.order[..2], &[0, 2]);
        assert!(r.gain.hypothesis_holds);
        assert!(r.gain.gain_slack >= -1e-7);
    }

    #[test]
    fn pauli_subset_bound_is_tight() {
        let b = check_subset_bounds(&paulis(3, 1.0), &[0, 1]).unwrap();
        assert_abs_diff_eq!(b.bound.value, 0.5 * (1.0 - 1.0 / S3), epsilon = 1e-6);
        assert!(b.bound.lower_slack >= -1e-7);
        assert!(b.bound.upper_slack.abs() < 1e-6, "{}", b.bound.upper_slack);
        assert!(b.min_slack() >= -1e-7);
    }

    #[test]
    fn decomposition_of_paulis_is_tight() {
        let r = decompose(&paulis(3, 1.0)).unwrap();
        assert_abs_diff_eq!(r.total, 0.5 * (1.0 - 1.0 / S3), epsilon = 1e-6);
        assert!(r.slack >= -1e-7);
        assert!(r.tight, "{r:?}");
    }

    #[test]
    fn decomposition_of_jm_input_vanishes() {
        let r = decompose(&paulis(3, 0.5)).unwrap();
        for v in [r.total, r.genuine, r.pairwise, r.hollow] {
            assert!(v < 1e-7, "{r:?}");
        }
    }

    #[test]
    fn sandwich_holds_for_four_settings() {
        let m = build_mub(2, 3).unwrap().povms();
        let four = WeightedAssemblage::uniform(vec![
            m[0].depolarize(0.9).unwrap(),
            m[1].clone(),
            m[2].depolarize(0.8).unwrap(),
            m[0].clone(),
        ])
        .unwrap();
        let s = split_sandwich(&four, &IncompatOptions::default()).unwrap();
        assert!(s.lower_slack >= -1e-7 && s.upper_slack >= -1e-7);
    }
}
