//! Diamond-distance incompatibility quantifier, joint measurability and
//! distances between measure-and-prepare channels.
//!
//! For a measurement `M_x` and a candidate `F_x`, the diamond distance of the
//! measure-and-prepare channels has a block-diagonal optimal `Z_x`, so it is
//! computed as `min a_x` over `Y_{a|x} ⪰ 0`, `Y_{a|x} ⪰ M_{a|x} − F_{a|x}`,
//! `a_x 𝟙 ⪰ Σ_a Y_{a|x}`.

use serde::{Deserialize, Serialize};

use crate::assemblage::{Povm, WeightedAssemblage};
use crate::conic::{
    solve, ConicProgram, HermEqHandle, HermExpr, HermVar, LinExpr, ProgramBuilder, PsdHandle, SolutionView,
    SolverResult, SolverStatus, SolverTolerances,
};
use crate::error::{Error, Result};
use crate::linalg::{sum, Hermitian};
pub use crate::strategy::{DeterministicStrategySet, STRATEGY_CAP};

/// Reported values below this are treated as a solver defect.
pub const NEGATIVE_VALUE_TOL: f64 = 1e-9;

/// Gap and residual limits for accepting a solve that stopped without
/// reaching the requested tolerances.
const ACCEPT_GAP: f64 = 1e-7;
const ACCEPT_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncompatOptions {
    pub solver: SolverTolerances,
    pub strategy_cap: u128,
}

impl Default for IncompatOptions {
    fn default() -> Self {
        Self { solver: SolverTolerances::default(), strategy_cap: STRATEGY_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: SolverStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub num_vars: usize,
}

impl Diagnostics {
    pub(crate) fn new(prog: &ConicProgram, r: &SolverResult) -> Self {
        Self {
            status: r.status,
            iterations: r.iterations,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            num_vars: prog.num_vars,
        }
    }
}

/// Solves and accepts an optimal result, or a stalled one that is already
/// within `ACCEPT_GAP`/`ACCEPT_RESIDUAL`.
pub(crate) fn solve_checked(prog: &ConicProgram, tol: &SolverTolerances, what: &str) -> Result<SolverResult> {
    let r = solve(prog, tol)?;
    match r.status {
        SolverStatus::Optimal => Ok(r),
        SolverStatus::MaxIterations | SolverStatus::NumericalFailure
            if r.gap.abs() <= ACCEPT_GAP * r.primal_objective.abs().max(1.0)
                && r.primal_residual <= ACCEPT_RESIDUAL
                && r.dual_residual <= ACCEPT_RESIDUAL =>
        {
            log::warn!("{what}: accepting {:?} iterate with gap {:.2e}", r.status, r.gap);
            Ok(r)
        }
        status => Err(Error::Solver { what: what.into(), status }),
    }
}

/// Clamps a quantifier value to `[0, 1]`, rejecting clearly negative values.
pub(crate) fn clamp_value(v: f64) -> Result<f64> {
    if v < -NEGATIVE_VALUE_TOL {
        return Err(Error::NegativeValue { value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Handles of the diamond-distance part of a program.
#[derive(Debug, Clone)]
pub(crate) struct DistanceTerms {
    pub objective: LinExpr,
    /// Constraint `Y − M + F ⪰ 0` per `(x, a)`.
    pub c: Vec<Vec<PsdHandle>>,
    /// Constraint `a_x 𝟙 − Σ_a Y ⪰ 0` per `x`.
    pub r: Vec<PsdHandle>,
}

/// Adds `Σ_x p(x) D_◇(M_x, F_x)` for affine candidate effects `f[x][a]`.
pub(crate) fn add_distance(b: &mut ProgramBuilder, m: &WeightedAssemblage, f: &[Vec<HermExpr>]) -> DistanceTerms {
    let d = m.dim();
    let id = Hermitian::identity(d);
    let mut objective = LinExpr::default();
    let mut c = Vec::with_capacity(m.len());
    let mut r = Vec::with_capacity(m.len());
    for (x, povm) in m.measurements().iter().enumerate() {
        let ax = b.var();
        let mut bound = HermExpr::zero(d);
        bound.add_scalar(ax, &id);
        let mut cx = Vec::with_capacity(povm.num_outcomes());
        for (a, eff) in povm.effects().iter().enumerate() {
            let (y, _) = b.psd_var(d, &format!("Y[{x},{a}]"));
            let mut e = HermExpr::var(y);
            e.add_const(eff, -1.0);
            e.add_expr(&f[x][a], 1.0);
            cx.push(b.add_psd(&e, &format!("Y - M + F [{x},{a}]")));
            bound.add_var(y, -1.0);
        }
        r.push(b.add_psd(&bound, &format!("a 1 - sum Y [{x}]")));
        objective.add_var(ax, m.weights()[x]);
        c.push(cx);
    }
    DistanceTerms { objective, c, r }
}

/// Parent POVM variables `G_λ ⪰ 0` with `Σ_λ G_λ = norm` and the induced
/// effects `F_{a|x} = Σ_λ v(a|x,λ) G_λ`.
#[derive(Debug, Clone)]
pub(crate) struct ParentBlock {
    pub g: Vec<HermVar>,
    pub completeness: HermEqHandle,
    pub f: Vec<Vec<HermExpr>>,
}

pub(crate) fn add_parent(
    b: &mut ProgramBuilder,
    d: usize,
    strategies: &DeterministicStrategySet,
    norm: &HermExpr,
    label: &str,
) -> ParentBlock {
    let g: Vec<HermVar> = (0..strategies.len()).map(|l| b.psd_var(d, &format!("{label} G[{l}]")).0).collect();
    let mut total = HermExpr::zero(d);
    for &gl in &g {
        total.add_var(gl, 1.0);
    }
    total.add_expr(norm, -1.0);
    let completeness = b.add_eq_herm(&total, &format!("{label} sum G"));
    let f = parent_effects(d, strategies, &g);
    ParentBlock { g, completeness, f }
}

pub(crate) fn parent_effects(d: usize, strategies: &DeterministicStrategySet, g: &[HermVar]) -> Vec<Vec<HermExpr>> {
    strategies
        .outcome_counts()
        .iter()
        .enumerate()
        .map(|(x, &o)| {
            (0..o)
                .map(|a| {
                    let mut e = HermExpr::zero(d);
                    for l in strategies.with_outcome(x, a) {
                        e.add_var(g[l], 1.0);
                    }
                    e
                })
                .collect()
        })
        .collect()
}

/// Projects numerically extracted parent effects onto a valid POVM:
/// PSD parts, then `S^{-1/2} G S^{-1/2}` with `S = Σ G`.
pub(crate) fn clean_parent(gs: &[Hermitian]) -> Povm {
    let d = gs[0].dim();
    let pos: Vec<Hermitian> = gs.iter().map(Hermitian::psd_part).collect();
    let s = sum(d, &pos);
    let isqrt = s.map_spectrum(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    Povm::from_effects_unchecked(pos.iter().map(|g| g.sandwich(&isqrt)).collect())
}

/// Jointly measurable assemblage generated by `parent` with the weights of `like`.
pub(crate) fn simulate_parent(parent: &Povm, strategies: &DeterministicStrategySet, like: &WeightedAssemblage) -> Result<WeightedAssemblage> {
    crate::assemblage::parent_povm_simulation(parent, strategies)?.reweighted(like.weights().to_vec())
}

/// Feasible point of the dual program: `C_{a|x} ⪰ 0`, `ρ_x ⪰ C_{a|x}`,
/// `Tr ρ_x = 1`, `L ⪰ Σ_{a,x} p(x) v(a|x,λ) C_{a|x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub c: Vec<Vec<Hermitian>>,
    pub rho: Vec<Hermitian>,
    pub l: Hermitian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualEvaluation {
    /// `Σ_x p(x) Σ_a Tr[M_{a|x} C_{a|x}] − Tr L`.
    pub objective: f64,
    /// Largest violation of any dual constraint.
    pub violation: f64,
}

impl DualCertificate {
    pub fn evaluate(&self, m: &WeightedAssemblage) -> Result<DualEvaluation> {
        let strategies = DeterministicStrategySet::new(&m.outcome_counts())?;
        if self.c.len() != m.len() || self.rho.len() != m.len() {
            return Err(Error::ShapeMismatch("certificate does not match the assemblage".into()));
        }
        let d = m.dim();
        let mut objective = -self.l.trace();
        let mut violation: f64 = 0.0;
        for (x, povm) in m.measurements().iter().enumerate() {
            if self.c[x].len() != povm.num_outcomes() {
                return Err(Error::ShapeMismatch(format!("certificate outcome count differs at setting {x}")));
            }
            violation = violation.max((self.rho[x].trace() - 1.0).abs());
            for (eff, c) in povm.effects().iter().zip(&self.c[x]) {
                objective += m.weights()[x] * eff.inner(c);
                violation = violation.max(-c.min_eigenvalue());
                violation = violation.max(-(&self.rho[x] - c).min_eigenvalue());
            }
        }
        for l in 0..strategies.len() {
            let s = sum(
                d,
                (0..m.len()).map(|x| self.c[x][strategies.outcome(l, x)].scale(m.weights()[x])).collect::<Vec<_>>().iter(),
            );
            violation = violation.max(-(&self.l - &s).min_eigenvalue());
        }
        Ok(DualEvaluation { objective, violation })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompatReport {
    /// `I_◇`, the primal optimum clamped to `[0, 1]`.
    pub value: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    /// Closest jointly measurable assemblage `M^#`.
    pub closest: WeightedAssemblage,
    /// Parent POVM of `closest`, indexed by deterministic strategy.
    pub parent: Povm,
    pub certificate: DualCertificate,
    /// Dual objective of `certificate` and its constraint violation.
    pub certificate_evaluation: DualEvaluation,
    pub diagnostics: Diagnostics,
}

pub(crate) struct PrimalHandles {
    pub distance: DistanceTerms,
    pub parent: ParentBlock,
}

/// The primal program of `I_◇`.
pub fn primal_program(m: &WeightedAssemblage) -> Result<ConicProgram> {
    let strategies = DeterministicStrategySet::new(&m.outcome_counts())?;
    Ok(build_primal(m, &strategies).0)
}

fn build_primal(m: &WeightedAssemblage, strategies: &DeterministicStrategySet) -> (ConicProgram, PrimalHandles) {
    let d = m.dim();
    let mut b = ProgramBuilder::new();
    let parent = add_parent(&mut b, d, strategies, &HermExpr::constant(&Hermitian::identity(d)), "parent");
    let distance = add_distance(&mut b, m, &parent.f);
    b.minimize(&distance.objective);
    (b.build(), PrimalHandles { distance, parent })
}

pub fn incompatibility(m: &WeightedAssemblage) -> Result<IncompatReport> {
    incompatibility_with(m, &IncompatOptions::default())
}

pub fn incompatibility_with(m: &WeightedAssemblage, opts: &IncompatOptions) -> Result<IncompatReport> {
    m.require_positive_weights()?;
    let strategies = DeterministicStrategySet::with_cap(&m.outcome_counts(), opts.strategy_cap)?;
    let (prog, h) = build_primal(m, &strategies);
    let r = solve_checked(&prog, &opts.solver, "incompatibility")?;
    let value = clamp_value(r.primal_objective)?;

    let gs: Vec<Hermitian> = h.parent.g.iter().map(|&g| r.herm_value(g)).collect();
    let parent = clean_parent(&gs);
    let closest = simulate_parent(&parent, &strategies, m)?;

    let certificate = DualCertificate {
        c: h.distance
            .c
            .iter()
            .enumerate()
            .map(|(x, cx)| cx.iter().map(|&c| r.psd_dual(c).scale(1.0 / m.weights()[x])).collect())
            .collect(),
        rho: h.distance.r.iter().enumerate().map(|(x, &rx)| r.psd_dual(rx).scale(1.0 / m.weights()[x])).collect(),
        l: r.eq_dual(&h.parent.completeness),
    };
    let certificate_evaluation = certificate.evaluate(m)?;
    Ok(IncompatReport {
        value,
        primal_objective: r.primal_objective,
        dual_objective: r.dual_objective,
        gap: r.gap,
        closest,
        parent,
        certificate,
        certificate_evaluation,
        diagnostics: Diagnostics::new(&prog, &r),
    })
}

/// Explicit dual program, written as the minimization of the negated dual
/// objective. Its optimum is `−I_◇`.
pub fn dual_program(m: &WeightedAssemblage) -> Result<ConicProgram> {
    let strategies = DeterministicStrategySet::new(&m.outcome_counts())?;
    let d = m.dim();
    let mut b = ProgramBuilder::new();
    let l = b.herm(d);
    let mut obj = HermExpr::var(l).trace();
    let mut c = Vec::with_capacity(m.len());
    for (x, povm) in m.measurements().iter().enumerate() {
        let (rho, _) = b.psd_var(d, &format!("rho[{x}]"));
        let mut tr = HermExpr::var(rho).trace();
        tr.constant -= 1.0;
        b.add_eq(&[tr], &format!("Tr rho[{x}] = 1"));
        let mut cx = Vec::with_capacity(povm.num_outcomes());
        for (a, eff) in povm.effects().iter().enumerate() {
            let (ca, _) = b.psd_var(d, &format!("C[{x},{a}]"));
            let mut gap = HermExpr::var(rho);
            gap.add_var(ca, -1.0);
            b.add_psd(&gap, &format!("rho - C [{x},{a}]"));
            obj.add_expr(&HermExpr::var(ca).inner(eff), -m.weights()[x]);
            cx.push(ca);
        }
        c.push(cx);
    }
    for lam in 0..strategies.len() {
        let mut e = HermExpr::var(l);
        for (x, cx) in c.iter().enumerate() {
            e.add_var(cx[strategies.outcome(lam, x)], -m.weights()[x]);
        }
        b.add_psd(&e, &format!("L - sum p v C [{lam}]"));
    }
    b.minimize(&obj);
    Ok(b.build())
}

/// Optimum of the explicit dual program.
pub fn incompatibility_dual_value(m: &WeightedAssemblage, tol: &SolverTolerances) -> Result<f64> {
    m.require_positive_weights()?;
    let prog = dual_program(m)?;
    Ok(-solve_checked(&prog, tol, "incompatibility dual")?.primal_objective)
}

/// Joint-measurability verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JmVerdict {
    pub jointly_measurable: bool,
    /// Parent POVM reproducing the effects, when jointly measurable.
    pub parent: Option<Povm>,
    /// `I_◇`, computed only when the feasibility program was inconclusive.
    pub fallback_value: Option<f64>,
}

/// Decision threshold on `I_◇` when the feasibility program is inconclusive.
pub const JM_FALLBACK_TOL: f64 = 1e-7;

pub fn is_jointly_measurable(m: &WeightedAssemblage) -> Result<JmVerdict> {
    is_jointly_measurable_with(m, &IncompatOptions::default())
}

/// Feasibility of `G_λ ⪰ 0`, `Σ G_λ = 𝟙`, `M_{a|x} = Σ_λ v(a|x,λ) G_λ`. The
/// last outcome of each setting is implied by completeness and omitted.
pub fn is_jointly_measurable_with(m: &WeightedAssemblage, opts: &IncompatOptions) -> Result<JmVerdict> {
    let strategies = DeterministicStrategySet::with_cap(&m.outcome_counts(), opts.strategy_cap)?;
    let d = m.dim();
    let mut b = ProgramBuilder::new();
    let parent = add_parent(&mut b, d, &strategies, &HermExpr::constant(&Hermitian::identity(d)), "parent");
    for (x, povm) in m.measurements().iter().enumerate() {
        for (a, eff) in povm.effects().iter().enumerate().take(povm.num_outcomes() - 1) {
            let mut e = parent.f[x][a].clone();
            e.add_const(eff, -1.0);
            b.add_eq_herm(&e, &format!("F = M [{x},{a}]"));
        }
    }
    let prog = b.build();
    let r = solve(&prog, &opts.solver)?;
    match r.status {
        SolverStatus::Optimal => {
            let gs: Vec<Hermitian> = parent.g.iter().map(|&g| r.herm_value(g)).collect();
            Ok(JmVerdict { jointly_measurable: true, parent: Some(clean_parent(&gs)), fallback_value: None })
        }
        SolverStatus::PrimalInfeasible => Ok(JmVerdict { jointly_measurable: false, parent: None, fallback_value: None }),
        status => {
            log::warn!("joint-measurability program ended with {status:?}; deciding from I_◇");
            let rep = incompatibility_with(&m.reweighted(vec![1.0 / m.len() as f64; m.len()])?, opts)?;
            let jm = rep.value <= JM_FALLBACK_TOL;
            Ok(JmVerdict { jointly_measurable: jm, parent: jm.then_some(rep.parent), fallback_value: Some(rep.value) })
        }
    }
}

fn check_same_shape(m: &WeightedAssemblage, n: &WeightedAssemblage) -> Result<()> {
    if m.dim() != n.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), got: n.dim() });
    }
    if m.outcome_counts() != n.outcome_counts() {
        return Err(Error::ShapeMismatch("settings or outcome counts differ".into()));
    }
    if m.weights().iter().zip(n.weights()).any(|(p, q)| (p - q).abs() > crate::assemblage::POVM_TOL) {
        return Err(Error::ShapeMismatch("input weights differ".into()));
    }
    Ok(())
}

/// `Σ_x p(x) D_◇(Λ_{M_x}, Λ_{N_x})` with `D_◇` half the diamond norm.
pub fn diamond_distance(m: &WeightedAssemblage, n: &WeightedAssemblage) -> Result<f64> {
    diamond_distance_with(m, n, &SolverTolerances::default())
}

pub fn diamond_distance_with(m: &WeightedAssemblage, n: &WeightedAssemblage, tol: &SolverTolerances) -> Result<f64> {
    check_same_shape(m, n)?;
    let f: Vec<Vec<HermExpr>> =
        n.measurements().iter().map(|p| p.effects().iter().map(HermExpr::constant).collect()).collect();
    let mut b = ProgramBuilder::new();
    let terms = add_distance(&mut b, m, &f);
    b.minimize(&terms.objective);
    let prog = b.build();
    clamp_value(solve_checked(&prog, tol, "diamond distance")?.primal_objective)
}

/// `M` with the settings in `subset` replaced by the closest jointly
/// measurable approximation of the sub-assemblage on `subset` (weights
/// renormalized within the subset).
pub fn closest_jm_subset(m: &WeightedAssemblage, subset: &[usize]) -> Result<WeightedAssemblage> {
    closest_jm_subset_with(m, subset, &IncompatOptions::default()).map(|(a, _)| a)
}

/// As [`closest_jm_subset`], also returning the report of the sub-assemblage.
pub fn closest_jm_subset_with(
    m: &WeightedAssemblage,
    subset: &[usize],
    opts: &IncompatOptions,
) -> Result<(WeightedAssemblage, IncompatReport)> {
    let sub = m.select(subset)?;
    let rep = incompatibility_with(&sub, opts)?;
    let out = m.replace(subset, rep.closest.measurements())?;
    Ok((out, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, partial_trace_first, paulis};
    use crate::mub::build_mub;
    use crate::random::{haar_unitary, random_assemblage};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn noisy_paulis(m: usize, eta: f64) -> WeightedAssemblage {
        build_mub(2, m).unwrap().noisy(eta).unwrap()
    }

    /// Full Watrous form: `Z_x ⪰ 0`, `Z_x ⪰ Σ_a |a⟩⟨a| ⊗ (M − F)^T`,
    /// `a_x 𝟙 ⪰ Tr₁ Z_x`.
    fn watrous_value(m: &WeightedAssemblage) -> f64 {
        let strategies = DeterministicStrategySet::new(&m.outcome_counts()).unwrap();
        let d = m.dim();
        let mut b = ProgramBuilder::new();
        let parent = add_parent(&mut b, d, &strategies, &HermExpr::constant(&Hermitian::identity(d)), "G");
        let mut obj = LinExpr::default();
        for (x, povm) in m.measurements().iter().enumerate() {
            let o = povm.num_outcomes();
            let (z, _) = b.psd_var(o * d, "Z");
            let mut choi = HermExpr::zero(o * d);
            for (a, eff) in povm.effects().iter().enumerate() {
                let mut proj = vec![0.0; o];
                proj[a] = 1.0;
                let pa = Hermitian::diag(&proj);
                let mut diff = HermExpr::constant(eff);
                diff.add_expr(&parent.f[x][a], -1.0);
                choi.add_expr(&diff.map(o * d, |h| pa.kron(&h.transpose())), 1.0);
            }
            let mut zc = HermExpr::var(z);
            zc.add_expr(&choi, -1.0);
            b.add_psd(&zc, "Z - J");
            let ax = b.var();
            let mut bound = HermExpr::zero(d);
            bound.add_scalar(ax, &Hermitian::identity(d));
            bound.add_expr(&HermExpr::var(z).map(d, |h| partial_trace_first(h, o).unwrap()), -1.0);
            b.add_psd(&bound, "a - Tr1 Z");
            obj.add_var(ax, m.weights()[x]);
        }
        b.minimize(&obj);
        solve(&b.build(), &SolverTolerances::default()).unwrap().primal_objective
    }

    #[test]
    fn pinched_and_full_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let m = random_assemblage(2, 2, 3, false, &mut rng);
            let rep = incompatibility(&m).unwrap();
            assert_abs_diff_eq!(rep.value, watrous_value(&m), epsilon = 1e-7);
        }
        let m = noisy_paulis(2, 0.9);
        assert_abs_diff_eq!(incompatibility(&m).unwrap().value, watrous_value(&m), epsilon = 1e-7);
        let _ = kron;
    }

    #[test]
    fn jointly_measurable_assemblage_has_zero_value() {
        let diag = |v: f64| Povm::new(vec![Hermitian::diag(&[v, 1.0 - v]), Hermitian::diag(&[1.0 - v, v])]).unwrap();
        let m = WeightedAssemblage::uniform(vec![diag(1.0), diag(0.3), Povm::computational(2)]).unwrap();
        let rep = incompatibility(&m).unwrap();
        assert!(rep.value < 1e-7, "{}", rep.value);
        assert!(rep.gap.abs() < 1e-7);
    }

    #[test]
    fn pauli_values() {
        for eta in [0.75, 0.85, 1.0] {
            let rep = incompatibility(&noisy_paulis(2, eta)).unwrap();
            assert_abs_diff_eq!(rep.value, 0.5 * (eta - 1.0 / S2), epsilon = 1e-6);
            assert!(rep.gap.abs() <= 1e-7);
            assert!(rep.certificate_evaluation.violation < 1e-6);
            assert_abs_diff_eq!(rep.certificate_evaluation.objective, rep.value, epsilon = 1e-6);
        }
        let rep = incompatibility(&noisy_paulis(3, 1.0)).unwrap();
        assert_abs_diff_eq!(rep.value, 0.5 * (1.0 - 1.0 / 3f64.sqrt()), epsilon = 1e-6);
    }

    #[test]
    fn explicit_dual_matches_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_assemblage(2, 3, 2, true, &mut rng);
        let p = incompatibility(&m).unwrap().value;
        let d = incompatibility_dual_value(&m, &SolverTolerances::default()).unwrap();
        assert_abs_diff_eq!(p, d, epsilon = 1e-6);
    }

    #[test]
    fn analytic_certificate_evaluates_to_closed_form() {
        for (mm, eta) in [(2, 0.8), (3, 0.9), (3, 0.4)] {
            let fam = build_mub(2, mm).unwrap();
            let t = crate::mub::compute_t(&fam).unwrap();
            let m = fam.noisy(eta).unwrap();
            let cert = crate::mub::qubit_certificate(&fam).unwrap();
            let ev = cert.evaluate(&m).unwrap();
            assert!(ev.violation < 1e-12);
            assert_abs_diff_eq!(ev.objective, eta + (1.0 - eta) / 2.0 - t / mm as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_measurability_threshold() {
        let at = |eta| is_jointly_measurable(&noisy_paulis(2, eta)).unwrap();
        let yes = at(0.70);
        assert!(yes.jointly_measurable);
        let parent = yes.parent.unwrap();
        let strategies = DeterministicStrategySet::new(&[2, 2]).unwrap();
        let sim = crate::assemblage::parent_povm_simulation(&parent, &strategies).unwrap();
        assert!(sim.max_deviation(&noisy_paulis(2, 0.70)) < 1e-7);
        assert!(!at(0.72).jointly_measurable);
        assert!(!at(1.0).jointly_measurable);
        let commuting = WeightedAssemblage::uniform(vec![Povm::computational(2), Povm::computational(2)]).unwrap();
        assert!(is_jointly_measurable(&commuting).unwrap().jointly_measurable);
    }

    #[test]
    fn diamond_distance_examples() {
        let m = noisy_paulis(2, 1.0);
        assert!(diamond_distance(&m, &m).unwrap() < 1e-7);
        let rep = incompatibility(&m).unwrap();
        assert_abs_diff_eq!(diamond_distance(&m, &rep.closest).unwrap(), 0.5 * (1.0 - 1.0 / S2), epsilon = 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_assemblage(2, 2, 2, false, &mut rng);
        let b = random_assemblage(2, 2, 2, false, &mut rng);
        let c = random_assemblage(2, 2, 2, false, &mut rng);
        let dab = diamond_distance(&a, &b).unwrap();
        let dbc = diamond_distance(&b, &c).unwrap();
        let dac = diamond_distance(&a, &c).unwrap();
        assert!(dac <= dab + dbc + 1e-7);
        assert!(diamond_distance(&a, &noisy_paulis(3, 1.0)).is_err());
    }

    #[test]
    fn single_measurement_trace_distance() {
        // One setting: D_◇ of measure-and-prepare channels of two-outcome
        // POVMs is ‖M_0 − N_0‖_∞.
        let [x, _, z] = paulis();
        let id = Hermitian::identity(2);
        let px = Povm::new(vec![(&id + &x).scale(0.5), (&id - &x).scale(0.5)]).unwrap();
        let pz = Povm::new(vec![(&id + &z).scale(0.5), (&id - &z).scale(0.5)]).unwrap();
        let d = diamond_distance(
            &WeightedAssemblage::uniform(vec![px]).unwrap(),
            &WeightedAssemblage::uniform(vec![pz]).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(d, 1.0 / S2, epsilon = 1e-7);
    }

    #[test]
    fn closest_subset_examples() {
        let m = noisy_paulis(3, 0.9);
        let out = closest_jm_subset(&m, &[0, 1]).unwrap();
        assert_eq!(out.measurement(2), m.measurement(2));
        let target = noisy_paulis(3, 1.0 / S2);
        let pair = out.select(&[0, 1]).unwrap();
        assert!(pair.max_deviation(&target.select(&[0, 1]).unwrap()) < 1e-5);
        let single = closest_jm_subset(&m, &[1]).unwrap();
        assert!(single.max_deviation(&m) < 1e-6);
    }

    #[test]
    fn zero_weight_and_cap_are_reported() {
        let m = noisy_paulis(2, 1.0).reweighted(vec![1.0, 0.0]).unwrap();
        assert!(matches!(incompatibility(&m), Err(Error::ZeroWeight { setting: 1 })));
        let opts = IncompatOptions { strategy_cap: 3, ..Default::default() };
        assert!(matches!(incompatibility_with(&noisy_paulis(2, 1.0), &opts), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_assemblage(2, 3, 2, true, &mut rng);
        let u = haar_unitary(2, &mut rng);
        let a = incompatibility(&m).unwrap().value;
        let b = incompatibility(&m.conjugate_by(&u)).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-7);
    }
}
