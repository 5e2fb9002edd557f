//! Subcommand implementations. Each emits its rows in grid order, then fails
//! with a bound violation if any reported slack is below `−tol`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use incompat_core::bell::{
    avg_chsh_coefficients, behavior_from_state, chsh_pair_coefficients, no_signaling_value, resource_sandwich,
    resource_subset_bound, seesaw_maximize, steer_from_state, steering_distance_with, ChshOptimum, SettingResource,
    AVG_CHSH_NS_BOUND, AVG_CHSH_QUANTUM_BOUND,
};
use incompat_core::incompat::{Diagnostics, DualEvaluation};
use incompat_core::linalg::{c64, ComplexVector};
use incompat_core::mub::white_noise_robustness;
use incompat_core::random::random_state;
use incompat_core::structures::{check_subset_bounds_with, decompose_with, incompatibility_gain_with, DecompositionReport};
use incompat_core::{
    build_mub, incompatibility_with, BehaviorTable, Hermitian, IncompatOptions, MubFamily, RobustnessData,
    WeightedAssemblage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{resolve, EtaGrid, Resolved, RunConfig, ScenarioArgs};
use crate::output::{num, opt, Sink, Table};
use crate::CliError;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_SEED: u64 = 1;
/// Agreement required between the SDP and a closed-form value.
pub const ANALYTIC_TOL: f64 = 1e-6;

pub struct Ctx {
    pub tol: f64,
    pub seed: u64,
    pub sink: Sink,
    pub cfg: RunConfig,
    pub opts: IncompatOptions,
}

impl Ctx {
    pub fn new(tol: &Option<f64>, seed: &Option<u64>, out: &Option<PathBuf>, cfg: &RunConfig) -> Result<Self, CliError> {
        let opts = IncompatOptions::default();
        let tol = tol.or(cfg.tolerance).unwrap_or(DEFAULT_TOL);
        if !(tol >= opts.solver.gap) {
            return Err(CliError::Input(format!("--tol {tol:e} is below the solver gap tolerance {:e}", opts.solver.gap)));
        }
        Ok(Self {
            tol,
            seed: seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
            sink: Sink { dir: out.clone().or(cfg.out.clone()) },
            cfg: cfg.clone(),
            opts,
        })
    }

    fn resolve(&self, s: &ScenarioArgs) -> Result<Resolved, CliError> {
        resolve(s, &self.cfg, self.seed)
    }

    fn finish(&self, violations: usize) -> Result<(), CliError> {
        if violations == 0 {
            Ok(())
        } else {
            Err(CliError::Violation { count: violations, tol: self.tol })
        }
    }

    fn count(&self, slacks: impl IntoIterator<Item = Option<f64>>) -> usize {
        slacks.into_iter().flatten().filter(|&s| s < -self.tol).count()
    }
}

#[derive(Serialize)]
struct MubReport {
    unbiasedness_error: f64,
    #[serde(flatten)]
    robustness: RobustnessData,
}

pub fn mub(ctx: &Ctx, d: usize, m: usize, write: Option<&Path>) -> Result<(), CliError> {
    let fam = build_mub(d, m)?;
    if let Some(path) = write {
        fs::write(path, fam.assemblage().to_json()?).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    }
    let report = MubReport { unbiasedness_error: fam.unbiasedness_error(), robustness: white_noise_robustness(&fam)? };
    ctx.sink.json("mub", &report)
}

/// Closed-form value when the scenario is a MUB family whose robustness
/// formula is exact.
fn analytic(fam: Option<&MubFamily>) -> Result<Option<RobustnessData>, CliError> {
    Ok(match fam {
        Some(f) => Some(white_noise_robustness(f)?).filter(|r| !r.heuristic),
        None => None,
    })
}

#[derive(Serialize)]
struct IncompatRow {
    eta: f64,
    value: f64,
    analytic: Option<f64>,
    primal_objective: f64,
    dual_objective: f64,
    gap: f64,
    certificate: DualEvaluation,
    diagnostics: Diagnostics,
}

pub fn incompat(ctx: &Ctx, s: &ScenarioArgs) -> Result<(), CliError> {
    let r = ctx.resolve(s)?;
    let exact = analytic(r.family.as_ref())?;
    let rows = r
        .etas
        .par_iter()
        .map(|&eta| {
            let rep = incompatibility_with(&r.at(eta)?, &ctx.opts)?;
            Ok(IncompatRow {
                eta,
                value: rep.value,
                analytic: exact.map(|a| a.analytic_incompatibility(eta)),
                primal_objective: rep.primal_objective,
                dual_objective: rep.dual_objective,
                gap: rep.gap,
                certificate: rep.certificate_evaluation,
                diagnostics: rep.diagnostics,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut t = Table::new(&["eta", "value", "analytic", "abs_error", "primal", "dual", "gap", "iterations", "status"]);
    let mut violations = 0;
    for row in &rows {
        let err = row.analytic.map(|a| (row.value - a).abs());
        violations += usize::from(err.is_some_and(|e| e > ctx.tol.max(ANALYTIC_TOL)));
        t.push(vec![
            num(row.eta),
            num(row.value),
            opt(row.analytic),
            opt(err),
            num(row.primal_objective),
            num(row.dual_objective),
            num(row.gap),
            row.diagnostics.iterations.to_string(),
            format!("{:?}", row.diagnostics.status),
        ]);
    }
    ctx.sink.table("incompat", &t, &rows)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct GainRow {
    eta: f64,
    before: f64,
    after: f64,
    delta: f64,
    n_value: f64,
    g_value: Option<f64>,
    analytic_before: Option<f64>,
    analytic_after: Option<f64>,
    hypothesis_holds: bool,
    gain_slack: f64,
    parent_slack: Option<f64>,
}

pub fn gain(ctx: &Ctx, s: &ScenarioArgs) -> Result<(), CliError> {
    let r = ctx.resolve(s)?;
    let m = r.base.len();
    if m < 2 {
        return Err(CliError::Input("gain needs at least two measurements".into()));
    }
    let base_family = match &r.family {
        Some(f) => Some(build_mub(f.dim(), m - 1)?),
        None => None,
    };
    let (exact_before, exact_after) = (analytic(base_family.as_ref())?, analytic(r.family.as_ref())?);
    let first: Vec<usize> = (0..m - 1).collect();
    let mut rows = Vec::with_capacity(r.etas.len());
    for &eta in &r.etas {
        let full = r.at(eta)?;
        let g = incompatibility_gain_with(&full.select(&first)?, full.measurement(m - 1), &ctx.opts)?;
        rows.push(GainRow {
            eta,
            before: g.before,
            after: g.after,
            delta: g.delta,
            n_value: g.n_value(),
            g_value: g.g_value(),
            analytic_before: exact_before.map(|a| a.analytic_incompatibility(eta)),
            analytic_after: exact_after.map(|a| a.analytic_incompatibility(eta)),
            hypothesis_holds: g.hypothesis_holds,
            gain_slack: g.gain_slack,
            parent_slack: g.parent_slack,
        });
    }
    let mut t = Table::new(&[
        "eta",
        "i_base",
        "i_full",
        "delta",
        "i_n",
        "i_g",
        "analytic_base",
        "analytic_full",
        "hypothesis",
        "gain_slack",
        "parent_slack",
    ]);
    let mut violations = 0;
    for row in &rows {
        let gain_slack = Some(row.gain_slack).filter(|_| row.hypothesis_holds);
        violations += ctx.count([gain_slack, row.parent_slack]);
        t.push(vec![
            num(row.eta),
            num(row.before),
            num(row.after),
            num(row.delta),
            num(row.n_value),
            opt(row.g_value),
            opt(row.analytic_before),
            opt(row.analytic_after),
            row.hypothesis_holds.to_string(),
            num(row.gain_slack),
            opt(row.parent_slack),
        ]);
    }
    ctx.sink.table("gain", &t, &rows)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct BoundsRow {
    eta: f64,
    #[serde(flatten)]
    bounds: incompat_core::SubsetBounds,
}

pub fn bounds(ctx: &Ctx, s: &ScenarioArgs, subset: Option<Vec<usize>>) -> Result<(), CliError> {
    let r = ctx.resolve(s)?;
    let m = r.base.len();
    let subset = subset.unwrap_or_else(|| (0..m.saturating_sub(1)).collect());
    let mut rows = Vec::with_capacity(r.etas.len());
    for &eta in &r.etas {
        rows.push(BoundsRow { eta, bounds: check_subset_bounds_with(&r.at(eta)?, &subset, &ctx.opts)? });
    }
    let mut t = Table::new(&[
        "eta",
        "value",
        "subset_value",
        "subset_weight",
        "replaced_value",
        "lower_slack",
        "upper_slack",
        "sandwich_average",
        "i_n",
        "i_g",
        "sandwich_lower_slack",
        "sandwich_upper_slack",
    ]);
    let mut violations = 0;
    for row in &rows {
        let (b, sw) = (&row.bounds.bound, row.bounds.sandwich.as_ref());
        let sl = sw.map(|s| s.lower_slack);
        let su = sw.map(|s| s.upper_slack);
        violations += ctx.count([Some(b.lower_slack), Some(b.upper_slack), sl, su]);
        t.push(vec![
            num(row.eta),
            num(b.value),
            num(b.subset_value),
            num(b.subset_weight),
            num(b.replaced_value),
            num(b.lower_slack),
            num(b.upper_slack),
            opt(sw.map(|s| s.average)),
            opt(sw.map(|s| s.n_value)),
            opt(sw.and_then(|s| s.g_value)),
            opt(sl),
            opt(su),
        ]);
    }
    ctx.sink.table("bounds", &t, &rows)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct DecompositionRow {
    eta: f64,
    #[serde(flatten)]
    report: DecompositionReport,
}

pub fn decompose(ctx: &Ctx, s: &ScenarioArgs) -> Result<(), CliError> {
    let r = ctx.resolve(s)?;
    let mut rows = Vec::with_capacity(r.etas.len());
    for &eta in &r.etas {
        rows.push(DecompositionRow { eta, report: decompose_with(&r.at(eta)?, &ctx.opts)? });
    }
    let violations = ctx.count(rows.iter().map(|row| Some(row.report.slack)));
    ctx.sink.json("decompose", &rows)?;
    ctx.finish(violations)
}

#[derive(Debug, Clone, Args)]
pub struct StateArgs {
    /// Shared state: `phi-plus`, `werner:<v>`, `random`, or a JSON file with
    /// `re`/`im` matrices. Alice's system comes first.
    #[arg(long, default_value = "phi-plus")]
    pub state: String,
}

fn maximally_entangled(d: usize) -> Hermitian {
    let mut v = ComplexVector::zeros(d * d);
    for i in 0..d {
        v[i * d + i] = c64(1.0 / (d as f64).sqrt(), 0.0);
    }
    Hermitian::outer(&v)
}

/// State and Bob's dimension for Alice's dimension `da`.
fn load_state(arg: &str, da: usize, seed: u64) -> Result<(Hermitian, usize), CliError> {
    let state = if arg == "phi-plus" {
        maximally_entangled(da)
    } else if let Some(v) = arg.strip_prefix("werner:") {
        let v: f64 = v.parse().map_err(|_| CliError::Input(format!("bad visibility in {arg:?}")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Input(format!("visibility {v} outside [0, 1]")));
        }
        let n = da * da;
        &maximally_entangled(da).scale(v) + &Hermitian::identity(n).scale((1.0 - v) / n as f64)
    } else if arg == "random" {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.random_range(1..=da * da);
        random_state(da * da, rank, &mut rng)
    } else {
        let path = PathBuf::from(arg);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("state {arg}: {e}")))?
    };
    if state.dim() % da != 0 {
        return Err(CliError::Input(format!("state dimension {} is not a multiple of {da}", state.dim())));
    }
    let db = state.dim() / da;
    Ok((state, db))
}

#[derive(Serialize, Default)]
struct Slacks {
    sandwich_lower: Option<f64>,
    sandwich_upper: Option<f64>,
    subset_lower: Option<f64>,
    subset_upper: Option<f64>,
}

impl Slacks {
    fn all(&self) -> [Option<f64>; 4] {
        [self.sandwich_lower, self.sandwich_upper, self.subset_lower, self.subset_upper]
    }

    fn cells(&self) -> Vec<String> {
        self.all().into_iter().map(opt).collect()
    }
}

fn resource_slacks<R: SettingResource>(r: &R, opts: &IncompatOptions) -> Result<Slacks, CliError> {
    let k = r.num_settings();
    if k < 2 {
        return Ok(Slacks::default());
    }
    let s = resource_sandwich(r, opts)?;
    let first: Vec<usize> = (0..k - 1).collect();
    let b = resource_subset_bound(r, &first, opts)?;
    Ok(Slacks {
        sandwich_lower: Some(s.lower_slack),
        sandwich_upper: Some(s.upper_slack),
        subset_lower: Some(b.lower_slack),
        subset_upper: Some(b.upper_slack),
    })
}

#[derive(Serialize)]
struct SteeringRow {
    eta: f64,
    steering: f64,
    incompatibility: f64,
    incompatibility_slack: f64,
    slacks: Slacks,
    diagnostics: Diagnostics,
}

pub fn steering(ctx: &Ctx, s: &ScenarioArgs, st: &StateArgs) -> Result<(), CliError> {
    let r = ctx.resolve(s)?;
    let (state, _) = load_state(&st.state, r.base.dim(), ctx.seed)?;
    let mut rows = Vec::with_capacity(r.etas.len());
    for &eta in &r.etas {
        let alice = r.at(eta)?;
        let sa = steer_from_state(&state, &alice)?;
        let rep = steering_distance_with(&sa, &ctx.opts)?;
        let incompatibility = incompatibility_with(&alice, &ctx.opts)?.value;
        rows.push(SteeringRow {
            eta,
            steering: rep.value,
            incompatibility,
            incompatibility_slack: incompatibility - rep.value,
            slacks: resource_slacks(&sa, &ctx.opts)?,
            diagnostics: rep.diagnostics,
        });
    }
    let mut t = Table::new(&[
        "eta",
        "steering",
        "incompatibility",
        "incompatibility_slack",
        "sandwich_lower_slack",
        "sandwich_upper_slack",
        "subset_lower_slack",
        "subset_upper_slack",
    ]);
    let mut violations = 0;
    for row in &rows {
        violations += ctx.count(row.slacks.all()) + ctx.count([Some(row.incompatibility_slack)]);
        let mut cells = vec![num(row.eta), num(row.steering), num(row.incompatibility), num(row.incompatibility_slack)];
        cells.extend(row.slacks.cells());
        t.push(cells);
    }
    ctx.sink.table("steering", &t, &rows)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct NonlocalityRow {
    eta: Option<f64>,
    distance: f64,
    slacks: Slacks,
    closest: BehaviorTable,
    diagnostics: Diagnostics,
}

pub fn nonlocality(
    ctx: &Ctx,
    s: &ScenarioArgs,
    st: &StateArgs,
    behavior: Option<&Path>,
    bob_m: usize,
) -> Result<(), CliError> {
    let inputs: Vec<(Option<f64>, BehaviorTable)> = match behavior {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
            vec![(None, BehaviorTable::from_json(&text)?)]
        }
        None => {
            let r = ctx.resolve(s)?;
            let (state, db) = load_state(&st.state, r.base.dim(), ctx.seed)?;
            let bob: WeightedAssemblage = build_mub(db, bob_m)?.assemblage();
            r.etas
                .iter()
                .map(|&eta| Ok((Some(eta), behavior_from_state(&state, &r.at(eta)?, &bob)?)))
                .collect::<Result<_, CliError>>()?
        }
    };
    let mut rows = Vec::with_capacity(inputs.len());
    for (eta, q) in inputs {
        let rep = incompat_core::bell::nonlocality_distance_with(&q, &ctx.opts)?;
        rows.push(NonlocalityRow {
            eta,
            distance: rep.value,
            slacks: resource_slacks(&q, &ctx.opts)?,
            closest: rep.closest,
            diagnostics: rep.diagnostics,
        });
    }
    let mut t = Table::new(&[
        "eta",
        "distance",
        "sandwich_lower_slack",
        "sandwich_upper_slack",
        "subset_lower_slack",
        "subset_upper_slack",
    ]);
    let mut violations = 0;
    for row in &rows {
        violations += ctx.count(row.slacks.all());
        let mut cells = vec![opt(row.eta), num(row.distance)];
        cells.extend(row.slacks.cells());
        t.push(cells);
    }
    ctx.sink.table("nonlocality", &t, &rows)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct ChshReport {
    functional: &'static str,
    quantum_bound: f64,
    no_signaling_value: f64,
    no_signaling_bound: f64,
    seed: u64,
    best: ChshOptimum,
}

pub fn chsh(ctx: &Ctx, restarts: usize, single_pair: bool) -> Result<(), CliError> {
    let (functional, coeffs, quantum_bound, ns_bound) = if single_pair {
        ("chsh_12", chsh_pair_coefficients(), 2.0 * std::f64::consts::SQRT_2, 4.0)
    } else {
        ("average", avg_chsh_coefficients(), AVG_CHSH_QUANTUM_BOUND, AVG_CHSH_NS_BOUND)
    };
    let best = seesaw_maximize(&coeffs, ctx.seed, restarts)?;
    let ns = no_signaling_value(&coeffs, &ctx.opts)?;
    let mut t = Table::new(&["restart", "seed", "value", "quantum_bound", "excess"]);
    let mut violations = 0;
    for (k, &v) in best.restart_values.iter().enumerate() {
        violations += usize::from(v - quantum_bound > ctx.tol);
        t.push(vec![
            k.to_string(),
            ctx.seed.wrapping_add(k as u64).to_string(),
            num(v),
            num(quantum_bound),
            num(v - quantum_bound),
        ]);
    }
    violations += usize::from((ns - ns_bound).abs() > ctx.tol);
    let report = ChshReport {
        functional,
        quantum_bound,
        no_signaling_value: ns,
        no_signaling_bound: ns_bound,
        seed: ctx.seed,
        best,
    };
    ctx.sink.table("chsh", &t, &report)?;
    ctx.finish(violations)
}

#[derive(Serialize)]
struct SweepRow {
    d: usize,
    m: usize,
    eta: f64,
    value: f64,
    analytic: f64,
    heuristic: bool,
    gap: f64,
}

pub fn sweep(ctx: &Ctx, dims: &[usize], ms: &[usize], grid: EtaGrid) -> Result<(), CliError> {
    let etas = grid.points()?;
    let families = dims
        .iter()
        .flat_map(|&d| ms.iter().map(move |&m| (d, m)))
        .filter(|&(d, m)| {
            let ok = m <= d + 1;
            if !ok {
                log::warn!("skipping d = {d}, m = {m}: at most d + 1 bases exist");
            }
            ok
        })
        .map(|(d, m)| {
            let fam = build_mub(d, m)?;
            let rob = white_noise_robustness(&fam)?;
            Ok((fam, rob))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let points: Vec<(usize, f64)> = (0..families.len()).flat_map(|i| etas.iter().map(move |&e| (i, e))).collect();
    let rows = points
        .par_iter()
        .map(|&(i, eta)| {
            let (fam, rob) = &families[i];
            let rep = incompatibility_with(&fam.noisy(eta)?, &ctx.opts)?;
            Ok(SweepRow {
                d: fam.dim(),
                m: fam.count(),
                eta,
                value: rep.value,
                analytic: rob.analytic_incompatibility(eta),
                heuristic: rob.heuristic,
                gap: rep.gap,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut t = Table::new(&["d", "m", "eta", "value", "analytic", "abs_error", "heuristic", "gap"]);
    let mut violations = 0;
    for row in &rows {
        let err = (row.value - row.analytic).abs();
        violations += usize::from(!row.heuristic && err > ctx.tol.max(ANALYTIC_TOL));
        t.push(vec![
            row.d.to_string(),
            row.m.to_string(),
            num(row.eta),
            num(row.value),
            num(row.analytic),
            num(err),
            row.heuristic.to_string(),
            num(row.gap),
        ]);
    }
    ctx.sink.table("sweep", &t, &rows)?;
    ctx.finish(violations)
}
