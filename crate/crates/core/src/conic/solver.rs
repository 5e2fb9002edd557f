//! Homogeneous self-dual interior-point method with Nesterov–Todd scaling and
//! Mehrotra predictor–corrector steps.
//!
//! The Newton systems are reduced to `H̃ x + A'y = r`, `A x = q` with
//! `H̃ = Ĝ'Ĝ + A'A`, `Ĝ = W^{-T} G`, followed by a Cholesky factorization of
//! the Schur complement on `y`. `G` is stored block-sparse: each cone keeps
//! only the columns that touch it.
//!
//! `H̃` is factored densely unless most variables fall into groups that own
//! a cone of their own (PSD variables). Then `H̃ = D + R'R` with `D` block
//! diagonal over the groups and `R` the rows of the remaining cones and of
//! `A`, and the groups are eliminated first.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::program::{Cone, ConicError, ConicProgram, SolutionView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Absolute duality gap (relative for objectives above one in magnitude).
    pub gap: f64,
    /// Relative primal and dual residuals.
    pub feas: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { gap: 1e-8, feas: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

/// Outcome of [`solve`]. For infeasible statuses `x, s` (dual infeasible) or
/// `y, z` (primal infeasible) hold a normalized certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl SolverResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

impl SolutionView for SolverResult {
    fn x(&self) -> &[f64] {
        &self.x
    }
    fn y(&self) -> &[f64] {
        &self.y
    }
    fn z(&self) -> &[f64] {
        &self.z
    }
}

const STEP: f64 = 0.99;

/// One cone block of `G`: rows `off..off+size`, restricted to `cols`.
struct Block {
    cone: Cone,
    off: usize,
    cols: Vec<usize>,
    g: DMatrix<f64>,
}

impl Block {
    fn size(&self) -> usize {
        self.cone.size()
    }
}

struct Data {
    n: usize,
    p: usize,
    m: usize,
    blocks: Vec<Block>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    h: DVector<f64>,
    arrow: Option<ArrowLayout>,
}

impl Data {
    fn new(prog: &ConicProgram) -> Self {
        let n = prog.num_vars;
        let offs = prog.cone_offsets();
        let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); prog.cones.len()];
        // Cone offsets are increasing, so a binary search locates each row.
        for t in &prog.g {
            let bi = offs.partition_point(|&o| o <= t.row) - 1;
            per_block[bi].push((t.row - offs[bi], t.col, t.val));
        }
        let blocks = prog
            .cones
            .iter()
            .zip(offs)
            .zip(per_block)
            .map(|((spec, off), entries)| {
                let mut cols: Vec<usize> = entries.iter().map(|e| e.1).collect();
                cols.sort_unstable();
                cols.dedup();
                let mut g = DMatrix::zeros(spec.cone.size(), cols.len());
                for (r, c, v) in entries {
                    let j = cols.binary_search(&c).expect("column present");
                    g[(r, j)] += v;
                }
                Block { cone: spec.cone, off, cols, g }
            })
            .collect();
        Self {
            n,
            p: prog.b.len(),
            m: prog.num_cone_rows(),
            blocks,
            a: prog.dense_a(),
            b: DVector::from_column_slice(&prog.b),
            c: DVector::from_column_slice(&prog.c),
            h: DVector::from_column_slice(&prog.h),
            arrow: None,
        }
        .with_arrow()
    }

    fn with_arrow(mut self) -> Self {
        self.arrow = ArrowLayout::detect(&self);
        self
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for blk in &self.blocks {
            let xs = DVector::from_iterator(blk.cols.len(), blk.cols.iter().map(|&j| x[j]));
            out.rows_mut(blk.off, blk.size()).gemv(1.0, &blk.g, &xs, 0.0);
        }
        out
    }

    fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for blk in &self.blocks {
            let v = blk.g.tr_mul(&z.rows(blk.off, blk.size()));
            for (k, &j) in blk.cols.iter().enumerate() {
                out[j] += v[k];
            }
        }
        out
    }
}

/// Nesterov–Todd scaling of one block.
#[derive(Clone)]
enum BlockScaling {
    NonNeg { w: DVector<f64> },
    Psd { r: DMatrix<f64>, rti: DMatrix<f64> },
}

#[derive(Clone)]
struct Scaling {
    blocks: Vec<BlockScaling>,
    /// Scaled point `λ = W z = W^{-T} s`; eigenvalues for PSD blocks.
    lambda: Vec<DVector<f64>>,
}

fn psd_view(v: &[f64], k: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(k, k, v)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl Scaling {
    fn identity(data: &Data) -> Self {
        let blocks = data
            .blocks
            .iter()
            .map(|b| match b.cone {
                Cone::NonNeg(l) => BlockScaling::NonNeg { w: DVector::from_element(l, 1.0) },
                Cone::Psd(k) => BlockScaling::Psd { r: DMatrix::identity(k, k), rti: DMatrix::identity(k, k) },
            })
            .collect();
        let lambda = data
            .blocks
            .iter()
            .map(|b| DVector::from_element(b.cone.degree(), 1.0))
            .collect();
        Self { blocks, lambda }
    }

    /// Applies a per-block operation to a stacked cone vector.
    fn map(
        &self,
        data: &Data,
        v: &DVector<f64>,
        nn: impl Fn(f64, f64) -> f64,
        psd: impl Fn(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (blk, sc) in data.blocks.iter().zip(&self.blocks) {
            let seg = v.rows(blk.off, blk.size());
            match (sc, blk.cone) {
                (BlockScaling::NonNeg { w }, _) => {
                    for i in 0..w.len() {
                        out[blk.off + i] = nn(w[i], seg[i]);
                    }
                }
                (BlockScaling::Psd { r, rti }, Cone::Psd(k)) => {
                    let x = psd_view(seg.as_slice(), k);
                    let y = psd(r, rti, &x);
                    out.rows_mut(blk.off, blk.size()).copy_from_slice(y.as_slice());
                }
                _ => unreachable!("scaling does not match cone"),
            }
        }
        out
    }

    /// `W' v`.
    fn wt(&self, data: &Data, v: &DVector<f64>) -> DVector<f64> {
        self.map(data, v, |w, x| x * w, |r, _, x| r * x * r.transpose())
    }

    /// `W^{-T} s`.
    fn wt_inv(&self, data: &Data, v: &DVector<f64>) -> DVector<f64> {
        self.map(data, v, |w, x| x / w, |_, t, x| t.tr_mul(x) * t)
    }

    /// `W^{-1} v`.
    fn w_inv(&self, data: &Data, v: &DVector<f64>) -> DVector<f64> {
        self.map(data, v, |w, x| x / w, |_, t, x| t * x * t.transpose())
    }

    /// Scaled point λ as a stacked cone vector.
    fn lambda_vec(&self, data: &Data) -> DVector<f64> {
        let mut out = DVector::zeros(data.m);
        for (blk, lam) in data.blocks.iter().zip(&self.lambda) {
            match blk.cone {
                Cone::NonNeg(_) => out.rows_mut(blk.off, blk.size()).copy_from(lam),
                Cone::Psd(k) => {
                    for i in 0..k {
                        out[blk.off + i * k + i] = lam[i];
                    }
                }
            }
        }
        out
    }

    /// Replaces the scaling by the one for `(W'·s̃, W^{-1}·z̃)` given the
    /// scaled iterates `s̃, z̃`.
    fn update(&mut self, data: &Data, st: &DVector<f64>, zt: &DVector<f64>) -> Option<()> {
        for (bi, blk) in data.blocks.iter().enumerate() {
            let ss = st.rows(blk.off, blk.size());
            let zz = zt.rows(blk.off, blk.size());
            match (&mut self.blocks[bi], blk.cone) {
                (BlockScaling::NonNeg { w }, _) => {
                    for i in 0..w.len() {
                        if ss[i] <= 0.0 || zz[i] <= 0.0 {
                            return None;
                        }
                        w[i] *= (ss[i] / zz[i]).sqrt();
                        self.lambda[bi][i] = (ss[i] * zz[i]).sqrt();
                    }
                }
                (BlockScaling::Psd { r, rti }, Cone::Psd(k)) => {
                    let (rt, rtit, lam) = nt_psd(&psd_view(ss.as_slice(), k), &psd_view(zz.as_slice(), k))?;
                    *r = &*r * rt;
                    *rti = &*rti * rtit;
                    self.lambda[bi] = lam;
                }
                _ => unreachable!(),
            }
        }
        Some(())
    }
}

/// NT scaling `(r, rti, λ)` of a PSD pair with `r' z r = rti' s rti = diag(λ)`
/// and `r' rti = I`.
///
/// With `s = L₁L₁'`, `z = L₂L₂'` and `B = L₂'L₁`, the singular values of `B`
/// are λ. They are taken from the eigendecomposition of `B'B`; nalgebra's SVD
/// occasionally returns an inaccurate factorization for clustered singular
/// values, which the doubled spectra of embedded Hermitian blocks produce.
fn nt_psd(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let l1 = Cholesky::new(sym(s))?.unpack();
    let l2 = Cholesky::new(sym(z))?.unpack();
    let b = l2.tr_mul(&l1);
    let eig = SymmetricEigen::new(sym(&b.tr_mul(&b)));
    if eig.eigenvalues.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return None;
    }
    let lam = eig.eigenvalues.map(f64::sqrt);
    let v = eig.eigenvectors;
    let r = &l1 * &v * DMatrix::from_diagonal(&lam.map(|x| 1.0 / x.sqrt()));
    let rti = l2 * b * v * DMatrix::from_diagonal(&lam.map(|x| x.powf(-1.5)));
    Some((r, rti, lam))
}

fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b)
}

/// Jordan product `x ∘ y` blockwise.
fn sprod(data: &Data, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(data.m);
    for blk in &data.blocks {
        match blk.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    out[blk.off + i] = x[blk.off + i] * y[blk.off + i];
                }
            }
            Cone::Psd(k) => {
                let a = psd_view(x.rows(blk.off, blk.size()).as_slice(), k);
                let b = psd_view(y.rows(blk.off, blk.size()).as_slice(), k);
                let p = (&a * &b + &b * &a) * 0.5;
                out.rows_mut(blk.off, blk.size()).copy_from_slice(p.as_slice());
            }
        }
    }
    out
}

/// `λ \∘ v`: solves `λ ∘ u = v` for diagonal λ.
fn sinv(data: &Data, lambda: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(data.m);
    for (blk, lam) in data.blocks.iter().zip(lambda) {
        match blk.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    out[blk.off + i] = v[blk.off + i] / lam[i];
                }
            }
            Cone::Psd(k) => {
                for j in 0..k {
                    for i in 0..k {
                        let idx = blk.off + i + j * k;
                        out[idx] = 2.0 * v[idx] / (lam[i] + lam[j]);
                    }
                }
            }
        }
    }
    out
}

/// Largest `α` with `λ + α d` in the cone (infinite if unbounded).
fn max_step(data: &Data, lambda: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for (blk, lam) in data.blocks.iter().zip(lambda) {
        match blk.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    let di = d[blk.off + i];
                    if di < 0.0 {
                        alpha = alpha.min(-lam[i] / di);
                    }
                }
            }
            Cone::Psd(k) => {
                let mut m = psd_view(d.rows(blk.off, blk.size()).as_slice(), k);
                for j in 0..k {
                    for i in 0..k {
                        m[(i, j)] /= (lam[i] * lam[j]).sqrt();
                    }
                }
                let ev = SymmetricEigen::new(sym(&m)).eigenvalues;
                let mn = ev.min();
                if mn < 0.0 {
                    alpha = alpha.min(-1.0 / mn);
                }
            }
        }
    }
    alpha
}

/// Smallest `t` such that `v + t e` is in the closed cone, i.e. minus the
/// smallest eigenvalue over all blocks.
fn cone_shift(data: &Data, v: &DVector<f64>) -> f64 {
    let mut t = f64::NEG_INFINITY;
    for blk in &data.blocks {
        match blk.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    t = t.max(-v[blk.off + i]);
                }
            }
            Cone::Psd(k) => {
                let m = sym(&psd_view(v.rows(blk.off, blk.size()).as_slice(), k));
                t = t.max(-SymmetricEigen::new(m).eigenvalues.min());
            }
        }
    }
    t
}

fn add_identity(data: &Data, v: &mut DVector<f64>, t: f64) {
    for blk in &data.blocks {
        match blk.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    v[blk.off + i] += t;
                }
            }
            Cone::Psd(k) => {
                for i in 0..k {
                    v[blk.off + i * k + i] += t;
                }
            }
        }
    }
}

fn degree(data: &Data) -> usize {
    data.blocks.iter().map(|b| b.cone.degree()).sum()
}

/// Smallest problem for which the grouped factorization is tried.
const ARROW_MIN_VARS: usize = 600;
/// Largest column count of a cone that may define a group.
const ARROW_MAX_GROUP: usize = 64;

/// Variable groups that own cones, and the coupling rows `R` of
/// `H̃ = D + R'R`.
struct ArrowLayout {
    groups: Vec<GroupLayout>,
    /// Variables outside every group.
    border: Vec<usize>,
    /// Coupling blocks with their first row in `R`.
    coupling: Vec<(usize, usize)>,
    /// First row of `A` in `R`.
    a_off: usize,
    rows: usize,
}

struct GroupLayout {
    cols: Vec<usize>,
    /// Blocks lying inside the group: block index and group position of
    /// each block column.
    local: Vec<(usize, Vec<usize>)>,
    /// Coupling blocks touching the group: index into `coupling` and
    /// (block column, group position) pairs.
    touches: Vec<(usize, Vec<(usize, usize)>)>,
    /// Rows of `A` with a nonzero in the group.
    a_rows: Vec<usize>,
}

impl GroupLayout {
    fn r_rows(&self, layout: &ArrowLayout, data: &Data) -> Vec<usize> {
        let mut rows = Vec::new();
        for (k, _) in &self.touches {
            let (bi, off) = layout.coupling[*k];
            rows.extend(off..off + data.blocks[bi].size());
        }
        rows.extend(self.a_rows.iter().map(|i| layout.a_off + i));
        rows
    }
}

impl ArrowLayout {
    fn detect(data: &Data) -> Option<Self> {
        if data.n < ARROW_MIN_VARS {
            return None;
        }
        let mut owner: Vec<Option<usize>> = vec![None; data.n];
        let mut group_cols: Vec<Vec<usize>> = Vec::new();
        let mut block_group: Vec<Option<usize>> = vec![None; data.blocks.len()];
        let mut order: Vec<usize> = (0..data.blocks.len()).collect();
        order.sort_by_key(|&b| data.blocks[b].cols.len());
        for &bi in &order {
            let blk = &data.blocks[bi];
            if blk.cols.is_empty() || blk.cols.len() > ARROW_MAX_GROUP {
                continue;
            }
            match owner[blk.cols[0]] {
                None if blk.size() >= blk.cols.len() && blk.cols.iter().all(|&c| owner[c].is_none()) => {
                    let g = group_cols.len();
                    for &c in &blk.cols {
                        owner[c] = Some(g);
                    }
                    group_cols.push(blk.cols.clone());
                    block_group[bi] = Some(g);
                }
                Some(g) if blk.cols.iter().all(|&c| owner[c] == Some(g)) => block_group[bi] = Some(g),
                _ => {}
            }
        }
        if group_cols.is_empty() {
            return None;
        }
        let pos_in_group = |c: usize, g: usize| group_cols[g].iter().position(|&x| x == c).expect("owned column");
        let mut groups: Vec<GroupLayout> = group_cols
            .iter()
            .map(|cols| GroupLayout { cols: cols.clone(), local: Vec::new(), touches: Vec::new(), a_rows: Vec::new() })
            .collect();
        let mut coupling = Vec::new();
        let mut rows = 0;
        for (bi, blk) in data.blocks.iter().enumerate() {
            if let Some(g) = block_group[bi] {
                let pos = blk.cols.iter().map(|&c| pos_in_group(c, g)).collect();
                groups[g].local.push((bi, pos));
                continue;
            }
            let k = coupling.len();
            coupling.push((bi, rows));
            rows += blk.size();
            for (bp, &c) in blk.cols.iter().enumerate() {
                if let Some(g) = owner[c] {
                    let entry = (bp, pos_in_group(c, g));
                    match groups[g].touches.last_mut() {
                        Some((kk, pairs)) if *kk == k => pairs.push(entry),
                        _ => groups[g].touches.push((k, vec![entry])),
                    }
                }
            }
        }
        let a_off = rows;
        rows += data.p;
        for i in 0..data.p {
            for j in 0..data.n {
                if data.a[(i, j)] != 0.0 {
                    if let Some(g) = owner[j] {
                        if groups[g].a_rows.last() != Some(&i) {
                            groups[g].a_rows.push(i);
                        }
                    }
                }
            }
        }
        let border: Vec<usize> = (0..data.n).filter(|&j| owner[j].is_none()).collect();
        if 2 * (rows + border.len()) > data.n {
            return None;
        }
        Some(Self { groups, border, coupling, a_off, rows })
    }
}

/// Groups whose `D_g` has an eigenvalue below this fraction of their
/// coupling scale join the dense border system instead of being eliminated.
const STIFF_RATIO: f64 = 1e-8;

/// Factorization of `H̃ = D + R'R`. Well-conditioned groups `E` are
/// eliminated: `S = I + R_E D_E⁻¹ R_E'`; the remaining columns `O` (border
/// variables and stiff groups) solve `T = D_O + R_O' S⁻¹ R_O`.
struct ArrowFactor<'a> {
    layout: &'a ArrowLayout,
    /// Eliminated groups: group index, factor of `D_g`, `R_g`, rows of `R_g`.
    elim: Vec<(usize, Cholesky<f64, Dyn>, DMatrix<f64>, Vec<usize>)>,
    border: Vec<usize>,
    ro: DMatrix<f64>,
    s: Cholesky<f64, Dyn>,
    t: Option<Cholesky<f64, Dyn>>,
}

impl<'a> ArrowFactor<'a> {
    fn new(layout: &'a ArrowLayout, data: &Data, ghat: &[DMatrix<f64>]) -> Option<Self> {
        let r = layout.rows;
        let mut s = DMatrix::identity(r, r);
        let mut elim = Vec::with_capacity(layout.groups.len());
        let mut stiff: Vec<(usize, DMatrix<f64>, DMatrix<f64>, Vec<usize>)> = Vec::new();
        for (gi, grp) in layout.groups.iter().enumerate() {
            let k = grp.cols.len();
            let mut d = DMatrix::zeros(k, k);
            for (bi, pos) in &grp.local {
                let hb = ghat[*bi].tr_mul(&ghat[*bi]);
                for (jj, &j) in pos.iter().enumerate() {
                    for (ii, &i) in pos.iter().enumerate() {
                        d[(i, j)] += hb[(ii, jj)];
                    }
                }
            }
            let rows = grp.r_rows(layout, data);
            let mut rg = DMatrix::zeros(rows.len(), k);
            let mut roff = 0;
            for (kk, pairs) in &grp.touches {
                let gh = &ghat[layout.coupling[*kk].0];
                for &(bp, gp) in pairs {
                    for row in 0..gh.nrows() {
                        rg[(roff + row, gp)] += gh[(row, bp)];
                    }
                }
                roff += gh.nrows();
            }
            for (t, &i) in grp.a_rows.iter().enumerate() {
                for (gp, &j) in grp.cols.iter().enumerate() {
                    rg[(roff + t, gp)] = data.a[(i, j)];
                }
            }
            let coupling = rg.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
            let dmin = SymmetricEigen::new(sym(&d)).eigenvalues.min();
            let chol = if dmin > STIFF_RATIO * coupling { Cholesky::new(d.clone()) } else { None };
            match chol {
                Some(chol) => {
                    let mut kmat = rg.transpose();
                    chol.l_dirty().solve_lower_triangular_mut(&mut kmat);
                    let kk = kmat.tr_mul(&kmat);
                    for (jj, &j) in rows.iter().enumerate() {
                        for (ii, &i) in rows.iter().enumerate() {
                            s[(i, j)] += kk[(ii, jj)];
                        }
                    }
                    elim.push((gi, chol, rg, rows));
                }
                None => stiff.push((gi, d, rg, rows)),
            }
        }
        let mut border = layout.border.clone();
        for (gi, ..) in &stiff {
            border.extend(&layout.groups[*gi].cols);
        }
        let nb = border.len();
        let mut ro = DMatrix::zeros(r, nb);
        let mut dob = DMatrix::zeros(nb, nb);
        let nfree = layout.border.len();
        if nfree > 0 {
            let mut border_pos = vec![usize::MAX; data.n];
            for (t, &j) in layout.border.iter().enumerate() {
                border_pos[j] = t;
            }
            for &(bi, off) in &layout.coupling {
                let blk = &data.blocks[bi];
                for (bp, &c) in blk.cols.iter().enumerate() {
                    if border_pos[c] != usize::MAX {
                        for row in 0..blk.size() {
                            ro[(off + row, border_pos[c])] += ghat[bi][(row, bp)];
                        }
                    }
                }
            }
            for i in 0..data.p {
                for (t, &j) in layout.border.iter().enumerate() {
                    ro[(layout.a_off + i, t)] = data.a[(i, j)];
                }
            }
        }
        let mut off = nfree;
        for (_, d, rg, rows) in &stiff {
            let k = d.nrows();
            dob.view_mut((off, off), (k, k)).copy_from(d);
            for (ii, &i) in rows.iter().enumerate() {
                for j in 0..k {
                    ro[(i, off + j)] = rg[(ii, j)];
                }
            }
            off += k;
        }
        let s = cholesky_regularized(sym(&s))?;
        let t = if nb > 0 {
            let sinv_ro = s.solve(&ro);
            Some(cholesky_regularized(sym(&(dob + ro.tr_mul(&sinv_ro))))?)
        } else {
            None
        };
        Some(Self { layout, elim, border, ro, s, t })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let gather = |cols: &[usize], v: &DVector<f64>| DVector::from_iterator(cols.len(), cols.iter().map(|&j| v[j]));
        let groups = &self.layout.groups;
        let mut q = DVector::zeros(self.layout.rows);
        for (g, d, rg, rows) in &self.elim {
            let ry = rg * d.solve(&gather(&groups[*g].cols, rhs));
            for (k, &i) in rows.iter().enumerate() {
                q[i] += ry[k];
            }
        }
        let mut out = DVector::zeros(rhs.len());
        if let Some(t) = &self.t {
            let rhs_o = gather(&self.border, rhs);
            let xo = t.solve(&(rhs_o - self.ro.tr_mul(&self.s.solve(&q))));
            q += &self.ro * &xo;
            for (k, &j) in self.border.iter().enumerate() {
                out[j] = xo[k];
            }
        }
        let u = self.s.solve(&q);
        for (g, d, rg, rows) in &self.elim {
            let ug = DVector::from_iterator(rows.len(), rows.iter().map(|&i| u[i]));
            let xg = d.solve(&(gather(&groups[*g].cols, rhs) - rg.tr_mul(&ug)));
            for (k, &j) in groups[*g].cols.iter().enumerate() {
                out[j] = xg[k];
            }
        }
        out
    }
}

enum HFactor<'a> {
    Dense(Cholesky<f64, Dyn>),
    Arrow(ArrowFactor<'a>),
}

/// Iteration cap of the preconditioned conjugate gradient on `H̃`.
const PCG_MAX_ITER: usize = 200;
/// Iterations without halving the residual before giving up.
const PCG_PATIENCE: usize = 20;

/// Conjugate gradient on `H̃ x = b`, preconditioned by the grouped
/// factorization. Its rounding errors live in a subspace of dimension at
/// most the coupling rows plus border columns, which the iteration removes.
fn pcg(b: &DVector<f64>, h_mul: impl Fn(&DVector<f64>) -> DVector<f64>, prec: &ArrowFactor) -> DVector<f64> {
    let bn = b.amax();
    if bn == 0.0 {
        return DVector::zeros(b.len());
    }
    let mut x = prec.solve(b);
    let mut r = b - h_mul(&x);
    let mut best = (r.amax(), x.clone());
    let mut z = prec.solve(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut since_best = 0;
    for _ in 0..PCG_MAX_ITER {
        if since_best >= PCG_PATIENCE {
            break;
        }
        if best.0 <= 1e-14 * bn || !(rz > 0.0) {
            break;
        }
        let hp = h_mul(&p);
        let php = p.dot(&hp);
        if !(php > 0.0) {
            break;
        }
        let alpha = rz / php;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rn = r.amax();
        if rn < 0.5 * best.0 {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if rn < best.0 {
            best = (rn, x.clone());
        }
        z = prec.solve(&r);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    best.1
}

/// Factored reduced KKT system for the current scaling.
struct Kkt<'a> {
    data: &'a Data,
    ghat: Vec<DMatrix<f64>>,
    chol: HFactor<'a>,
    /// `H̃^{-1} A'`.
    hinv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

fn scaled_block(blk: &Block, sc: &BlockScaling) -> DMatrix<f64> {
    match (sc, blk.cone) {
        (BlockScaling::NonNeg { w }, _) => {
            let mut g = blk.g.clone();
            for (i, mut row) in g.row_iter_mut().enumerate() {
                row /= w[i];
            }
            g
        }
        (BlockScaling::Psd { rti, .. }, Cone::Psd(_)) => {
            // vec(T' X T) = (T' ⊗ T') vec(X) in column-major order.
            let tt = rti.transpose();
            tt.kronecker(&tt) * &blk.g
        }
        _ => unreachable!(),
    }
}

fn cholesky_regularized(mut h: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Some(c);
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    let mut eps = 1e-14 * scale;
    for _ in 0..12 {
        for i in 0..h.nrows() {
            h[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(h.clone()) {
            return Some(c);
        }
        eps *= 10.0;
    }
    None
}

impl<'a> Kkt<'a> {
    fn factor(data: &'a Data, sc: &Scaling) -> Option<Self> {
        let n = data.n;
        let ghat: Vec<DMatrix<f64>> = data.blocks.iter().zip(&sc.blocks).map(|(b, s)| scaled_block(b, s)).collect();
        let arrow = data.arrow.as_ref().and_then(|l| ArrowFactor::new(l, data, &ghat));
        let chol = match arrow {
            Some(a) => HFactor::Arrow(a),
            None => {
                let mut h = data.a.tr_mul(&data.a);
                for (blk, gh) in data.blocks.iter().zip(&ghat) {
                    let hb = gh.tr_mul(gh);
                    for (jj, &j) in blk.cols.iter().enumerate() {
                        for (ii, &i) in blk.cols.iter().enumerate() {
                            h[(i, j)] += hb[(ii, jj)];
                        }
                    }
                }
                HFactor::Dense(cholesky_regularized(h)?)
            }
        };
        let mut kkt = Self { data, ghat, chol, hinv_at: DMatrix::zeros(n, 0), schur: None };
        if data.p > 0 {
            let at = data.a.transpose();
            let mut hinv_at = DMatrix::zeros(n, data.p);
            for j in 0..data.p {
                hinv_at.set_column(j, &kkt.h_solve(&at.column(j).into_owned()));
            }
            kkt.schur = Some(cholesky_regularized(sym(&(&data.a * &hinv_at)))?);
            kkt.hinv_at = hinv_at;
        }
        Some(kkt)
    }

    fn h_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.data.a.tr_mul(&(&self.data.a * v)) + self.ghat_t_mul(&self.ghat_mul(v))
    }

    fn h_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            HFactor::Dense(c) => c.solve(v),
            HFactor::Arrow(a) => pcg(v, |u| self.h_mul(u), a),
        }
    }

    fn ghat_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.data.m);
        for (blk, gh) in self.data.blocks.iter().zip(&self.ghat) {
            let xs = DVector::from_iterator(blk.cols.len(), blk.cols.iter().map(|&j| x[j]));
            out.rows_mut(blk.off, blk.size()).gemv(1.0, gh, &xs, 0.0);
        }
        out
    }

    fn ghat_t_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.data.n);
        for (blk, gh) in self.data.blocks.iter().zip(&self.ghat) {
            let v = gh.tr_mul(&z.rows(blk.off, blk.size()));
            for (k, &j) in blk.cols.iter().enumerate() {
                out[j] += v[k];
            }
        }
        out
    }

    fn solve_once(&self, bx: &DVector<f64>, by: &DVector<f64>, bzs: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d = self.data;
        let r = bx + self.ghat_t_mul(bzs) + d.a.tr_mul(by);
        let xh = self.h_solve(&r);
        let (x, y) = match &self.schur {
            Some(s) => {
                let y = s.solve(&(&d.a * &xh - by));
                (xh - &self.hinv_at * &y, y)
            }
            None => (xh, DVector::zeros(0)),
        };
        let wz = self.ghat_mul(&x) - bzs;
        (x, y, wz)
    }

    /// Solves `A'y + G'z = bx`, `Ax = by`, `Gx − W'Wz = bz` given
    /// `bzs = W^{-T} bz`; returns `(x, y, W z)`.
    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bzs: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut x, mut y, mut wz) = self.solve_once(bx, by, bzs);
        let zero = DVector::zeros(self.data.m);
        for _ in 0..2 {
            let e1 = bx - self.data.a.tr_mul(&y) - self.ghat_t_mul(&wz);
            let e2 = by - &self.data.a * &x;
            let scale = 1.0 + bx.amax().max(by.amax());
            if e1.amax().max(e2.amax()) <= 1e-15 * scale {
                break;
            }
            let (dx, dy, dwz) = self.solve_once(&e1, &e2, &zero);
            x += dx;
            y += dy;
            wz += dwz;
        }
        (x, y, wz)
    }
}

/// Modified Gram–Schmidt on the rows of `A`; reports the first dependent row.
fn check_rank(prog: &ConicProgram, a: &DMatrix<f64>) -> Result<(), ConicError> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        let norm0 = row.norm();
        let mut v = row;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nv = v.norm();
        if norm0 == 0.0 || nv <= 1e-10 * norm0 {
            return Err(ConicError::RankDeficient { block: prog.eq_block_label(i), row: i });
        }
        basis.push(v / nv);
    }
    Ok(())
}

fn norm_or_one(v: &DVector<f64>) -> f64 {
    v.norm().max(1.0)
}

fn failed(status: SolverStatus, data: &Data, iterations: usize) -> SolverResult {
    SolverResult {
        status,
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        gap: f64::NAN,
        x: vec![0.0; data.n],
        s: vec![0.0; data.m],
        y: vec![0.0; data.p],
        z: vec![0.0; data.m],
        iterations,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
    }
}

/// Solves a cone program.
///
/// Returns an error only for ill-posed input (inconsistent dimensions,
/// dependent equality rows); numerical trouble is reported in the status.
pub fn solve(prog: &ConicProgram, tol: &SolverTolerances) -> Result<SolverResult, ConicError> {
    solve_impl(prog, tol, true)
}

fn solve_impl(prog: &ConicProgram, tol: &SolverTolerances, grouped: bool) -> Result<SolverResult, ConicError> {
    prog.validate()?;
    let mut data = Data::new(prog);
    if !grouped {
        data.arrow = None;
    }
    check_rank(prog, &data.a)?;
    Ok(run(&data, prog.offset, tol))
}

fn run(data: &Data, offset: f64, tol: &SolverTolerances) -> SolverResult {
    let (n, p, m) = (data.n, data.p, data.m);
    let deg = degree(data) as f64;
    let resx0 = norm_or_one(&data.c);
    let resyz0 = (data.b.norm_squared() + data.h.norm_squared()).sqrt().max(1.0);

    let mut sc = Scaling::identity(data);
    let kkt = match Kkt::factor(data, &sc) {
        Some(k) => k,
        None => return failed(SolverStatus::NumericalFailure, data, 0),
    };
    let (mut x, _, wz) = kkt.solve(&DVector::zeros(n), &data.b, &data.h);
    let mut s = -wz;
    let (_, mut y, mut z) = kkt.solve(&(-&data.c), &DVector::zeros(p), &DVector::zeros(m));
    drop(kkt);

    let nrms = s.norm().max(1.0);
    let ts = cone_shift(data, &s);
    if ts >= -1e-8 * nrms {
        add_identity(data, &mut s, 1.0 + ts);
    }
    let nrmz = z.norm().max(1.0);
    let tz = cone_shift(data, &z);
    if tz >= -1e-8 * nrmz {
        add_identity(data, &mut z, 1.0 + tz);
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;
    if sc.update(data, &s, &z).is_none() {
        return failed(SolverStatus::NumericalFailure, data, 0);
    }

    let mut best: Option<SolverResult> = None;
    let mut iter = 0;
    loop {
        let hrx = data.a.tr_mul(&y) + data.gt_mul(&z);
        let rx = &hrx + &data.c * tau;
        let hry = &data.a * &x;
        let ry = &hry - &data.b * tau;
        let hrz = &s + data.g_mul(&x);
        let rz = &hrz - &data.h * tau;
        let cx = dot(&data.c, &x);
        let by = dot(&data.b, &y);
        let hz = dot(&data.h, &z);
        let rt = kappa + cx + by + hz;
        let gap = dot(&s, &z);

        let pcost = cx / tau + offset;
        let dcost = -(by + hz) / tau + offset;
        let pres = (ry.norm_squared() + rz.norm_squared()).sqrt() / tau / resyz0;
        let dres = rx.norm() / tau / resx0;
        let scale = 1f64.max(pcost.abs().min(dcost.abs()));
        let cur = SolverResult {
            status: SolverStatus::Optimal,
            primal_objective: pcost,
            dual_objective: dcost,
            gap: pcost - dcost,
            x: (&x / tau).data.into(),
            s: (&s / tau).data.into(),
            y: (&y / tau).data.into(),
            z: (&z / tau).data.into(),
            iterations: iter,
            primal_residual: pres,
            dual_residual: dres,
        };
        log::trace!("iter {iter}: pcost {pcost:.10e} dcost {dcost:.10e} gap {:.2e} pres {pres:.2e} dres {dres:.2e} tau {tau:.2e} kappa {kappa:.2e}", gap / (tau * tau));

        if pres <= tol.feas
            && dres <= tol.feas
            && gap / (tau * tau) <= tol.gap * scale
            && (pcost - dcost).abs() <= tol.gap * scale
        {
            return cur;
        }
        if by + hz < 0.0 {
            let pinfres = hrx.norm() / resx0 / (-(by + hz));
            if pinfres <= tol.feas {
                let k = -(by + hz);
                return SolverResult {
                    status: SolverStatus::PrimalInfeasible,
                    y: (&y / k).data.into(),
                    z: (&z / k).data.into(),
                    x: vec![f64::NAN; n],
                    s: vec![f64::NAN; m],
                    primal_objective: f64::INFINITY,
                    dual_objective: f64::INFINITY,
                    gap: f64::NAN,
                    ..cur
                };
            }
        }
        if cx < 0.0 {
            let dinfres = (hry.norm_squared() + hrz.norm_squared()).sqrt() / resyz0 / (-cx);
            if dinfres <= tol.feas {
                return SolverResult {
                    status: SolverStatus::DualInfeasible,
                    x: (&x / -cx).data.into(),
                    s: (&s / -cx).data.into(),
                    y: vec![f64::NAN; p],
                    z: vec![f64::NAN; m],
                    primal_objective: f64::NEG_INFINITY,
                    dual_objective: f64::NEG_INFINITY,
                    gap: f64::NAN,
                    ..cur
                };
            }
        }
        let quality = |r: &SolverResult| r.primal_residual.max(r.dual_residual).max(r.gap.abs());
        if best.as_ref().is_none_or(|b| quality(&cur) < quality(b)) {
            best = Some(cur);
        }
        let give_up = |status| {
            let mut r = best.clone().expect("at least one iterate");
            r.status = status;
            r
        };
        if iter >= tol.max_iter {
            return give_up(SolverStatus::MaxIterations);
        }

        let kkt = match Kkt::factor(data, &sc) {
            Some(k) => k,
            None => return give_up(SolverStatus::NumericalFailure),
        };
        let hs = sc.wt_inv(data, &data.h);
        let (x1, y1, wz1) = kkt.solve(&(-&data.c), &data.b, &hs);
        let denom = -kappa / tau - wz1.norm_squared();
        let mu = (gap + tau * kappa) / (deg + 1.0);
        let lam = sc.lambda_vec(data);
        let lamsq = sprod(data, &lam, &lam);

        let mut sigma = 0.0;
        let mut corr_s = DVector::zeros(m);
        let mut corr_t = 0.0;
        let mut step = None;
        for pass in 0..2 {
            let gamma = if pass == 0 { 0.0 } else { sigma };
            let f = -(1.0 - gamma);
            let bx = &rx * f;
            let bys = &ry * f;
            let bz = &rz * f;
            let bt = rt * f;
            let mut bs = -&lamsq - &corr_s;
            add_identity(data, &mut bs, gamma * mu);
            let bk = -tau * kappa + gamma * mu - corr_t;
            let u = sinv(data, &sc.lambda, &bs);
            let bzs = sc.wt_inv(data, &bz) - &u;
            let (x0, y0, wz0) = kkt.solve(&bx, &bys, &bzs);
            let num = bt - bk / tau - (dot(&data.c, &x0) + dot(&data.b, &y0) + dot(&hs, &wz0));
            let dtau = num / denom;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let dz = wz0 + &wz1 * dtau;
            let ds = &u - &dz;
            let dkappa = (bk - kappa * dtau) / tau;

            let mut amax = max_step(data, &sc.lambda, &ds).min(max_step(data, &sc.lambda, &dz));
            if dtau < 0.0 {
                amax = amax.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-kappa / dkappa);
            }
            if pass == 0 {
                sigma = (1.0 - amax.min(1.0)).powi(3);
                corr_s = sprod(data, &ds, &dz);
                corr_t = dtau * dkappa;
            } else {
                let alpha = (STEP * amax).min(1.0);
                step = Some((alpha, dx, dy, dz, ds, dtau, dkappa));
            }
        }
        let (alpha, dx, dy, dz, ds, dtau, dkappa) = step.expect("combined step computed");
        if !alpha.is_finite() || alpha <= 0.0 {
            return give_up(SolverStatus::NumericalFailure);
        }
        x += dx * alpha;
        y += dy * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        let st = &lam + ds * alpha;
        let zt = &lam + dz * alpha;
        s = sc.wt(data, &st);
        z = sc.w_inv(data, &zt);
        if sc.update(data, &st, &zt).is_none() || !(tau > 0.0) {
            return give_up(SolverStatus::NumericalFailure);
        }
        iter += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::program::{HermExpr, LinExpr, ProgramBuilder};
    use crate::linalg::{c64, trace_norm, ComplexMatrix, Hermitian};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn rand_herm(n: usize, rng: &mut impl Rng) -> Hermitian {
        let m = ComplexMatrix::from_fn(n, n, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        Hermitian::new(&m + m.adjoint()).unwrap()
    }

    fn lambda_max_program(a: &Hermitian) -> (ConicProgram, crate::conic::Var) {
        let mut b = ProgramBuilder::new();
        let t = b.var();
        let mut e = HermExpr::constant(a);
        e.add_const(a, -2.0);
        e.add_scalar(t, &Hermitian::identity(a.dim()));
        b.add_psd(&e, "t I - A");
        b.minimize(&LinExpr::var(t));
        (b.build(), t)
    }

    #[test]
    fn lambda_max_matches_eigensolver() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 5] {
            let a = rand_herm(n, &mut rng);
            let (prog, t) = lambda_max_program(&a);
            let res = solve(&prog, &SolverTolerances::default()).unwrap();
            assert_eq!(res.status, SolverStatus::Optimal);
            assert_abs_diff_eq!(res.value(t), a.max_eigenvalue(), epsilon = 1e-7);
            assert!(res.gap.abs() <= 1e-7);
        }
    }

    #[test]
    fn simplex_lp() {
        let mut b = ProgramBuilder::new();
        let xs: Vec<_> = (0..3).map(|_| b.var()).collect();
        b.add_nonneg(&xs.iter().map(|&v| LinExpr::var(v)).collect::<Vec<_>>(), "x >= 0");
        let mut sum = LinExpr::constant(-1.0);
        for &v in &xs {
            sum.add_var(v, 1.0);
        }
        b.add_eq(&[sum], "simplex");
        let mut obj = LinExpr::default();
        for (&v, c) in xs.iter().zip([3.0, 1.0, 2.0]) {
            obj.add_var(v, c);
        }
        b.minimize(&obj);
        let res = solve(&b.build(), &SolverTolerances::default()).unwrap();
        assert_eq!(res.status, SolverStatus::Optimal);
        assert_abs_diff_eq!(res.primal_objective, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(res.value(xs[1]), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn trace_norm_program() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for n in [2, 3, 4] {
            let a = rand_herm(n, &mut rng);
            let mut b = ProgramBuilder::new();
            let (p, _) = b.psd_var(n, "P");
            let (q, _) = b.psd_var(n, "Q");
            let mut e = HermExpr::var(p);
            e.add_var(q, -1.0);
            e.add_const(&a, -1.0);
            b.add_eq_herm(&e, "P - Q = A");
            let mut obj = HermExpr::var(p).trace();
            obj.add_expr(&HermExpr::var(q).trace(), 1.0);
            b.minimize(&obj);
            let res = solve(&b.build(), &SolverTolerances::default()).unwrap();
            assert_eq!(res.status, SolverStatus::Optimal);
            assert_abs_diff_eq!(res.primal_objective, trace_norm(&a), epsilon = 1e-7);
        }
    }

    #[test]
    fn detects_primal_infeasible() {
        // x >= 1 and x <= 0.
        let mut b = ProgramBuilder::new();
        let x = b.var();
        let mut e1 = LinExpr::var(x);
        e1.constant = -1.0;
        let mut e2 = LinExpr::default();
        e2.add_var(x, -1.0);
        b.add_nonneg(&[e1, e2], "bounds");
        b.minimize(&LinExpr::var(x));
        let res = solve(&b.build(), &SolverTolerances::default()).unwrap();
        assert_eq!(res.status, SolverStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_dual_infeasible() {
        // min -x s.t. x >= 0.
        let mut b = ProgramBuilder::new();
        let x = b.nonneg_var("x");
        let mut obj = LinExpr::default();
        obj.add_var(x, -1.0);
        b.minimize(&obj);
        let res = solve(&b.build(), &SolverTolerances::default()).unwrap();
        assert_eq!(res.status, SolverStatus::DualInfeasible);
    }

    #[test]
    fn rank_deficient_equalities_name_block() {
        let mut b = ProgramBuilder::new();
        let x = b.nonneg_var("x");
        b.add_eq(&[LinExpr::var(x)], "first");
        let mut twice = LinExpr::default();
        twice.add_var(x, 2.0);
        b.add_eq(&[twice], "second");
        let err = solve(&b.build(), &SolverTolerances::default()).unwrap_err();
        assert_eq!(err, ConicError::RankDeficient { block: "second".into(), row: 1 });
    }

    #[test]
    fn grouped_factorization_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let m = crate::random::random_assemblage(2, 8, 2, true, &mut rng).depolarize(0.8).unwrap();
        let prog = crate::incompat::primal_program(&m).unwrap();
        let tol = SolverTolerances::default();
        let data = Data::new(&prog);
        assert!(data.arrow.is_some(), "n = {}", data.n);
        let grouped = solve_impl(&prog, &tol, true).unwrap();
        let dense = solve_impl(&prog, &tol, false).unwrap();
        assert!(grouped.is_optimal() && dense.is_optimal());
        assert_abs_diff_eq!(grouped.primal_objective, dense.primal_objective, epsilon = 1e-8);
    }
}
