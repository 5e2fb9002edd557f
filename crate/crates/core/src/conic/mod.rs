//! Dense conic optimization: program data, a Hermitian modeling layer, the
//! interior-point solver, mechanical dualization and a text dump format.

mod dump;
mod program;
mod solver;

pub use dump::{parse_dump, write_dump};
pub use program::{
    inner_weights, Cone, ConeSpec, ConicError, ConicProgram, EqBlock, HermEqHandle, HermExpr, HermVar,
    LinExpr, ProgramBuilder, PsdHandle, SolutionView, Triplet, Var,
};
pub use solver::{solve, SolverResult, SolverStatus, SolverTolerances};

/// Coordinates of the symmetric basis used to parameterize a dual PSD block:
/// `(i, j)` with `i ≤ j`, column-major over the upper triangle.
fn sym_basis(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |j| (0..=j).map(move |i| (i, j)))
}

/// Mechanical conic dual of `prog`, again as a minimization:
///
/// ```text
/// minimize    h'z + b'y − offset
/// subject to  G'z + A'y + c = 0,   z ∈ K
/// ```
///
/// Variables are `y` (free) followed by a parameterization of `z` (one
/// variable per nonnegative entry, `k(k+1)/2` per PSD block of order `k`).
/// At optimality its value is the negated optimum of `prog`.
pub fn dualize(prog: &ConicProgram) -> ConicProgram {
    let p = prog.b.len();
    let offs = prog.cone_offsets();
    // For each slack row: list of (dual variable, coefficient) expressing z_row.
    let mut z_of_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); prog.num_cone_rows()];
    let mut nvars = p;
    let mut cones = Vec::with_capacity(prog.cones.len());
    let mut g = Vec::new();
    let mut dual_offset = 0;
    for (spec, &off) in prog.cones.iter().zip(&offs) {
        match spec.cone {
            Cone::NonNeg(l) => {
                for i in 0..l {
                    z_of_row[off + i].push((nvars, 1.0));
                    g.push(Triplet { row: dual_offset + i, col: nvars, val: -1.0 });
                    nvars += 1;
                }
            }
            Cone::Psd(k) => {
                for (i, j) in sym_basis(k) {
                    let entries: &[(usize, usize)] = if i == j { &[(i, i)] } else { &[(i, j), (j, i)] };
                    for &(r, c) in entries {
                        z_of_row[off + r + c * k].push((nvars, 1.0));
                        g.push(Triplet { row: dual_offset + r + c * k, col: nvars, val: -1.0 });
                    }
                    nvars += 1;
                }
            }
        }
        dual_offset += spec.cone.size();
        cones.push(ConeSpec { cone: spec.cone, label: format!("dual of {}", spec.label) });
    }

    let mut c = vec![0.0; nvars];
    c[..p].copy_from_slice(&prog.b);
    for (row, &hv) in prog.h.iter().enumerate() {
        for &(v, coef) in &z_of_row[row] {
            c[v] += hv * coef;
        }
    }

    let mut a = Vec::new();
    for t in &prog.g {
        for &(v, coef) in &z_of_row[t.row] {
            a.push(Triplet { row: t.col, col: v, val: t.val * coef });
        }
    }
    for t in &prog.a {
        a.push(Triplet { row: t.col, col: t.row, val: t.val });
    }
    let b: Vec<f64> = prog.c.iter().map(|v| -v).collect();

    ConicProgram {
        num_vars: nvars,
        c,
        offset: -prog.offset,
        cones,
        g: program::merge_triplets(g),
        h: vec![0.0; prog.num_cone_rows()],
        a: program::merge_triplets(a),
        eq_blocks: vec![EqBlock { label: "stationarity".into(), rows: 0..prog.num_vars }],
        b,
    }
}
