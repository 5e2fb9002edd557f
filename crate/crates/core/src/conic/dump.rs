//! Sparse-triplet text dump of a [`ConicProgram`].
//!
//! One record per line, whitespace separated, `#` starts a comment. See
//! `docs/dump-format.md` for the grammar.

use std::fmt::Write as _;

use super::program::{Cone, ConeSpec, ConicError, ConicProgram, EqBlock, Triplet};

pub fn write_dump(prog: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# minimize c'x + offset  s.t.  G x + s = h, s in K;  A x = b");
    let _ = writeln!(out, "vars {}", prog.num_vars);
    let _ = writeln!(out, "offset {:e}", prog.offset);
    for spec in &prog.cones {
        let (kind, k) = match spec.cone {
            Cone::NonNeg(l) => ("nonneg", l),
            Cone::Psd(k) => ("psd", k),
        };
        let _ = writeln!(out, "cone {kind} {k} {}", spec.label.replace(char::is_whitespace, "_"));
    }
    let _ = writeln!(out, "eqrows {}", prog.b.len());
    for blk in &prog.eq_blocks {
        let _ = writeln!(
            out,
            "eqblock {} {} {}",
            blk.rows.start,
            blk.rows.end,
            blk.label.replace(char::is_whitespace, "_")
        );
    }
    for (j, v) in prog.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(out, "c {j} {v:e}");
    }
    for t in &prog.g {
        let _ = writeln!(out, "G {} {} {:e}", t.row, t.col, t.val);
    }
    for (i, v) in prog.h.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(out, "h {i} {v:e}");
    }
    for t in &prog.a {
        let _ = writeln!(out, "A {} {} {:e}", t.row, t.col, t.val);
    }
    for (i, v) in prog.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(out, "b {i} {v:e}");
    }
    out
}

pub fn parse_dump(text: &str) -> Result<ConicProgram, ConicError> {
    let mut prog = ConicProgram::default();
    let mut eqrows = 0;
    let mut c = Vec::new();
    let mut h = Vec::new();
    let mut b = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let f: Vec<&str> = content.split_whitespace().collect();
        let err = |msg: &str| ConicError::Parse { line, msg: msg.into() };
        let num = |i: usize| -> Result<usize, ConicError> {
            f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err("expected an integer"))
        };
        let real = |i: usize| -> Result<f64, ConicError> {
            f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err("expected a number"))
        };
        match f[0] {
            "vars" => prog.num_vars = num(1)?,
            "offset" => prog.offset = real(1)?,
            "cone" => {
                let k = num(2)?;
                let cone = match f.get(1).copied() {
                    Some("nonneg") => Cone::NonNeg(k),
                    Some("psd") => Cone::Psd(k),
                    _ => return Err(err("unknown cone kind")),
                };
                let label = f.get(3).copied().unwrap_or("").to_string();
                prog.cones.push(ConeSpec { cone, label });
            }
            "eqrows" => eqrows = num(1)?,
            "eqblock" => {
                let label = f.get(3).copied().unwrap_or("").to_string();
                prog.eq_blocks.push(EqBlock { label, rows: num(1)?..num(2)? });
            }
            "c" => c.push((num(1)?, real(2)?)),
            "h" => h.push((num(1)?, real(2)?)),
            "b" => b.push((num(1)?, real(2)?)),
            "G" => prog.g.push(Triplet { row: num(1)?, col: num(2)?, val: real(3)? }),
            "A" => prog.a.push(Triplet { row: num(1)?, col: num(2)?, val: real(3)? }),
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    let scatter = |len: usize, entries: Vec<(usize, f64)>, what: &str| -> Result<Vec<f64>, ConicError> {
        let mut v = vec![0.0; len];
        for (i, x) in entries {
            *v.get_mut(i).ok_or_else(|| ConicError::Dimension { what: what.into(), expected: len, got: i })? = x;
        }
        Ok(v)
    };
    prog.c = scatter(prog.num_vars, c, "c")?;
    prog.h = scatter(prog.num_cone_rows(), h, "h")?;
    prog.b = scatter(eqrows, b, "b")?;
    prog.validate()?;
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{HermExpr, ProgramBuilder};
    use crate::linalg::Hermitian;

    #[test]
    fn round_trip() {
        let mut b = ProgramBuilder::new();
        let (x, _) = b.psd_var(2, "X block");
        let t = b.nonneg_var("t");
        let mut tr = HermExpr::var(x).trace();
        tr.add_var(t, 1.0);
        tr.constant = -1.0;
        b.add_eq(&[tr], "budget");
        b.minimize(&HermExpr::var(x).inner(&Hermitian::diag(&[0.1, -0.3])));
        let prog = b.build();
        let text = write_dump(&prog);
        let back = parse_dump(&text).unwrap();
        assert_eq!(back.num_vars, prog.num_vars);
        assert_eq!(back.c, prog.c);
        assert_eq!(back.g, prog.g);
        assert_eq!(back.h, prog.h);
        assert_eq!(back.a, prog.a);
        assert_eq!(back.b, prog.b);
        assert_eq!(back.cones[0].label, "X_block");
    }

    #[test]
    fn rejects_unknown_records() {
        let e = parse_dump("vars 1\nfoo 1\n").unwrap_err();
        assert!(matches!(e, ConicError::Parse { line: 2, .. }));
    }
}
