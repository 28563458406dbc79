//! Standard-form semidefinite programs
//!
//! ```text
//! minimise    Σ_b ⟨C_b, X_b⟩ + offset
//! subject to  Σ_b ⟨A_{i,b}, X_b⟩ = b_i      i = 1..m
//!             X_b ⪰ 0
//! ```
//!
//! Coefficients are given per matrix entry: a term `(block, r, c, v)`
//! contributes `v · X_block[r, c]` to the linear functional. Off-diagonal
//! terms are folded onto the upper triangle, so adding `(r, c)` and `(c, r)`
//! accumulates. 1×1 blocks are plain non-negative scalars.

mod ipm;

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use ipm::InteriorPoint;

/// One coefficient of a linear functional over the block variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

impl Term {
    pub fn new(block: usize, row: usize, col: usize, coeff: f64) -> Self {
        // canonical upper-triangular form
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Self {
            block,
            row,
            col,
            coeff,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<Term>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    blocks: Vec<usize>,
    objective: Vec<Term>,
    constraints: Vec<Constraint>,
    /// Constant added to the reported objective.
    pub objective_offset: f64,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a PSD block of size `n`; returns its index.
    pub fn add_block(&mut self, n: usize) -> usize {
        self.blocks.push(n);
        self.blocks.len() - 1
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.blocks
    }

    pub fn objective_terms(&self) -> &[Term] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add_objective(&mut self, block: usize, row: usize, col: usize, coeff: f64) {
        if coeff != 0.0 {
            self.objective.push(Term::new(block, row, col, coeff));
        }
    }

    /// Adds `Σ terms = rhs`; returns the constraint index.
    pub fn add_constraint(&mut self, terms: Vec<Term>, rhs: f64) -> usize {
        let terms = terms.into_iter().filter(|t| t.coeff != 0.0).collect();
        self.constraints.push(Constraint { terms, rhs });
        self.constraints.len() - 1
    }

    /// Dimension and index checks.
    pub fn validate(&self) -> Result<()> {
        let check = |t: &Term, what: &str| -> Result<()> {
            let n = *self.blocks.get(t.block).ok_or_else(|| {
                Error::MalformedProgram(format!("{what} references undeclared block {}", t.block))
            })?;
            if t.row >= n || t.col >= n {
                return Err(Error::MalformedProgram(format!(
                    "{what} entry ({}, {}) outside {n}×{n} block {}",
                    t.row, t.col, t.block
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::MalformedProgram(format!(
                    "{what} has non-finite coefficient"
                )));
            }
            Ok(())
        };
        for t in &self.objective {
            check(t, "objective")?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            for t in &c.terms {
                check(t, &format!("constraint {i}"))?;
            }
            if !c.rhs.is_finite() {
                return Err(Error::MalformedProgram(format!(
                    "constraint {i} has non-finite rhs"
                )));
            }
        }
        Ok(())
    }

    /// Dense symmetric objective matrices, one per block.
    pub fn objective_matrices(&self) -> Vec<DMatrix<f64>> {
        let mut c: Vec<DMatrix<f64>> = self.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for t in &self.objective {
            add_symmetric(&mut c[t.block], t.row, t.col, t.coeff);
        }
        c
    }

    /// Evaluates a linear functional at the given block values.
    pub fn evaluate(terms: &[Term], x: &[DMatrix<f64>]) -> f64 {
        terms
            .iter()
            .map(|t| t.coeff * x[t.block][(t.row, t.col)])
            .sum()
    }

    /// Objective value (including the offset) at `x`.
    pub fn objective_value(&self, x: &[DMatrix<f64>]) -> f64 {
        Self::evaluate(&self.objective, x) + self.objective_offset
    }

    /// `A(X) − b`
    pub fn equality_residual(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .map(|c| Self::evaluate(&c.terms, x) - c.rhs),
        )
    }

    /// Writes the program as plain-text triplets:
    ///
    /// ```text
    /// blocks <n_0> <n_1> ...
    /// offset <value>
    /// c <block> <row> <col> <coeff>
    /// a <constraint> <block> <row> <col> <coeff>
    /// b <constraint> <rhs>
    /// ```
    ///
    /// Indices are 0-based and `coeff` multiplies `X[row, col]` (upper
    /// triangle), matching [`Term`].
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "blocks")?;
        for n in &self.blocks {
            write!(w, " {n}")?;
        }
        writeln!(w)?;
        writeln!(w, "offset {:e}", self.objective_offset)?;
        for t in &self.objective {
            writeln!(w, "c {} {} {} {:e}", t.block, t.row, t.col, t.coeff)?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            for t in &c.terms {
                writeln!(w, "a {i} {} {} {} {:e}", t.block, t.row, t.col, t.coeff)?;
            }
            writeln!(w, "b {i} {:e}", c.rhs)?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: &str| Error::MalformedProgram(format!("bad dump line: {line}"));
        let mut p = ConicProgram::new();
        for line in r.lines() {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(&line))
            };
            let idx = |i: usize| -> Result<usize> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(&line))
            };
            match f.first().copied() {
                None => {}
                Some("blocks") => {
                    for i in 1..f.len() {
                        p.add_block(idx(i)?);
                    }
                }
                Some("offset") => p.objective_offset = num(1)?,
                Some("c") => p
                    .objective
                    .push(Term::new(idx(1)?, idx(2)?, idx(3)?, num(4)?)),
                Some("a") | Some("b") => {
                    let i = idx(1)?;
                    while p.constraints.len() <= i {
                        p.constraints.push(Constraint {
                            terms: Vec::new(),
                            rhs: 0.0,
                        });
                    }
                    if f[0] == "a" {
                        p.constraints[i]
                            .terms
                            .push(Term::new(idx(2)?, idx(3)?, idx(4)?, num(5)?));
                    } else {
                        p.constraints[i].rhs = num(2)?;
                    }
                }
                Some(_) => return Err(bad(&line)),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

fn add_symmetric(m: &mut DMatrix<f64>, r: usize, c: usize, v: f64) {
    if r == c {
        m[(r, r)] += v;
    } else {
        m[(r, c)] += 0.5 * v;
        m[(c, r)] += 0.5 * v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub blocks: Vec<DMatrix<f64>>,
    /// Equality multipliers.
    pub dual: DVector<f64>,
    /// Dual slack blocks `C − Aᵀy`.
    pub slack: Vec<DMatrix<f64>>,
    /// Primal objective including the program offset.
    pub objective: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `‖A(X) − b‖∞`
    pub primal_residual: f64,
    /// `‖C − Aᵀy − Z‖∞`
    pub dual_residual: f64,
    /// `primal − dual` objective.
    pub gap: f64,
    pub message: String,
}

impl ConicSolution {
    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|b| b.nrows() > 0)
            .map(|b| b.clone().symmetric_eigen().eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-7,
            tol_gap: 1e-7,
            max_iter: 100,
        }
    }
}

/// Anything that can solve a [`ConicProgram`]; an external solver can be
/// plugged in behind this.
pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution>;
}

/// Solves with the built-in interior-point method, mapping non-optimal
/// terminations to errors.
pub fn solve(program: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution> {
    let sol = InteriorPoint.solve(program, opts)?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol),
        SolveStatus::Infeasible => Err(Error::Infeasible(sol.message)),
        SolveStatus::MaxIterations => Err(Error::MaxIterations(sol.iterations)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_nonnegativity() {
        let mut p = ConicProgram::new();
        let b = p.add_block(1);
        p.add_objective(b, 0, 0, 1.0);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert!(s.blocks[0][(0, 0)].abs() < 1e-6);
        assert!(s.objective.abs() < 1e-6);
    }

    #[test]
    fn trace_with_fixed_corner() {
        let mut p = ConicProgram::new();
        let b = p.add_block(2);
        p.add_objective(b, 0, 0, 1.0);
        p.add_objective(b, 1, 1, 1.0);
        p.add_constraint(vec![Term::new(b, 0, 0, 1.0)], 1.0);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-6);
        let x = &s.blocks[0];
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-6);
        assert!(x[(1, 1)].abs() < 1e-6 && x[(0, 1)].abs() < 1e-4);
    }

    #[test]
    fn lifted_quadratic() {
        // min (x - 3)^2 written as min X11 - 6 x + 9 with [[X11, x], [x, 1]] ⪰ 0
        let mut p = ConicProgram::new();
        let b = p.add_block(2);
        p.add_objective(b, 0, 0, 1.0);
        p.add_objective(b, 0, 1, -6.0);
        p.objective_offset = 9.0;
        p.add_constraint(vec![Term::new(b, 1, 1, 1.0)], 1.0);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        // flat objective: entry error scales with the square root of the gap
        assert_relative_eq!(s.blocks[0][(0, 1)], 3.0, epsilon = 1e-3);
        assert!(s.objective.abs() < 1e-5);
        assert!(s.gap >= -1e-6);
        let tight = SolverOptions {
            tol_feas: 1e-12,
            tol_gap: 1e-12,
            max_iter: 100,
        };
        let s = solve(&p, &tight).unwrap();
        assert_relative_eq!(s.blocks[0][(0, 1)], 3.0, epsilon = 1e-5);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = ConicProgram::new();
        let b = p.add_block(1);
        p.add_objective(b, 0, 0, 1.0);
        p.add_constraint(vec![Term::new(b, 0, 0, 1.0)], -1.0);
        assert!(matches!(
            solve(&p, &SolverOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn detects_unboundedness() {
        // min -X11 s.t. X22 = 1: unbounded below.
        let mut p = ConicProgram::new();
        let b = p.add_block(2);
        p.add_objective(b, 0, 0, -1.0);
        p.add_constraint(vec![Term::new(b, 1, 1, 1.0)], 1.0);
        assert!(solve(&p, &SolverOptions::default()).is_err());
    }

    #[test]
    fn row_scaling_invariance() {
        let build = |scale: f64| {
            let mut p = ConicProgram::new();
            let b = p.add_block(3);
            for i in 0..3 {
                p.add_objective(b, i, i, 1.0 + i as f64);
            }
            p.add_objective(b, 0, 1, 0.7);
            p.add_constraint(
                vec![
                    Term::new(b, 0, 0, scale),
                    Term::new(b, 1, 1, scale),
                    Term::new(b, 2, 2, scale),
                ],
                3.0 * scale,
            );
            p.add_constraint(vec![Term::new(b, 0, 2, 2.0 * scale)], 0.5 * scale);
            p
        };
        let a = solve(&build(1.0), &SolverOptions::default()).unwrap();
        let b = solve(&build(250.0), &SolverOptions::default()).unwrap();
        assert_relative_eq!(a.objective, b.objective, epsilon = 1e-6);
        assert!((&a.blocks[0] - &b.blocks[0]).abs().max() < 1e-5);
    }

    #[test]
    fn dump_round_trip() {
        let mut p = ConicProgram::new();
        let b0 = p.add_block(2);
        let b1 = p.add_block(1);
        p.add_objective(b0, 1, 0, 2.5);
        p.objective_offset = -1.25;
        p.add_constraint(
            vec![Term::new(b0, 0, 0, 1.0), Term::new(b1, 0, 0, -1.0)],
            0.5,
        );
        let mut buf = Vec::new();
        p.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("blocks 2 1\n"));
        assert!(text.contains("c 0 0 1 2.5e0"));
        let q = ConicProgram::read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn validation_catches_bad_indices() {
        let mut p = ConicProgram::new();
        let b = p.add_block(2);
        p.add_constraint(vec![Term::new(b, 2, 0, 1.0)], 1.0);
        assert!(p.validate().is_err());
        let mut p = ConicProgram::new();
        p.add_objective(3, 0, 0, 1.0);
        assert!(p.validate().is_err());
    }
}
