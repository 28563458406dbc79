//! Infeasible primal-dual path-following method with the HKM direction and a
//! Mehrotra predictor-corrector step.

use nalgebra::{DMatrix, DVector};

use super::{ConicProgram, ConicSolution, ConicSolver, SolveStatus, SolverOptions};
use crate::error::Result;

type Blocks = Vec<DMatrix<f64>>;

const STEP_FRACTION: f64 = 0.95;
/// Objective magnitude (in scaled units) taken as evidence of divergence.
const DIVERGENCE: f64 = 1e8;
const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

/// Symmetric matrix entry `(block, row, col, value)`; off-diagonals appear
/// twice.
#[derive(Clone, Copy)]
struct SymEntry {
    block: usize,
    row: usize,
    col: usize,
    value: f64,
}

struct Scaled {
    sizes: Vec<usize>,
    c: Blocks,
    a: Vec<Vec<SymEntry>>,
    b: DVector<f64>,
    row_norm: Vec<f64>,
    b_scale: f64,
    c_scale: f64,
    offset: f64,
}

impl Scaled {
    fn new(p: &ConicProgram) -> Self {
        let sizes = p.block_sizes().to_vec();
        let mut a = Vec::with_capacity(p.num_constraints());
        let mut b = Vec::with_capacity(p.num_constraints());
        let mut row_norm = Vec::with_capacity(p.num_constraints());
        for con in p.constraints() {
            let mut entries = Vec::new();
            for t in &con.terms {
                if t.row == t.col {
                    entries.push(SymEntry {
                        block: t.block,
                        row: t.row,
                        col: t.col,
                        value: t.coeff,
                    });
                } else {
                    let h = 0.5 * t.coeff;
                    entries.push(SymEntry {
                        block: t.block,
                        row: t.row,
                        col: t.col,
                        value: h,
                    });
                    entries.push(SymEntry {
                        block: t.block,
                        row: t.col,
                        col: t.row,
                        value: h,
                    });
                }
            }
            let entries = merge(entries);
            let norm = entries
                .iter()
                .map(|e| e.value * e.value)
                .sum::<f64>()
                .sqrt();
            let norm = if norm > 0.0 { norm } else { 1.0 };
            a.push(
                entries
                    .into_iter()
                    .map(|e| SymEntry {
                        value: e.value / norm,
                        ..e
                    })
                    .collect(),
            );
            b.push(con.rhs / norm);
            row_norm.push(norm);
        }
        let mut b = DVector::from_vec(b);
        let b_scale = b.amax().max(1.0);
        b /= b_scale;
        let mut c = p.objective_matrices();
        let c_scale = c.iter().map(|m| m.amax()).fold(0.0, f64::max).max(1.0);
        for m in &mut c {
            *m /= c_scale;
        }
        let offset = p.objective_offset / (b_scale * c_scale);
        Self {
            sizes,
            c,
            a,
            b,
            row_norm,
            b_scale,
            c_scale,
            offset,
        }
    }

    fn zeros(&self) -> Blocks {
        self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect()
    }

    /// `A(Y)` for arbitrary (not necessarily symmetric) blocks.
    fn apply(&self, y: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.a.len(),
            self.a.iter().map(|row| {
                row.iter()
                    .map(|e| e.value * y[e.block][(e.row, e.col)])
                    .sum()
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out = self.zeros();
        for (row, &yi) in self.a.iter().zip(y.iter()) {
            for e in row {
                out[e.block][(e.row, e.col)] += yi * e.value;
            }
        }
        out
    }

    /// `M_ij = tr(A_i X A_j Z⁻¹)`
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.a.len();
        let mut out = DMatrix::zeros(m, m);
        // V_i = X A_i Z⁻¹, restricted to the blocks A_i touches
        let mut v: Vec<Vec<(usize, DMatrix<f64>)>> = Vec::with_capacity(m);
        for row in &self.a {
            let mut per_block: Vec<(usize, DMatrix<f64>)> = Vec::new();
            for e in row {
                let n = self.sizes[e.block];
                let idx = match per_block.iter().position(|(b, _)| *b == e.block) {
                    Some(i) => i,
                    None => {
                        per_block.push((e.block, DMatrix::zeros(n, n)));
                        per_block.len() - 1
                    }
                };
                let vb = &mut per_block[idx].1;
                let xb = &x[e.block];
                let zb = &zinv[e.block];
                for s in 0..n {
                    let xs = xb[(s, e.row)] * e.value;
                    if xs == 0.0 {
                        continue;
                    }
                    for t in 0..n {
                        vb[(s, t)] += xs * zb[(e.col, t)];
                    }
                }
            }
            v.push(per_block);
        }
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for e in &self.a[j] {
                    if let Some((_, vb)) = v[i].iter().find(|(b, _)| *b == e.block) {
                        acc += e.value * vb[(e.col, e.row)];
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

fn merge(mut entries: Vec<SymEntry>) -> Vec<SymEntry> {
    entries.sort_by_key(|e| (e.block, e.row, e.col));
    let mut out: Vec<SymEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(l) if l.block == e.block && l.row == e.row && l.col == e.col => l.value += e.value,
            _ => out.push(e),
        }
    }
    out.retain(|e| e.value != 0.0);
    out
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let mut inv = m.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Largest `α` with `X + α ΔX ⪰ 0` (infinite if every direction is PSD).
fn max_step(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        if xb.nrows() == 0 {
            continue;
        }
        let Some(chol) = xb.clone().cholesky() else {
            return 0.0;
        };
        let l = chol.l();
        let Some(half) = l.solve_lower_triangular(db) else {
            return 0.0;
        };
        let Some(mut w) = l.solve_lower_triangular(&half.transpose()) else {
            return 0.0;
        };
        symmetrize(&mut w);
        let lmin = w.symmetric_eigenvalues().min();
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    alpha
}

fn min_eigen(blocks: &[DMatrix<f64>]) -> f64 {
    blocks
        .iter()
        .filter(|b| b.nrows() > 0)
        .map(|b| b.clone().symmetric_eigenvalues().min())
        .fold(f64::INFINITY, f64::min)
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if m.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..6 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(ch) = mm.cholesky() {
            return Some(ch.solve(rhs));
        }
        reg = if reg == 0.0 {
            1e-14 * scale
        } else {
            reg * 100.0
        };
    }
    m.clone().lu().solve(rhs)
}

struct Direction {
    dx: Blocks,
    dy: DVector<f64>,
    dz: Blocks,
}

impl ConicSolver for InteriorPoint {
    fn solve(&self, program: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution> {
        program.validate()?;
        let s = Scaled::new(program);
        let m = s.b.len();
        let n_total: usize = s.sizes.iter().sum();

        let b_norm = s.b.norm();
        let c_norm = frob(&s.c);

        let mut x = s.zeros();
        let mut z = s.zeros();
        for (k, &n) in s.sizes.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let nf = n as f64;
            let bmax = s.b.iter().map(|v| 1.0 + v.abs()).fold(1.0, f64::max);
            let xi = 10f64.max(nf.sqrt()).max(nf * bmax / 2.0);
            let eta = 10f64.max(nf.sqrt()).max(s.c[k].norm()).max(1.0);
            x[k] = DMatrix::identity(n, n) * xi;
            z[k] = DMatrix::identity(n, n) * eta;
        }
        let mut y = DVector::zeros(m);

        let mut status = SolveStatus::MaxIterations;
        let mut message = String::from("iteration limit reached");
        let mut iterations = 0;
        let mut stalls = 0;

        if n_total == 0 {
            // nothing to optimise; feasible only if b = 0
            status = if b_norm == 0.0 {
                SolveStatus::Optimal
            } else {
                SolveStatus::Infeasible
            };
            message = String::from("empty program");
        } else {
            for iter in 0..opts.max_iter {
                iterations = iter;
                let ax = s.apply(&x);
                let rp = &s.b - &ax;
                let aty = s.adjoint(&y);
                let rd: Blocks =
                    s.c.iter()
                        .zip(&aty)
                        .zip(&z)
                        .map(|((c, a), zz)| c - a - zz)
                        .collect();
                let mu = inner(&x, &z) / n_total as f64;
                let pobj = inner(&s.c, &x);
                let dobj = s.b.dot(&y);
                let pinf = rp.norm() / (1.0 + b_norm);
                let dinf = frob(&rd) / (1.0 + c_norm);
                // the offset enters the magnitude, not the gap
                let relgap =
                    (pobj - dobj).abs() / (1.0 + (pobj + s.offset).abs() + (dobj + s.offset).abs());

                if pinf < opts.tol_feas && dinf < opts.tol_feas && relgap < opts.tol_gap {
                    status = SolveStatus::Optimal;
                    message = String::from("converged");
                    break;
                }

                // Farkas-type certificates from a diverging iterate
                if dobj > DIVERGENCE {
                    let ybar = &y / dobj;
                    let neg: Blocks = s.adjoint(&ybar).into_iter().map(|m| -m).collect();
                    if min_eigen(&neg) > -CERT_TOL {
                        status = SolveStatus::Infeasible;
                        message = String::from("primal infeasible (dual ray found)");
                        break;
                    }
                }
                if pobj < -DIVERGENCE {
                    let xbar: Blocks = x.iter().map(|b| b / (-pobj)).collect();
                    if s.apply(&xbar).norm() < CERT_TOL {
                        status = SolveStatus::Infeasible;
                        message = String::from("dual infeasible (primal ray found)");
                        break;
                    }
                }

                let Some(zinv) = z.iter().map(inverse_spd).collect::<Option<Blocks>>() else {
                    message = String::from("dual slack lost definiteness");
                    break;
                };
                let schur = s.schur(&x, &zinv);
                let x_rd_zinv: Blocks = x
                    .iter()
                    .zip(&rd)
                    .zip(&zinv)
                    .map(|((xb, r), zi)| xb * r * zi)
                    .collect();
                let base_rhs = &s.b + s.apply(&x_rd_zinv);

                let direction = |target: f64, corr: Option<&Blocks>| -> Option<Direction> {
                    let mut rhs = base_rhs.clone();
                    if target != 0.0 {
                        let t: Blocks = zinv.iter().map(|zi| zi * target).collect();
                        rhs -= s.apply(&t);
                    }
                    let corr_zinv: Option<Blocks> =
                        corr.map(|c| c.iter().zip(&zinv).map(|(cb, zi)| cb * zi).collect());
                    if let Some(cz) = &corr_zinv {
                        rhs += s.apply(cz);
                    }
                    let dy = solve_spd(&schur, &rhs)?;
                    let atdy = s.adjoint(&dy);
                    let dz: Blocks = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
                    let mut dx = Vec::with_capacity(x.len());
                    for k in 0..x.len() {
                        let mut d = &zinv[k] * target - &x[k] - &x[k] * &dz[k] * &zinv[k];
                        if let Some(cz) = &corr_zinv {
                            d -= &cz[k];
                        }
                        symmetrize(&mut d);
                        dx.push(d);
                    }
                    Some(Direction { dx, dy, dz })
                };

                let Some(pred) = direction(0.0, None) else {
                    message = String::from("schur complement solve failed");
                    break;
                };
                let ap = max_step(&x, &pred.dx).min(1.0);
                let ad = max_step(&z, &pred.dz).min(1.0);
                let x_aff: Blocks = x.iter().zip(&pred.dx).map(|(a, d)| a + d * ap).collect();
                let z_aff: Blocks = z.iter().zip(&pred.dz).map(|(a, d)| a + d * ad).collect();
                let mu_aff = inner(&x_aff, &z_aff) / n_total as f64;
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

                let corr: Blocks = pred.dx.iter().zip(&pred.dz).map(|(a, b)| a * b).collect();
                let Some(step) = direction(sigma * mu, Some(&corr)) else {
                    message = String::from("schur complement solve failed");
                    break;
                };
                let ap = (STEP_FRACTION * max_step(&x, &step.dx)).min(1.0);
                let ad = (STEP_FRACTION * max_step(&z, &step.dz)).min(1.0);

                for k in 0..x.len() {
                    x[k] += &step.dx[k] * ap;
                    z[k] += &step.dz[k] * ad;
                    symmetrize(&mut x[k]);
                    symmetrize(&mut z[k]);
                }
                y += &step.dy * ad;

                if ap < 1e-8 && ad < 1e-8 {
                    stalls += 1;
                    if stalls >= 3 {
                        if pinf > opts.tol_feas.sqrt() {
                            status = SolveStatus::Infeasible;
                            message = String::from("primal residual stagnated");
                        } else {
                            message = String::from("step length stagnated");
                        }
                        break;
                    }
                } else {
                    stalls = 0;
                }
                iterations = iter + 1;
            }
        }

        // undo scaling
        let blocks: Blocks = x.iter().map(|b| b * s.b_scale).collect();
        let slack: Blocks = z.iter().map(|b| b * s.c_scale).collect();
        let dual =
            DVector::from_iterator(m, y.iter().zip(&s.row_norm).map(|(v, n)| v * s.c_scale / n));
        let objective = program.objective_value(&blocks);
        let dual_objective = program
            .constraints()
            .iter()
            .zip(dual.iter())
            .map(|(c, v)| c.rhs * v)
            .sum::<f64>()
            + program.objective_offset;
        let primal_residual = program.equality_residual(&blocks).amax();
        let mut rd = program.objective_matrices();
        for (con, &yi) in program.constraints().iter().zip(dual.iter()) {
            for t in &con.terms {
                let r = &mut rd[t.block];
                if t.row == t.col {
                    r[(t.row, t.row)] -= yi * t.coeff;
                } else {
                    r[(t.row, t.col)] -= 0.5 * yi * t.coeff;
                    r[(t.col, t.row)] -= 0.5 * yi * t.coeff;
                }
            }
        }
        let dual_residual = rd
            .iter()
            .zip(&slack)
            .map(|(r, z)| (r - z).amax())
            .fold(0.0, f64::max);

        Ok(ConicSolution {
            blocks,
            dual,
            slack,
            objective,
            dual_objective,
            status,
            iterations,
            primal_residual,
            dual_residual,
            gap: objective - dual_objective,
            message,
        })
    }
}
