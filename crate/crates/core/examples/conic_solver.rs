//! The bundled interior-point solver on two small semidefinite programs with
//! known answers.
//!
//! ```text
//! cargo run --release --example conic_solver
//! ```

use mema_toa::conic::{solve, ConicProgram, SolverOptions, Term};
use nalgebra::DMatrix;

fn main() -> mema_toa::Result<()> {
    // λ_min(C) = min tr(CX) s.t. tr(X) = 1, X ⪰ 0
    let n = 5;
    let c = DMatrix::from_fn(n, n, |i, j| {
        1.0 / (1.0 + i as f64 + j as f64) - if i == j { 0.3 * i as f64 } else { 0.0 }
    });
    let mut p = ConicProgram::new();
    let b = p.add_block(n);
    for i in 0..n {
        for j in i..n {
            p.add_objective(b, i, j, if i == j { c[(i, j)] } else { 2.0 * c[(i, j)] });
        }
    }
    p.add_constraint((0..n).map(|i| Term::new(b, i, i, 1.0)).collect(), 1.0);
    let s = solve(&p, &SolverOptions::default())?;
    let exact = c.clone().symmetric_eigenvalues().min();
    println!(
        "smallest eigenvalue: solver {:.9}, eigendecomposition {exact:.9} ({} iterations, gap {:.1e})",
        s.objective, s.iterations, s.gap
    );

    // min (x − 3)² + (y + 1)² lifted into one 3×3 block [[X, v], [vᵀ, 1]]
    let mut p = ConicProgram::new();
    let b = p.add_block(3);
    p.add_objective(b, 0, 0, 1.0);
    p.add_objective(b, 1, 1, 1.0);
    p.add_objective(b, 0, 2, -6.0);
    p.add_objective(b, 1, 2, 2.0);
    p.objective_offset = 10.0;
    p.add_constraint(vec![Term::new(b, 2, 2, 1.0)], 1.0);
    let tight = SolverOptions {
        tol_feas: 1e-12,
        tol_gap: 1e-12,
        max_iter: 100,
    };
    let s = solve(&p, &tight)?;
    let x = &s.blocks[0];
    println!(
        "lifted quadratic: minimizer ({:.6}, {:.6}), objective {:.2e}, smallest eigenvalue of X {:.1e}",
        x[(0, 2)],
        x[(1, 2)],
        s.objective,
        s.min_eigenvalue()
    );
    Ok(())
}
