//! Decisions about a context table: can a linear decoder reproduce the
//! empirical next-token distributions exactly (and which minimum-norm decoder
//! does), can it separate in-support from out-of-support tokens, and is the
//! embedding set overparameterized.
//!
//! Matching the distributions only constrains in-support log odds, so it
//! reduces to the anchored linear system <(e_z - e_anchor) h_j^T, W> =
//! log(p_jz / p_j,anchor). Its minimum-norm least-squares solution lives in
//! the span handled by `subspace`; the system is declared solvable when the
//! relative residual is below tolerance.

use nalgebra::{DMatrix, DVector};

use crate::corpus::{ContextTable, TokenId};
use crate::decoder::Decoder;
use crate::error::{CoreError, Result};
use crate::subspace::{build_basis, pair_direction, unvectorize, SubspaceBasis};
use crate::svm::{solve_svm, Certificate, SvmOptions, SvmSolution, SvmStatus};

/// Stacked anchored rows: a vec(W) = b.
pub struct AnchoredSystem {
    /// K x (V*d); row order follows contexts, support tokens ascending.
    pub a: DMatrix<f64>,
    /// Log odds against the anchor.
    pub b: DVector<f64>,
    /// (context index, support token) per row.
    pub rows: Vec<(usize, TokenId)>,
}

pub fn anchored_system(table: &ContextTable) -> AnchoredSystem {
    let v = table.vocab_size as usize;
    let ambient = v * table.dim;
    let k = table.num_anchored_pairs();
    let mut a = DMatrix::zeros(k, ambient);
    let mut b = DVector::zeros(k);
    let mut rows = Vec::with_capacity(k);
    let mut r = 0;
    for (j, c) in table.contexts.iter().enumerate() {
        let anchor = c.anchor();
        for (idx, &z) in c.support.iter().enumerate().skip(1) {
            let dir = pair_direction(v, z, anchor, &c.embedding);
            a.row_mut(r).copy_from(&dir.transpose());
            b[r] = (c.probs[idx] / c.probs[0]).ln();
            rows.push((j, z));
            r += 1;
        }
    }
    AnchoredSystem { a, b, rows }
}

#[derive(Clone, Debug)]
pub struct CompatibilityResult {
    pub compatible: bool,
    /// Minimum-norm least-squares solution of the anchored system.
    pub w_star: Decoder,
    /// ||A vec(W) - b|| / (1 + ||b||), the decision quantity.
    pub residual: f64,
    pub raw_residual: f64,
    /// Numerical rank of the anchored system.
    pub rank: usize,
    /// Residual threshold the decision used.
    pub tol: f64,
}

/// Minimum-norm least-squares fit of the anchored log-odds system.
pub fn solve_wstar(table: &ContextTable, tol: f64) -> Result<CompatibilityResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CoreError::InvalidConfig(format!(
            "residual tolerance must be positive, got {tol}"
        )));
    }
    let v = table.vocab_size as usize;
    let ambient = v * table.dim;
    let sys = anchored_system(table);
    let k = sys.rows.len();
    if k == 0 {
        return Ok(CompatibilityResult {
            compatible: true,
            w_star: Decoder::zeros(v, table.dim),
            residual: 0.0,
            raw_residual: 0.0,
            rank: 0,
            tol,
        });
    }
    let svd = sys.a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * k.max(ambient) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd
        .solve(&sys.b, eps)
        .map_err(|e| CoreError::InvalidTable(format!("anchored system solve failed: {e}")))?;
    let raw_residual = (&sys.a * &x - &sys.b).norm();
    let residual = raw_residual / (1.0 + sys.b.norm());
    Ok(CompatibilityResult {
        compatible: residual <= tol,
        w_star: Decoder::from_matrix_unchecked(unvectorize(&x, v, table.dim)),
        residual,
        raw_residual,
        rank,
        tol,
    })
}

#[derive(Clone, Debug)]
pub struct SeparabilityResult {
    pub separable: bool,
    /// Unit-margin separator when separable.
    pub witness: Option<Decoder>,
    /// Vanishing nonnegative combination when not.
    pub certificate: Option<Certificate>,
    pub iterations: usize,
}

/// Decides hard-margin separability in the complement. An exhausted solver
/// budget surfaces as an error rather than a guess.
pub fn check_separability(
    table: &ContextTable,
    basis: &SubspaceBasis,
    opts: &SvmOptions,
) -> Result<SeparabilityResult> {
    let sol = solve_svm(table, basis, opts)?;
    separability_from_solution(sol)
}

pub fn separability_from_solution(sol: SvmSolution) -> Result<SeparabilityResult> {
    match sol.status {
        SvmStatus::Optimal => Ok(SeparabilityResult {
            separable: true,
            witness: sol.w_mm,
            certificate: None,
            iterations: sol.iterations,
        }),
        SvmStatus::Infeasible => Ok(SeparabilityResult {
            separable: false,
            witness: None,
            certificate: sol.certificate,
            iterations: sol.iterations,
        }),
        SvmStatus::Undecided => Err(CoreError::Undecided {
            iterations: sol.iterations,
        }),
    }
}

#[derive(Clone, Debug)]
pub struct OverparamResult {
    /// True when the embeddings are linearly independent, which requires
    /// d >= m and makes every decision above well conditioned.
    pub satisfied: bool,
    pub rank_h: usize,
    pub dim: usize,
    pub contexts: usize,
}

pub fn overparam_check(table: &ContextTable) -> OverparamResult {
    let h = table.embedding_matrix();
    let svd = h.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank_h = if smax == 0.0 {
        0
    } else {
        svd.singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax)
            .count()
    };
    let m = table.num_contexts();
    OverparamResult {
        satisfied: rank_h == m && table.dim >= m,
        rank_h,
        dim: table.dim,
        contexts: m,
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    /// Relative residual tolerance for the anchored fit.
    pub ls_tol: f64,
    pub svm: SvmOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            ls_tol: 1e-8,
            svm: SvmOptions::default(),
        }
    }
}

/// Everything the geometry decides about one table.
pub struct TableAnalysis {
    pub basis: SubspaceBasis,
    pub compatibility: CompatibilityResult,
    pub separability: SeparabilityResult,
    pub overparam: OverparamResult,
}

pub fn analyze(table: &ContextTable, opts: &AnalyzeOptions) -> Result<TableAnalysis> {
    table.validate()?;
    let basis = build_basis(table);
    let compatibility = solve_wstar(table, opts.ls_tol)?;
    let separability = check_separability(table, &basis, &opts.svm)?;
    let overparam = overparam_check(table);
    Ok(TableAnalysis {
        basis,
        compatibility,
        separability,
        overparam,
    })
}
