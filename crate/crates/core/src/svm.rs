//! Hard-margin separation of in-support from out-of-support tokens in the
//! complement of the in-support difference span.
//!
//! Constraints: for every context j and out-of-support token v, the decoder
//! must score the anchor above v by at least 1, i.e. <W, D_i> >= 1 with
//! D_i = (e_anchor - e_v) h_j^T, while W stays orthogonal to the in-support
//! span. Working in an orthonormal basis U of span{perp(D_i)} turns this into
//! min (1/2)||c||^2 subject to G c >= 1.
//!
//! The solver is dual coordinate ascent on
//! max 1'lambda - (1/2)||G' lambda||^2 over lambda >= 0: one pass updates
//! lambda_i <- max(0, lambda_i + (1 - g_i'c) / ||g_i||^2) with c maintained
//! incrementally and recomputed as G' lambda after every sweep. It stops when
//! the duality gap and worst violation fall under tolerance, or when the
//! multipliers certify infeasibility (lambda >= 0 with G' lambda ~ 0 and
//! growing mass 1'lambda, which makes G c >= 1 impossible).

use nalgebra::{DMatrix, DVector};

use crate::corpus::{ContextTable, TokenId};
use crate::decoder::Decoder;
use crate::error::{CoreError, Result};
use crate::subspace::{pair_direction, unvectorize, SubspaceBasis};

/// Inequality directions expressed in complement coordinates.
pub struct InequalitySystem {
    /// n x q constraint matrix; row i is the coordinate vector of perp(D_i).
    pub g: DMatrix<f64>,
    /// V*d x q orthonormal basis of span{perp(D_i)}.
    pub span: DMatrix<f64>,
    /// (context index, out-of-support token) per row, contexts ascending,
    /// tokens ascending within a context.
    pub rows: Vec<(usize, TokenId)>,
    /// Largest raw direction norm, used to scale zero thresholds.
    pub row_scale: f64,
}

/// Builds the inequality rows and an orthonormal basis of their projected
/// span. Rows keep their identity even when their projection is numerically
/// zero; such rows make the system infeasible and the solver reports them.
pub fn build_inequalities(table: &ContextTable, basis: &SubspaceBasis) -> InequalitySystem {
    let v = table.vocab_size as usize;
    let ambient = v * table.dim;
    let mut rows = Vec::new();
    let mut projected: Vec<DVector<f64>> = Vec::new();
    let mut row_scale = 0.0f64;
    for (j, c) in table.contexts.iter().enumerate() {
        let anchor = c.anchor();
        for t in 1..=table.vocab_size {
            if !c.support.contains(&t) {
                let raw = pair_direction(v, anchor, t, &c.embedding);
                row_scale = row_scale.max(raw.norm());
                projected.push(basis.perp_vec(&raw));
                rows.push((j, t));
            }
        }
    }
    let n = rows.len();
    if n == 0 {
        return InequalitySystem {
            g: DMatrix::zeros(0, 0),
            span: DMatrix::zeros(ambient, 0),
            rows,
            row_scale,
        };
    }
    let p = DMatrix::from_columns(&projected);
    let qr = p.clone().col_piv_qr();
    let r = qr.r();
    let scale = if r.nrows() == 0 { 0.0 } else { r[(0, 0)].abs() };
    let rank = if scale == 0.0 {
        0
    } else {
        let tol = 1e-10 * scale;
        (0..r.nrows().min(r.ncols()))
            .take_while(|&i| r[(i, i)].abs() > tol)
            .count()
    };
    let span = qr.q().columns(0, rank).into_owned();
    let g = p.tr_mul(&span);
    InequalitySystem {
        g,
        span,
        rows,
        row_scale,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvmStatus {
    Optimal,
    Infeasible,
    Undecided,
}

impl SvmStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SvmStatus::Optimal => "optimal",
            SvmStatus::Infeasible => "infeasible",
            SvmStatus::Undecided => "undecided",
        }
    }
}

/// Nonnegative combination of inequality rows that sums to (numerically)
/// zero: any c with G c >= 1 would give 0 = lambda'G c >= 1'lambda > 0.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub lambda: Vec<f64>,
    /// ||G' lambda||.
    pub combo_norm: f64,
    /// 1' lambda.
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct SvmOptions {
    /// Relative duality-gap and violation tolerance.
    pub tol: f64,
    /// Budget in coordinate updates.
    pub max_iters: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tol: 1e-8,
            max_iters: 1_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SvmSolution {
    pub status: SvmStatus,
    /// Unit-margin separator, present when status is Optimal.
    pub w_mm: Option<Decoder>,
    pub norm: f64,
    /// Smallest constraint value of w_mm / ||w_mm||.
    pub margin_normalized: f64,
    /// Worst complementarity or feasibility defect at the returned point.
    pub kkt_residual: f64,
    /// Rows whose constraints hold with near equality.
    pub active: Vec<(usize, TokenId)>,
    pub lambda: Vec<f64>,
    pub certificate: Option<Certificate>,
    /// Coordinate updates performed.
    pub iterations: usize,
    pub converged: bool,
}

fn infeasible_solution(
    lambda: Vec<f64>,
    combo_norm: f64,
    iterations: usize,
) -> SvmSolution {
    let mass = lambda.iter().sum();
    SvmSolution {
        status: SvmStatus::Infeasible,
        w_mm: None,
        norm: f64::NAN,
        margin_normalized: f64::NEG_INFINITY,
        kkt_residual: f64::NAN,
        active: Vec::new(),
        lambda: lambda.clone(),
        certificate: Some(Certificate {
            lambda,
            combo_norm,
            mass,
        }),
        iterations,
        converged: true,
    }
}

/// Solves the separation problem for the table in the complement of `basis`.
pub fn solve_svm(
    table: &ContextTable,
    basis: &SubspaceBasis,
    opts: &SvmOptions,
) -> Result<SvmSolution> {
    let sys = build_inequalities(table, basis);
    solve_inequalities(&sys, basis, opts)
}

pub fn solve_inequalities(
    sys: &InequalitySystem,
    basis: &SubspaceBasis,
    opts: &SvmOptions,
) -> Result<SvmSolution> {
    let n = sys.rows.len();
    if n == 0 {
        return Err(CoreError::InvalidTable(
            "no out-of-support pairs to separate".into(),
        ));
    }
    let q = sys.g.ncols();
    let zero_tol = 1e-10 * sys.row_scale.max(f64::MIN_POSITIVE);

    // A row whose projection vanished asks a zero vector to beat margin 1.
    let row_norms2: Vec<f64> = (0..n).map(|i| sys.g.row(i).norm_squared()).collect();
    for i in 0..n {
        if row_norms2[i].sqrt() <= zero_tol {
            let mut lambda = vec![0.0; n];
            lambda[i] = 1.0;
            return Ok(infeasible_solution(lambda, row_norms2[i].sqrt(), 0));
        }
    }
    if q == 0 {
        let mut lambda = vec![0.0; n];
        lambda[0] = 1.0;
        return Ok(infeasible_solution(lambda, 0.0, 0));
    }

    let mut lambda = DVector::<f64>::zeros(n);
    let mut c = DVector::<f64>::zeros(q);
    let mut iterations = 0usize;
    let mut sweep = 0usize;

    loop {
        sweep += 1;
        // One Gauss-Seidel sweep over the multipliers.
        for i in 0..n {
            let gi = sys.g.row(i);
            let resid = 1.0 - gi.tr_dot(&c);
            let step = (resid / row_norms2[i]).max(-lambda[i]);
            if step != 0.0 {
                lambda[i] += step;
                c.axpy(step, &gi.transpose(), 1.0);
            }
            iterations += 1;
        }
        // Refresh c to kill incremental drift; afterwards c = G' lambda holds
        // exactly, so dual stationarity is free.
        c = sys.g.tr_mul(&lambda);

        let margins = &sys.g * &c;
        let viol = (0..n).fold(0.0f64, |a, i| a.max(1.0 - margins[i]));
        let dual_obj = lambda.sum() - 0.5 * c.norm_squared();
        if viol < 0.5 {
            let scale = 1.0 / (1.0 - viol);
            let primal_obj = 0.5 * (c.norm() * scale).powi(2);
            let gap = primal_obj - dual_obj;
            if viol <= opts.tol && gap <= opts.tol * (1.0 + primal_obj.abs()) {
                let comp = (0..n).fold(0.0f64, |a, i| {
                    a.max(lambda[i] * (margins[i] - 1.0).abs())
                });
                let active_tol = 1e-6 * (1.0 + margins.amax());
                let active = (0..n)
                    .filter(|&i| margins[i] <= 1.0 + active_tol)
                    .map(|i| sys.rows[i])
                    .collect();
                let w = unvectorize(
                    &(&sys.span * &c),
                    basis.vocab as usize,
                    basis.dim,
                );
                let norm = c.norm();
                let margin_normalized = margins.min() / norm;
                return Ok(SvmSolution {
                    status: SvmStatus::Optimal,
                    w_mm: Some(Decoder::from_matrix_unchecked(w)),
                    norm,
                    margin_normalized,
                    kkt_residual: comp.max(viol),
                    active,
                    lambda: lambda.iter().cloned().collect(),
                    certificate: None,
                    iterations,
                    converged: true,
                });
            }
        }
        // Unbounded dual growth signals infeasibility; confirm it by
        // polishing the normalized multipliers into an exact-looking
        // vanishing combination before trusting it.
        let budget_spent = iterations >= opts.max_iters;
        if (sweep.is_multiple_of(16) && lambda.sum() >= 100.0) || budget_spent {
            if let Some((mu, combo_norm)) = polish_certificate(&sys.g, &lambda, sys.row_scale) {
                return Ok(infeasible_solution(mu, combo_norm, iterations));
            }
        }
        if budget_spent {
            return Ok(SvmSolution {
                status: SvmStatus::Undecided,
                w_mm: None,
                norm: f64::NAN,
                margin_normalized: f64::NAN,
                kkt_residual: viol,
                active: Vec::new(),
                lambda: lambda.iter().cloned().collect(),
                certificate: None,
                iterations,
                converged: false,
            });
        }
    }
}

/// Least-squares refinement of a suspected vanishing combination: restrict to
/// the rows carrying multiplier mass, solve min ||G_s' mu||^2 subject to
/// sum(mu) = 1, and accept only a verified certificate (mu >= 0, unit mass,
/// combination norm tiny against the row scale).
fn polish_certificate(
    g: &DMatrix<f64>,
    lambda: &DVector<f64>,
    row_scale: f64,
) -> Option<(Vec<f64>, f64)> {
    let mass = lambda.sum();
    if mass <= 0.0 || mass.is_nan() {
        return None;
    }
    let n = lambda.len();
    let support: Vec<usize> = (0..n).filter(|&i| lambda[i] / mass > 1e-6).collect();
    let k = support.len();
    if k == 0 {
        return None;
    }
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            kkt[(a, b)] = g.row(support[a]).tr_dot(&g.row(support[b]).transpose());
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let svd = kkt.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let sol = svd.solve(&rhs, 1e-14 * smax.max(f64::MIN_POSITIVE)).ok()?;
    let mut mu = vec![0.0; n];
    let mut total = 0.0;
    for (a, &i) in support.iter().enumerate() {
        if sol[a] < -1e-10 {
            return None;
        }
        mu[i] = sol[a].max(0.0);
        total += mu[i];
    }
    if total <= 0.5 || total.is_nan() {
        return None;
    }
    for v in mu.iter_mut() {
        *v /= total;
    }
    let mut combo = DVector::<f64>::zeros(g.ncols());
    for (i, &w) in mu.iter().enumerate() {
        if w > 0.0 {
            combo.axpy(w, &g.row(i).transpose(), 1.0);
        }
    }
    let combo_norm = combo.norm();
    if combo_norm <= 1e-8 * row_scale.max(f64::MIN_POSITIVE) {
        Some((mu, combo_norm))
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MarginReport {
    /// Smallest score gap between any in-support and out-of-support token.
    pub raw: f64,
    /// Raw margin of W / ||W||.
    pub normalized: f64,
}

/// Functional margin of a decoder over every (in-support, out-of-support)
/// token pair of every context.
pub fn margin_of(table: &ContextTable, w: &Decoder) -> Result<MarginReport> {
    let norm = w.norm();
    if norm == 0.0 {
        return Err(CoreError::ZeroDecoder);
    }
    let mut raw = f64::INFINITY;
    for c in &table.contexts {
        let logits = w.logits(&c.embedding);
        for &z in &c.support {
            for t in 1..=table.vocab_size {
                if !c.support.contains(&t) {
                    raw = raw.min(logits[(z - 1) as usize] - logits[(t - 1) as usize]);
                }
            }
        }
    }
    Ok(MarginReport {
        raw,
        normalized: raw / norm,
    })
}
