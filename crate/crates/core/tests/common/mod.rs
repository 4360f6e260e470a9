//! Shared test oracles: slow, independent reimplementations used to
//! cross-check the library. Everything here works directly from definitions
//! (explicit difference matrices, subset enumeration, finite differences)
//! and never touches the solver paths under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ntp_bias_core::{synthesize_table, ContextTable, TokenId};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// (e_plus - e_minus) h^T as a dense V x d matrix.
pub fn pair_diff(vocab: usize, plus: TokenId, minus: TokenId, h: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(vocab, h.len());
    for c in 0..h.len() {
        m[((plus - 1) as usize, c)] += h[c];
        m[((minus - 1) as usize, c)] -= h[c];
    }
    m
}

/// In-support difference matrices (anchored), spanning the same space as all
/// in-support pairs.
pub fn support_span_rows(table: &ContextTable) -> Vec<DMatrix<f64>> {
    let v = table.vocab_size as usize;
    let mut rows = Vec::new();
    for c in &table.contexts {
        let anchor = c.anchor();
        for &z in &c.support[1..] {
            rows.push(pair_diff(v, z, anchor, &c.embedding));
        }
    }
    rows
}

/// Inequality rows: anchor minus each out-of-support token, per context.
pub fn inequality_rows(table: &ContextTable) -> Vec<DMatrix<f64>> {
    let v = table.vocab_size as usize;
    let mut rows = Vec::new();
    for c in &table.contexts {
        let anchor = c.anchor();
        for t in 1..=table.vocab_size {
            if !c.support.contains(&t) {
                rows.push(pair_diff(v, anchor, t, &c.embedding));
            }
        }
    }
    rows
}

/// Minimum-norm combination W = sum_i x_i rows_i with Gram x = rhs solved by
/// pseudo-inverse. Returns None when the numerical solve fails outright.
pub fn min_norm_combination(
    rows: &[&DMatrix<f64>],
    rhs: &DVector<f64>,
    shape: (usize, usize),
) -> Option<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 {
        return Some(DMatrix::zeros(shape.0, shape.1));
    }
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            gram[(a, b)] = rows[a].dot(rows[b]);
        }
    }
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let x = svd.solve(rhs, 1e-12 * smax.max(1e-300)).ok()?;
    let mut w = DMatrix::zeros(shape.0, shape.1);
    for a in 0..k {
        w += rows[a] * x[a];
    }
    Some(w)
}

pub struct SvmOracle {
    pub feasible: bool,
    pub w: Option<DMatrix<f64>>,
}

/// Exact hard-margin solution by enumerating every candidate active set of
/// the inequality rows. For each subset, solves the equality-constrained
/// minimum-norm problem through the Gram pseudo-inverse and keeps candidates
/// that are feasible for the full problem; the smallest-norm survivor is the
/// optimum. No feasible candidate at all means the system is infeasible.
/// Exponential in the number of inequality rows, so instances must be tiny.
pub fn svm_oracle(table: &ContextTable) -> SvmOracle {
    let v = table.vocab_size as usize;
    let d = table.dim;
    let eq = support_span_rows(table);
    let ineq = inequality_rows(table);
    let n = ineq.len();
    assert!(n <= 14, "oracle needs a tiny instance, got {n} inequality rows");
    let mut best: Option<DMatrix<f64>> = None;
    for mask in 0u32..(1u32 << n) {
        let active: Vec<&DMatrix<f64>> = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &ineq[i])
            .collect();
        let n_active = active.len();
        let rows: Vec<&DMatrix<f64>> = active.into_iter().chain(eq.iter()).collect();
        let mut rhs = DVector::zeros(rows.len());
        for a in 0..n_active {
            rhs[a] = 1.0;
        }
        let Some(w) = min_norm_combination(&rows, &rhs, (v, d)) else {
            continue;
        };
        let feas_ineq = ineq.iter().all(|r| r.dot(&w) >= 1.0 - 1e-8);
        let feas_eq = eq.iter().all(|r| r.dot(&w).abs() <= 1e-8);
        if feas_ineq && feas_eq {
            match &best {
                Some(b) if b.norm() <= w.norm() => {}
                _ => best = Some(w),
            }
        }
    }
    SvmOracle {
        feasible: best.is_some(),
        w: best,
    }
}

/// Minimum-norm least-squares solution of the anchored log-odds system,
/// together with the residual norm ||<rows, W> - b||_2.
pub fn wstar_oracle(table: &ContextTable) -> (DMatrix<f64>, f64) {
    let v = table.vocab_size as usize;
    let mut rows_owned = Vec::new();
    let mut b = Vec::new();
    for c in &table.contexts {
        let anchor = c.anchor();
        for (k, &z) in c.support.iter().enumerate().skip(1) {
            rows_owned.push(pair_diff(v, z, anchor, &c.embedding));
            b.push((c.probs[k] / c.probs[0]).ln());
        }
    }
    let rows: Vec<&DMatrix<f64>> = rows_owned.iter().collect();
    let rhs = DVector::from_vec(b.clone());
    let w = min_norm_combination(&rows, &rhs, (v, table.dim))
        .expect("pseudo-inverse solve of the anchored Gram system");
    let resid = rows_owned
        .iter()
        .zip(&b)
        .map(|(r, &bi)| (r.dot(&w) - bi).powi(2))
        .sum::<f64>()
        .sqrt();
    (w, resid)
}

/// Orthogonal projection onto the in-support difference span, through the
/// Gram pseudo-inverse of the explicit spanning matrices.
pub fn project_span_oracle(table: &ContextTable, x: &DMatrix<f64>) -> DMatrix<f64> {
    let rows_owned = support_span_rows(table);
    if rows_owned.is_empty() {
        return DMatrix::zeros(x.nrows(), x.ncols());
    }
    let rows: Vec<&DMatrix<f64>> = rows_owned.iter().collect();
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.dot(x)));
    min_norm_combination(&rows, &rhs, (x.nrows(), x.ncols()))
        .expect("projection Gram solve")
}

/// Cross entropy straight from the definition, full softmax per context.
pub fn ce_oracle(table: &ContextTable, w: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for c in &table.contexts {
        let logits = w * &c.embedding;
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        for (k, &z) in c.support.iter().enumerate() {
            total += c.prior * c.probs[k] * (lse - logits[(z - 1) as usize]);
        }
    }
    total
}

/// Conditional entropy of the next-token distributions.
pub fn entropy_oracle(table: &ContextTable) -> f64 {
    let mut h = 0.0;
    for c in &table.contexts {
        for &p in &c.probs {
            h -= c.prior * p * p.ln();
        }
    }
    h
}

/// Smallest inequality-row margin of a candidate decoder matrix.
pub fn min_margin(table: &ContextTable, w: &DMatrix<f64>) -> f64 {
    inequality_rows(table)
        .iter()
        .map(|r| r.dot(w))
        .fold(f64::INFINITY, f64::min)
}

/// Central finite differences of a scalar function of a matrix.
pub fn fd_grad<F: Fn(&DMatrix<f64>) -> f64>(
    f: F,
    w: &DMatrix<f64>,
    step: f64,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let mut wp = w.clone();
            wp[(i, j)] += step;
            let mut wm = w.clone();
            wm[(i, j)] -= step;
            g[(i, j)] = (f(&wp) - f(&wm)) / (2.0 * step);
        }
    }
    g
}

fn simplex(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..size)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Small random table for oracle comparisons, deterministic per seed. Bounds
/// keep the subset-enumeration oracle affordable.
pub fn random_table(seed: u64, max_m: usize, max_v: u32, max_d: usize) -> ContextTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=max_m);
    let v = rng.random_range(2..=max_v);
    let d = rng.random_range(1..=max_d);
    let mut supports = Vec::with_capacity(m);
    let mut probs = Vec::with_capacity(m);
    let mut embeds = Vec::with_capacity(m);
    for _ in 0..m {
        let s = rng.random_range(1..v) as usize;
        let mut pool: Vec<TokenId> = (1..=v).collect();
        for i in 0..s {
            let k = rng.random_range(i..pool.len());
            pool.swap(i, k);
        }
        let mut sup = pool[..s].to_vec();
        sup.sort_unstable();
        supports.push(sup);
        probs.push(simplex(&mut rng, s));
        embeds.push(
            (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>(),
        );
    }
    let priors = simplex(&mut rng, m);
    synthesize_table(v, d, supports, probs, priors, Some(embeds), 0)
        .expect("random table construction")
}
