//! Gradient training of the decoder and the norm-constrained solution path.
//!
//! The loss gradient is sum_j pi_j (softmax(W h_j) - p_j) h_j^T with p_j the
//! dense empirical distribution. A curvature bound follows from the softmax
//! Jacobian: half the top eigenvalue of the prior-weighted embedding second
//! moment. Plain, normalized and Adam updates share one loop that records
//! diagnostics on a fixed iteration grid; the constrained path minimizes the
//! loss over Frobenius balls of growing radius with projected descent, warm
//! starting each radius at the previous solution.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::ContextTable;
use crate::decoder::Decoder;
use crate::error::{CoreError, Result};
use crate::feasibility::{solve_wstar, AnalyzeOptions};
use crate::io::fmt_f64;
use crate::metrics::{alignment, ce, entropy, softmax, subspace_distance, TraceRow};
use crate::subspace::{build_basis, SubspaceBasis};
use crate::svm::{solve_svm, SvmStatus};

fn grad_mat(table: &ContextTable, w: &DMatrix<f64>) -> DMatrix<f64> {
    let v = table.vocab_size as usize;
    let mut g = DMatrix::zeros(v, table.dim);
    for c in &table.contexts {
        let logits = w * &c.embedding;
        let mut r = softmax(&logits);
        for (k, &z) in c.support.iter().enumerate() {
            r[(z - 1) as usize] -= c.probs[k];
        }
        g.ger(c.prior, &r, &c.embedding, 1.0);
    }
    g
}

/// Gradient of the cross entropy at the decoder.
pub fn grad_ce(table: &ContextTable, w: &Decoder) -> Decoder {
    Decoder::from_matrix_unchecked(grad_mat(table, w.matrix()))
}

/// Curvature bound: half the largest eigenvalue of sum_j pi_j h_j h_j^T.
/// Step sizes up to the reciprocal of twice this value give guaranteed
/// descent with room to spare.
pub fn smoothness_estimate(table: &ContextTable) -> f64 {
    let d = table.dim;
    let mut second_moment = DMatrix::zeros(d, d);
    for c in &table.contexts {
        second_moment.ger(c.prior, &c.embedding, &c.embedding, 1.0);
    }
    let eigs = second_moment.symmetric_eigenvalues();
    0.5 * eigs.iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainAlgo {
    Gd,
    Ngd,
    Adam,
}

impl TrainAlgo {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainAlgo::Gd => "gd",
            TrainAlgo::Ngd => "ngd",
            TrainAlgo::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(TrainAlgo::Gd),
            "ngd" => Ok(TrainAlgo::Ngd),
            "adam" => Ok(TrainAlgo::Adam),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown algorithm {other:?} (expected gd, ngd or adam)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zero,
    /// Entries drawn N(0, 1/d).
    Random { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub algo: TrainAlgo,
    pub eta: f64,
    pub iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init: Init,
    /// Diagnostics are recorded at multiples of this, plus the last step.
    pub record_every: usize,
    /// Skips the plain-descent step-size guard.
    pub allow_large_eta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: TrainAlgo::Gd,
            eta: 0.1,
            iters: 1000,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            init: Init::Zero,
            record_every: 100,
            allow_large_eta: false,
        }
    }
}

/// Reference objects the trace diagnostics compare against.
#[derive(Clone)]
pub struct TrainRefs {
    pub w_star: Decoder,
    /// Absent when the table is not separable.
    pub w_mm: Option<Decoder>,
    pub basis: SubspaceBasis,
}

/// Computes the references from scratch; separator absent on infeasibility.
pub fn compute_refs(table: &ContextTable, opts: &AnalyzeOptions) -> Result<TrainRefs> {
    let basis = build_basis(table);
    let w_star = solve_wstar(table, opts.ls_tol)?.w_star;
    let sol = solve_svm(table, &basis, &opts.svm)?;
    let w_mm = match sol.status {
        SvmStatus::Optimal => sol.w_mm,
        SvmStatus::Infeasible => None,
        SvmStatus::Undecided => {
            return Err(CoreError::Undecided {
                iterations: sol.iterations,
            })
        }
    };
    Ok(TrainRefs {
        w_star,
        w_mm,
        basis,
    })
}

pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub final_w: Decoder,
    pub entropy: f64,
}

fn init_matrix(init: Init, vocab: usize, dim: usize) -> DMatrix<f64> {
    match init {
        Init::Zero => DMatrix::zeros(vocab, dim),
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (dim as f64).sqrt();
            DMatrix::from_fn(vocab, dim, |_, _| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * scale
            })
        }
    }
}

fn validate_train_config(cfg: &TrainConfig, table: &ContextTable) -> Result<()> {
    if !(cfg.eta.is_finite() && cfg.eta > 0.0) {
        return Err(CoreError::InvalidConfig(format!(
            "step size must be positive, got {}",
            cfg.eta
        )));
    }
    if cfg.record_every == 0 {
        return Err(CoreError::InvalidConfig("record_every must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(CoreError::InvalidConfig(
            "moment decay rates must lie in [0, 1)".into(),
        ));
    }
    if !(cfg.eps.is_finite() && cfg.eps > 0.0) {
        return Err(CoreError::InvalidConfig("eps must be positive".into()));
    }
    if cfg.algo == TrainAlgo::Gd && !cfg.allow_large_eta {
        let l = smoothness_estimate(table);
        if l > 0.0 && cfg.eta > 1.0 / (2.0 * l) * (1.0 + 1e-12) {
            return Err(CoreError::InvalidConfig(format!(
                "step size {} exceeds the safe bound {} (pass allow_large_eta to override)",
                cfg.eta,
                1.0 / (2.0 * l)
            )));
        }
    }
    Ok(())
}

/// Runs the configured training loop, recording diagnostics at every
/// `record_every`-th iteration and at the final one. Iteration k's row is
/// measured before the k-th update is applied, so row 0 is the init.
pub fn train(
    table: &ContextTable,
    cfg: &TrainConfig,
    refs: Option<&TrainRefs>,
) -> Result<TrainTrace> {
    table.validate()?;
    validate_train_config(cfg, table)?;
    let v = table.vocab_size as usize;
    let d = table.dim;
    let h = entropy(table);
    let mut w = init_matrix(cfg.init, v, d);
    let mut m1: DMatrix<f64> = DMatrix::zeros(v, d);
    let mut m2: DMatrix<f64> = DMatrix::zeros(v, d);
    let mut rows = Vec::new();

    for k in 0..=cfg.iters {
        let g = grad_mat(table, &w);
        let gnorm = g.norm();
        let wnorm = w.norm();
        if !gnorm.is_finite() || !wnorm.is_finite() {
            return Err(CoreError::NonFinite { iter: k });
        }
        if k % cfg.record_every == 0 || k == cfg.iters {
            let dec = Decoder::from_matrix_unchecked(w.clone());
            let ce_val = ce(table, &dec);
            let (align_raw, align_corrected, dist) = match refs {
                Some(r) => {
                    let (a_raw, a_cor) = match &r.w_mm {
                        Some(mm) => (
                            alignment(&dec, mm),
                            alignment(&dec.sub(&r.w_star), mm),
                        ),
                        None => (f64::NAN, f64::NAN),
                    };
                    (a_raw, a_cor, subspace_distance(&dec, &r.w_star, &r.basis))
                }
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            rows.push(TraceRow {
                iter: k,
                ce: ce_val,
                ce_gap: ce_val - h,
                norm: wnorm,
                align_raw,
                align_corrected,
                subspace_dist: dist,
                grad_norm: gnorm,
            });
        }
        if k == cfg.iters {
            break;
        }
        match cfg.algo {
            TrainAlgo::Gd => {
                let eta = cfg.eta;
                w.zip_apply(&g, |wi, gi| *wi -= eta * gi);
            }
            TrainAlgo::Ngd => {
                if gnorm > 1e-300 {
                    let step = cfg.eta / gnorm;
                    w.zip_apply(&g, |wi, gi| *wi -= step * gi);
                }
            }
            TrainAlgo::Adam => {
                let t = (k + 1) as i32;
                m1.zip_apply(&g, |v1, gi| *v1 = cfg.beta1 * *v1 + (1.0 - cfg.beta1) * gi);
                m2.zip_apply(&g, |v2, gi| *v2 = cfg.beta2 * *v2 + (1.0 - cfg.beta2) * gi * gi);
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..v {
                    for j in 0..d {
                        let mhat = m1[(i, j)] / c1;
                        let vhat = m2[(i, j)] / c2;
                        w[(i, j)] -= cfg.eta * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
    }
    Ok(TrainTrace {
        rows,
        final_w: Decoder::from_matrix_unchecked(w),
        entropy: h,
    })
}

// ------------------------------------------------------- constrained path

#[derive(Clone, Debug)]
pub struct RegPathConfig {
    /// Frobenius-ball radii, visited in order with warm starts.
    pub radii: Vec<f64>,
    /// Relative tolerance on the projected-gradient residual.
    pub inner_tol: f64,
    /// Iteration budget per radius.
    pub inner_budget: usize,
}

impl Default for RegPathConfig {
    fn default() -> Self {
        RegPathConfig {
            radii: (0..=8).map(|k| f64::powi(2.0, k)).collect(),
            inner_tol: 1e-8,
            inner_budget: 200_000,
        }
    }
}

#[derive(Clone)]
pub struct RegPathPoint {
    pub b: f64,
    pub w: Decoder,
    pub norm: f64,
    /// Cosine between the constrained solution and the separator.
    pub align_mm: f64,
    pub subspace_dist: f64,
    pub ce_gap: f64,
    pub converged: bool,
    pub iters: usize,
}

fn project_ball(w: &mut DMatrix<f64>, radius: f64) {
    let n = w.norm();
    if n > radius {
        *w *= radius / n;
    }
}

/// Minimizes the loss over each ball in turn by projected descent.
pub fn regpath(
    table: &ContextTable,
    cfg: &RegPathConfig,
    refs: Option<&TrainRefs>,
) -> Result<Vec<RegPathPoint>> {
    table.validate()?;
    if cfg.radii.is_empty() {
        return Err(CoreError::InvalidConfig("no radii requested".into()));
    }
    if cfg.radii.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
        return Err(CoreError::InvalidConfig("radii must be positive".into()));
    }
    if !(cfg.inner_tol.is_finite() && cfg.inner_tol > 0.0) {
        return Err(CoreError::InvalidConfig("inner_tol must be positive".into()));
    }
    let l = smoothness_estimate(table);
    if l <= 0.0 {
        return Err(CoreError::InvalidConfig(
            "zero curvature (all embeddings vanish), no step size exists".into(),
        ));
    }
    let eta = 1.0 / (2.0 * l);
    let h = entropy(table);
    let v = table.vocab_size as usize;
    let d = table.dim;
    let mut w = DMatrix::zeros(v, d);
    let mut points = Vec::with_capacity(cfg.radii.len());
    for &b in &cfg.radii {
        // Warm start on the new sphere: rescale the previous solution in
        // both directions. The zero matrix at the first radius stays put.
        let n = w.norm();
        if n > 0.0 {
            w *= b / n;
        }
        let mut ce_cached = ce(table, &Decoder::from_matrix_unchecked(w.clone()));
        let mut converged = false;
        let mut iters = 0;
        while iters < cfg.inner_budget {
            let g = grad_mat(table, &w);
            let mut cand = &w - &g * eta;
            project_ball(&mut cand, b);
            let pg = (&w - &cand).norm() / eta;
            w = cand;
            iters += 1;
            if !w.norm().is_finite() {
                return Err(CoreError::NonFinite { iter: iters });
            }
            if iters % 64 == 0 {
                ce_cached = ce(table, &Decoder::from_matrix_unchecked(w.clone()));
            }
            if pg <= cfg.inner_tol * (1.0 + ce_cached) {
                let fresh = ce(table, &Decoder::from_matrix_unchecked(w.clone()));
                ce_cached = fresh;
                if pg <= cfg.inner_tol * (1.0 + fresh) {
                    converged = true;
                    break;
                }
            }
        }
        let dec = Decoder::from_matrix_unchecked(w.clone());
        let (align_mm, dist) = match refs {
            Some(r) => (
                match &r.w_mm {
                    Some(mm) => alignment(&dec, mm),
                    None => f64::NAN,
                },
                subspace_distance(&dec, &r.w_star, &r.basis),
            ),
            None => (f64::NAN, f64::NAN),
        };
        let ce_val = ce(table, &dec);
        points.push(RegPathPoint {
            b,
            norm: dec.norm(),
            align_mm,
            subspace_dist: dist,
            ce_gap: ce_val - h,
            converged,
            iters,
            w: dec,
        });
    }
    Ok(points)
}

pub const REGPATH_HEADER: &str = "b,norm,align_mm,subspace_dist,ce_gap,converged,iters";

pub fn regpath_to_csv(points: &[RegPathPoint]) -> String {
    let mut out = String::from(REGPATH_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(p.b),
            fmt_f64(p.norm),
            fmt_f64(p.align_mm),
            fmt_f64(p.subspace_dist),
            fmt_f64(p.ce_gap),
            p.converged,
            p.iters,
        ));
    }
    out
}

pub fn write_regpath_csv(points: &[RegPathPoint], path: &Path) -> Result<()> {
    std::fs::write(path, regpath_to_csv(points))?;
    Ok(())
}

/// Rows of a path file, without the decoders.
#[derive(Clone, Copy, Debug)]
pub struct RegPathRow {
    pub b: f64,
    pub norm: f64,
    pub align_mm: f64,
    pub subspace_dist: f64,
    pub ce_gap: f64,
    pub converged: bool,
    pub iters: usize,
}

pub fn read_regpath_csv(path: &Path) -> Result<Vec<RegPathRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == REGPATH_HEADER => {}
        other => {
            return Err(CoreError::Malformed(format!(
                "path header mismatch: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CoreError::Malformed(format!(
                "path line {}: expected 7 fields, got {}",
                ln + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CoreError::Malformed(format!("path line {}: bad float {s:?}", ln + 2)))
        };
        rows.push(RegPathRow {
            b: num(fields[0])?,
            norm: num(fields[1])?,
            align_mm: num(fields[2])?,
            subspace_dist: num(fields[3])?,
            ce_gap: num(fields[4])?,
            converged: match fields[5].trim() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(CoreError::Malformed(format!(
                        "path line {}: bad bool {other:?}",
                        ln + 2
                    )))
                }
            },
            iters: fields[6].trim().parse().map_err(|_| {
                CoreError::Malformed(format!("path line {}: bad iters {:?}", ln + 2, fields[6]))
            })?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize_table;

    fn single_context() -> ContextTable {
        synthesize_table(
            3,
            1,
            vec![vec![1, 2]],
            vec![vec![0.75, 0.25]],
            vec![1.0],
            Some(vec![vec![1.0]]),
            0,
        )
        .unwrap()
    }

    fn one_hot_pair() -> ContextTable {
        synthesize_table(
            2,
            2,
            vec![vec![1], vec![2]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
            Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn gradient_at_zero_matches_hand_value() {
        let table = single_context();
        let g = grad_ce(&table, &Decoder::zeros(3, 1));
        let expect = Decoder::from_rows(&[
            vec![1.0 / 3.0 - 0.75],
            vec![1.0 / 3.0 - 0.25],
            vec![1.0 / 3.0],
        ])
        .unwrap();
        assert!(g.sub(&expect).norm() < 1e-15);
    }

    #[test]
    fn smoothness_reference_values() {
        assert!((smoothness_estimate(&single_context()) - 0.5).abs() < 1e-12);
        assert!((smoothness_estimate(&one_hot_pair()) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gd_descends_and_grows_the_norm_on_separable_data() {
        let table = one_hot_pair();
        let refs = compute_refs(&table, &AnalyzeOptions::default()).unwrap();
        let cfg = TrainConfig {
            eta: 1.9,
            iters: 500,
            record_every: 100,
            allow_large_eta: false,
            ..TrainConfig::default()
        };
        let out = train(&table, &cfg, Some(&refs)).unwrap();
        assert_eq!(
            out.rows.iter().map(|r| r.iter).collect::<Vec<_>>(),
            vec![0, 100, 200, 300, 400, 500]
        );
        for pair in out.rows.windows(2) {
            assert!(pair[1].ce <= pair[0].ce + 1e-12, "loss must not increase");
            assert!(pair[1].norm >= pair[0].norm - 1e-12);
        }
        // Symmetric one-hot geometry keeps the iterate exactly on the
        // separator ray.
        let last = out.rows.last().unwrap();
        assert!(last.align_raw > 1.0 - 1e-9);
        assert!(last.norm > out.rows[1].norm);
        assert!(last.ce_gap < out.rows[0].ce_gap);
    }

    #[test]
    fn record_grid_includes_zero_and_last() {
        let table = single_context();
        let cfg = TrainConfig {
            eta: 0.5,
            iters: 10,
            record_every: 4,
            ..TrainConfig::default()
        };
        let out = train(&table, &cfg, None).unwrap();
        assert_eq!(
            out.rows.iter().map(|r| r.iter).collect::<Vec<_>>(),
            vec![0, 4, 8, 10]
        );
        assert!(out.rows.iter().all(|r| r.align_raw.is_nan()));
        let cfg = TrainConfig {
            iters: 0,
            eta: 0.5,
            ..TrainConfig::default()
        };
        let out = train(&table, &cfg, None).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].iter, 0);
    }

    #[test]
    fn ngd_and_adam_also_descend() {
        let table = single_context();
        for algo in [TrainAlgo::Ngd, TrainAlgo::Adam] {
            let cfg = TrainConfig {
                algo,
                eta: 0.01,
                iters: 300,
                record_every: 50,
                ..TrainConfig::default()
            };
            let out = train(&table, &cfg, None).unwrap();
            let first = out.rows.first().unwrap().ce;
            let last = out.rows.last().unwrap().ce;
            assert!(
                last < first,
                "{} should reduce the loss: {first} -> {last}",
                algo.as_str()
            );
        }
    }

    #[test]
    fn unsafe_step_size_needs_explicit_override() {
        let table = single_context();
        let cfg = TrainConfig {
            eta: 1.5,
            iters: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&table, &cfg, None),
            Err(CoreError::InvalidConfig(_))
        ));
        let cfg = TrainConfig {
            eta: 1.5,
            iters: 5,
            allow_large_eta: true,
            ..TrainConfig::default()
        };
        assert!(train(&table, &cfg, None).is_ok());
    }

    #[test]
    fn numeric_blowup_is_reported_with_iteration() {
        let table = synthesize_table(
            3,
            1,
            vec![vec![1, 2]],
            vec![vec![0.75, 0.25]],
            vec![1.0],
            Some(vec![vec![1e200]]),
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            eta: 1.0,
            iters: 10,
            allow_large_eta: true,
            init: Init::Random { seed: 1 },
            ..TrainConfig::default()
        };
        match train(&table, &cfg, None) {
            Err(CoreError::NonFinite { iter }) => assert!(iter <= 10),
            Err(e) => panic!("expected a non-finite abort, got {e}"),
            Ok(_) => panic!("expected a non-finite abort, training succeeded"),
        }
    }

    #[test]
    fn random_init_is_deterministic_per_seed() {
        let a = init_matrix(Init::Random { seed: 7 }, 4, 3);
        let b = init_matrix(Init::Random { seed: 7 }, 4, 3);
        let c = init_matrix(Init::Random { seed: 8 }, 4, 3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let var_scale: f64 = a.iter().map(|x| x * x).sum::<f64>() / 12.0;
        assert!(var_scale < 10.0 / 3.0, "entries should scale like 1/d");
    }

    #[test]
    fn constrained_path_saturates_the_ball_and_aligns() {
        let table = single_context();
        let refs = compute_refs(&table, &AnalyzeOptions::default()).unwrap();
        let cfg = RegPathConfig {
            radii: vec![1.0, 2.0, 4.0],
            ..RegPathConfig::default()
        };
        let points = regpath(&table, &cfg, Some(&refs)).unwrap();
        assert_eq!(points.len(), 3);
        for p in &points {
            assert!(p.converged, "radius {} did not converge", p.b);
            assert!(
                (p.norm - p.b).abs() < 1e-6 * p.b,
                "constraint should bind: ||W||={} at B={}",
                p.norm,
                p.b
            );
            assert!(p.ce_gap > 0.0);
        }
        assert!(points[2].align_mm > points[0].align_mm);
        assert!(points[2].ce_gap < points[0].ce_gap);
        assert!(points[2].subspace_dist < 0.2);
    }

    #[test]
    fn exhausted_inner_budget_is_flagged() {
        let table = single_context();
        let cfg = RegPathConfig {
            radii: vec![4.0],
            inner_tol: 1e-12,
            inner_budget: 3,
        };
        let points = regpath(&table, &cfg, None).unwrap();
        assert_eq!(points.len(), 1);
        assert!(!points[0].converged);
        assert_eq!(points[0].iters, 3);
    }

    #[test]
    fn regpath_csv_round_trip() {
        let table = single_context();
        let cfg = RegPathConfig {
            radii: vec![1.0, 2.0],
            ..RegPathConfig::default()
        };
        let points = regpath(&table, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("path.csv");
        write_regpath_csv(&points, &path).unwrap();
        let back = read_regpath_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (p, r) in points.iter().zip(&back) {
            assert_eq!(p.b.to_bits(), r.b.to_bits());
            assert_eq!(p.norm.to_bits(), r.norm.to_bits());
            assert_eq!(p.converged, r.converged);
            assert_eq!(p.iters, r.iters);
            assert!(p.align_mm.is_nan() && r.align_mm.is_nan());
        }
    }
}
