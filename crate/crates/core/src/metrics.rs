//! Scalar diagnostics of a decoder against a table, and the training trace
//! format built from them.
//!
//! The loss is the prior-weighted cross entropy of the full softmax against
//! the empirical next-token distributions. It decomposes as conditional
//! entropy (a constant floor) plus a nonnegative divergence, so the
//! divergence is reported as `ce_gap`. Direction diagnostics compare a
//! decoder, or its drift from a reference fit, against the hard-margin
//! separator, and measure how far its span component sits from the fit.

use std::path::Path;

use nalgebra::DVector;

use crate::corpus::ContextTable;
use crate::decoder::Decoder;
use crate::error::{CoreError, Result};
use crate::io::fmt_f64;
use crate::subspace::SubspaceBasis;

/// Numerically safe softmax (max subtraction).
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|x| (x - mx).exp());
    let total = out.sum();
    out /= total;
    out
}

fn log_sum_exp(logits: &DVector<f64>) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + logits.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Prior-weighted cross entropy of the decoder's full softmax.
pub fn ce(table: &ContextTable, w: &Decoder) -> f64 {
    let mut total = 0.0;
    for c in &table.contexts {
        let logits = w.logits(&c.embedding);
        let lse = log_sum_exp(&logits);
        for (k, &z) in c.support.iter().enumerate() {
            total += c.prior * c.probs[k] * (lse - logits[(z - 1) as usize]);
        }
    }
    total
}

/// Prior-weighted conditional entropy of the table, the floor of `ce`.
pub fn entropy(table: &ContextTable) -> f64 {
    let mut h = 0.0;
    for c in &table.contexts {
        for &p in &c.probs {
            h -= c.prior * p * p.ln();
        }
    }
    h
}

/// ce - entropy: the prior-weighted divergence of the model from the table.
/// Nonnegative up to rounding.
pub fn ce_gap(table: &ContextTable, w: &Decoder) -> f64 {
    ce(table, w) - entropy(table)
}

/// Cosine of the angle between two decoders; NaN when either is zero.
pub fn alignment(a: &Decoder, b: &Decoder) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    a.dot(b) / (na * nb)
}

/// Distance of the decoder's span component from a reference fit.
pub fn subspace_distance(w: &Decoder, w_star: &Decoder, basis: &SubspaceBasis) -> f64 {
    basis.project_span(w).sub(w_star).norm()
}

// -------------------------------------------------------------------- traces

/// One recorded training step.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub ce: f64,
    pub ce_gap: f64,
    pub norm: f64,
    /// Cosine between the iterate and the separator.
    pub align_raw: f64,
    /// Cosine between (iterate - reference fit) and the separator.
    pub align_corrected: f64,
    /// Distance of the span component from the reference fit.
    pub subspace_dist: f64,
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str =
    "iter,ce,ce_gap,norm,align_raw,align_corrected,subspace_dist,grad_norm";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iter,
            fmt_f64(r.ce),
            fmt_f64(r.ce_gap),
            fmt_f64(r.norm),
            fmt_f64(r.align_raw),
            fmt_f64(r.align_corrected),
            fmt_f64(r.subspace_dist),
            fmt_f64(r.grad_norm),
        ));
    }
    out
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_csv(rows))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_trace_csv(&text)
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        other => {
            return Err(CoreError::Malformed(format!(
                "trace header mismatch: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(CoreError::Malformed(format!(
                "trace line {}: expected 8 fields, got {}",
                ln + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CoreError::Malformed(format!("trace line {}: bad float {s:?}", ln + 2)))
        };
        rows.push(TraceRow {
            iter: fields[0].trim().parse().map_err(|_| {
                CoreError::Malformed(format!("trace line {}: bad iter {:?}", ln + 2, fields[0]))
            })?,
            ce: num(fields[1])?,
            ce_gap: num(fields[2])?,
            norm: num(fields[3])?,
            align_raw: num(fields[4])?,
            align_corrected: num(fields[5])?,
            subspace_dist: num(fields[6])?,
            grad_norm: num(fields[7])?,
        });
    }
    Ok(rows)
}
