//! Checks the QoI on a reconstruction and restores exact values wherever
//! the QoI threshold is violated.

use crate::field::Field;
use crate::qoi::{eval_unit, evaluate_values, QoiError, QoiLayout, QoiSpec, ValueRange};
use crate::scalar::Real;

/// Exact values restored per field, sorted by flat index.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionSet<T> {
    pub per_field: Vec<Vec<(usize, T)>>,
    /// Validation passes run until no unit violated the threshold.
    pub passes: usize,
}

impl<T> CorrectionSet<T> {
    /// Number of corrected points summed over all fields.
    pub fn total(&self) -> usize {
        self.per_field.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

fn check_shapes<T: Real>(originals: &[&Field<T>], recons: &[&[T]], spec: &QoiSpec) -> Result<(), QoiError> {
    if originals.len() != spec.arity() || recons.len() != originals.len() {
        return Err(QoiError::Arity {
            expected: spec.arity(),
            actual: originals.len().min(recons.len()),
        });
    }
    let shape = originals[0].shape();
    if originals.iter().any(|f| f.shape() != shape) || recons.iter().zip(originals).any(|(r, f)| r.len() != f.len()) {
        return Err(QoiError::ShapeMismatch);
    }
    Ok(())
}

fn as_f64<T: Real>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64_lossless()).collect()
}

/// Evaluates the QoI on `recons` and overwrites every point of a violating
/// unit with the original value, repeating until no unit violates
/// `qoi_tol`. A unit the QoI cannot be evaluated on counts as violating.
///
/// Point-wise QoIs correct single points, regional QoIs whole regions and
/// vector QoIs whole tuples.
pub fn validate_and_correct<T: Real>(
    originals: &[&Field<T>],
    recons: &mut [Vec<T>],
    spec: &QoiSpec,
    qoi_tol: f64,
) -> Result<CorrectionSet<T>, QoiError> {
    {
        let views: Vec<&[T]> = recons.iter().map(Vec::as_slice).collect();
        check_shapes(originals, &views, spec)?;
    }
    let mut per_field = vec![Vec::new(); originals.len()];
    if qoi_tol.is_infinite() && qoi_tol > 0.0 {
        return Ok(CorrectionSet { per_field, passes: 0 });
    }
    let layout = spec.layout(originals[0].shape())?;
    let orig64: Vec<Vec<f64>> = originals.iter().map(|f| f.to_f64()).collect();
    let orig_views: Vec<&[f64]> = orig64.iter().map(Vec::as_slice).collect();
    let q_orig = evaluate_values(spec, &layout, &orig_views)?;

    let mut rec64: Vec<Vec<f64>> = recons.iter().map(|r| as_f64(r)).collect();
    let mut corrected: Vec<Vec<bool>> = originals.iter().map(|f| vec![false; f.len()]).collect();
    let mut scratch = Vec::new();
    let mut passes = 0;
    loop {
        passes += 1;
        let mut violating = Vec::new();
        {
            let views: Vec<&[f64]> = rec64.iter().map(Vec::as_slice).collect();
            for (u, &q) in q_orig.iter().enumerate() {
                let bad = match eval_unit(spec, &layout, &views, u, &mut scratch) {
                    Ok(v) => !((q - v).abs() <= qoi_tol),
                    Err(_) => true,
                };
                if bad {
                    violating.push(u);
                }
            }
        }
        if violating.is_empty() {
            break;
        }
        let mut fix = |k: usize, i: usize, rec64: &mut Vec<Vec<f64>>| {
            if !corrected[k][i] {
                corrected[k][i] = true;
                let v = originals[k].values()[i];
                recons[k][i] = v;
                rec64[k][i] = orig64[k][i];
                per_field[k].push((i, v));
            }
        };
        for u in violating {
            match &layout {
                QoiLayout::Points { .. } => fix(0, u, &mut rec64),
                QoiLayout::Regions { regions, .. } => {
                    for &m in &regions[u].members {
                        fix(0, m, &mut rec64);
                    }
                }
                QoiLayout::Tuples { arity, .. } => {
                    for k in 0..*arity {
                        fix(k, u, &mut rec64);
                    }
                }
            }
        }
    }
    for p in &mut per_field {
        p.sort_by_key(|e| e.0);
    }
    Ok(CorrectionSet { per_field, passes })
}

/// Largest QoI deviation between originals and reconstructions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QoiErrorSummary {
    pub abs: f64,
    /// `abs` over the range of the original QoI; `None` when that range is
    /// degenerate.
    pub rel: Option<f64>,
    pub range: ValueRange,
}

/// Evaluates the QoI on both sides. A reconstruction outside the QoI domain
/// yields an infinite error.
pub fn max_qoi_error<T: Real>(
    originals: &[&Field<T>],
    recons: &[&[T]],
    spec: &QoiSpec,
) -> Result<QoiErrorSummary, QoiError> {
    let (q, q_rec) = qoi_pair(originals, recons, spec)?;
    let abs = q
        .iter()
        .zip(&q_rec)
        .map(|(a, b)| b.map_or(f64::INFINITY, |b| (a - b).abs()))
        .fold(0.0, f64::max);
    let range = ValueRange::of(&q);
    let rel = (!range.is_degenerate()).then(|| abs / range.span());
    Ok(QoiErrorSummary { abs, rel, range })
}

/// QoI values of the originals and of the reconstructions; units the
/// reconstruction cannot be evaluated on are `None`.
pub fn qoi_pair<T: Real>(
    originals: &[&Field<T>],
    recons: &[&[T]],
    spec: &QoiSpec,
) -> Result<(Vec<f64>, Vec<Option<f64>>), QoiError> {
    check_shapes(originals, recons, spec)?;
    let layout = spec.layout(originals[0].shape())?;
    let orig64: Vec<Vec<f64>> = originals.iter().map(|f| f.to_f64()).collect();
    let rec64: Vec<Vec<f64>> = recons.iter().map(|r| as_f64(r)).collect();
    let ov: Vec<&[f64]> = orig64.iter().map(Vec::as_slice).collect();
    let rv: Vec<&[f64]> = rec64.iter().map(Vec::as_slice).collect();
    let q = evaluate_values(spec, &layout, &ov)?;
    let mut scratch = Vec::new();
    let q_rec = (0..q.len())
        .map(|u| eval_unit(spec, &layout, &rv, u, &mut scratch).ok())
        .collect();
    Ok((q, q_rec))
}
