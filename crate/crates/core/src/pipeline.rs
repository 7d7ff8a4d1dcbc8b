//! End-to-end runs: bound estimation, tuning, compression, validation and
//! reporting, plus the uniform-bound search baseline and archive checks.

use std::time::Instant;

use thiserror::Error;

use crate::codec::{
    self, Archive, ArchiveMeta, CodecConfig, CodecError, Compressed, SampleCompressor, DEFAULT_SAMPLE_POINTS,
};
use crate::ebtune::{eb_multivar, pointwise_bounds, tune_global_eb, EbPlan, TuneError, TuneParams};
use crate::field::Field;
use crate::metrics::{self, MetricsError, QualityReport};
use crate::qoi::{qoi_value_range, QoiError, QoiSpec};
use crate::scalar::Real;
use crate::validate::{max_qoi_error, qoi_pair, validate_and_correct};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Qoi(#[from] QoiError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("tuning failed: {0}")]
    Tune(#[from] TuneError<CodecError>),
    #[error("field {field} is constant; pass an absolute error bound instead of a relative one")]
    DegenerateDataRange { field: usize },
    #[error("the QoI is constant over the input; pass an absolute QoI tolerance instead of a relative one")]
    DegenerateQoiRange,
    #[error("{what} must be finite and positive, got {value}")]
    InvalidBound { what: &'static str, value: f64 },
    #[error("expected {expected} input field(s), got {actual}")]
    FieldCount { expected: usize, actual: usize },
    #[error("input fields do not share one shape")]
    ShapeMismatch,
    #[error("{0}")]
    Unsupported(&'static str),
}

/// An error bound given either directly or relative to a value range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Abs(f64),
    Rel(f64),
}

impl Bound {
    fn value(self) -> f64 {
        match self {
            Self::Abs(v) | Self::Rel(v) => v,
        }
    }

    fn describe(self) -> String {
        match self {
            Self::Abs(v) => format!("abs:{v:e}"),
            Self::Rel(v) => format!("rel:{v:e}"),
        }
    }
}

/// `rel * range`, nudged down until dividing back by `range` stays within
/// `rel` so relative checks hold exactly in floating point.
pub fn rel_to_abs(rel: f64, range: f64) -> f64 {
    let mut abs = rel * range;
    while abs > 0.0 && abs / range > rel {
        abs = f64::from_bits(abs.to_bits() - 1);
    }
    abs
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobConfig {
    pub eb: Bound,
    /// `None` leaves the QoI unconstrained.
    pub qoi_tol: Option<Bound>,
    pub tune: TuneParams,
    /// Use the probabilistic threshold split in addition to the
    /// deterministic one.
    pub probabilistic: bool,
    /// Run global-bound tuning; otherwise the global bound is the user's.
    pub tune_global: bool,
    pub sample_points: usize,
    pub codec: CodecConfig,
}

impl JobConfig {
    pub fn new(eb: Bound, qoi_tol: Option<Bound>) -> Self {
        Self {
            eb,
            qoi_tol,
            tune: TuneParams::default(),
            probabilistic: true,
            tune_global: true,
            sample_points: DEFAULT_SAMPLE_POINTS,
            codec: CodecConfig::default(),
        }
    }

    fn echo(&self, spec: Option<&QoiSpec>) -> Vec<(String, String)> {
        let t = &self.tune;
        vec![
            ("qoi".into(), spec.map_or_else(|| "none".into(), QoiSpec::describe)),
            ("eb".into(), self.eb.describe()),
            ("qoi_tol".into(), self.qoi_tol.map_or_else(|| "inf".into(), Bound::describe)),
            ("c".into(), t.c.to_string()),
            ("beta".into(), t.beta.to_string()),
            ("c0".into(), t.c0.to_string()),
            ("probabilistic".into(), self.probabilistic.to_string()),
            ("tune".into(), self.tune_global.to_string()),
            ("sample_points".into(), self.sample_points.to_string()),
        ]
    }
}

fn check_fields<T: Real>(fields: &[&Field<T>], spec: Option<&QoiSpec>) -> Result<(), PipelineError> {
    let expected = spec.map_or(1, QoiSpec::arity);
    if fields.len() != expected || fields.is_empty() {
        return Err(PipelineError::FieldCount {
            expected,
            actual: fields.len(),
        });
    }
    if fields.windows(2).any(|w| w[0].shape() != w[1].shape()) {
        return Err(PipelineError::ShapeMismatch);
    }
    Ok(())
}

fn positive(what: &'static str, v: f64) -> Result<f64, PipelineError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(PipelineError::InvalidBound { what, value: v })
    }
}

/// Absolute data bound per field.
pub fn data_bounds<T: Real>(fields: &[&Field<T>], eb: Bound) -> Result<Vec<f64>, PipelineError> {
    positive("data error bound", eb.value())?;
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| match eb {
            Bound::Abs(v) => Ok(v),
            Bound::Rel(r) => {
                let range = f.value_range();
                if range > 0.0 {
                    positive("data error bound", rel_to_abs(r, range))
                } else {
                    Err(PipelineError::DegenerateDataRange { field: k })
                }
            }
        })
        .collect()
}

/// Absolute QoI threshold; infinite when unconstrained.
pub fn qoi_threshold<T: Real>(
    fields: &[&Field<T>],
    spec: Option<&QoiSpec>,
    tol: Option<Bound>,
) -> Result<f64, PipelineError> {
    match (spec, tol) {
        (Some(spec), Some(Bound::Rel(r))) => {
            positive("QoI tolerance", r)?;
            let range = match qoi_value_range(spec, fields) {
                Err(QoiError::DegenerateRange { .. }) => return Err(PipelineError::DegenerateQoiRange),
                other => other?,
            };
            positive("QoI tolerance", rel_to_abs(r, range.span()))
        }
        (Some(_), Some(Bound::Abs(v))) => {
            if v == f64::INFINITY {
                Ok(v)
            } else {
                positive("QoI tolerance", v)
            }
        }
        _ => Ok(f64::INFINITY),
    }
}

/// Point-wise bounds for every field before tuning.
pub fn initial_bounds<T: Real>(
    fields: &[&Field<T>],
    spec: Option<&QoiSpec>,
    qoi_tol: f64,
    eb_abs: &[f64],
    params: &TuneParams,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let Some(spec) = spec.filter(|_| qoi_tol.is_finite()) else {
        return Ok(fields.iter().zip(eb_abs).map(|(f, &e)| vec![e; f.len()]).collect());
    };
    let inputs: Vec<Vec<f64>> = fields.iter().map(|f| f.to_f64()).collect();
    Ok(match spec {
        QoiSpec::Univariate(b) => vec![pointwise_bounds(&inputs[0], b, qoi_tol, eb_abs[0])],
        _ => {
            let views: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
            let layout = spec.layout(fields[0].shape())?;
            eb_multivar(&views, spec, &layout, qoi_tol, eb_abs, params)?
        }
    })
}

/// One compressed field of a job.
#[derive(Clone, Debug)]
pub struct FieldOutput<T> {
    pub archive: Archive,
    pub plan: EbPlan,
    /// Values the archive decodes to, corrections included.
    pub decompressed: Vec<T>,
    pub outliers: usize,
    pub corrections: usize,
}

#[derive(Clone, Debug)]
pub struct JobOutput<T> {
    pub fields: Vec<FieldOutput<T>>,
    pub report: QualityReport,
    pub eb_abs: Vec<f64>,
    pub qoi_tol_abs: f64,
}

/// Share of corrected points above which a job using the probabilistic
/// split is redone with the deterministic one; the smaller result is kept.
pub const FALLBACK_CORRECTION_SHARE: f64 = 0.01;

struct Attempt<T> {
    compressed: Vec<Compressed<T>>,
    plans: Vec<EbPlan>,
    corrections: usize,
}

impl<T> Attempt<T> {
    fn byte_len(&self) -> usize {
        self.compressed.iter().map(|c| c.archive.byte_len()).sum()
    }
}

fn encode_fields<T: Real>(
    fields: &[&Field<T>],
    spec: Option<&QoiSpec>,
    qoi_tol: f64,
    eb_abs: &[f64],
    cfg: &JobConfig,
    probabilistic: bool,
) -> Result<Attempt<T>, PipelineError> {
    let params = TuneParams {
        c: if probabilistic { cfg.tune.c } else { 0.0 },
        ..cfg.tune.clone()
    };
    let bounds = initial_bounds(fields, spec, qoi_tol, eb_abs, &params)?;
    #[allow(clippy::cast_possible_truncation)]
    let field_count = fields.len() as u32;
    let mut compressed = Vec::with_capacity(fields.len());
    let mut plans = Vec::with_capacity(fields.len());
    for (k, (field, b)) in fields.iter().zip(bounds).enumerate() {
        let mut plan = EbPlan::from_bounds(eb_abs[k], b);
        if cfg.tune_global && qoi_tol.is_finite() && plan.count_below_global() > 0 {
            let mut sampler = SampleCompressor::new(field, &plan.bounds, cfg.sample_points, &cfg.codec)?;
            tune_global_eb(&mut plan, &mut sampler, &params)?;
        }
        let meta = ArchiveMeta {
            qoi: spec.cloned(),
            qoi_tol,
            #[allow(clippy::cast_possible_truncation)]
            field_index: k as u32,
            field_count,
            tune: params.clone(),
            probabilistic,
        };
        compressed.push(codec::compress(field, &plan, &meta, &cfg.codec)?);
        plans.push(plan);
    }

    let mut corrections = 0;
    if let Some(spec) = spec {
        let mut recons: Vec<Vec<T>> = compressed.iter().map(|c| c.reconstruction.clone()).collect();
        let set = validate_and_correct(fields, &mut recons, spec, qoi_tol)?;
        corrections = set.total();
        for (c, patches) in compressed.iter_mut().zip(&set.per_field) {
            c.archive.set_corrections(patches)?;
        }
    }
    Ok(Attempt {
        compressed,
        plans,
        corrections,
    })
}

/// Compresses `fields` so that every point stays within the data bound and
/// every QoI value within the QoI threshold.
pub fn compress_job<T: Real>(
    fields: &[&Field<T>],
    spec: Option<&QoiSpec>,
    cfg: &JobConfig,
) -> Result<JobOutput<T>, PipelineError> {
    check_fields(fields, spec)?;
    let eb_abs = data_bounds(fields, cfg.eb)?;
    let qoi_tol = qoi_threshold(fields, spec, cfg.qoi_tol)?;
    let started = Instant::now();
    let mut attempt = encode_fields(fields, spec, qoi_tol, &eb_abs, cfg, cfg.probabilistic)?;
    let values: usize = fields.iter().map(|f| f.len()).sum();
    #[allow(clippy::cast_precision_loss)]
    let share = attempt.corrections as f64 / values as f64;
    let mut fell_back = false;
    if cfg.probabilistic && share > FALLBACK_CORRECTION_SHARE {
        let strict = encode_fields(fields, spec, qoi_tol, &eb_abs, cfg, false)?;
        if strict.byte_len() < attempt.byte_len() {
            attempt = strict;
            fell_back = true;
        }
    }
    let Attempt {
        compressed,
        plans,
        corrections: correction_count,
    } = attempt;
    let compress_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let mut decompressed = Vec::with_capacity(fields.len());
    for c in &compressed {
        decompressed.push(codec::decompress_values::<T>(&c.archive)?);
    }
    let decompress_secs = started.elapsed().as_secs_f64();

    let archives: Vec<&Archive> = compressed.iter().map(|c| &c.archive).collect();
    let views: Vec<&[T]> = decompressed.iter().map(Vec::as_slice).collect();
    let mut report = measure(fields, &views, spec, &archives)?;
    report.label = spec.map_or_else(|| "none".into(), QoiSpec::describe);
    report.compress_secs = compress_secs;
    report.decompress_secs = decompress_secs;
    report.corrections = correction_count;
    report.outliers = compressed.iter().map(|c| c.outlier_count).sum();
    report.eb_global = plans.iter().map(|p| p.eb_global).collect();
    report.config = cfg.echo(spec);
    report.config.push(("qoi_tol_abs".into(), format!("{qoi_tol:e}")));
    report.config.push(("deterministic_fallback".into(), fell_back.to_string()));

    let fields_out = compressed
        .into_iter()
        .zip(plans)
        .zip(decompressed)
        .map(|((c, plan), d)| FieldOutput {
            corrections: c.archive.corrections::<T>().map_or(0, |v| v.len()),
            outliers: c.outlier_count,
            archive: c.archive,
            plan,
            decompressed: d,
        })
        .collect();
    Ok(JobOutput {
        fields: fields_out,
        report,
        eb_abs,
        qoi_tol_abs: qoi_tol,
    })
}

/// Sizes and error metrics of decoded fields against their originals.
pub fn measure<T: Real>(
    fields: &[&Field<T>],
    decoded: &[&[T]],
    spec: Option<&QoiSpec>,
    archives: &[&Archive],
) -> Result<QualityReport, PipelineError> {
    let values: usize = fields.iter().map(|f| f.len()).sum();
    let archive_bytes: usize = archives.iter().map(|a| a.byte_len()).sum();
    let mut report = QualityReport::default().with_sizes(T::WIDTH.bytes(), values, archive_bytes)?;
    let mut rel: Option<f64> = Some(0.0);
    for (f, d) in fields.iter().zip(decoded) {
        let err = f
            .values()
            .iter()
            .zip(d.iter())
            .map(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).abs())
            .fold(0.0, f64::max);
        report.max_data_error_abs = report.max_data_error_abs.max(err);
        let range = f.value_range();
        rel = match rel {
            Some(r) if range > 0.0 => Some(r.max(err / range)),
            _ => None,
        };
    }
    report.max_data_error_rel = rel;
    if let Some(spec) = spec {
        let summary = max_qoi_error(fields, decoded, spec)?;
        report.max_qoi_error_abs = Some(summary.abs);
        report.max_qoi_error_rel = summary.rel;
        let (q, q_rec) = qoi_pair(fields, decoded, spec)?;
        report.psnr_qoi = if q_rec.iter().all(Option::is_some) {
            let q_rec: Vec<f64> = q_rec.into_iter().flatten().collect();
            metrics::psnr_qoi(&q, &q_rec).ok()
        } else {
            Some(f64::NEG_INFINITY)
        };
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub report: QualityReport,
    pub probes: usize,
    /// Whether some probe met the QoI threshold.
    pub feasible: bool,
    /// Scale applied to the user's bounds in the reported probe.
    pub scale: f64,
}

pub const BASELINE_MAX_PROBES: usize = 20;
/// Lower end of the bisection bracket, relative to the user's bound.
pub const BASELINE_MIN_SCALE: f64 = 1e-12;
/// Searching stops once the QoI error reaches this share of the threshold.
pub const BASELINE_BAND: f64 = 0.8;

/// Uniform-bound compression tuned by bisection on a log scale until the
/// QoI error lands in `[0.8 tau, tau]`; no corrections are applied.
pub fn baseline_job<T: Real>(
    fields: &[&Field<T>],
    spec: &QoiSpec,
    cfg: &JobConfig,
) -> Result<BaselineOutput, PipelineError> {
    check_fields(fields, Some(spec))?;
    let eb_abs = data_bounds(fields, cfg.eb)?;
    let qoi_tol = qoi_threshold(fields, Some(spec), cfg.qoi_tol)?;
    if !qoi_tol.is_finite() {
        return Err(PipelineError::Unsupported("the baseline search needs a finite QoI tolerance"));
    }

    let started = Instant::now();
    let probe = |scale: f64| -> Result<(f64, Vec<Archive>, Vec<Vec<T>>), PipelineError> {
        let mut archives = Vec::with_capacity(fields.len());
        let mut recons = Vec::with_capacity(fields.len());
        for (f, &e) in fields.iter().zip(&eb_abs) {
            let plan = EbPlan::uniform(f.len(), e * scale);
            let c = codec::compress(f, &plan, &ArchiveMeta::default(), &cfg.codec)?;
            archives.push(c.archive);
            recons.push(c.reconstruction);
        }
        let views: Vec<&[T]> = recons.iter().map(Vec::as_slice).collect();
        let err = max_qoi_error(fields, &views, spec)?.abs;
        Ok((err, archives, recons))
    };

    let mut probes = 0;
    let mut best: Option<(f64, f64, Vec<Archive>, Vec<Vec<T>>)> = None;
    let (mut lo, mut hi) = (BASELINE_MIN_SCALE.ln(), 0.0f64);
    let mut scale = 1.0;
    while probes < BASELINE_MAX_PROBES {
        let (err, archives, recons) = probe(scale)?;
        probes += 1;
        if err <= qoi_tol {
            let cr_size: usize = archives.iter().map(Archive::byte_len).sum();
            let better = best
                .as_ref()
                .map_or(true, |b| cr_size < b.2.iter().map(Archive::byte_len).sum::<usize>());
            if better {
                best = Some((scale, err, archives, recons));
            }
            if probes == 1 || err >= BASELINE_BAND * qoi_tol {
                break;
            }
            lo = scale.ln();
        } else {
            hi = scale.ln();
        }
        scale = (0.5 * (lo + hi)).exp();
    }
    let elapsed = started.elapsed().as_secs_f64();

    let mut config = cfg.echo(Some(spec));
    config.push(("qoi_tol_abs".into(), format!("{qoi_tol:e}")));
    config.push(("probes".into(), probes.to_string()));
    let Some((scale, _, archives, recons)) = best else {
        config.push(("feasible".into(), "false".into()));
        let report = QualityReport {
            label: format!("baseline {}", spec.describe()),
            config,
            compress_secs: elapsed,
            ..QualityReport::default()
        };
        return Ok(BaselineOutput {
            report,
            probes,
            feasible: false,
            scale: f64::NAN,
        });
    };
    config.push(("feasible".into(), "true".into()));
    let views: Vec<&[T]> = recons.iter().map(Vec::as_slice).collect();
    let refs: Vec<&Archive> = archives.iter().collect();
    let mut report = measure(fields, &views, Some(spec), &refs)?;
    report.label = format!("baseline {}", spec.describe());
    report.compress_secs = elapsed;
    report.eb_global = eb_abs.iter().map(|e| e * scale).collect();
    report.config = config;
    Ok(BaselineOutput {
        report,
        probes,
        feasible: true,
        scale,
    })
}

#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub report: QualityReport,
    pub data_ok: bool,
    pub qoi_ok: bool,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.data_ok && self.qoi_ok
    }
}

/// Decodes `archives` and checks both thresholds recorded in their headers
/// against `originals`.
pub fn verify<T: Real>(originals: &[&Field<T>], archives: &[Archive]) -> Result<VerifyOutcome, PipelineError> {
    if originals.len() != archives.len() || archives.is_empty() {
        return Err(PipelineError::FieldCount {
            expected: archives.len(),
            actual: originals.len(),
        });
    }
    for (f, a) in originals.iter().zip(archives) {
        if f.shape() != a.header.shape.as_slice() {
            return Err(PipelineError::ShapeMismatch);
        }
    }
    let started = Instant::now();
    let decoded = archives
        .iter()
        .map(codec::decompress_values::<T>)
        .collect::<Result<Vec<_>, _>>()?;
    let decompress_secs = started.elapsed().as_secs_f64();
    let spec = archives[0].header.meta.qoi.as_ref();
    let spec = spec.filter(|s| s.arity() == originals.len());
    let views: Vec<&[T]> = decoded.iter().map(Vec::as_slice).collect();
    let refs: Vec<&Archive> = archives.iter().collect();
    let mut report = measure(originals, &views, spec, &refs)?;
    report.decompress_secs = decompress_secs;
    report.label = spec.map_or_else(|| "none".into(), QoiSpec::describe);

    let mut data_ok = true;
    for ((f, d), a) in originals.iter().zip(&decoded).zip(archives) {
        let err = f
            .values()
            .iter()
            .zip(d)
            .map(|(x, y)| (x.to_f64_lossless() - y.to_f64_lossless()).abs())
            .fold(0.0, f64::max);
        data_ok &= err <= a.header.user_eb;
    }
    let tol = archives[0].header.meta.qoi_tol;
    let qoi_ok = report.max_qoi_error_abs.map_or(true, |e| e <= tol);
    report.config = vec![
        ("eb_abs".into(), format!("{:e}", archives[0].header.user_eb)),
        ("qoi_tol_abs".into(), format!("{tol:e}")),
    ];
    Ok(VerifyOutcome {
        report,
        data_ok,
        qoi_ok,
    })
}
