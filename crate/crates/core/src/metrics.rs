use std::fmt::Write as _;

use thiserror::Error;

use crate::qoi::ValueRange;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sizes must be positive (input {input} B, archive {archive} B)")]
    ZeroSize { input: usize, archive: usize },
    #[error("arrays differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("value range of the reference QoI is degenerate")]
    DegenerateRange,
}

/// `|X| / |C|`.
pub fn compression_ratio(input_bytes: usize, archive_bytes: usize) -> Result<f64, MetricsError> {
    if input_bytes == 0 || archive_bytes == 0 {
        return Err(MetricsError::ZeroSize {
            input: input_bytes,
            archive: archive_bytes,
        });
    }
    #[allow(clippy::cast_precision_loss)]
    Ok(input_bytes as f64 / archive_bytes as f64)
}

/// Archive bits per input value.
pub fn bit_rate(archive_bytes: usize, values: usize) -> f64 {
    #[allow(clippy::cast_precision_loss)]
    let br = (archive_bytes * 8) as f64 / values as f64;
    br
}

pub fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    #[allow(clippy::cast_precision_loss)]
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// `20 log10(range) - 10 log10(mse)` of the QoI, with `range` taken over the
/// reference values; `+inf` when the arrays agree exactly.
pub fn psnr_qoi(reference: &[f64], other: &[f64]) -> Result<f64, MetricsError> {
    if reference.len() != other.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), other.len()));
    }
    let range = ValueRange::of(reference);
    if range.is_degenerate() {
        return Err(MetricsError::DegenerateRange);
    }
    Ok(psnr_from(range.span(), mse(reference, other)))
}

pub fn psnr_from(value_range: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * value_range.log10() - 10.0 * mse.log10()
    }
}

/// Outcome of one compression run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub label: String,
    pub element_bytes: usize,
    pub values: usize,
    pub input_bytes: usize,
    pub archive_bytes: usize,
    pub cr: f64,
    pub br: f64,
    pub max_data_error_abs: f64,
    /// Largest per-field ratio of data error to that field's value range.
    pub max_data_error_rel: Option<f64>,
    pub max_qoi_error_abs: Option<f64>,
    pub max_qoi_error_rel: Option<f64>,
    pub psnr_qoi: Option<f64>,
    pub compress_secs: f64,
    pub decompress_secs: f64,
    pub corrections: usize,
    pub outliers: usize,
    pub eb_global: Vec<f64>,
    /// Every parameter of the run, echoed as `key=value`.
    pub config: Vec<(String, String)>,
}

impl QualityReport {
    /// Fills sizes, CR and BR from byte counts.
    pub fn with_sizes(mut self, element_bytes: usize, values: usize, archive_bytes: usize) -> Result<Self, MetricsError> {
        self.element_bytes = element_bytes;
        self.values = values;
        self.input_bytes = values * element_bytes;
        self.archive_bytes = archive_bytes;
        self.cr = compression_ratio(self.input_bytes, archive_bytes)?;
        self.br = bit_rate(archive_bytes, values);
        Ok(self)
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"));
        let ebs = self
            .eb_global
            .iter()
            .map(|e| format!("{e:.6e}"))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            ("label", self.label.clone()),
            ("values", self.values.to_string()),
            ("input_bytes", self.input_bytes.to_string()),
            ("archive_bytes", self.archive_bytes.to_string()),
            ("cr", format!("{:.6}", self.cr)),
            ("br", format!("{:.6}", self.br)),
            ("max_data_error_abs", format!("{:.6e}", self.max_data_error_abs)),
            ("max_data_error_rel", opt(self.max_data_error_rel)),
            ("max_qoi_error_abs", opt(self.max_qoi_error_abs)),
            ("max_qoi_error_rel", opt(self.max_qoi_error_rel)),
            ("psnr_qoi_db", self.psnr_qoi.map_or_else(|| "n/a".into(), |p| format!("{p:.4}"))),
            ("corrections", self.corrections.to_string()),
            ("outliers", self.outliers.to_string()),
            ("eb_global", ebs),
            ("compress_secs", format!("{:.4}", self.compress_secs)),
            ("decompress_secs", format!("{:.4}", self.decompress_secs)),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows = self.rows();
        let keys = rows.iter().map(|r| r.0).chain(self.config.iter().map(|c| c.0.as_str()));
        let width = keys.map(str::len).max().unwrap_or(0);
        for (k, v) in &rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn csv_header(&self) -> String {
        self.rows()
            .iter()
            .map(|r| r.0.to_string())
            .chain(self.config.iter().map(|c| c.0.clone()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.rows()
            .into_iter()
            .map(|r| r.1)
            .chain(self.config.iter().map(|c| c.1.clone()))
            .map(|v| if v.contains(',') { format!("\"{}\"", v.replace('"', "\"\"")) } else { v })
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_key_values(&self) -> String {
        self.rows()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .chain(self.config.iter().map(|(k, v)| format!("{k}={v}")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ratio_examples() {
        assert_eq!(compression_ratio(1000, 100).unwrap(), 10.0);
        assert!(compression_ratio(100, 1000).unwrap() < 1.0);
        assert!(compression_ratio(0, 10).is_err());
        assert_eq!(compression_ratio(4000, 1000).unwrap(), 4.0);
        assert_eq!(bit_rate(1000, 1000), 8.0);
    }

    #[test]
    fn ratio_times_rate_is_element_bits() {
        for &(width, n, c) in &[(4usize, 1000usize, 1000usize), (8, 4096, 917), (4, 262_144, 12_345)] {
            let r = QualityReport::default().with_sizes(width, n, c).unwrap();
            #[allow(clippy::cast_precision_loss)]
            let bits = (8 * width) as f64;
            assert_relative_eq!(r.cr * r.br, bits, max_relative = 1e-9);
        }
    }

    #[test]
    fn psnr_examples() {
        // oracle: 20 log10(2) + 40
        let expected = 20.0 * 2f64.log10() + 40.0;
        assert!((psnr_from(2.0, 1e-4) - expected).abs() < 1e-12);
        assert!((psnr_from(2.0, 1e-4) - 46.0206).abs() < 1e-3);
        assert!((psnr_from(4.0, 1e-4) - psnr_from(2.0, 1e-4) - 6.0206).abs() < 1e-4);
        let a = [0.0, 1.0, 2.0];
        assert_eq!(psnr_qoi(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_qoi(&[1.0, 1.0], &[1.0, 1.0]), Err(MetricsError::DegenerateRange));
        assert!(psnr_from(2.0, 1e-3) < psnr_from(2.0, 1e-4));
    }

    #[test]
    fn report_formats() {
        let mut r = QualityReport {
            label: "x^2".into(),
            config: vec![("qoi".into(), "x, y".into())],
            ..QualityReport::default()
        }
        .with_sizes(4, 10, 5)
        .unwrap();
        r.psnr_qoi = Some(f64::INFINITY);
        assert_eq!(r.csv_header().split(',').count(), r.rows().len() + 1);
        // one quoted value holds a comma
        assert_eq!(r.to_csv_row().split(',').count(), r.rows().len() + 2);
        assert!(r.to_table().contains("cr"));
        assert!(r.to_key_values().contains("cr=8.000000"));
        assert!(r.to_csv_row().contains("\"x, y\""));
    }
}
