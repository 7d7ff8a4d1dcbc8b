//! Quantities of interest over whole fields: point-wise, regional-linear and
//! multivariate (vector) QoIs, plus the region geometry they are evaluated on.

use thiserror::Error;

use crate::expr::{EvalError, ExprError, MultivariateBundle, UnivariateBundle};
use crate::field::{strides, Field};
use crate::scalar::Real;
use crate::wire::{Reader, Truncated, Writer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QoiError {
    #[error("QoI undefined at flat index {index}: {source}")]
    Domain { index: usize, source: EvalError },
    #[error("QoI expects {expected} input field(s), got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("input fields do not share one shape")]
    ShapeMismatch,
    #[error("block shape {block:?} does not match the rank of field shape {shape:?}")]
    BlockRank { block: Vec<usize>, shape: Vec<usize> },
    #[error("block and stride extents must be positive, and stride must not exceed block")]
    BadGeometry,
    #[error("weighted coefficients need {expected} weights, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error("QoI value range is degenerate (all values equal {value})")]
    DegenerateRange { value: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("malformed QoI description: {0}")]
    Malformed(String),
}

impl From<Truncated> for QoiError {
    fn from(e: Truncated) -> Self {
        Self::Malformed(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QoiKind {
    Univariate,
    RegionalLinear,
    MultivariateGeneral,
}

/// How the coefficients of a regional-linear QoI are assigned to members.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficients {
    /// `1 / (actual region size)`; partial edge blocks are renormalised.
    Average,
    /// Every member weighs 1.
    Sum,
    /// One weight per in-block offset, row-major over the block shape.
    Weighted(Vec<f64>),
}

/// `C + sum_j alpha_j * g(x_j)` over blocks of a single field.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionalQoi {
    pub inner: UnivariateBundle,
    pub block: Vec<usize>,
    /// Distance between neighbouring block origins; equal to `block` for a
    /// disjoint tiling, smaller for overlapping regions.
    pub stride: Vec<usize>,
    pub coefficients: Coefficients,
    pub constant: f64,
}

impl RegionalQoi {
    /// Average of `inner` over disjoint blocks.
    pub fn average(inner: UnivariateBundle, block: Vec<usize>) -> Self {
        Self {
            inner,
            stride: block.clone(),
            block,
            coefficients: Coefficients::Average,
            constant: 0.0,
        }
    }

    pub fn geometry(&self) -> RegionGeometry {
        RegionGeometry {
            block: self.block.clone(),
            stride: self.stride.clone(),
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(), QoiError> {
        if self.block.len() != shape.len() || self.stride.len() != shape.len() {
            return Err(QoiError::BlockRank {
                block: self.block.clone(),
                shape: shape.to_vec(),
            });
        }
        if self.block.contains(&0)
            || self.stride.contains(&0)
            || self.stride.iter().zip(&self.block).any(|(s, b)| s > b)
        {
            return Err(QoiError::BadGeometry);
        }
        if let Coefficients::Weighted(w) = &self.coefficients {
            let expected: usize = self.block.iter().product();
            if w.len() != expected {
                return Err(QoiError::WeightCount {
                    expected,
                    actual: w.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QoiSpec {
    Univariate(UnivariateBundle),
    RegionalLinear(RegionalQoi),
    /// Arity equals the number of bound fields; variable `j` reads field `j`.
    MultivariateGeneral(MultivariateBundle),
}

impl QoiSpec {
    pub fn univariate(text: &str) -> Result<Self, QoiError> {
        Ok(Self::Univariate(UnivariateBundle::parse(text)?))
    }

    pub fn regional_average(text: &str, block: Vec<usize>) -> Result<Self, QoiError> {
        Ok(Self::RegionalLinear(RegionalQoi::average(
            UnivariateBundle::parse(text)?,
            block,
        )))
    }

    /// Vector QoI over variables `x, y, z` (or `x1..xn` beyond three).
    pub fn vector(text: &str, arity: usize) -> Result<Self, QoiError> {
        let names = default_var_names(arity);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(Self::MultivariateGeneral(MultivariateBundle::parse(
            text, &refs,
        )?))
    }

    pub fn kind(&self) -> QoiKind {
        match self {
            Self::Univariate(_) => QoiKind::Univariate,
            Self::RegionalLinear(_) => QoiKind::RegionalLinear,
            Self::MultivariateGeneral(_) => QoiKind::MultivariateGeneral,
        }
    }

    /// Number of input fields the QoI reads.
    pub fn arity(&self) -> usize {
        match self {
            Self::MultivariateGeneral(b) => b.arity(),
            _ => 1,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Univariate(b) => b.canonical(),
            Self::RegionalLinear(r) => {
                let dims: Vec<String> = r.block.iter().map(usize::to_string).collect();
                format!("regional[{}] {}", dims.join("x"), r.inner.canonical())
            }
            Self::MultivariateGeneral(b) => b.canonical(),
        }
    }

    /// Builds the evaluation layout for fields of `shape`.
    pub fn layout(&self, shape: &[usize]) -> Result<QoiLayout, QoiError> {
        let n: usize = shape.iter().product();
        Ok(match self {
            Self::Univariate(_) => QoiLayout::Points { n },
            Self::MultivariateGeneral(b) => QoiLayout::Tuples { n, arity: b.arity() },
            Self::RegionalLinear(r) => {
                r.check(shape)?;
                let regions = RegionIter::new(shape, &r.geometry())
                    .map(|members| {
                        let coefficients = match &r.coefficients {
                            #[allow(clippy::cast_precision_loss)]
                            Coefficients::Average => vec![1.0 / members.len() as f64; members.len()],
                            Coefficients::Sum => vec![1.0; members.len()],
                            Coefficients::Weighted(w) => {
                                members.iter().map(|m| w[m.offset]).collect()
                            }
                        };
                        Region {
                            members: members.iter().map(|m| m.index).collect(),
                            coefficients,
                        }
                    })
                    .collect();
                QoiLayout::Regions {
                    regions,
                    grid: region_grid(shape, &r.geometry()),
                }
            }
        })
    }

    pub fn encode(&self, w: &mut Writer) {
        match self {
            Self::Univariate(b) => {
                w.u8(1).str(&b.var).str(&b.canonical());
            }
            Self::RegionalLinear(r) => {
                w.u8(2).str(&r.inner.var).str(&r.inner.canonical());
                w.u8(u8::try_from(r.block.len()).expect("rank exceeds 255"));
                for (&b, &s) in r.block.iter().zip(&r.stride) {
                    w.u64(b as u64).u64(s as u64);
                }
                match &r.coefficients {
                    Coefficients::Average => {
                        w.u8(0);
                    }
                    Coefficients::Sum => {
                        w.u8(1);
                    }
                    Coefficients::Weighted(ws) => {
                        w.u8(2).u32(u32::try_from(ws.len()).expect("too many weights"));
                        for &x in ws {
                            w.f64(x);
                        }
                    }
                }
                w.f64(r.constant);
            }
            Self::MultivariateGeneral(b) => {
                w.u8(3).u8(u8::try_from(b.arity()).expect("arity exceeds 255"));
                for v in &b.vars {
                    w.str(v);
                }
                w.str(&b.canonical());
            }
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, QoiError> {
        let usize_of = |v: u64| usize::try_from(v).map_err(|_| QoiError::Malformed("extent".into()));
        match r.u8()? {
            1 => {
                let var = r.str()?;
                let text = r.str()?;
                Ok(Self::Univariate(UnivariateBundle::parse_with_var(&text, &var)?))
            }
            2 => {
                let var = r.str()?;
                let text = r.str()?;
                let rank = r.u8()? as usize;
                let mut block = Vec::with_capacity(rank);
                let mut stride = Vec::with_capacity(rank);
                for _ in 0..rank {
                    block.push(usize_of(r.u64()?)?);
                    stride.push(usize_of(r.u64()?)?);
                }
                let coefficients = match r.u8()? {
                    0 => Coefficients::Average,
                    1 => Coefficients::Sum,
                    2 => {
                        let n = r.u32()? as usize;
                        let mut ws = Vec::with_capacity(n.min(1 << 20));
                        for _ in 0..n {
                            ws.push(r.f64()?);
                        }
                        Coefficients::Weighted(ws)
                    }
                    t => return Err(QoiError::Malformed(format!("coefficient rule {t}"))),
                };
                let constant = r.f64()?;
                Ok(Self::RegionalLinear(RegionalQoi {
                    inner: UnivariateBundle::parse_with_var(&text, &var)?,
                    block,
                    stride,
                    coefficients,
                    constant,
                }))
            }
            3 => {
                let arity = r.u8()? as usize;
                let vars = (0..arity).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
                let text = r.str()?;
                let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
                Ok(Self::MultivariateGeneral(MultivariateBundle::parse(
                    &text, &refs,
                )?))
            }
            t => Err(QoiError::Malformed(format!("kind tag {t}"))),
        }
    }
}

pub fn default_var_names(arity: usize) -> Vec<String> {
    if arity <= 3 {
        ["x", "y", "z"][..arity].iter().map(|s| (*s).to_string()).collect()
    } else {
        (1..=arity).map(|i| format!("x{i}")).collect()
    }
}

/// Block shape plus the spacing of block origins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionGeometry {
    pub block: Vec<usize>,
    pub stride: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionMember {
    /// Flat row-major index into the field.
    pub index: usize,
    /// Row-major offset inside the full block shape.
    pub offset: usize,
}

/// Iterates regions in row-major order of their origins; each item lists the
/// members of one (possibly clipped) block.
pub struct RegionIter {
    shape: Vec<usize>,
    block: Vec<usize>,
    stride: Vec<usize>,
    field_strides: Vec<usize>,
    block_strides: Vec<usize>,
    origin: Vec<usize>,
    done: bool,
}

impl RegionIter {
    pub fn new(shape: &[usize], geometry: &RegionGeometry) -> Self {
        Self {
            shape: shape.to_vec(),
            block: geometry.block.clone(),
            stride: geometry.stride.clone(),
            field_strides: strides(shape),
            block_strides: strides(&geometry.block),
            origin: vec![0; shape.len()],
            done: shape.is_empty() || shape.contains(&0),
        }
    }
}

impl Iterator for RegionIter {
    type Item = Vec<RegionMember>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let rank = self.shape.len();
        let extent: Vec<usize> = (0..rank)
            .map(|d| self.block[d].min(self.shape[d] - self.origin[d]))
            .collect();
        let mut members = Vec::with_capacity(extent.iter().product());
        let mut local = vec![0usize; rank];
        'outer: loop {
            let mut index = 0;
            let mut offset = 0;
            for d in 0..rank {
                index += (self.origin[d] + local[d]) * self.field_strides[d];
                offset += local[d] * self.block_strides[d];
            }
            members.push(RegionMember { index, offset });
            for d in (0..rank).rev() {
                local[d] += 1;
                if local[d] < extent[d] {
                    continue 'outer;
                }
                local[d] = 0;
            }
            break;
        }
        // advance origin
        let mut d = rank;
        loop {
            if d == 0 {
                self.done = true;
                break;
            }
            d -= 1;
            self.origin[d] += self.stride[d];
            if self.origin[d] < self.shape[d] && !self.covers_tail(d) {
                break;
            }
            self.origin[d] = 0;
        }
        Some(members)
    }
}

impl RegionIter {
    /// True when the block started at the current origin along `d` would be
    /// fully contained in its predecessor (only possible with overlap).
    fn covers_tail(&self, d: usize) -> bool {
        let prev = self.origin[d] - self.stride[d];
        prev + self.block[d] >= self.shape[d]
    }
}

/// Number of region origins along each axis, matching `RegionIter`.
fn region_grid(shape: &[usize], geometry: &RegionGeometry) -> Vec<usize> {
    shape
        .iter()
        .zip(geometry.block.iter().zip(&geometry.stride))
        .map(|(&n, (&b, &s))| {
            let mut count = 1;
            let mut origin = 0;
            while origin + b < n {
                origin += s;
                count += 1;
            }
            count
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub members: Vec<usize>,
    pub coefficients: Vec<f64>,
}

/// The units a QoI is evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub enum QoiLayout {
    /// One QoI value per data point.
    Points { n: usize },
    /// One value per region of a single field.
    Regions { regions: Vec<Region>, grid: Vec<usize> },
    /// One value per co-located tuple across `arity` fields.
    Tuples { n: usize, arity: usize },
}

impl QoiLayout {
    pub fn unit_count(&self) -> usize {
        match self {
            Self::Points { n } | Self::Tuples { n, .. } => *n,
            Self::Regions { regions, .. } => regions.len(),
        }
    }

    pub fn regions_overlap(&self) -> bool {
        match self {
            Self::Regions { regions, .. } => {
                let total: usize = regions.iter().map(|r| r.members.len()).sum();
                let mut seen = vec![false; total];
                for r in regions {
                    for &m in &r.members {
                        if m >= seen.len() || seen[m] {
                            return true;
                        }
                        seen[m] = true;
                    }
                }
                false
            }
            _ => false,
        }
    }
}

/// Evaluates one QoI unit. `inputs[k]` is field `k` as `f64`.
pub fn eval_unit(
    spec: &QoiSpec,
    layout: &QoiLayout,
    inputs: &[&[f64]],
    unit: usize,
    scratch: &mut Vec<f64>,
) -> Result<f64, QoiError> {
    match (spec, layout) {
        (QoiSpec::Univariate(b), _) => b
            .f
            .eval(&[inputs[0][unit]])
            .map_err(|source| QoiError::Domain { index: unit, source }),
        (QoiSpec::RegionalLinear(r), QoiLayout::Regions { regions, .. }) => {
            let region = &regions[unit];
            let mut acc = r.constant;
            for (&m, &a) in region.members.iter().zip(&region.coefficients) {
                let g = r
                    .inner
                    .f
                    .eval(&[inputs[0][m]])
                    .map_err(|source| QoiError::Domain { index: m, source })?;
                acc += a * g;
            }
            Ok(acc)
        }
        (QoiSpec::MultivariateGeneral(b), _) => {
            scratch.clear();
            scratch.extend(inputs.iter().map(|f| f[unit]));
            b.f.eval(scratch.as_slice())
                .map_err(|source| QoiError::Domain { index: unit, source })
        }
        (QoiSpec::RegionalLinear(_), _) => Err(QoiError::Malformed("layout does not match QoI".into())),
    }
}

/// Evaluates the QoI over already-converted inputs sharing `shape`.
pub fn evaluate_values(
    spec: &QoiSpec,
    layout: &QoiLayout,
    inputs: &[&[f64]],
) -> Result<Vec<f64>, QoiError> {
    let mut scratch = Vec::with_capacity(inputs.len());
    (0..layout.unit_count())
        .map(|u| eval_unit(spec, layout, inputs, u, &mut scratch))
        .collect()
}

fn check_inputs<T: Real>(spec: &QoiSpec, fields: &[&Field<T>]) -> Result<(), QoiError> {
    if fields.len() != spec.arity() {
        return Err(QoiError::Arity {
            expected: spec.arity(),
            actual: fields.len(),
        });
    }
    if fields.windows(2).any(|w| w[0].shape() != w[1].shape()) {
        return Err(QoiError::ShapeMismatch);
    }
    Ok(())
}

/// QoI values of `fields`. Regional QoIs yield one value per region, laid
/// out on the grid of region origins; other kinds keep the field shape.
pub fn evaluate_qoi<T: Real>(spec: &QoiSpec, fields: &[&Field<T>]) -> Result<Field<f64>, QoiError> {
    check_inputs(spec, fields)?;
    let shape = fields[0].shape();
    let layout = spec.layout(shape)?;
    let converted: Vec<Vec<f64>> = fields.iter().map(|f| f.to_f64()).collect();
    let inputs: Vec<&[f64]> = converted.iter().map(Vec::as_slice).collect();
    let values = evaluate_values(spec, &layout, &inputs)?;
    let out_shape = match &layout {
        QoiLayout::Regions { grid, .. } => grid.clone(),
        _ => shape.to_vec(),
    };
    Field::new(out_shape, values).map_err(|e| QoiError::Malformed(e.to_string()))
}

/// Inclusive value range of a set of values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn of(values: &[f64]) -> Self {
        values.iter().fold(
            Self {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, &v| Self {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.span() > 0.0)
    }
}

/// Range of the QoI over `fields`; a constant QoI is an error because
/// relative thresholds cannot be converted against it.
pub fn qoi_value_range<T: Real>(spec: &QoiSpec, fields: &[&Field<T>]) -> Result<ValueRange, QoiError> {
    let q = evaluate_qoi(spec, fields)?;
    let range = ValueRange::of(q.values());
    if range.is_degenerate() {
        return Err(QoiError::DegenerateRange { value: range.min });
    }
    Ok(range)
}
