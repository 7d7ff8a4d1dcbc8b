//! Seeded synthetic fields for tests and the benchmark subcommand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{strides, Field};
use crate::qoi::QoiSpec;
use crate::scalar::Real;

/// Environment variable overriding the fixture seed of the benchmark.
pub const SEED_ENV: &str = "QPET_SEED";
pub const DEFAULT_SEED: u64 = 20_240_917;

/// Seed from [`SEED_ENV`], or `fallback` when unset or unparsable.
pub fn seed_from_env(fallback: u64) -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(fallback)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Sinusoid,
    LogNormal,
    PiecewiseConstant,
}

impl FixtureKind {
    pub const ALL: [Self; 3] = [Self::Sinusoid, Self::LogNormal, Self::PiecewiseConstant];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sinusoid => "sinusoid",
            Self::LogNormal => "lognormal",
            Self::PiecewiseConstant => "piecewise",
        }
    }

    /// Field `variant` of this family; different variants differ in phase
    /// or random stream.
    pub fn generate<T: Real>(self, shape: &[usize], seed: u64, variant: u64) -> Field<T> {
        match self {
            Self::Sinusoid => sinusoid(shape, variant),
            Self::LogNormal => lognormal(shape, seed ^ variant.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            Self::PiecewiseConstant => piecewise_constant(shape, seed ^ variant.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)),
        }
    }
}

fn build<T: Real>(shape: &[usize], f: impl Fn(&[f64]) -> f64) -> Field<T> {
    let n: usize = shape.iter().product();
    let st = strides(shape);
    #[allow(clippy::cast_precision_loss)]
    let values = (0..n)
        .map(|i| {
            let u: Vec<f64> = shape
                .iter()
                .zip(&st)
                .map(|(&s, &k)| ((i / k) % s) as f64 / s as f64)
                .collect();
            T::from_f64_rounded(f(&u))
        })
        .collect();
    Field::new(shape.to_vec(), values).expect("generated values are finite")
}

/// Smooth product of sines with values in roughly `[1, 3]`.
pub fn sinusoid<T: Real>(shape: &[usize], variant: u64) -> Field<T> {
    #[allow(clippy::cast_precision_loss)]
    let phase = variant as f64 * 0.7;
    build(shape, |u| {
        let mut p = 1.0;
        let mut s = 0.0;
        for (d, &x) in u.iter().enumerate() {
            #[allow(clippy::cast_precision_loss)]
            let k = 2.0 * PI * (1.0 + d as f64 * 0.5);
            p *= (k * x + phase).sin();
            s += (3.0 * k * x - phase).cos();
        }
        2.0 + 0.8 * p + 0.05 * s
    })
}

/// Sum of random low-frequency cosine modes, scaled to unit variance.
fn smooth_gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> impl Fn(&[f64]) -> f64 {
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..16)
        .map(|_| {
            let k: Vec<f64> = shape
                .iter()
                .map(|_| 2.0 * PI * f64::from(rng.gen_range(-3i32..=3)))
                .collect();
            (k, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.5))
        })
        .collect();
    let norm = (modes.iter().map(|m| m.2 * m.2).sum::<f64>() / 2.0).sqrt();
    move |u: &[f64]| {
        modes
            .iter()
            .map(|(k, phi, a)| a * (k.iter().zip(u).map(|(k, x)| k * x).sum::<f64>() + phi).cos())
            .sum::<f64>()
            / norm
    }
}

/// `exp(1.5 g)` of a smooth unit-variance field `g`: positive and skewed
/// over several orders of magnitude.
pub fn lognormal<T: Real>(shape: &[usize], seed: u64) -> Field<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = smooth_gaussian(shape, &mut rng);
    build(shape, |u| (1.5 * g(u)).exp())
}

/// Random positive levels on an irregular partition into boxes.
pub fn piecewise_constant<T: Real>(shape: &[usize], seed: u64) -> Field<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cuts: Vec<Vec<f64>> = shape
        .iter()
        .map(|_| {
            let mut c: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..0.9)).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    let cells = 4usize.pow(u32::try_from(shape.len()).expect("rank fits u32"));
    let levels: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.5..4.0)).collect();
    build(shape, |u| {
        let cell = u
            .iter()
            .zip(&cuts)
            .fold(0usize, |acc, (&x, c)| acc * 4 + c.iter().filter(|&&t| x >= t).count());
        levels[cell]
    })
}

/// `offset + slope * flat_index`.
pub fn ramp<T: Real>(shape: &[usize], offset: f64, slope: f64) -> Field<T> {
    let n: usize = shape.iter().product();
    #[allow(clippy::cast_precision_loss)]
    let values = (0..n).map(|i| T::from_f64_rounded(offset + slope * i as f64)).collect();
    Field::new(shape.to_vec(), values).expect("ramp values are finite")
}

/// The ten reference QoIs: five point-wise, two block averages over 4^d
/// blocks of a `rank`-dimensional field, and three over 3-field tuples.
pub fn qoi_catalog(rank: usize) -> Vec<(&'static str, QoiSpec)> {
    let block = vec![4; rank];
    let uni = |s: &str| QoiSpec::univariate(s).expect("catalog QoI parses");
    let vec3 = |s: &str| QoiSpec::vector(s, 3).expect("catalog QoI parses");
    vec![
        ("x^2", uni("x^2")),
        ("log2(x)", uni("log2(x)")),
        ("e^x", uni("e^x")),
        ("1/x", uni("1/(x+0)")),
        ("x^3", uni("x^3")),
        ("avg4(x^2)", QoiSpec::regional_average("x^2", block.clone()).expect("catalog QoI parses")),
        ("avg4(x^3)", QoiSpec::regional_average("x^3", block).expect("catalog QoI parses")),
        ("x^2+y^2+z^2", vec3("x^2+y^2+z^2")),
        ("sqrt(x^2+y^2+z^2)", vec3("sqrt(x^2+y^2+z^2)")),
        ("x*y*z", vec3("x*y*z")),
    ]
}
