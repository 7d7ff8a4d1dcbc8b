//! Point-wise error bounds derived from a QoI threshold, and auto-tuning of
//! the global error bound that caps them.
//!
//! Univariate QoIs invert a second-order Taylor model of `f` around each
//! point. Regional-linear and general multivariate QoIs first split the
//! QoI threshold `T` into a per-member threshold `t`, taking the larger of a
//! deterministic split (`T / sum|alpha|`) and a sub-Gaussian concentration
//! estimate, then reuse the univariate inversion per member.

use std::cmp::Ordering;

use thiserror::Error;

use crate::expr::UnivariateBundle;
use crate::qoi::{QoiError, QoiLayout, QoiSpec};
use crate::scalar::Real;

/// Bounds at or below `eb_global * 2^-FLOOR_EXPONENT` are stored losslessly.
pub const FLOOR_EXPONENT: i32 = 40;

/// Smallest bound kept for quantisation relative to `eb_global`; zero when
/// the global bound is unbounded.
pub fn eb_floor<T: Real>(eb_global: T) -> T {
    if eb_global.is_finite() {
        eb_global * T::lit(2f64.powi(-FLOOR_EXPONENT))
    } else {
        T::zero()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneParams {
    /// Divisor of the sub-Gaussian scale; 0 disables the probabilistic split.
    pub c: f64,
    /// Confidence level of the probabilistic split.
    pub beta: f64,
    /// Slope coefficient of the second tuning stage.
    pub c0: f64,
    pub quantiles: Vec<f64>,
    /// The second stage runs only when the chosen quantile is at most this.
    pub q_skip: f64,
    /// Candidates whose sample size is within this relative margin of the
    /// best one count as ties; the larger bound wins.
    pub tie_tolerance: f64,
}

impl Default for TuneParams {
    fn default() -> Self {
        Self {
            c: 2.0,
            beta: 0.999,
            c0: 0.95,
            quantiles: vec![0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.0025],
            q_skip: 0.005,
            tie_tolerance: 0.005,
        }
    }
}

#[derive(Debug, Error)]
pub enum TuneError<E: std::error::Error + 'static> {
    #[error("error-bound plan is empty")]
    EmptyPlan,
    #[error("sample compression failed: {0}")]
    Sample(#[source] E),
}

/// Second-order Taylor inversion of `|f(x') - f(x)| <= t` at one point.
///
/// Returns `min(eb_global, estimate)`, pulled to half the distance to the
/// nearest singularity of `f`. Points whose derivatives cannot be evaluated
/// get the lossless floor `eb_floor(eb_global)`.
pub fn eb_univar<T: Real>(x: T, bundle: &UnivariateBundle, t: T, eb_global: T) -> T {
    let floor = eb_floor(eb_global);
    let (Ok(a), Ok(b)) = (bundle.first.eval(&[x]), bundle.second.eval(&[x])) else {
        return floor;
    };
    let (a, b) = (a.abs(), b.abs());
    let estimate = if b != T::zero() {
        // (sqrt(a^2 + 2bt) - a) / b, rearranged to avoid cancellation
        let two_t = T::lit(2.0) * t;
        two_t / ((a * a + two_t * b).sqrt() + a)
    } else if a != T::zero() {
        t / a
    } else {
        eb_global
    };
    let mut eb = if estimate.is_nan() { floor } else { estimate.min(eb_global) };

    let gap = bundle.singularity_distance(x.to_f64_lossless());
    if gap == 0.0 {
        return floor;
    }
    eb = eb.min(T::lit(0.5 * gap));

    if bundle.has_unresolved_singularity() {
        let defined = |e: T| bundle.f.eval(&[x + e]).is_ok() && bundle.f.eval(&[x - e]).is_ok();
        let mut halvings = 0;
        while eb > floor && !defined(eb) && halvings < 64 {
            eb = eb * T::lit(0.5);
            halvings += 1;
        }
        if !defined(eb) {
            return floor;
        }
    }
    eb.max(floor)
}

/// `T / sum_i |alpha_i|`; infinite when every coefficient is zero.
pub fn t_deterministic<T: Real>(alphas: &[T], total: T) -> T {
    let s = alphas.iter().fold(T::zero(), |acc, a| acc + a.abs());
    if s == T::zero() {
        T::infinity()
    } else {
        total / s
    }
}

/// `c T sqrt(1 / (2 sum_i alpha_i^2 ln(2 / (1 - beta))))`.
///
/// Zero when `c == 0` (disabled); infinite when every coefficient is zero.
pub fn t_probabilistic<T: Real>(alphas: &[T], total: T, c: T, beta: T) -> T {
    if c == T::zero() {
        return T::zero();
    }
    let s2 = alphas.iter().fold(T::zero(), |acc, a| acc + *a * *a);
    if s2 == T::zero() {
        return T::infinity();
    }
    let log_term = (T::lit(2.0) / (T::one() - beta)).ln();
    c * total * (T::one() / (T::lit(2.0) * s2 * log_term)).sqrt()
}

/// Per-member QoI threshold for one region: the larger of both splits.
pub fn member_threshold<T: Real>(alphas: &[T], total: T, params: &TuneParams) -> T {
    let t1 = t_deterministic(alphas, total);
    let t2 = t_probabilistic(alphas, total, T::lit(params.c), T::lit(params.beta));
    t1.max(t2)
}

/// Per-point bounds for a univariate QoI.
pub fn pointwise_bounds(values: &[f64], bundle: &UnivariateBundle, t: f64, eb_global: f64) -> Vec<f64> {
    values
        .iter()
        .map(|&x| eb_univar(x, bundle, t, eb_global))
        .collect()
}

/// Per-point bounds for regional-linear and general multivariate QoIs.
///
/// `inputs[k]` is field `k` as `f64`, `eb_globals[k]` its global bound. The
/// result holds one bound vector per input field. Points shared by several
/// regions keep the smallest bound any region asks for.
pub fn eb_multivar(
    inputs: &[&[f64]],
    spec: &QoiSpec,
    layout: &QoiLayout,
    total: f64,
    eb_globals: &[f64],
    params: &TuneParams,
) -> Result<Vec<Vec<f64>>, QoiError> {
    let mut bounds: Vec<Vec<f64>> = inputs
        .iter()
        .zip(eb_globals)
        .map(|(f, &eg)| vec![eg; f.len()])
        .collect();
    match (spec, layout) {
        (QoiSpec::RegionalLinear(r), QoiLayout::Regions { regions, .. }) => {
            let out = &mut bounds[0];
            let eg = eb_globals[0];
            for region in regions {
                let t = member_threshold(&region.coefficients, total, params);
                for &m in &region.members {
                    let eb = eb_univar(inputs[0][m], &r.inner, t, eg);
                    out[m] = out[m].min(eb);
                }
            }
        }
        (QoiSpec::MultivariateGeneral(b), QoiLayout::Tuples { n, arity }) => {
            let identity = UnivariateBundle::identity();
            let mut tuple = vec![0.0; *arity];
            let mut alphas = vec![0.0; *arity];
            for i in 0..*n {
                for (k, f) in inputs.iter().enumerate() {
                    tuple[k] = f[i];
                }
                let mut singular = false;
                for (j, p) in b.partials.iter().enumerate() {
                    match p.eval(&tuple) {
                        Ok(v) => alphas[j] = v,
                        Err(_) => singular = true,
                    }
                }
                for k in 0..*arity {
                    let eb = if singular {
                        eb_floor(eb_globals[k])
                    } else {
                        let t = member_threshold(&alphas, total, params);
                        eb_univar(tuple[k], &identity, t, eb_globals[k])
                    };
                    bounds[k][i] = bounds[k][i].min(eb);
                }
            }
        }
        _ => return Err(QoiError::Malformed("point-wise QoI passed to eb_multivar".into())),
    }
    Ok(bounds)
}

/// Point-wise bounds of one field plus the global bound capping them.
#[derive(Clone, Debug, PartialEq)]
pub struct EbPlan {
    /// The user's absolute data error bound.
    pub user_eb: f64,
    pub eb_global: f64,
    pub bounds: Vec<f64>,
    /// Quantile and rank the tuner settled on, when tuning ran.
    pub tuned: Option<TuneOutcome>,
}

impl EbPlan {
    pub fn uniform(n: usize, eb: f64) -> Self {
        Self {
            user_eb: eb,
            eb_global: eb,
            bounds: vec![eb; n],
            tuned: None,
        }
    }

    /// Untuned plan: every bound is capped at `user_eb`.
    pub fn from_bounds(user_eb: f64, mut bounds: Vec<f64>) -> Self {
        for b in &mut bounds {
            *b = b.min(user_eb);
        }
        Self {
            user_eb,
            eb_global: user_eb,
            bounds,
            tuned: None,
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// Sets the global bound and re-clamps every point-wise bound to it.
    pub fn clamp_to(&mut self, eb_global: f64) {
        self.eb_global = eb_global.min(self.user_eb);
        let g = self.eb_global;
        for b in &mut self.bounds {
            *b = b.min(g);
        }
    }

    /// Number of points whose bound is below the global bound.
    pub fn count_below_global(&self) -> usize {
        self.bounds.iter().filter(|&&b| b < self.eb_global).count()
    }
}

/// Compresses a fixed sample under a candidate global bound.
pub trait SampleTester {
    type Error: std::error::Error + 'static;

    /// Estimated compression ratio of the sample when every point-wise bound
    /// is capped at `eb_global`.
    fn estimate_cr(&mut self, eb_global: f64) -> Result<f64, Self::Error>;
}

impl<E, F> SampleTester for F
where
    E: std::error::Error + 'static,
    F: FnMut(f64) -> Result<f64, E>,
{
    type Error = E;

    fn estimate_cr(&mut self, eb_global: f64) -> Result<f64, E> {
        self(eb_global)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub quantile: f64,
    pub rank: usize,
    pub eb: f64,
    pub estimated_cr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub eb_global: f64,
    /// Quantile whose candidate won the sample tests.
    pub quantile: f64,
    /// 0-indexed rank of the final bound in the sorted point-wise bounds.
    pub rank: usize,
    pub candidates: Vec<Candidate>,
    /// Whether the slope-descent stage ran.
    pub descended: bool,
}

fn by_value(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

/// Value of 0-indexed rank `k` among `values` (the minimum is rank 0).
pub fn kth_smallest(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    let k = k.min(v.len() - 1);
    *v.select_nth_unstable_by(k, by_value).1
}

/// Picks the global bound from quantile candidates by sample compression,
/// then walks further down the sorted bounds while they stay above a gentle
/// slope from the chosen candidate. Re-clamps `plan` to the result.
pub fn tune_global_eb<S: SampleTester>(
    plan: &mut EbPlan,
    tester: &mut S,
    params: &TuneParams,
) -> Result<TuneOutcome, TuneError<S::Error>> {
    if plan.is_empty() {
        return Err(TuneError::EmptyPlan);
    }
    let n = plan.len();
    let mut work = plan.bounds.clone();

    // Quantiles are visited in decreasing order of rank so each selection
    // only needs the prefix left by the previous one.
    let mut order: Vec<usize> = (0..params.quantiles.len()).collect();
    order.sort_by(|&a, &b| params.quantiles[b].total_cmp(&params.quantiles[a]));
    let mut picks = vec![(0usize, 0.0f64); params.quantiles.len()];
    let mut limit = n;
    for &qi in &order {
        #[allow(clippy::cast_possible_truncation, clippy::cast_sign_loss, clippy::cast_precision_loss)]
        let k = ((params.quantiles[qi] * n as f64).floor() as usize).min(n - 1);
        let k_local = k.min(limit - 1);
        let eb = *work[..limit].select_nth_unstable_by(k_local, by_value).1;
        picks[qi] = (k, eb.min(plan.user_eb));
        limit = k_local + 1;
    }

    let mut candidates: Vec<Candidate> = Vec::with_capacity(picks.len());
    for (qi, &(rank, eb)) in picks.iter().enumerate() {
        let estimated_cr = match candidates.iter().find(|c| c.eb == eb) {
            Some(seen) => seen.estimated_cr,
            None => tester.estimate_cr(eb).map_err(TuneError::Sample)?,
        };
        candidates.push(Candidate {
            quantile: params.quantiles[qi],
            rank,
            eb,
            estimated_cr,
        });
    }

    let best_cr = candidates
        .iter()
        .map(|c| c.estimated_cr)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = candidates
        .iter()
        .filter(|c| c.estimated_cr * (1.0 + params.tie_tolerance) >= best_cr)
        .max_by(|a, b| a.eb.total_cmp(&b.eb).then(b.quantile.total_cmp(&a.quantile).reverse()))
        .expect("at least one candidate")
        .clone();

    let (eb0, k0) = (chosen.eb, chosen.rank);
    let mut eb_global = eb0;
    let mut rank = k0;
    let descended = chosen.quantile <= params.q_skip && k0 > 0;
    if descended {
        let mut smallest = plan.bounds.clone();
        smallest.select_nth_unstable_by(k0 - 1, by_value);
        smallest.truncate(k0);
        smallest.sort_unstable_by(by_value);
        #[allow(clippy::cast_precision_loss)]
        for k in (0..k0).rev() {
            let eb = smallest[k];
            let slope = params.c0 + (k as f64 / k0 as f64) * (1.0 - params.c0);
            if eb >= slope * eb0 {
                eb_global = eb;
                rank = k;
            } else {
                break;
            }
        }
    }

    let outcome = TuneOutcome {
        eb_global: eb_global.min(plan.user_eb),
        quantile: chosen.quantile,
        rank,
        candidates,
        descended,
    };
    plan.clamp_to(outcome.eb_global);
    plan.tuned = Some(outcome.clone());
    Ok(outcome)
}
