//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero when any of them fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use qoipress::codec::{self, Archive, CodecError};
use qoipress::ebtune::{eb_univar, t_deterministic, t_probabilistic};
use qoipress::expr::UnivariateBundle;
use qoipress::fixtures::{qoi_catalog, FixtureKind, DEFAULT_SEED};
use qoipress::metrics::psnr_from;
use qoipress::pipeline::{baseline_job, compress_job, verify, Bound, JobConfig};
use qoipress::qoi::QoiSpec;
use qoipress::{Field, Field32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: [usize; 3] = [64, 64, 64];
const GRID: [(f64, f64); 3] = [(1e-1, 1e-2), (1e-2, 1e-3), (1e-3, 1e-4)];

type Outcome = Result<String, String>;

struct Run {
    fixture: &'static str,
    qoi: &'static str,
    eb_rel: f64,
    tau_rel: f64,
    points: usize,
    data_rel: f64,
    qoi_rel: f64,
    corrections: usize,
    cr: f64,
    br: f64,
    element_bytes: usize,
}

impl Run {
    fn tag(&self) -> String {
        format!("{}/{}/eb={:e}/tau={:e}", self.fixture, self.qoi, self.eb_rel, self.tau_rel)
    }
}

fn grid() -> &'static Vec<Run> {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let catalog = qoi_catalog(SHAPE.len());
        let mut jobs = Vec::new();
        for kind in FixtureKind::ALL {
            for (name, spec) in &catalog {
                for &(eb, tau) in &GRID {
                    jobs.push((kind, *name, spec.clone(), eb, tau));
                }
            }
        }
        let next = AtomicUsize::new(0);
        let out = Mutex::new(Vec::with_capacity(jobs.len()));
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((kind, name, spec, eb, tau)) = jobs.get(i) else { break };
                    let fields: Vec<Field32> = (0..spec.arity() as u64)
                        .map(|v| kind.generate(&SHAPE, DEFAULT_SEED, v))
                        .collect();
                    let refs: Vec<&Field32> = fields.iter().collect();
                    let cfg = JobConfig::new(Bound::Rel(*eb), Some(Bound::Rel(*tau)));
                    let job = compress_job(&refs, Some(spec), &cfg).expect("grid job compresses");
                    let r = &job.report;
                    let run = Run {
                        fixture: kind.name(),
                        qoi: name,
                        eb_rel: *eb,
                        tau_rel: *tau,
                        points: r.values,
                        data_rel: r.max_data_error_rel.unwrap_or(f64::INFINITY),
                        qoi_rel: r.max_qoi_error_rel.unwrap_or(f64::INFINITY),
                        corrections: r.corrections,
                        cr: r.cr,
                        br: r.br,
                        element_bytes: r.element_bytes,
                    };
                    out.lock().unwrap().push((i, run));
                });
            }
        });
        let mut runs = out.into_inner().unwrap();
        runs.sort_by_key(|r| r.0);
        runs.into_iter().map(|r| r.1).collect()
    })
}

fn threshold_table() -> Outcome {
    let rows = [(3usize, 0.33, 0.26), (8, 1.0, 1.27), (64, 1.0, 3.6)];
    let mut seen = Vec::new();
    for (n, want_t1, want_t2) in rows {
        // the 3-point row is a plain sum, the others are block averages
        let alpha = if n == 3 { 1.0 } else { 1.0 / n as f64 };
        let alphas = vec![alpha; n];
        let t1 = t_deterministic(&alphas, 1.0f64);
        let t2 = t_probabilistic(&alphas, 1.0f64, 2.0, 0.9999);
        let round2 = |v: f64| (v * 100.0).round() / 100.0;
        seen.push(format!("n={n}: {t1:.4}/{t2:.4}"));
        if round2(t1) != round2(want_t1) || round2(t2) != round2(want_t2) {
            return Err(format!("n={n}: got {t1:.4}T and {t2:.4}T, want {want_t1}T and {want_t2}T"));
        }
    }
    Ok(seen.join(", "))
}

fn hard_bounds() -> Outcome {
    let runs = grid();
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| !(r.data_rel <= r.eb_rel && r.qoi_rel <= r.tau_rel))
        .map(|r| format!("{} data {:e} qoi {:e}", r.tag(), r.data_rel, r.qoi_rel))
        .collect();
    if bad.is_empty() {
        let worst = runs.iter().map(|r| r.qoi_rel / r.tau_rel).fold(0.0, f64::max);
        Ok(format!("{} runs, worst QoI error {:.3} of tau", runs.len(), worst))
    } else {
        Err(format!("{} of {} runs violate a bound: {}", bad.len(), runs.len(), bad.join("; ")))
    }
}

/// Largest radius whose QoI drift stays within `t`, by bisection.
fn oracle_radius(f: &dyn Fn(f64) -> f64, x: f64, t: f64, limit: f64) -> f64 {
    let fx = f(x);
    let ok = |e: f64| {
        let up = (f(x + e) - fx).abs();
        let down = (f(x - e) - fx).abs();
        e < limit && up <= t && down <= t
    };
    let (mut lo, mut hi) = (0.0f64, t.min(1.0).max(1e-300));
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn estimator_vs_oracle() -> Outcome {
    type Case = (&'static str, fn(f64) -> f64, (f64, f64), bool);
    let cases: [Case; 5] = [
        ("x^2", |x| x * x, (0.1, 10.0), false),
        ("x^3", |x| x * x * x, (0.1, 10.0), false),
        ("ln(x)", f64::ln, (0.1, 10.0), true),
        ("e^x", f64::exp, (-3.0, 3.0), false),
        ("sqrt(x)", f64::sqrt, (0.1, 10.0), true),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (text, f, (lo, hi), positive_domain) in cases {
        let bundle = UnivariateBundle::parse(text).expect("oracle QoI parses");
        let mut devs = Vec::with_capacity(1000);
        let mut violations = 0usize;
        let mut worst_overshoot = 0.0f64;
        for _ in 0..1000 {
            let x = if lo > 0.0 {
                (rng.gen_range(lo.ln()..hi.ln())).exp()
            } else {
                rng.gen_range(lo..hi)
            };
            let t = 10f64.powf(rng.gen_range(-6.0..-1.0)) * f(x).abs().max(1.0);
            let est = eb_univar(x, &bundle, t, f64::INFINITY);
            let limit = if positive_domain { x } else { f64::INFINITY };
            let oracle = oracle_radius(&f, x, t, limit);
            devs.push((est - oracle).abs() / oracle);
            let fx = f(x);
            let drift = (f(x + est) - fx).abs().max((f(x - est) - fx).abs());
            let slack = 8.0 * f64::EPSILON * fx.abs().max(t);
            if !(drift <= t + slack) {
                violations += 1;
                worst_overshoot = worst_overshoot.max(drift / t);
            }
        }
        devs.sort_by(f64::total_cmp);
        let median = devs[devs.len() / 2];
        let max_dev = devs[devs.len() - 1];
        let rate = violations as f64 / 1000.0;
        lines.push(format!(
            "{text}: median dev {median:.2e}, max dev {max_dev:.2e}, violations {:.1}% (worst {worst_overshoot:.6}t)",
            rate * 100.0
        ));
        if text == "x^2" {
            if !(max_dev <= 1e-9) {
                failures.push(format!("x^2 deviates by {max_dev:e}"));
            }
        } else {
            if !(median <= 0.05) {
                failures.push(format!("{text} median deviation {median:e}"));
            }
            if !(rate <= 0.05) {
                failures.push(format!("{text} drift-violation rate {:.1}%", rate * 100.0));
            }
            if worst_overshoot > 3.0 {
                failures.push(format!("{text} drift reaches {worst_overshoot:.2}t"));
            }
        }
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{} [{}]", failures.join(", "), lines.join("; ")))
    }
}

fn improvement_over_baseline() -> Outcome {
    let field: Field32 = FixtureKind::LogNormal.generate(&SHAPE, DEFAULT_SEED, 0);
    let spec = QoiSpec::univariate("x^2").unwrap();
    let cfg = JobConfig::new(Bound::Rel(1e-2), Some(Bound::Rel(1e-3)));
    let ours = compress_job(&[&field], Some(&spec), &cfg).map_err(|e| e.to_string())?;
    let base = baseline_job(&[&field], &spec, &cfg).map_err(|e| e.to_string())?;
    let ratio = ours.report.cr / base.report.cr;
    let detail = format!(
        "CR {:.2} vs baseline {:.2} ({ratio:.2}x), baseline probes {}",
        ours.report.cr, base.report.cr, base.probes
    );
    if base.feasible && ratio >= 1.2 && base.probes >= 5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn correction_overhead() -> Outcome {
    let runs = grid();
    let worst = runs
        .iter()
        .max_by(|a, b| {
            let fa = a.corrections as f64 / a.points as f64;
            let fb = b.corrections as f64 / b.points as f64;
            fa.total_cmp(&fb)
        })
        .expect("grid is not empty");
    let share = worst.corrections as f64 / worst.points as f64;
    let detail = format!("largest share {:.3}% on {}", share * 100.0, worst.tag());
    if share < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn qoipress(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qoipress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn roundtrip_and_format() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let field: Field32 = FixtureKind::Sinusoid.generate(&[32, 32, 32], DEFAULT_SEED, 0);
    std::fs::write(path("in.f32"), field.to_le_bytes()).map_err(|e| e.to_string())?;

    let compress = |out: &str| {
        qoipress(&[
            "compress", "--input", &path("in.f32"), "--shape", "32,32,32", "--eb-rel", "1e-2",
            "--qoi-tol-rel", "1e-3", "--qoi", "x^2", "--out", out,
        ])
    };
    for out in ["a.qp", "b.qp"] {
        let o = compress(&path(out));
        if !o.status.success() {
            return Err(format!("compress failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let a = std::fs::read(path("a.qp")).map_err(|e| e.to_string())?;
    let b = std::fs::read(path("b.qp")).map_err(|e| e.to_string())?;
    if a != b {
        return Err("repeated CLI runs produced different archives".into());
    }

    let o = qoipress(&["decompress", "--input", &path("a.qp"), "--out", &path("out.f32")]);
    if !o.status.success() {
        return Err(format!("decompress failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    let decoded = Field::<f32>::from_le_bytes(vec![32, 32, 32], &std::fs::read(path("out.f32")).unwrap())
        .map_err(|e| e.to_string())?;
    let archive = Archive::from_bytes(&a).map_err(|e| e.to_string())?;
    let max_err = field
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .fold(0.0, f64::max);
    if max_err > archive.header.user_eb {
        return Err(format!("decoded error {max_err:e} above {:e}", archive.header.user_eb));
    }

    let o = qoipress(&["verify", "--original", &path("in.f32"), "--archive", &path("a.qp")]);
    if !o.status.success() {
        return Err(format!("verify rejected a fresh archive: {}", String::from_utf8_lossy(&o.stderr)));
    }
    let outcome = verify(&[&field], &[archive]).map_err(|e| e.to_string())?;
    if !outcome.passed() {
        return Err("library verify rejected a fresh archive".into());
    }

    // library path, f64 and a multi-field job
    let fields: Vec<Field<f64>> = (0..3).map(|v| FixtureKind::LogNormal.generate(&[24, 24, 24], 7, v)).collect();
    let refs: Vec<&Field<f64>> = fields.iter().collect();
    let spec = QoiSpec::vector("sqrt(x^2+y^2+z^2)", 3).unwrap();
    let cfg = JobConfig::new(Bound::Rel(1e-2), Some(Bound::Rel(1e-3)));
    let first = compress_job(&refs, Some(&spec), &cfg).map_err(|e| e.to_string())?;
    let second = compress_job(&refs, Some(&spec), &cfg).map_err(|e| e.to_string())?;
    for (x, y) in first.fields.iter().zip(&second.fields) {
        if x.archive.to_bytes() != y.archive.to_bytes() {
            return Err("repeated library runs produced different archives".into());
        }
    }
    let archives: Vec<Archive> = first.fields.iter().map(|f| f.archive.clone()).collect();
    if !verify(&refs, &archives).map_err(|e| e.to_string())?.passed() {
        return Err("multi-field verify failed".into());
    }

    let mut corrupt = a.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0x5a;
    match Archive::from_bytes(&corrupt) {
        Err(CodecError::Checksum { .. }) => {}
        other => return Err(format!("corrupted archive decoded as {:?}", other.map(|_| ()))),
    }
    std::fs::write(path("bad.qp"), &corrupt).map_err(|e| e.to_string())?;
    let o = qoipress(&["verify", "--original", &path("in.f32"), "--archive", &path("bad.qp")]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    if o.status.success() || !stderr.contains("checksum") {
        return Err(format!("CLI accepted a corrupted archive: {stderr}"));
    }
    Ok(format!("{} byte archive reproduced, verified and rejected once corrupted", a.len()))
}

fn metric_identities() -> Outcome {
    let runs = grid();
    for r in runs {
        let want = 8.0 * r.element_bytes as f64;
        if !((r.cr * r.br - want).abs() <= 1e-9 * want) {
            return Err(format!("{}: CR*BR = {}", r.tag(), r.cr * r.br));
        }
    }
    let psnr = psnr_from(2.0, 1e-4);
    if (psnr - 46.0206).abs() > 1e-3 {
        return Err(format!("PSNR spot value {psnr}"));
    }
    Ok(format!("CR*BR exact on {} runs, PSNR {psnr:.4} dB", runs.len()))
}

fn degenerate_cases() -> Outcome {
    let n = 32 * 32 * 32;
    let constant = Field::new(vec![32, 32, 32], vec![2.5f32; n]).unwrap();
    let spec = QoiSpec::univariate("x^2").unwrap();
    let cfg = JobConfig::new(Bound::Abs(1e-3), Some(Bound::Abs(f64::INFINITY)));
    let job = compress_job(&[&constant], Some(&spec), &cfg).map_err(|e| e.to_string())?;
    let out = &job.fields[0];
    if out.decompressed != constant.values() {
        return Err("constant field not reproduced exactly".into());
    }
    if job.report.cr < 100.0 {
        return Err(format!("constant field only reached CR {:.1}", job.report.cr));
    }
    let const_cr = job.report.cr;

    let field: Field32 = FixtureKind::Sinusoid.generate(&[32, 32, 32], DEFAULT_SEED, 0);
    let cfg = JobConfig::new(Bound::Rel(1e-3), Some(Bound::Abs(f64::INFINITY)));
    let job = compress_job(&[&field], Some(&spec), &cfg).map_err(|e| e.to_string())?;
    let eb = job.eb_abs[0];
    let plan = &job.fields[0].plan;
    if plan.eb_global != eb || plan.bounds.iter().any(|&b| b != eb) {
        return Err("unbounded QoI did not give a uniform plan".into());
    }
    let plain = codec::compress(&field, &qoipress::ebtune::EbPlan::uniform(n, eb), &Default::default(), &Default::default())
        .map_err(|e| e.to_string())?;
    if plain.reconstruction != job.fields[0].decompressed {
        return Err("unbounded QoI differs from uniform compression".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let values: Vec<f32> = (0..n)
        .map(|i| {
            if i % 7 == 0 {
                10f32.powf(rng.gen_range(-30.0..-3.0))
            } else {
                rng.gen_range(0.5..2.0)
            }
        })
        .collect();
    let near_zero = Field::new(vec![32, 32, 32], values).unwrap();
    let log = QoiSpec::univariate("log2(x)").unwrap();
    let mut worst = f32::INFINITY;
    for (eb, tau) in [(1e-1, 1e-2), (1e-2, 1e-3), (5e-1, 1e-1)] {
        let cfg = JobConfig::new(Bound::Rel(eb), Some(Bound::Rel(tau)));
        let job = compress_job(&[&near_zero], Some(&log), &cfg).map_err(|e| e.to_string())?;
        let min = job.fields[0].decompressed.iter().copied().fold(f32::INFINITY, f32::min);
        worst = worst.min(min);
        if !(min > 0.0) {
            return Err(format!("log2 reconstruction left the domain: {min:e} at eb {eb:e}"));
        }
    }
    Ok(format!("constant CR {const_cr:.0}, uniform plan when unbounded, smallest log2 input {worst:e}"))
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_string()))
        .unwrap_or_default()
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 threshold table", threshold_table),
        ("2 hard bounds", hard_bounds),
        ("3 estimator vs oracle", estimator_vs_oracle),
        ("4 improvement over baseline", improvement_over_baseline),
        ("5 correction overhead", correction_overhead),
        ("6 roundtrip and format", roundtrip_and_format),
        ("7 metric identities", metric_identities),
        ("8 degenerate inputs", degenerate_cases),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(p.as_ref()))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
