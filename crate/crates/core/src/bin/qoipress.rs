use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qoipress::codec::{self, Archive};
use qoipress::ebtune::TuneParams;
use qoipress::fixtures::{self, FixtureKind};
use qoipress::metrics::QualityReport;
use qoipress::pipeline::{self, Bound, JobConfig};
use qoipress::qoi::QoiSpec;
use qoipress::{Field, Real};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "qoipress", version, about = "Error-bounded lossy compression that also bounds QoI errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress raw fields into one archive per field
    Compress(CompressArgs),
    /// Decode an archive back to raw little-endian values
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check archives against their originals and the stored thresholds
    Verify {
        /// Original raw file(s), comma separated in field order
        #[arg(long, value_delimiter = ',', required = true)]
        original: Vec<PathBuf>,
        /// Archive file(s), comma separated in field order
        #[arg(long, value_delimiter = ',', required = true)]
        archive: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        report: ReportFormat,
    },
    /// Search a uniform bound meeting the QoI tolerance by bisection
    Baseline(JobArgs),
    /// Run the synthetic fixture families against the QoI catalog
    Benchmark(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum QoiKindArg {
    Point,
    Region,
    Vector,
}

#[derive(Args)]
struct JobArgs {
    /// Raw input file (headerless, row-major, little-endian)
    #[arg(long, conflicts_with = "fields")]
    input: Option<PathBuf>,
    /// Input files of a vector QoI, comma separated
    #[arg(long, value_delimiter = ',')]
    fields: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    shape: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
    #[arg(long, conflicts_with = "eb_abs", required_unless_present = "eb_abs")]
    eb_rel: Option<f64>,
    #[arg(long)]
    eb_abs: Option<f64>,
    #[arg(long, conflicts_with = "qoi_tol_abs")]
    qoi_tol_rel: Option<f64>,
    /// Absolute QoI tolerance; `inf` leaves the QoI unconstrained
    #[arg(long)]
    qoi_tol_abs: Option<f64>,
    /// QoI expression, e.g. "x^2" or "sqrt(x^2+y^2+z^2)"
    #[arg(long)]
    qoi: Option<String>,
    #[arg(long, value_enum, default_value_t = QoiKindArg::Point)]
    qoi_kind: QoiKindArg,
    /// Block shape of a regional QoI
    #[arg(long, value_delimiter = ',')]
    block: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long, default_value_t = 0.999)]
    beta: f64,
    #[arg(long, default_value_t = 0.95)]
    c0: f64,
    /// Use only the deterministic threshold split
    #[arg(long)]
    deterministic_only: bool,
    /// Skip global error-bound tuning
    #[arg(long)]
    no_tune: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    report: ReportFormat,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    job: JobArgs,
    /// Output archive; multi-field jobs write `<out>.<k>` per field
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    shape: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
    #[arg(long, default_value_t = 1e-2)]
    eb_rel: f64,
    #[arg(long, default_value_t = 1e-3)]
    qoi_tol_rel: f64,
    /// Also run the bisection baseline for each case
    #[arg(long)]
    baseline: bool,
}

impl JobArgs {
    fn paths(&self) -> Vec<PathBuf> {
        match &self.input {
            Some(p) => vec![p.clone()],
            None => self.fields.clone(),
        }
    }

    fn spec(&self) -> Result<Option<QoiSpec>> {
        let Some(text) = &self.qoi else {
            return Ok(None);
        };
        Ok(Some(match self.qoi_kind {
            QoiKindArg::Point => QoiSpec::univariate(text)?,
            QoiKindArg::Region => {
                if self.block.is_empty() {
                    return Err("--qoi-kind region needs --block".into());
                }
                QoiSpec::regional_average(text, self.block.clone())?
            }
            QoiKindArg::Vector => QoiSpec::vector(text, self.paths().len())?,
        }))
    }

    fn config(&self) -> Result<JobConfig> {
        let eb = match (self.eb_rel, self.eb_abs) {
            (Some(r), _) => Bound::Rel(r),
            (None, Some(a)) => Bound::Abs(a),
            (None, None) => return Err("one of --eb-rel / --eb-abs is required".into()),
        };
        let tol = match (self.qoi_tol_rel, self.qoi_tol_abs) {
            (Some(r), _) => Some(Bound::Rel(r)),
            (None, Some(a)) => Some(Bound::Abs(a)),
            (None, None) => None,
        };
        let mut cfg = JobConfig::new(eb, tol);
        cfg.tune = TuneParams {
            c: self.c,
            beta: self.beta,
            c0: self.c0,
            ..TuneParams::default()
        };
        cfg.probabilistic = !self.deterministic_only;
        cfg.tune_global = !self.no_tune;
        Ok(cfg)
    }
}

fn read_field<T: Real>(path: &Path, shape: &[usize]) -> Result<Field<T>> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Field::from_le_bytes(shape.to_vec(), &bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_archive(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Archive::from_bytes(&bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn print_report(r: &QualityReport, format: ReportFormat) {
    match format {
        ReportFormat::Table => print!("{}", r.to_table()),
        ReportFormat::Csv => {
            println!("{}", r.csv_header());
            println!("{}", r.to_csv_row());
        }
    }
}

fn archive_paths(out: &Path, count: usize) -> Vec<PathBuf> {
    if count == 1 {
        return vec![out.to_path_buf()];
    }
    (0..count)
        .map(|k| {
            let mut s = out.as_os_str().to_owned();
            s.push(format!(".{k}"));
            PathBuf::from(s)
        })
        .collect()
}

fn compress<T: Real>(args: &CompressArgs) -> Result<()> {
    let job = &args.job;
    let fields = job
        .paths()
        .iter()
        .map(|p| read_field::<T>(p, &job.shape))
        .collect::<Result<Vec<_>>>()?;
    if fields.is_empty() {
        return Err("pass --input or --fields".into());
    }
    let refs: Vec<&Field<T>> = fields.iter().collect();
    let spec = job.spec()?;
    let out = pipeline::compress_job(&refs, spec.as_ref(), &job.config()?)?;
    for (o, path) in out.fields.iter().zip(archive_paths(&args.out, fields.len())) {
        fs::write(&path, o.archive.to_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    print_report(&out.report, job.report);
    Ok(())
}

fn baseline<T: Real>(job: &JobArgs) -> Result<()> {
    let fields = job
        .paths()
        .iter()
        .map(|p| read_field::<T>(p, &job.shape))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Field<T>> = fields.iter().collect();
    let spec = job.spec()?.ok_or("baseline needs --qoi")?;
    let out = pipeline::baseline_job(&refs, &spec, &job.config()?)?;
    print_report(&out.report, job.report);
    if !out.feasible {
        return Err(format!("no uniform bound met the QoI tolerance within {} probes", out.probes).into());
    }
    Ok(())
}

fn verify<T: Real>(originals: &[PathBuf], archives: &[Archive], format: ReportFormat) -> Result<bool> {
    let shape = archives[0].header.shape.clone();
    let fields = originals
        .iter()
        .map(|p| read_field::<T>(p, &shape))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Field<T>> = fields.iter().collect();
    let outcome = pipeline::verify(&refs, archives)?;
    print_report(&outcome.report, format);
    println!(
        "data bound: {}\nqoi bound: {}",
        if outcome.data_ok { "ok" } else { "VIOLATED" },
        if outcome.qoi_ok { "ok" } else { "VIOLATED" }
    );
    Ok(outcome.passed())
}

fn benchmark<T: Real>(args: &BenchArgs) -> Result<()> {
    let seed = fixtures::seed_from_env(fixtures::DEFAULT_SEED);
    let mut header_printed = false;
    for kind in FixtureKind::ALL {
        let pool: Vec<Field<T>> = (0..3).map(|v| kind.generate(&args.shape, seed, v)).collect();
        for (name, spec) in fixtures::qoi_catalog(args.shape.len()) {
            let refs: Vec<&Field<T>> = pool.iter().take(spec.arity()).collect();
            let cfg = JobConfig::new(Bound::Rel(args.eb_rel), Some(Bound::Rel(args.qoi_tol_rel)));
            let mut report = pipeline::compress_job(&refs, Some(&spec), &cfg)?.report;
            report.label = format!("{}/{name}", kind.name());
            report.config.push(("seed".into(), seed.to_string()));
            let mut rows = vec![report];
            if args.baseline {
                let b = pipeline::baseline_job(&refs, &spec, &cfg)?;
                let mut r = b.report;
                r.label = format!("{}/{name}/baseline", kind.name());
                r.config.push(("seed".into(), seed.to_string()));
                rows.push(r);
            }
            for mut r in rows {
                // compress and baseline rows echo different settings
                let keys = ["probes", "feasible", "deterministic_fallback", "seed"];
                let mut tail: Vec<(String, String)> = keys
                    .iter()
                    .map(|k| {
                        let v = r.config.iter().find(|c| c.0 == *k).map(|c| c.1.clone());
                        ((*k).to_string(), v.unwrap_or_default())
                    })
                    .collect();
                r.config.retain(|c| !keys.contains(&c.0.as_str()));
                r.config.append(&mut tail);
                if !header_printed {
                    println!("{}", r.csv_header());
                    header_printed = true;
                }
                println!("{}", r.to_csv_row());
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Compress(args) => match args.job.dtype {
            Dtype::F32 => compress::<f32>(&args),
            Dtype::F64 => compress::<f64>(&args),
        }
        .map(|()| true),
        Command::Decompress { input, out } => {
            let archive = read_archive(&input)?;
            let field = codec::decompress_any(&archive)?;
            fs::write(&out, field.to_le_bytes()).map_err(|e| format!("{}: {e}", out.display()))?;
            Ok(true)
        }
        Command::Verify {
            original,
            archive,
            report,
        } => {
            let archives = archive.iter().map(|p| read_archive(p)).collect::<Result<Vec<_>>>()?;
            if archives.len() != original.len() {
                return Err("--original and --archive need the same number of files".into());
            }
            match archives[0].header.width {
                qoipress::ElementWidth::F32 => verify::<f32>(&original, &archives, report),
                qoipress::ElementWidth::F64 => verify::<f64>(&original, &archives, report),
            }
        }
        Command::Baseline(job) => match job.dtype {
            Dtype::F32 => baseline::<f32>(&job),
            Dtype::F64 => baseline::<f64>(&job),
        }
        .map(|()| true),
        Command::Benchmark(args) => match args.dtype {
            Dtype::F32 => benchmark::<f32>(&args),
            Dtype::F64 => benchmark::<f64>(&args),
        }
        .map(|()| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
