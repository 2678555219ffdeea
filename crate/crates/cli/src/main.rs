//! `depthkit` command line: dataset auditing (`audit`), score-based
//! filtering (`filter`), affine-invariant evaluation (`eval`), decoder
//! forward passes and counters (`decoder`), and latency benchmarks (`bench`).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (any sample-level
//! failure when `--strict` is set). All file outputs are written atomically
//! (temp file + rename).

mod settings;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depthkit::depthio::{self, ManifestEntry, DEFAULT_FAR_PLANE};
use depthkit::evalkit::{evaluate_affine_invariant, DEFAULT_TAU};
use depthkit::filterpipe::{
    audit as run_audit, emit_report, filter_scores, read_scores_csv, write_scores_csv,
    FilterPolicy, Grouping, ReportFormat,
};
use depthkit::fmt::sig9;
use depthkit::quality::{HistogramRange, ScoreOptions, DEFAULT_BINS};
use depthkit::sdt::bench::bench_forward;
use depthkit::sdt::count::{count_flops, count_params, FlopsOptions};
use depthkit::sdt::params::{init_params, read_params, write_params, DecoderParams};
use depthkit::sdt::tokens::read_tokens;
use depthkit::sdt::{forward, DecoderConfig};

use settings::FileConfig;

/// Counting and ranking conventions, printed by `--version` for provenance.
const CONVENTIONS: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nconventions:\n",
    "  flops: 2 per multiply-accumulate; conv = 2*H*W*Cout*(Cin/groups)*k^2;\n",
    "         encoder estimate per block = 24*n*D^2 linear (+ 4*n^2*D with\n",
    "         --attention-quadratic)\n",
    "  percentile cuts: sort ascending by metric, ties broken by id,\n",
    "         drop floor(fraction*n); both metric cuts share one survivor pool\n",
    "  edge threshold: nearest-rank 90th percentile, edges strictly greater\n",
    "  validity: finite and > 0 and <= far plane\n",
    "  csv numbers: 9 significant digits",
);

#[derive(Parser)]
#[command(name = "depthkit", version, long_version = CONVENTIONS)]
#[command(about = "Depth dataset auditing, filtering, evaluation, and reference decoder")]
struct Cli {
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit with code 2 if any sample fails to load or evaluate
    #[arg(long, global = true)]
    strict: bool,

    /// Far plane in meters; depths above it are invalid
    #[arg(long, global = true)]
    far_plane: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every manifest sample and apply the filtering policy
    Audit(AuditArgs),
    /// Re-partition a scores CSV into good/bad manifests
    Filter(FilterArgs),
    /// Affine-invariant evaluation of predictions against ground truth
    Eval(EvalArgs),
    /// Decoder forward pass, parameter count, or FLOPs report
    Decoder(DecoderArgs),
    /// Decoder latency benchmark
    Bench(BenchArgs),
}

/// `--config` names the settings file on the data subcommands; the decoder
/// subcommands reuse the same flag name for the preset.
#[derive(Args)]
struct ConfigFileArg {
    /// Flat key=value config file; command-line flags override file values
    #[arg(long = "config", value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Minimum valid-pixel ratio; samples strictly below are dropped
    #[arg(long)]
    valid_ratio_min: Option<f64>,

    /// Fraction cut from the bottom of each metric ranking
    #[arg(long)]
    cut_fraction: Option<f64>,

    /// Histogram bin count
    #[arg(long)]
    bins: Option<usize>,

    /// Histogram range lower edge (fixed-range mode)
    #[arg(long)]
    hist_lo: Option<f64>,

    /// Histogram range upper edge (fixed-range mode; defaults to the far plane)
    #[arg(long)]
    hist_hi: Option<f64>,

    /// Use each sample's min-max depth range instead of the fixed range
    #[arg(long)]
    per_sample_range: bool,

    /// Percentile-cut grouping: per-dataset or global
    #[arg(long)]
    grouping: Option<String>,

    /// Apply the second metric cut to the re-ranked survivors of the first
    /// (default: both cuts share the valid-ratio survivor pool)
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    config_file: ConfigFileArg,

    /// JSON-lines manifest of depth samples
    #[arg(long)]
    manifest: PathBuf,

    /// Per-sample scores CSV output
    #[arg(long)]
    out: PathBuf,

    /// Per-dataset report output
    #[arg(long)]
    report: Option<PathBuf>,

    /// Report format: csv or json
    #[arg(long, default_value = "csv")]
    report_format: String,

    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    config_file: ConfigFileArg,

    /// Scores CSV produced by `audit`
    #[arg(long)]
    scores: PathBuf,

    /// Output manifest of kept samples
    #[arg(long)]
    good: PathBuf,

    /// Output manifest of dropped samples
    #[arg(long)]
    bad: PathBuf,

    /// Original manifest; when given, good/bad re-emit its full entries
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// Per-dataset report output
    #[arg(long)]
    report: Option<PathBuf>,

    /// Report format: csv or json
    #[arg(long, default_value = "csv")]
    report_format: String,

    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config_file: ConfigFileArg,

    /// JSON-lines manifest of predicted disparity maps
    #[arg(long)]
    pred: PathBuf,

    /// JSON-lines manifest of ground-truth depth maps
    #[arg(long)]
    gt: PathBuf,

    /// Per-sample results CSV (id,absrel,delta1,m with a mean row)
    #[arg(long)]
    out: PathBuf,

    /// Accuracy threshold factor for delta-1
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct DecoderArgs {
    /// Decoder preset: s, b, or l
    #[arg(long = "config", value_name = "PRESET", id = "preset")]
    preset: String,

    /// Report mode instead of a forward pass: params or flops
    #[arg(long)]
    report: Option<String>,

    /// Input resolution HxW for the flops report
    #[arg(long)]
    res: Option<String>,

    /// Include the encoder estimate in the flops report
    #[arg(long)]
    include_encoder: bool,

    /// Charge the quadratic attention term in the encoder estimate
    #[arg(long)]
    attention_quadratic: bool,

    /// Token dump to decode
    #[arg(long)]
    tokens: Option<PathBuf>,

    /// Parameter source: a params file path or `seed:N`
    #[arg(long)]
    params: Option<String>,

    /// Output depth map (PFM)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write the resolved parameters to this file
    #[arg(long)]
    save_params: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Decoder preset: s, b, or l
    #[arg(long = "config", value_name = "PRESET", id = "preset")]
    preset: String,

    /// Input resolution HxW
    #[arg(long, default_value = "256x256")]
    res: String,

    /// Timed runs after one warm-up pass
    #[arg(long, default_value_t = 10)]
    runs: usize,

    /// Seed for parameters and synthetic tokens
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Errors carrying their exit code: usage problems exit 1, data problems 2.
enum AppError {
    Usage(String),
    Data(String),
}

impl From<depthkit::Error> for AppError {
    fn from(e: depthkit::Error) -> Self {
        match e {
            depthkit::Error::Config(msg) => AppError::Usage(msg),
            other => AppError::Data(other.to_string()),
        }
    }
}

type AppResult<T> = Result<T, AppError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> AppResult<()> {
    let config_path = match &cli.command {
        Command::Audit(a) => a.config_file.config.as_ref(),
        Command::Filter(a) => a.config_file.config.as_ref(),
        Command::Eval(a) => a.config_file.config.as_ref(),
        _ => None,
    };
    let file = match config_path {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.get_usize("threads")?);
    let far_plane = cli
        .far_plane
        .or(file.get_f64("far_plane")?)
        .unwrap_or(DEFAULT_FAR_PLANE);
    if far_plane <= 0.0 {
        return Err(AppError::Usage("far_plane must be positive".into()));
    }

    let body = || match &cli.command {
        Command::Audit(args) => cmd_audit(args, &file, far_plane, cli.strict),
        Command::Filter(args) => cmd_filter(args, &file, far_plane),
        Command::Eval(args) => cmd_eval(args, &file, far_plane, cli.strict),
        Command::Decoder(args) => cmd_decoder(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match threads {
        None => body(),
        Some(n) => {
            if n == 0 {
                return Err(AppError::Usage("--threads must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| AppError::Usage(format!("thread pool: {e}")))?;
            pool.install(body)
        }
    }
}

/// Resolves the filtering policy from flags, config file, and defaults.
fn resolve_policy(args: &PolicyArgs, file: &FileConfig, far_plane: f64) -> AppResult<FilterPolicy> {
    let grouping = match args
        .grouping
        .clone()
        .or(file.get_string("grouping"))
        .as_deref()
    {
        None | Some("per-dataset") => Grouping::PerDataset,
        Some("global") => Grouping::Global,
        Some(other) => {
            return Err(AppError::Usage(format!(
                "unknown grouping '{other}' (expected per-dataset or global)"
            )))
        }
    };
    let range = if args.per_sample_range {
        HistogramRange::PerSample
    } else {
        HistogramRange::Fixed {
            lo: args.hist_lo.or(file.get_f64("hist_lo")?).unwrap_or(0.0),
            hi: args.hist_hi.or(file.get_f64("hist_hi")?).unwrap_or(far_plane),
        }
    };
    let policy = FilterPolicy {
        valid_ratio_min: args
            .valid_ratio_min
            .or(file.get_f64("valid_ratio_min")?)
            .unwrap_or(0.2),
        cut_fraction: args
            .cut_fraction
            .or(file.get_f64("cut_fraction")?)
            .unwrap_or(0.2),
        grouping,
        sequential: args.sequential,
        score: ScoreOptions {
            k: args.bins.or(file.get_usize("bins")?).unwrap_or(DEFAULT_BINS),
            range,
        },
    };
    policy.validate()?;
    Ok(policy)
}

fn parse_report_format(name: &str) -> AppResult<ReportFormat> {
    match name {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(AppError::Usage(format!(
            "unknown report format '{other}' (expected csv or json)"
        ))),
    }
}

/// Writes through a temp file in the target directory, then renames.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> AppResult<()>,
) -> AppResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| AppError::Data(format!("{}: create temp file: {e}", path.display())))?;
    write(tmp.as_file_mut())?;
    tmp.flush()
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn cmd_audit(args: &AuditArgs, file: &FileConfig, far_plane: f64, strict: bool) -> AppResult<()> {
    let policy = resolve_policy(&args.policy, file, far_plane)?;
    let entries = depthio::read_manifest(&args.manifest)?;
    if entries.is_empty() {
        return Err(AppError::Data(format!(
            "{}: manifest is empty",
            args.manifest.display()
        )));
    }
    let (rows, report) = run_audit(&entries, far_plane, &policy)?;
    for row in &rows {
        if let Some(err) = &row.error {
            eprintln!("sample {}: {err}", row.scores.id);
        }
    }
    write_atomic(&args.out, |w| Ok(write_scores_csv(&rows, w)?))?;
    if let Some(report_path) = &args.report {
        let format = parse_report_format(&args.report_format)?;
        write_atomic(report_path, |w| Ok(emit_report(&report, format, w)?))?;
    }
    println!(
        "audited {} samples: good={} bad={}",
        report.summary.total, report.summary.good, report.summary.bad
    );
    if strict && rows.iter().any(|r| r.error.is_some()) {
        return Err(AppError::Data("one or more samples failed to load".into()));
    }
    Ok(())
}

fn cmd_filter(args: &FilterArgs, file: &FileConfig, far_plane: f64) -> AppResult<()> {
    let policy = resolve_policy(&args.policy, file, far_plane)?;
    let scores = {
        let f = std::fs::File::open(&args.scores)
            .map_err(|e| AppError::Data(format!("{}: {e}", args.scores.display())))?;
        read_scores_csv(f)?
    };
    let (rows, report) = filter_scores(scores, &policy)?;

    let manifest: Option<HashMap<String, ManifestEntry>> = match &args.manifest {
        Some(path) => Some(
            depthio::read_manifest(path)?
                .into_iter()
                .map(|e| (e.id.clone(), e))
                .collect(),
        ),
        None => None,
    };
    let emit = |kept: bool, w: &mut dyn Write| -> AppResult<()> {
        for row in rows.iter().filter(|r| r.kept == kept) {
            match &manifest {
                Some(map) => {
                    let entry = map.get(&row.scores.id).ok_or_else(|| {
                        AppError::Data(format!("id {:?} not found in manifest", row.scores.id))
                    })?;
                    writeln!(w, "{}", serde_line(entry)?)
                }
                None => writeln!(
                    w,
                    "{{\"id\":{},\"dataset\":{}}}",
                    json_string(&row.scores.id),
                    json_string(&row.scores.dataset)
                ),
            }
            .map_err(|e| AppError::Data(e.to_string()))?;
        }
        Ok(())
    };
    write_atomic(&args.good, |w| emit(true, w))?;
    write_atomic(&args.bad, |w| emit(false, w))?;
    if let Some(report_path) = &args.report {
        let format = parse_report_format(&args.report_format)?;
        write_atomic(report_path, |w| Ok(emit_report(&report, format, w)?))?;
    }
    println!(
        "filtered {} samples: good={} bad={}",
        report.summary.total, report.summary.good, report.summary.bad
    );
    Ok(())
}

fn serde_line(entry: &ManifestEntry) -> AppResult<String> {
    let mut buf = Vec::new();
    depthio::write_manifest(std::slice::from_ref(entry), &mut buf)?;
    let mut s = String::from_utf8(buf).map_err(|e| AppError::Data(e.to_string()))?;
    s.truncate(s.trim_end().len());
    Ok(s)
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn cmd_eval(args: &EvalArgs, file: &FileConfig, far_plane: f64, strict: bool) -> AppResult<()> {
    use rayon::prelude::*;

    let tau = args.tau.or(file.get_f64("tau")?).unwrap_or(DEFAULT_TAU);
    if tau <= 1.0 {
        return Err(AppError::Usage("tau must exceed 1".into()));
    }
    let preds: HashMap<String, ManifestEntry> = depthio::read_manifest(&args.pred)?
        .into_iter()
        .map(|e| (e.id.clone(), e))
        .collect();
    let gts = depthio::read_manifest(&args.gt)?;
    if gts.is_empty() {
        return Err(AppError::Data(format!("{}: manifest is empty", args.gt.display())));
    }

    let results: Vec<(String, Result<(f64, f64, usize), String>)> = gts
        .par_iter()
        .map(|gt_entry| {
            let id = gt_entry.id.clone();
            let outcome = (|| -> Result<(f64, f64, usize), String> {
                let pred_entry = preds
                    .get(&id)
                    .ok_or_else(|| "no prediction for this id".to_string())?;
                let gt = depthio::load_depth::<f64>(gt_entry, far_plane).map_err(|e| e.to_string())?;
                let (pw, ph, pred) =
                    depthio::load_raw::<f64>(pred_entry).map_err(|e| e.to_string())?;
                if (pw, ph) != (gt.width, gt.height) {
                    return Err(format!(
                        "prediction is {pw}x{ph} but ground truth is {}x{}",
                        gt.width, gt.height
                    ));
                }
                let res = evaluate_affine_invariant(&pred, &gt.depth, &gt.valid, far_plane, tau)
                    .map_err(|e| e.to_string())?;
                Ok((res.absrel, res.delta1, res.m))
            })();
            (id, outcome)
        })
        .collect();

    let mut results = results;
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut failures = 0usize;
    let ok: Vec<&(String, Result<(f64, f64, usize), String>)> = results
        .iter()
        .inspect(|(id, r)| {
            if let Err(e) = r {
                eprintln!("sample {id}: {e}");
            }
        })
        .filter(|(_, r)| r.is_ok())
        .collect();
    failures += results.len() - ok.len();
    if ok.is_empty() {
        return Err(AppError::Data("every sample failed to evaluate".into()));
    }

    write_atomic(&args.out, |w| {
        writeln!(w, "id,absrel,delta1,m").map_err(|e| AppError::Data(e.to_string()))?;
        let (mut sum_a, mut sum_d, mut sum_m) = (0.0, 0.0, 0usize);
        for (id, r) in &results {
            match r {
                Ok((a, d, m)) => {
                    sum_a += a;
                    sum_d += d;
                    sum_m += m;
                    writeln!(w, "{id},{},{},{m}", sig9(*a), sig9(*d))
                }
                Err(_) => writeln!(w, "{id},,,0"),
            }
            .map_err(|e| AppError::Data(e.to_string()))?;
        }
        let n = ok.len() as f64;
        writeln!(
            w,
            "mean,{},{},{}",
            sig9(sum_a / n),
            sig9(sum_d / n),
            (sum_m as f64 / n).round() as u64
        )
        .map_err(|e| AppError::Data(e.to_string()))
    })?;

    let n = ok.len() as f64;
    let mean_absrel: f64 = ok.iter().map(|(_, r)| r.as_ref().unwrap().0).sum::<f64>() / n;
    let mean_delta1: f64 = ok.iter().map(|(_, r)| r.as_ref().unwrap().1).sum::<f64>() / n;
    println!(
        "evaluated {} samples ({failures} failed): absrel={} delta1={}",
        ok.len(),
        sig9(mean_absrel),
        sig9(mean_delta1)
    );
    if strict && failures > 0 {
        return Err(AppError::Data(format!("{failures} samples failed to evaluate")));
    }
    Ok(())
}

fn parse_res(res: &str) -> AppResult<(usize, usize)> {
    let (h, w) = res
        .split_once('x')
        .ok_or_else(|| AppError::Usage(format!("bad resolution '{res}' (expected HxW)")))?;
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| AppError::Usage(format!("bad resolution '{res}' (expected HxW)")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn resolve_params(config: &DecoderConfig, spec: &str) -> AppResult<DecoderParams<f32>> {
    if let Some(seed) = spec.strip_prefix("seed:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| AppError::Usage(format!("bad parameter seed '{spec}'")))?;
        Ok(init_params(config, seed))
    } else {
        Ok(read_params(config, Path::new(spec))?)
    }
}

fn cmd_decoder(args: &DecoderArgs) -> AppResult<()> {
    let config = DecoderConfig::preset(&args.preset)?;
    if let Some(report) = &args.report {
        match report.as_str() {
            "params" => {
                println!(
                    "config={} d_enc={} width={} params={}",
                    args.preset, config.d_enc, config.width, count_params(&config)
                );
            }
            "flops" => {
                let res = args.res.as_deref().ok_or_else(|| {
                    AppError::Usage("--report flops requires --res HxW".into())
                })?;
                let (h, w) = parse_res(res)?;
                let opts = FlopsOptions {
                    include_encoder: args.include_encoder,
                    attention_quadratic: args.attention_quadratic,
                };
                let flops = count_flops(&config, h, w, opts)?;
                println!("# flops counted as 2 per multiply-accumulate");
                println!(
                    "config={} res={h}x{w} include_encoder={} attention_quadratic={} flops={}",
                    args.preset, args.include_encoder, args.attention_quadratic, sig9(flops)
                );
            }
            other => {
                return Err(AppError::Usage(format!(
                    "unknown report '{other}' (expected params or flops)"
                )))
            }
        }
        return Ok(());
    }

    let tokens_path = args
        .tokens
        .as_ref()
        .ok_or_else(|| AppError::Usage("forward pass requires --tokens".into()))?;
    let params_spec = args
        .params
        .as_ref()
        .ok_or_else(|| AppError::Usage("forward pass requires --params <file|seed:N>".into()))?;
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| AppError::Usage("forward pass requires --out".into()))?;

    let params = resolve_params(&config, params_spec)?;
    if let Some(path) = &args.save_params {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
            .map_err(|e| AppError::Data(format!("{}: create temp file: {e}", path.display())))?
            .into_temp_path();
        write_params(&params, &config, &tmp)?;
        tmp.persist(path)
            .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    }
    let set = read_tokens::<f32>(tokens_path)?;
    let map = forward(&config, &params, &set)?;
    // write through a temp path so the output appears atomically
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| AppError::Data(format!("{}: create temp file: {e}", out.display())))?
        .into_temp_path();
    depthkit::depthio::pfm::write_pfm(&tmp, map.width, map.height, &map.data)?;
    tmp.persist(out)
        .map_err(|e| AppError::Data(format!("{}: {e}", out.display())))?;
    println!(
        "decoded {}x{} tokens -> {}x{} map at {}",
        set.grid.0,
        set.grid.1,
        map.height,
        map.width,
        out.display()
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> AppResult<()> {
    let config = DecoderConfig::preset(&args.preset)?;
    let (h, w) = parse_res(&args.res)?;
    let result = bench_forward::<f32>(&config, h, w, args.runs, args.seed)?;
    println!(
        "config={} res={h}x{w} runs={} latency={result}",
        args.preset, result.runs
    );
    Ok(())
}
