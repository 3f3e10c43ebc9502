use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use retsina::fmri::ArrayN;
use retsina::io::{load_array, load_tensor, read_tns3_header, save_array, save_tensor, TNS3_MAGIC, TNSN_MAGIC};
use retsina::linalg::CMat;
use retsina::reconstruct::recover;
use retsina::retsina::{max_acceleration, ms_retsina, retsina, undersample, AccelMode, AccelPlan, RetsinaConfig};
use retsina::sampling::{check_deterministic, check_generic, validate_plan, Mechanism, SamplingPlan};
use retsina::sweep::{run_sweep, to_csv, SweepConfig};
use retsina::synth::{fmri_like_factors, gaussian_factors, Distribution};
use retsina::{cpd_reconstruct, nre, Error, FactorTriple, SolverConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "retsina", version, about = "Regular sampling and CPD-based recovery of third-order tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a low-rank tensor from Gaussian factors
    Synth(SynthArgs),
    /// Extract the sub-tensors observed by a plan
    Sample(SampleArgs),
    /// Recover a tensor from sampled sub-tensors
    Recover(RecoverArgs),
    /// Complete an undersampled fMRI k-space series
    Retsina(RetsinaArgs),
    /// Rank versus sampling-ratio phase sweep
    Sweep(SweepArgs),
    /// Identifiability verdicts for a plan
    Check(CheckArgs),
    /// Print the header of a TNS3 or TNSN file
    Info { file: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "complex")]
    dist: Distribution,
    /// Smooth temporal second factor, as in a k-space fMRI series
    #[arg(long)]
    fmri: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Output directory for sub-tensors and the manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolverArgs {
    /// Solver configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RecoverArgs {
    /// Manifest written by `sample`
    #[arg(long, conflicts_with_all = ["plan", "inputs"])]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "inputs")]
    plan: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    rank: usize,
    /// Run even when the plan is not provably recoverable
    #[arg(long)]
    force: bool,
    /// Ground truth for reporting the NRE
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Report path (default: the output path with a .json extension)
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct RetsinaArgs {
    /// Fully sampled or zero-filled series; entries outside the mask are ignored
    #[arg(long)]
    input: PathBuf,
    /// Acceleration plan JSON
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    rank: usize,
    /// Skip the per-class refinement (multi-slice variant)
    #[arg(long)]
    multi: bool,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    /// Comma-separated ranks
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    rank: Vec<usize>,
    /// Comma-separated sampling ratios
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    ratio: Vec<f64>,
    #[arg(long, default_value = "slab")]
    mechanism: Mechanism,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
    /// Record wall-clock seconds (output is then no longer byte-reproducible)
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    rank: usize,
    /// Factor stem written by `synth` for the deterministic check
    #[arg(long, requires = "plan")]
    factors: Option<PathBuf>,
    /// Report the acceleration bound for these dims instead of checking a plan
    #[arg(long, value_parser = parse_dims, conflicts_with = "plan")]
    dims: Option<[usize; 3]>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v = parse_usize_list(s)?;
    <[usize; 3]>::try_from(v).map_err(|v| format!("expected three dims, got {}", v.len()))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(v)
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 4,
            Error::Diverged { .. } | Error::RankDeficient { .. } | Error::AlgebraicInit(_) | Error::Alignment { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: 4, message: format!("{}: {e}", path.display()) }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load(path: &Path) -> Result<retsina::Tensor3, Failure> {
    load_tensor(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure::from(other),
    })
}

fn factor_path(stem: &Path, name: &str) -> PathBuf {
    stem.with_extension(format!("{name}.tnsn"))
}

fn matrix_to_array(m: &CMat) -> ArrayN {
    ArrayN::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec()).expect("matrix shape")
}

fn array_to_matrix(a: &ArrayN) -> Result<CMat, Failure> {
    match a.dims() {
        [r, c] => Ok(CMat::from_column_slice(*r, *c, a.data())),
        d => Err(Error::Format(format!("factor file has dims {d:?}, expected a matrix")).into()),
    }
}

fn solver_config(args: &SolverArgs) -> Result<SolverConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(Error::from)?,
        None => SolverConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    set_jobs(args.jobs)?;
    Ok(cfg)
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 2, message: format!("--jobs: {e}") })?;
    }
    Ok(())
}

fn report_path(out: &Path, report: &Option<PathBuf>) -> PathBuf {
    report.clone().unwrap_or_else(|| out.with_extension("json"))
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let f = if a.fmri {
        fmri_like_factors(a.dims, a.rank, a.seed)?
    } else {
        gaussian_factors(a.dims, a.rank, a.dist, a.seed)?
    };
    let t = cpd_reconstruct(&f);
    save_tensor(&a.out, &t).map_err(|e| io_failure(&a.out, e))?;
    for (name, m) in [("A", &f.a), ("B", &f.b), ("C", &f.c)] {
        let p = factor_path(&a.out, name);
        save_array(&p, &matrix_to_array(m)).map_err(|e| io_failure(&p, e))?;
    }
    println!("wrote {} ({:?}, rank {})", a.out.display(), a.dims, a.rank);
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<(), Failure> {
    let plan = SamplingPlan::from_json(&read_text(&a.plan)?)?;
    let rules = validate_plan(&plan);
    if !rules.is_valid() {
        return Err(Error::RulesViolated(rules.summary()).into());
    }
    let t = load(&a.input)?;
    let ys = plan.apply(&t)?;
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let mut files = Vec::new();
    for (d, y) in ys.iter().enumerate() {
        let name = format!("sub_{d}.tns");
        let p = a.out.join(&name);
        save_tensor(&p, y).map_err(|e| io_failure(&p, e))?;
        files.push(name);
    }
    let plan_value: serde_json::Value = serde_json::from_str(&plan.to_json(true)?).map_err(Error::from)?;
    let manifest = json!({
        "plan": plan_value,
        "files": files,
        "observed": plan.observed_count(),
        "sampling_ratio": plan.sampling_ratio(),
    });
    let p = a.out.join("manifest.json");
    write_text(&p, &serde_json::to_string_pretty(&manifest).map_err(Error::from)?)?;
    println!("{} sub-tensors, r = {:.6}", ys.len(), plan.sampling_ratio());
    Ok(())
}

fn cmd_recover(a: RecoverArgs) -> Result<(), Failure> {
    let cfg = solver_config(&a.solver)?;
    let (plan, inputs) = match (&a.manifest, &a.plan) {
        (Some(m), _) => {
            let v: serde_json::Value = serde_json::from_str(&read_text(m)?).map_err(Error::from)?;
            let plan: SamplingPlan = serde_json::from_value(v["plan"].clone()).map_err(Error::from)?;
            let dir = m.parent().unwrap_or(Path::new("."));
            let files = v["files"]
                .as_array()
                .ok_or_else(|| Failure::from(Error::Format("manifest has no file list".into())))?
                .iter()
                .map(|f| f.as_str().map(|s| dir.join(s)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Failure::from(Error::Format("manifest file names must be strings".into())))?;
            (plan, files)
        }
        (None, Some(p)) => {
            let text = read_text(p)?;
            if let Ok(accel) = AccelPlan::from_json(&text) {
                return run_retsina(accel, &a.inputs, a.rank, false, &a.truth, &a.out, &a.report, cfg);
            }
            (SamplingPlan::from_json(&text)?, a.inputs.clone())
        }
        (None, None) => {
            return Err(Failure { code: 2, message: "either --manifest or --plan with --inputs is required".into() })
        }
    };
    let ys = inputs.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let report = recover(&plan, &ys, a.rank, &cfg, a.force)?;
    save_tensor(&a.out, &report.estimate).map_err(|e| io_failure(&a.out, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&report.to_json()?).map_err(Error::from)?;
    if let Some(t) = &a.truth {
        let err = nre(&report.estimate, &load(t)?)?;
        value["nre"] = json!(err);
        println!("NRE {err:.3e}");
    }
    let rp = report_path(&a.out, &a.report);
    write_text(&rp, &serde_json::to_string_pretty(&value).map_err(Error::from)?)?;
    println!(
        "{} recovery, rank {}, observed residual {:.3e}{}",
        report.mechanism.name(),
        report.rank,
        report.observed_residual,
        if report.generic.recoverable { "" } else { " (not provably recoverable)" }
    );
    if !report.converged {
        return Err(Failure { code: 3, message: "recovery did not converge".into() });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_retsina(
    plan: AccelPlan,
    inputs: &[PathBuf],
    rank: usize,
    multi: bool,
    truth: &Option<PathBuf>,
    out: &Path,
    report: &Option<PathBuf>,
    solver: SolverConfig,
) -> Result<(), Failure> {
    let [input] = inputs else {
        return Err(Failure { code: 2, message: "an acceleration plan takes exactly one input series".into() });
    };
    let x = undersample(&load(input)?, &plan)?;
    let cfg = RetsinaConfig { solver, ..RetsinaConfig::default() };
    let rep = if multi || plan.is_multi_slice() { ms_retsina(&x, &plan, rank, &cfg)? } else { retsina(&x, &plan, rank, &cfg)? };
    save_tensor(out, &rep.estimate).map_err(|e| io_failure(out, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&rep.to_json()?).map_err(Error::from)?;
    if let Some(t) = truth {
        let err = nre(&rep.estimate, &load(t)?)?;
        value["nre"] = json!(err);
        println!("NRE {err:.3e}");
    }
    write_text(&report_path(out, report), &serde_json::to_string_pretty(&value).map_err(Error::from)?)?;
    println!("{}-fold acceleration, rank {rank}, observed residual {:.3e}", plan.n(), rep.observed_residual);
    if !rep.converged {
        return Err(Failure { code: 3, message: "completion did not converge".into() });
    }
    Ok(())
}

fn cmd_retsina(a: RetsinaArgs) -> Result<(), Failure> {
    let cfg = solver_config(&a.solver)?;
    let plan = AccelPlan::from_json(&read_text(&a.plan)?)?;
    run_retsina(plan, std::slice::from_ref(&a.input), a.rank, a.multi, &a.truth, &a.out, &a.report, cfg)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    set_jobs(a.jobs)?;
    let cfg = SweepConfig {
        trials: a.trials,
        seed: a.seed,
        force: a.force,
        timing: a.timing,
        ..SweepConfig::new(a.dims, a.rank, a.ratio, a.mechanism)
    };
    let csv = to_csv(&run_sweep(&cfg)?);
    match &a.out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), Failure> {
    if let Some(dims) = a.dims {
        println!("{}", json!({ "dims": dims, "rank": a.rank, "max_acceleration": max_acceleration(dims, a.rank, AccelMode::Single) }));
        return Ok(());
    }
    let Some(plan_path) = &a.plan else {
        return Err(Failure { code: 2, message: "--plan or --dims is required".into() });
    };
    let plan = SamplingPlan::from_json(&read_text(plan_path)?)?;
    let rules = validate_plan(&plan);
    let generic = check_generic(&plan, a.rank);
    let mut out = json!({
        "mechanism": plan.mechanism().name(),
        "sampling_ratio": plan.sampling_ratio(),
        "rules": rules,
        "generic": generic,
    });
    if let Some(stem) = &a.factors {
        let load_factor = |name: &str| -> Result<CMat, Failure> {
            let p = factor_path(stem, name);
            array_to_matrix(&load_array(&p).map_err(|e| io_failure(&p, e))?)
        };
        let f = FactorTriple::new(load_factor("A")?, load_factor("B")?, load_factor("C")?)?;
        out["deterministic"] = serde_json::to_value(check_deterministic(&plan, &f)?).map_err(Error::from)?;
    }
    println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
    if !rules.is_valid() || !generic.recoverable {
        return Err(Failure { code: 2, message: "plan is not provably recoverable at this rank".into() });
    }
    Ok(())
}

fn cmd_info(path: &Path) -> Result<(), Failure> {
    let mut head = [0u8; 4];
    {
        use std::io::Read;
        let mut f = fs::File::open(path).map_err(|e| io_failure(path, e))?;
        f.read_exact(&mut head).map_err(|e| io_failure(path, e))?;
    }
    if &head == TNS3_MAGIC {
        let mut f = std::io::BufReader::new(fs::File::open(path).map_err(|e| io_failure(path, e))?);
        let h = read_tns3_header(&mut f)?;
        println!("{}", json!({ "format": "TNS3", "version": h.version, "dtype": h.dtype, "dims": h.dims }));
    } else if &head == TNSN_MAGIC {
        let a = load_array(path)?;
        println!("{}", json!({ "format": "TNSN", "order": a.dims().len(), "dims": a.dims() }));
    } else {
        return Err(Error::Format(format!("{}: unknown magic {head:?}", path.display())).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TNS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Recover(a) => cmd_recover(a),
        Command::Retsina(a) => cmd_retsina(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Check(a) => cmd_check(a),
        Command::Info { file } => cmd_info(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
