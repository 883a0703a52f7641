//! `odb`: optimal-design-based subsampling from the command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numerical warning
//! (non-certified design, singular dataset information, failed fits).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use odb_core::design::{ideal_info_matrix, CandidateSet, SolvedDesign, SolverSettings};
use odb_core::samplers::{
    exchange_select, iboss_select, odb_select_with_design, pps_select, pps_weights, srs_select,
    Distance, ExchangeSettings,
};
use odb_core::sim::{brute_force_best_sample, run_study, StudyConfig};
use odb_core::{
    info_matrix_of_dataset, info_matrix_of_rows, solve_continuous_design, BasisKind, BoxTransform,
    Criterion, Dataset, Family, FeatureBasis, ModelSpec, OdbError, SampleSelection, Sampler,
};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "odb", version, about = "Optimal-design-based subsampling of large datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a continuous D- or A-optimal design and print it as JSON.
    Design(DesignArgs),
    /// Score a dataset's per-unit information against the optimal design.
    Quality(QualityArgs),
    /// Select a subsample and write the selection, its indices and its rows.
    Sample(SampleArgs),
    /// Run a Monte Carlo study described by a JSON config.
    Simulate(SimulateArgs),
    /// Find the best subsample of a tiny dataset by exhaustive search.
    Oracle(OracleArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model JSON {basis, family, theta, sigma2}; flags override its fields.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Feature basis: linear or quadratic.
    #[arg(long)]
    basis: Option<String>,
    /// Response family: linear or logistic.
    #[arg(long)]
    family: Option<String>,
    /// Nominal parameters as a comma-separated list (defaults to zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Noise variance of the linear family.
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Args)]
struct SolverArgs {
    /// Relative slack of the equivalence-theorem certificate.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Levels per axis of the candidate grid (default: chosen from the basis).
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column, if any.
    #[arg(long)]
    response: Option<String>,
}

#[derive(Args)]
struct DesignArgs {
    /// Dataset whose covariate box defines the design space (optional).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    /// Number of covariates when no dataset is given.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory; design.json is written there.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QualityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory; quality.json is written there.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// ODB, IBOSS, SRS, PPS or EXCHANGE.
    #[arg(long, default_value = "ODB")]
    sampler: String,
    /// Subsample size.
    #[arg(long)]
    n: usize,
    /// Seed for random samplers (required for SRS, PPS and EXCHANGE).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
    /// Row-matching distance for ODB: euclidean or mahalanobis.
    #[arg(long, default_value = "euclidean")]
    distance: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for selection.json, selection.csv and subsample.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for estimates.csv, efficiencies.csv, summary.json, boxplot.csv.
    #[arg(long, default_value = "study")]
    out: PathBuf,
    /// Concurrent replication workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Subsample size.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
    #[command(flatten)]
    model: ModelArgs,
    /// Output directory; oracle.json is written there.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    basis: Option<BasisKind>,
    family: Option<Family>,
    theta: Option<Vec<f64>>,
    sigma2: Option<f64>,
}

impl ModelArgs {
    fn build(&self, dim: usize) -> Result<ModelSpec> {
        let file: Option<ModelFile> = match &self.model {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
            }
            None => None,
        };
        let (fb, ff, ft, fs2) = match file {
            Some(f) => (f.basis, f.family, f.theta, f.sigma2),
            None => (None, None, None, None),
        };
        let kind = match &self.basis {
            Some(b) => match b.to_ascii_lowercase().as_str() {
                "linear" => BasisKind::Linear,
                "quadratic" => BasisKind::Quadratic,
                other => bail!("unknown basis `{other}` (expected linear or quadratic)"),
            },
            None => fb.unwrap_or(BasisKind::Linear),
        };
        let basis = FeatureBasis::new(kind, dim)?;
        let family = match &self.family {
            Some(f) => f.parse::<Family>()?,
            None => ff.unwrap_or(Family::LinearGaussian),
        };
        let theta = match self.theta.clone().or(ft) {
            Some(t) => t,
            None if family == Family::Logistic => bail!("the logistic family needs --theta (the nominal parameters)"),
            None => vec![0.0; basis.len()],
        };
        let sigma2 = self.sigma2.or(fs2).unwrap_or(1.0);
        Ok(ModelSpec::new(basis, family, theta, sigma2)?)
    }
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            tolerance: self.tolerance,
            ..SolverSettings::default()
        }
    }

    fn candidates(&self, model: &ModelSpec, data: Option<(&Dataset, &BoxTransform)>) -> Result<CandidateSet> {
        Ok(match self.grid {
            Some(g) => CandidateSet::grid(model.basis.dim(), g)?,
            None => CandidateSet::default_for(&model.basis, data)?,
        })
    }
}

fn read_data(args: &DataArgs) -> Result<Dataset> {
    Ok(Dataset::read_csv(&args.data, args.response.as_deref())?)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Outcome of a command: success or a numerical warning.
enum Status {
    Ok,
    Warning,
}

fn design(args: DesignArgs) -> Result<Status> {
    let data = match &args.data {
        Some(p) => Some(Dataset::read_csv(p, args.response.as_deref())?),
        None => None,
    };
    let dim = data.as_ref().map_or(args.dim, Dataset::dim);
    let model = args.model.build(dim)?;
    let transform = data.as_ref().map(BoxTransform::fit).transpose()?;
    let pair = data.as_ref().zip(transform.as_ref());
    let candidates = args.solver.candidates(&model, pair)?;
    let solved = solve_continuous_design(&candidates, &model, args.criterion, &args.solver.settings())?;
    let text = solved.to_json()?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_file(out, "design.json", &format!("{text}\n"))?;
    }
    if solved.certified {
        Ok(Status::Ok)
    } else {
        eprintln!("warning: design not certified after {} iterations", solved.iterations);
        Ok(Status::Warning)
    }
}

fn quality(args: QualityArgs) -> Result<Status> {
    let data = read_data(&args.data)?;
    let model = args.model.build(data.dim())?;
    let settings = args.solver.settings();
    let report = |eff: f64, certified: bool, note: Option<String>| -> Result<()> {
        let mut v = json!({
            "criterion": args.criterion,
            "dataset_efficiency": eff,
            "certified": certified,
        });
        if let Some(n) = note {
            v["warning"] = json!(n);
        }
        let text = serde_json::to_string_pretty(&v)?;
        println!("{text}");
        if let Some(out) = &args.out {
            write_file(out, "quality.json", &format!("{text}\n"))?;
        }
        Ok(())
    };
    let transform = match BoxTransform::fit(&data) {
        Ok(t) => t,
        Err(OdbError::ConstantColumn(c)) => {
            let msg = format!("covariate `{c}` is constant; the dataset information matrix is singular");
            eprintln!("warning: {msg}");
            report(0.0, false, Some(msg))?;
            return Ok(Status::Warning);
        }
        Err(e) => return Err(e.into()),
    };
    let candidates = args.solver.candidates(&model, Some((&data, &transform)))?;
    let solved = solve_continuous_design(&candidates, &model, args.criterion, &settings)?;
    let ideal = ideal_info_matrix(&solved.design, &model)?;
    let m = info_matrix_of_dataset(&data, &model, &transform)?;
    let eff = ideal.efficiency(&m, args.criterion, settings.tolerance)?;
    let mut status = if solved.certified { Status::Ok } else { Status::Warning };
    let note = if m.is_singular() {
        status = Status::Warning;
        let msg = "dataset information matrix is singular".to_string();
        eprintln!("warning: {msg}");
        Some(msg)
    } else {
        None
    };
    report(eff, solved.certified, note)?;
    Ok(status)
}

fn selection_efficiencies(
    data: &Dataset,
    sel: &SampleSelection,
    model: &ModelSpec,
    transform: &BoxTransform,
    candidates: &CandidateSet,
    settings: &SolverSettings,
) -> Result<Vec<(Criterion, f64)>> {
    let m = info_matrix_of_rows(data, &sel.rows, model, transform)?;
    let mut out = Vec::new();
    for c in [Criterion::D, Criterion::A] {
        let solved = solve_continuous_design(candidates, model, c, settings)?;
        let ideal = ideal_info_matrix(&solved.design, model)?;
        out.push((c, ideal.efficiency(&m, c, settings.tolerance)?));
    }
    Ok(out)
}

fn sample(args: SampleArgs) -> Result<Status> {
    let sampler: Sampler = args.sampler.parse()?;
    let distance: Distance = args.distance.parse()?;
    if sampler.is_random() && args.seed.is_none() {
        bail!("sampler {sampler} is random and needs an explicit --seed");
    }
    let data = read_data(&args.data)?;
    let model = args.model.build(data.dim())?;
    let transform = BoxTransform::fit(&data)?;
    let settings = args.solver.settings();
    let candidates = args.solver.candidates(&model, Some((&data, &transform)))?;
    let mut status = Status::Ok;
    let sel = match sampler {
        Sampler::Odb => {
            let solved: SolvedDesign = solve_continuous_design(&candidates, &model, args.criterion, &settings)?;
            if !solved.certified {
                eprintln!("warning: ODB design not certified");
                status = Status::Warning;
            }
            odb_select_with_design(&data, &model, &transform, &solved, args.n, distance)?
        }
        Sampler::Iboss => iboss_select(&data, args.n)?,
        Sampler::Srs => srs_select(data.n_rows(), args.n, args.seed.unwrap())?,
        Sampler::Pps => pps_select(&pps_weights(&data, &model, &transform)?, args.n, args.seed.unwrap())?,
        Sampler::Exchange => exchange_select(
            &data,
            &model,
            &transform,
            args.criterion,
            args.n,
            args.seed.unwrap(),
            &ExchangeSettings::default(),
        )?,
    };
    write_file(&args.out, "selection.json", &format!("{}\n", sel.to_json()?))?;
    let mut idx = Vec::new();
    sel.write_index_csv(&mut idx)?;
    write_file(&args.out, "selection.csv", &String::from_utf8(idx)?)?;
    let mut rows = Vec::new();
    data.subset(&sel.rows)?.write_csv(&mut rows)?;
    write_file(&args.out, "subsample.csv", &String::from_utf8(rows)?)?;
    let effs = selection_efficiencies(&data, &sel, &model, &transform, &candidates, &settings)?;
    let line: Vec<String> = effs.iter().map(|(c, v)| format!("{c}-efficiency {v:.4}")).collect();
    println!("{sampler} n={}: {}", sel.len(), line.join(", "));
    Ok(status)
}

fn simulate(args: SimulateArgs) -> Result<Status> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = StudyConfig::from_json(&text).map_err(|e| anyhow!("{}: {e}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let started = std::time::Instant::now();
    let out = run_study(cfg, args.jobs, &|done, total| {
        eprint!("\rreplication {done}/{total}");
        if done == total {
            eprintln!();
        }
    })?;
    out.write(&args.out)?;
    eprintln!(
        "wrote {} in {:.1}s",
        args.out.display(),
        started.elapsed().as_secs_f64()
    );
    let r = &out.report;
    for s in &r.samplers {
        let effs: Vec<String> = s.mean_efficiency.iter().map(|(c, v)| format!("{c} {v:.4}")).collect();
        let trace = s.estimates.as_ref().map_or("-".into(), |e| format!("{:.4}", e.trace));
        eprintln!("{:<9} eff [{}]  MC trace {trace}", s.sampler, effs.join(", "));
    }
    let uncertified = r.designs.iter().any(|d| !d.certified);
    if uncertified || !r.failures.is_empty() {
        eprintln!(
            "warning: {} failed fits or selections{}",
            r.failures.len(),
            if uncertified { ", non-certified design" } else { "" }
        );
        return Ok(Status::Warning);
    }
    Ok(Status::Ok)
}

fn oracle(args: OracleArgs) -> Result<Status> {
    let data = read_data(&args.data)?;
    let model = args.model.build(data.dim())?;
    let transform = BoxTransform::fit(&data)?;
    let sel = brute_force_best_sample(&data, &model, &transform, args.criterion, args.n)?;
    let text = sel.to_json()?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_file(out, "oracle.json", &format!("{text}\n"))?;
    }
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Quality(a) => quality(a),
        Command::Sample(a) => sample(a),
        Command::Simulate(a) => simulate(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warning) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
