use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use regscatter::harness::{
    breakdown_probe, contaminate, ContaminationKind, ContaminationMode, ContaminationScheme, ProbeEstimator,
    ProbeOptions,
};
use regscatter::hbd::{sigma_r, HbdOptions};
use regscatter::io::{
    curves_csv, parse_center, parse_config, parse_csv, parse_f64_list, parse_matrix, parse_models, parse_radial,
    parse_target, table_csv, write_csv, EstimateRecord, TargetSpec,
};
use regscatter::location::{center_data, robust_sigma2, CenterSpec};
use regscatter::penalized::{adjusted_v, scaled_scatter, solve_penalized, Penalty, PenaltySpec, Target};
use regscatter::population::population_table;
use regscatter::sscm::sscm;
use regscatter::tuning::{cv_curves, grid_with_step, select_beta, Criterion, CvOptions, EstimatorKind};
use regscatter::weight::WeightFunction;
use regscatter::DataMatrix;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "regscatter", version, about = "Regularized M-estimators of multivariate scatter")]
struct Cli {
    /// Flat key=value file; every key names a flag of the subcommand. Flags
    /// given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one estimator and write a JSON record.
    Estimate(EstimateArgs),
    /// Cross-validation curves over the beta grid.
    Cv(CvArgs),
    /// Population condition numbers by Monte Carlo.
    PopulationTable(TableArgs),
    /// Push added points outwards and report the shape bias.
    BreakdownProbe(ProbeArgs),
    /// Replace or add contaminating points.
    Contaminate(ContaminateArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// sscm, tp, kl, tyler-beta or sigma-r
    #[arg(long)]
    method: String,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Weight scale for tp and kl.
    #[arg(long)]
    kappa: Option<f64>,
    /// Use u(s) = kappa/(s + shift) instead of kappa/s.
    #[arg(long)]
    shift: Option<f64>,
    /// spatial, marginal, pairwise or known=a,b,...
    #[arg(long, default_value = "spatial")]
    center: String,
    /// identity, sigma2 or file=path
    #[arg(long, default_value = "identity")]
    target: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    /// sigma or v
    #[arg(long, default_value = "sigma")]
    kind: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    #[arg(long, default_value = "spatial")]
    center: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// `1`, `2`, or `diag=...` entries separated by `;`.
    #[arg(long, default_value = "1,2")]
    models: String,
    #[arg(long, default_value_t = 5)]
    q: usize,
    #[arg(long, default_value = "0.5,1,3,5,8")]
    kappas: String,
    #[arg(long, default_value = "0.05,0.2,0.5,0.8,0.95")]
    gammas: String,
    /// normal, t=dof or point=r
    #[arg(long, default_value = "normal")]
    radial: String,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    input: PathBuf,
    /// e.g. sscm-fixed, sscm-spatial, kl:gamma=0.5,kappa=1, tyler-beta:beta=0.5
    #[arg(long)]
    estimator: String,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    directions: usize,
    #[arg(long, default_value = "1e2,1e4,1e6")]
    ladder: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ContaminateArgs {
    #[arg(long)]
    input: PathBuf,
    /// paper, or radial=distance
    #[arg(long, default_value = "paper")]
    scheme: String,
    #[arg(long)]
    m: usize,
    /// replace or add
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_data(path: &Path) -> Result<(Option<Vec<String>>, DataMatrix)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn weight(kappa: Option<f64>, shift: Option<f64>) -> Result<WeightFunction> {
    let kappa = kappa.context("--kappa is required for this method")?;
    Ok(match shift {
        Some(s) => WeightFunction::t_shift(kappa, s)?,
        None => WeightFunction::tyler(kappa)?,
    })
}

fn run_estimate(a: &EstimateArgs) -> Result<String> {
    let (_, raw) = read_data(&a.input)?;
    let center = match parse_center(&a.center)? {
        CenterSpec::Known(c) if c.len() != raw.q() => {
            bail!("known center has {} coordinates, data has {}", c.len(), raw.q())
        }
        c => c,
    };
    let x = center_data(&raw, &center)?;
    let mut params = BTreeMap::new();
    let mut put = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            params.insert(k.to_string(), v);
        }
    };
    put("eta", a.eta);
    put("gamma", a.gamma);
    put("beta", a.beta);
    put("kappa", a.kappa);
    put("shift", a.shift);

    let method = a.method.to_ascii_lowercase();
    let record = match method.as_str() {
        "sscm" => {
            let s = sscm(&x, &CenterSpec::origin(x.q()))?.to_pd()?;
            EstimateRecord::new(&method, params, center.label(), &s, None, true, 0, a.seed)
        }
        "sigma-r" => {
            let opts = HbdOptions { seed: a.seed.unwrap_or(0), ..Default::default() };
            let r = sigma_r(&x, &opts)?;
            let sc = scaled_scatter(&r.shape, &x)?;
            params.insert("objective".into(), r.objective_value);
            EstimateRecord::new(&method, params, center.label(), &sc, None, true, r.restarts, a.seed)
        }
        "tp" | "kl" | "tyler-beta" => {
            let target = match parse_target(&a.target)? {
                TargetSpec::Identity => Target::Identity,
                TargetSpec::Sigma2 => Target::SigmaHat2(robust_sigma2(&x, &DVector::zeros(x.q()))?),
                TargetSpec::File(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {p}"))?;
                    Target::Matrix(parse_matrix(&text)?)
                }
            };
            let (kind, w) = match method.as_str() {
                "tp" => (Penalty::Tp { eta: a.eta.context("--eta is required for tp")? }, weight(a.kappa, a.shift)?),
                "kl" => {
                    (Penalty::Kl { gamma: a.gamma.context("--gamma is required for kl")? }, weight(a.kappa, a.shift)?)
                }
                _ => {
                    let beta = a.beta.context("--beta is required for tyler-beta")?;
                    let gamma = a.gamma.unwrap_or(0.5);
                    params.insert("gamma".into(), gamma);
                    (Penalty::TylerBeta { beta, gamma }, WeightFunction::tyler(beta)?)
                }
            };
            let est = solve_penalized(&x, &w, &PenaltySpec::with_target(kind, target))?;
            let v = match kind {
                Penalty::TylerBeta { .. } => est.v.clone(),
                _ => adjusted_v(&est).ok(),
            };
            EstimateRecord::new(&method, params, center.label(), &est.sigma, v.as_ref(), est.converged, est.iterations, a.seed)
        }
        other => bail!("unknown method '{other}' (expected sscm, tp, kl, tyler-beta or sigma-r)"),
    };
    to_json(&record)
}

fn run_cv(a: &CvArgs) -> Result<String> {
    let (_, raw) = read_data(&a.input)?;
    let kind: EstimatorKind = a.kind.parse()?;
    let x = center_data(&raw, &parse_center(&a.center)?)?;
    let grid = grid_with_step(x.q(), a.grid_step)?;
    let opts = CvOptions { k: a.folds, seed: a.seed, grid: Some(grid), ..Default::default() };
    let curve = cv_curves(&x, kind, &opts)?;
    let cns: Vec<Option<f64>> =
        Criterion::ALL.iter().map(|&c| select_beta(&curve, c, &x).ok().map(|t| t.condition_number)).collect();
    Ok(curves_csv(&curve, &cns))
}

fn run_table(a: &TableArgs) -> Result<String> {
    let radial = parse_radial(&a.radial)?;
    let models = parse_models(&a.models, a.q, radial)?;
    let kappas = parse_f64_list(&a.kappas)?;
    let gammas = parse_f64_list(&a.gammas)?;
    if models.is_empty() || kappas.is_empty() || gammas.is_empty() {
        bail!("models, kappas and gammas must be non-empty");
    }
    Ok(table_csv(&population_table(&models, &kappas, &gammas, a.draws, a.seed)))
}

fn run_probe(a: &ProbeArgs) -> Result<String> {
    let (_, x) = read_data(&a.input)?;
    let est: ProbeEstimator = a.estimator.parse()?;
    let est = est.with_dimension(x.q());
    let opts = ProbeOptions { ladder: parse_f64_list(&a.ladder)?, directions: a.directions, seed: a.seed };
    to_json(&breakdown_probe(&est, &x, a.m, &opts)?)
}

fn run_contaminate(a: &ContaminateArgs) -> Result<String> {
    let (header, x) = read_data(&a.input)?;
    let mode = match a.mode.as_deref() {
        None => None,
        Some("replace") => Some(ContaminationMode::Replace),
        Some("add") => Some(ContaminationMode::Add),
        Some(other) => bail!("unknown mode '{other}' (expected replace or add)"),
    };
    let scheme = if a.scheme == "paper" {
        let mut s = ContaminationScheme::paper(x.q(), a.m, a.seed);
        if let Some(m) = mode {
            s.mode = m;
        }
        s
    } else if let Some(d) = a.scheme.strip_prefix("radial=") {
        let distance: f64 = d.parse().with_context(|| format!("bad distance '{d}'"))?;
        let mut direction = vec![0.0; x.q()];
        direction[0] = 1.0;
        ContaminationScheme {
            kind: ContaminationKind::RadialBlowup { direction, distance },
            m: a.m,
            mode: mode.unwrap_or(ContaminationMode::Add),
            seed: a.seed,
        }
    } else {
        bail!("unknown scheme '{}' (expected paper or radial=distance)", a.scheme);
    };
    Ok(write_csv(&contaminate(&x, &scheme)?, header.as_deref()))
}

/// Appends `--key value` for every config entry whose flag is absent from `args`.
fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let config = parse_config(&text).with_context(|| format!("parsing config {path}"))?;
    let given: BTreeSet<String> = rest
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (k, v) in config {
        if !given.contains(&k) {
            rest.push(format!("--{k}"));
            rest.push(v);
        }
    }
    Ok(rest)
}

fn main() -> Result<()> {
    let args = merge_config(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    let (text, out) = match &cli.command {
        Command::Estimate(a) => (run_estimate(a)?, a.out.as_deref()),
        Command::Cv(a) => (run_cv(a)?, a.out.as_deref()),
        Command::PopulationTable(a) => (run_table(a)?, a.out.as_deref()),
        Command::BreakdownProbe(a) => (run_probe(a)?, a.out.as_deref()),
        Command::Contaminate(a) => (run_contaminate(a)?, a.out.as_deref()),
    };
    emit(out, &text)
}
