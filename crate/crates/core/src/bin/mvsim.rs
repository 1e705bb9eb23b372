//! Command-line front end: runs particle ensembles, mean-field references,
//! distance and rate studies, the Yosida suite and the lattice-sum tables,
//! writing plot-ready CSV artifacts with a content-hash manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvlattice::config::ExperimentConfig;
use mvlattice::experiment::{
    distances_csv, expected_rate, grading_times, persist_run, rate_artifacts, rate_study,
    run_replicas, solve_reference, sweep_distances, Artifact, RateFamily, RateVerdict,
};
use mvlattice::lattice::{
    choose_gamma, lattice_sum_bound_check, Boundary, GridPoint, LatticeError,
};
use mvlattice::models::{Law, ModelSpec};
use mvlattice::yosida::{
    dissipativity_probe, domination_probe, resolvent_contraction_probe, yosida_convergence_study,
    StudyConfig, YosidaConfig,
};

#[derive(Parser)]
#[command(
    name = "mvsim",
    version,
    about = "Spatially extended interacting diffusions: simulation and verification tools"
)]
struct Cli {
    /// Worker threads (0 = library default).  Outputs are byte-identical for
    /// every setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one replica ensemble and write the trajectory table.
    Simulate(ConfigArgs),
    /// Solve the mean-field reference law by Picard iteration.
    Reference(ConfigArgs),
    /// Distance estimates for every sweep entry, without a slope fit.
    Distance(ConfigArgs),
    /// Full convergence-rate study: distances, slope fit, verdict.
    RateStudy(ConfigArgs),
    /// Yosida approximation probes and the lambda-convergence study.
    YosidaCheck(YosidaArgs),
    /// Riesz lattice-sum scaling table across a sweep of N.
    LemmaSums(LemmaArgs),
    /// Print the theoretical convergence exponent for a weight family.
    ExpectedRate(RateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir or "runs".
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct YosidaArgs {
    /// Model: kuramoto, fhn or linear.
    #[arg(long, default_value = "fhn")]
    model: String,
    /// Diffusion amplitudes (one per channel; fhn reads two).
    #[arg(long, value_delimiter = ',', default_values_t = [0.4])]
    sigma: Vec<f64>,
    /// Strictly increasing resolvent schedule.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 100.0, 1000.0])]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    t_final: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample count for the pointwise domination probe.
    #[arg(long, default_value_t = 2000)]
    probe_samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Riesz exponent of the summand distance^(-beta).
    #[arg(long)]
    beta: f64,
    /// Half-width sweep; defaults to 16..4096 (d=1) or 8..64 (d=2).
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Anchor coordinate l/k, applied to every axis.
    #[arg(long, default_value = "0/1")]
    anchor: String,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Free)]
    boundary: BoundaryArg,
    /// Max/min ratio threshold for the scaling verdict.
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BoundaryArg {
    Free,
    Periodic,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Boundary {
        match b {
            BoundaryArg::Free => Boundary::Free,
            BoundaryArg::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(Args)]
struct RateArgs {
    /// Weight family: pnn or powerlaw.
    #[arg(long)]
    family: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Metric Hölder exponent; derived from alpha when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    epsilon_gamma: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore failure: a pool may already exist in test harnesses.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Reference(args) => cmd_reference(args),
        Command::Distance(args) => cmd_distance(args),
        Command::RateStudy(args) => cmd_rate_study(args),
        Command::YosidaCheck(args) => cmd_yosida(args),
        Command::LemmaSums(args) => cmd_lemma_sums(args),
        Command::ExpectedRate(args) => cmd_expected_rate(args),
    }
}

fn load(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), String> {
    let config = ExperimentConfig::from_path(&args.config).map_err(|e| e.to_string())?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((config, out))
}

fn write(artifacts: &[Artifact], out: &PathBuf) -> Result<(), String> {
    let manifest = persist_run(artifacts, out).map_err(|e| e.to_string())?;
    println!("wrote {} artifacts to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn config_snapshot(config: &ExperimentConfig) -> Artifact {
    Artifact::text("config.toml", toml::to_string_pretty(config).expect("config reserializes"))
}

fn cmd_simulate(args: ConfigArgs) -> Result<(), String> {
    let (config, out) = load(&args)?;
    config.validate().map_err(|e| e.to_string())?;
    let model = config.model.build().map_err(|e| e.to_string())?;
    let n = config.n_sweep[0];
    let lattice = config.lattice_for(n);
    let times = grading_times(&config);
    let records = run_replicas(&config, n, 0, &times).map_err(|e| e.to_string())?;

    let d = config.lattice.dim;
    let m = model.state_dim;
    let q = model.disorder_dim;
    let mut csv = String::from("replica,site,time");
    for k in 0..d {
        csv.push_str(&format!(",x{k}"));
    }
    for k in 0..q {
        csv.push_str(&format!(",omega{k}"));
    }
    for k in 0..m {
        csv.push_str(&format!(",s{k}"));
    }
    csv.push('\n');
    for rec in &records {
        let sites = rec.positions.len() / d;
        for (ti, &t) in rec.times.iter().enumerate() {
            for site in 0..sites {
                csv.push_str(&format!("{},{},{}", rec.replica, site, t));
                for k in 0..d {
                    csv.push_str(&format!(",{}", rec.positions[site * d + k]));
                }
                for k in 0..q {
                    csv.push_str(&format!(",{}", rec.omegas[site * q + k]));
                }
                for k in 0..m {
                    csv.push_str(&format!(",{}", rec.snapshots[ti][site * m + k]));
                }
                csv.push('\n');
            }
        }
    }
    println!(
        "simulated N = {n} ({} sites, {} replicas, digest {})",
        lattice.site_count(),
        records.len(),
        &records[0].config_digest[..12]
    );
    write(&[config_snapshot(&config), Artifact::text("trajectory.csv", csv)], &out)
}

fn cmd_reference(args: ConfigArgs) -> Result<(), String> {
    let (config, out) = load(&args)?;
    config.validate().map_err(|e| e.to_string())?;
    let (law, report) = solve_reference(&config).map_err(|e| e.to_string())?;

    let mut picard = String::from("iteration,delta,stderr\n");
    for (i, (d, s)) in report.deltas.iter().zip(&report.stderrs).enumerate() {
        picard.push_str(&format!("{},{},{}\n", i + 1, d, s));
    }

    // Unweighted marginal moments over all stored paths per snapshot time.
    let m = law.state_dim;
    let mut moments = String::from("time,component,mean,second_moment\n");
    let wc = law.grid.omega_samples;
    let xc = law.x_count();
    let mc = law.grid.path_samples;
    for (ti, &t) in law.times.iter().enumerate() {
        let mut mean = vec![0.0; m];
        let mut second = vec![0.0; m];
        for w in 0..wc {
            for x in 0..xc {
                for s in 0..mc {
                    let state = law.state(ti, w, x, s);
                    for c in 0..m {
                        mean[c] += state[c];
                        second[c] += state[c] * state[c];
                    }
                }
            }
        }
        let count = (wc * xc * mc) as f64;
        for c in 0..m {
            moments.push_str(&format!("{},{},{},{}\n", t, c, mean[c] / count, second[c] / count));
        }
    }
    println!(
        "picard: {} iterations, converged = {}, final delta = {:.3e}",
        report.iterations,
        report.converged,
        report.deltas.last().copied().unwrap_or(0.0)
    );
    write(
        &[
            config_snapshot(&config),
            Artifact::text("picard.csv", picard),
            Artifact::text("reference_moments.csv", moments),
        ],
        &out,
    )
}

fn cmd_distance(args: ConfigArgs) -> Result<(), String> {
    let (config, out) = load(&args)?;
    let (times, points, reference_n) = sweep_distances(&config).map_err(|e| e.to_string())?;
    for point in &points {
        println!(
            "N = {:>6}: distance {:.6e} (stderr {:.2e})",
            point.n, point.distance, point.stderr
        );
    }
    if let Some(n) = reference_n {
        println!("reference: self, N = {n}");
    }
    write(
        &[config_snapshot(&config), Artifact::text("distances.csv", distances_csv(&times, &points))],
        &out,
    )
}

fn cmd_rate_study(args: ConfigArgs) -> Result<(), String> {
    let (config, out) = load(&args)?;
    let result = rate_study(&config).map_err(|e| e.to_string())?;
    let verdict = match result.verdict {
        RateVerdict::Pass => "PASS",
        RateVerdict::Fail => "FAIL",
        RateVerdict::FloorLimited => "FLOOR-LIMITED",
    };
    println!(
        "slope = {:.4}, theoretical exponent = {} (log factor: {}), verdict: {verdict}",
        result.slope, result.exponent, result.log_factor
    );
    let artifacts = rate_artifacts(&config, &result);
    write(&artifacts, &out)
}

fn yosida_model(name: &str, sigma: &[f64]) -> Result<(ModelSpec, Law, Law), String> {
    let s0 = sigma.first().copied().unwrap_or(0.4);
    match name {
        "kuramoto" => {
            let model = ModelSpec::kuramoto(1.0, s0);
            let theta0 = Law::uniform(&[-std::f64::consts::PI], &[std::f64::consts::PI]);
            let disorder = Law::uniform(&[-0.5], &[0.5]);
            Ok((model, theta0, disorder))
        }
        "fhn" => {
            let s1 = sigma.get(1).copied().unwrap_or(s0);
            let model = ModelSpec::fitzhugh_nagumo_default(s0, s1);
            let theta0 = Law::uniform(&[-1.0, -0.5], &[1.0, 0.5]);
            let disorder = Law::uniform(&[0.6, 0.7], &[0.8, 0.9]);
            Ok((model, theta0, disorder))
        }
        "linear" => {
            let model = ModelSpec::linear_scalar(-0.5, s0);
            let theta0 = Law::point(&[1.0]);
            let disorder = Law::point(&[0.0]);
            Ok((model, theta0, disorder))
        }
        other => Err(format!("unknown model {other:?}")),
    }
}

fn cmd_yosida(args: YosidaArgs) -> Result<(), String> {
    let (model, theta0, disorder) = yosida_model(&args.model, &args.sigma)?;
    let cfg = YosidaConfig::new(args.lambdas.clone()).map_err(|e| e.to_string())?;
    let study = StudyConfig {
        dt: args.dt,
        t_final: args.t_final,
        samples: args.samples,
        seed: args.seed,
        theta0,
        disorder: disorder.clone(),
        s_psi: 0.0,
    };
    let report = yosida_convergence_study(&model, &study, &cfg).map_err(|e| e.to_string())?;

    let mut csv = String::from("lambda,sup_error,h_norm,h_stderr,newton_iters\n");
    for i in 0..report.lambdas.len() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            report.lambdas[i],
            report.sup_errors[i],
            report.h_norms[i],
            report.h_stderrs[i],
            report.newton_iters_mean[i]
        ));
    }

    let diss = dissipativity_probe(&model, &disorder, args.probe_samples, 6.0, args.seed);
    let contraction = resolvent_contraction_probe(
        &model,
        &disorder,
        args.lambdas[0],
        args.probe_samples.min(500),
        6.0,
        args.seed,
        cfg.newton_tol,
        cfg.newton_max_iter,
    )
    .map_err(|e| e.to_string())?;
    let domination = domination_probe(
        &model,
        &disorder,
        &args.lambdas,
        args.probe_samples,
        6.0,
        args.seed,
        cfg.newton_tol,
        cfg.newton_max_iter,
    )
    .map_err(|e| e.to_string())?;

    let mut probes = String::from("probe,quotient,samples,pass\n");
    probes.push_str(&format!(
        "dissipativity,{},{},{}\n",
        diss.max_quotient, diss.samples, diss.pass
    ));
    probes.push_str(&format!(
        "contraction,{},{},{}\n",
        contraction.max_quotient, contraction.samples, contraction.pass
    ));
    probes.push_str(&format!(
        "domination,{},{},{}\n",
        domination.max_quotient, domination.samples, domination.pass
    ));

    println!(
        "sup errors decreasing: {}, H-norms nondecreasing: {}, probes pass: {}",
        report.sup_decreasing,
        report.h_nondecreasing,
        diss.pass && contraction.pass && domination.pass
    );
    let out = args.out.unwrap_or_else(|| PathBuf::from("runs"));
    write(&[Artifact::text("yosida.csv", csv), Artifact::text("probes.csv", probes)], &out)
}

fn parse_anchor(text: &str, dim: usize) -> Result<GridPoint, String> {
    let (l, k) = text
        .split_once('/')
        .ok_or_else(|| format!("anchor must look like l/k, got {text:?}"))?;
    let l: i64 = l.trim().parse().map_err(|e| format!("anchor numerator: {e}"))?;
    let k: u32 = k.trim().parse().map_err(|e| format!("anchor denominator: {e}"))?;
    GridPoint::new(vec![l; dim], k).map_err(|e: LatticeError| e.to_string())
}

fn cmd_lemma_sums(args: LemmaArgs) -> Result<(), String> {
    let n_list = args.n_list.clone().unwrap_or_else(|| {
        if args.dim == 1 {
            vec![16, 64, 256, 1024, 4096]
        } else {
            vec![8, 16, 32, 64]
        }
    });
    let anchor = parse_anchor(&args.anchor, args.dim)?;
    let report = lattice_sum_bound_check(
        args.beta,
        args.dim,
        args.boundary.into(),
        &n_list,
        &anchor,
        args.threshold,
    )
    .map_err(|e| e.to_string())?;

    let mut csv = String::from("n,sum,predicted,ratio,anchor_in_lattice\n");
    for (row, in_dn) in report.rows.iter().zip(&report.anchor_in_lattice) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n, row.sum, row.predicted, row.ratio, in_dn
        ));
    }
    println!(
        "beta = {}, d = {}: max/min ratio {:.4}, pass = {}",
        report.beta, report.dim, report.max_min_ratio, report.pass
    );
    let out = args.out.unwrap_or_else(|| PathBuf::from("runs"));
    write(&[Artifact::text("lemma_sums.csv", csv)], &out)
}

fn cmd_expected_rate(args: RateArgs) -> Result<(), String> {
    let family: RateFamily =
        args.family.parse::<RateFamily>().map_err(|e| e.to_string())?;
    let gamma = match (args.gamma, family, args.alpha) {
        (Some(g), _, _) => g,
        (None, RateFamily::PowerLaw, Some(alpha)) => {
            choose_gamma(alpha, args.dim, args.epsilon_gamma).map_err(|e| e.to_string())?
        }
        (None, RateFamily::PowerLaw, None) => {
            return Err("powerlaw needs --alpha".into());
        }
        (None, RateFamily::Pnn, _) => args.dim as f64 / 2.0,
    };
    let (exponent, log_factor) =
        expected_rate(args.alpha, args.dim, family, gamma).map_err(|e| e.to_string())?;
    println!("exponent = {exponent}, log_factor = {log_factor}, gamma = {gamma}");
    Ok(())
}
