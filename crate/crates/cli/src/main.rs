//! `est-entropy`: bound, estimate, separated, switched and sweep experiments
//! driven by a sectioned config file. CSV goes to stdout or to files under
//! `--out`; a short summary goes to stderr.

mod config;

use std::f64::consts::SQRT_2;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use est_entropy::bounds::{evaluate, log_space, optimize, BoundInputs, BoundMode, BoundResult, SearchGrid};
use est_entropy::discrepancy::{lattice_samples, lipschitz_gains, local_gains, Gains};
use est_entropy::dynamics::{Params, Registry, System};
use est_entropy::entropy_lab::{build_family, growth_sweep, pairwise_scaled_gap, FamilyReport, GrowthRow, SeparationSpec};
use est_entropy::estimator::{decode, encode, EstimatorParams, SymbolStream};
use est_entropy::quantization::Hyperbox;
use est_entropy::signals::{random_slowly_varying, tseq_alpha, tseq_uniform, VariationBudget};
use est_entropy::switched::{mode_divergence_profile, reach_samples, switched_bound, DivergenceProfile, ReachConfig, SwitchedSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use config::{ConfigError, ExperimentConfig, Lookup};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "est-entropy", version, about = "Estimation-entropy bounds and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize or evaluate the entropy upper bound.
    Bound,
    /// Encode a random trajectory, or decode a saved symbol stream.
    Estimate {
        /// Decode this stream instead of encoding.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Build and check a separated family.
    Separated,
    /// Mode divergence and dwell-time bound for a two-mode switched system.
    Switched,
    /// Family growth rate over lists of eps and T.
    Sweep,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Lib(#[from] est_entropy::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use est_entropy::Error as E;
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::CapExceeded { .. }) => EXIT_USAGE,
            CliError::Lib(E::Infeasible(_)) => EXIT_INFEASIBLE,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Output files, written only after the command succeeded.
struct Report {
    files: Vec<(String, String)>,
    summary: String,
    exit: u8,
}

fn csv(provenance: &[String], header: &str, rows: &[String]) -> String {
    let mut s = String::new();
    for p in provenance {
        s.push_str(p);
        s.push('\n');
    }
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

struct Ctx<'a> {
    look: Lookup<'a>,
    command: &'static str,
    seed: u64,
}

impl Ctx<'_> {
    fn provenance(&self) -> Vec<String> {
        let mut p = vec![format!("# est-entropy {}", self.command), format!("# seed = {}", self.seed)];
        p.extend(self.look.provenance());
        p
    }
}

fn build_system(look: &Lookup) -> CliResult<System> {
    let name = look.str_or("system", "name", "integrator");
    let keys = config::system_keys(&name).ok_or_else(|| CliError::Usage(format!("unknown system {name:?}")))?;
    let mut params = Params::new();
    for key in keys {
        if let Some(v) = look.opt_f64("system", key)? {
            params.insert(key.to_string(), v);
        }
    }
    Ok(Registry::with_builtins().build(&name, &params)?)
}

fn budget(look: &Lookup, sys: &System) -> CliResult<(VariationBudget, Hyperbox)> {
    let (n, m) = (sys.n(), sys.m());
    let mu = look.f64_or("budget", "mu", 0.0)?;
    let eta = look.f64_or("budget", "eta", 0.0)?;
    let k = Hyperbox::new(
        look.vec_or("budget", "k_lo", &[-1.0], Some(n))?,
        look.vec_or("budget", "k_hi", &[1.0], Some(n))?,
    )?;
    let u0 = Hyperbox::new(
        look.vec_or("budget", "u0_lo", &[0.0], Some(m))?,
        look.vec_or("budget", "u0_hi", &[0.0], Some(m))?,
    )?;
    Ok((VariationBudget::new(mu, eta, u0)?, k))
}

fn parse_mode(look: &Lookup) -> CliResult<BoundMode> {
    match look.str_or("bound", "mode", "quadratic").as_str() {
        "quadratic" => Ok(BoundMode::Quadratic),
        "affine" => Ok(BoundMode::Affine),
        "rho-form" => {
            let rho = look
                .opt_f64("bound", "rho")?
                .ok_or_else(|| CliError::Usage("[bound] mode = rho-form needs rho".into()))?;
            Ok(BoundMode::RhoForm { rho })
        }
        other => Err(CliError::Usage(format!(
            "[bound] mode must be quadratic, affine or rho-form, got {other:?}"
        ))),
    }
}

fn gains(look: &Lookup, sys: &System, b: &VariationBudget, k: &Hyperbox) -> CliResult<Gains> {
    if let (Some(gx), Some(gu)) = (look.opt_f64("bound", "gain_x")?, look.opt_f64("bound", "gain_u")?) {
        return Ok(Gains {
            gx,
            gu,
            kind: est_entropy::discrepancy::GainKind::Local,
            provenance: "configured".into(),
        });
    }
    let kind = look.str_or("bound", "gains", "local");
    let mut g = match kind.as_str() {
        "local" => {
            let per = look.usize_or("bound", "lattice", if sys.n() <= 3 { 9 } else { 4 })?;
            // inputs stay within eta of the U0 box
            let lo: Vec<f64> = b.u0_box.lo().iter().map(|v| v - b.eta).collect();
            let hi: Vec<f64> = b.u0_box.hi().iter().map(|v| v + b.eta).collect();
            let u_range = Hyperbox::new(lo, hi)?;
            local_gains(sys, &lattice_samples(k, per), &lattice_samples(&u_range, per))?
        }
        "lipschitz" => lipschitz_gains(sys.lip_x(), sys.lip_u(), sys.n(), sys.m())?,
        other => return Err(CliError::Usage(format!("[bound] gains must be local or lipschitz, got {other:?}"))),
    };
    if let Some(v) = look.opt_f64("bound", "gain_x")? {
        g.gx = v;
        g.provenance = "configured".into();
    }
    if let Some(v) = look.opt_f64("bound", "gain_u")? {
        g.gu = v;
        g.provenance = "configured".into();
    }
    Ok(g)
}

struct Chosen {
    inputs: BoundInputs,
    mode: BoundMode,
    result: BoundResult,
}

/// Evaluates pinned `tp`/`du` (and optional `dx`) or runs the optimizer.
fn choose(look: &Lookup, sys: &System, budget: &VariationBudget, k: &Hyperbox) -> CliResult<Chosen> {
    let eps = look.f64_or("accuracy", "eps", 0.1)?;
    let mode = parse_mode(look)?;
    let g = gains(look, sys, budget, k)?;
    let inputs = BoundInputs {
        n: sys.n(),
        m: sys.m(),
        eps,
        mu: budget.mu,
        eta: budget.eta,
        gain_x: g.gx,
        gain_u: g.gu,
        lip_x: sys.lip_x(),
    };
    inputs.validate()?;
    let result = match (look.opt_f64("bound", "tp")?, look.opt_f64("bound", "du")?) {
        (Some(tp), Some(du)) => {
            let dx = match look.opt_f64("bound", "dx")? {
                Some(dx) => dx,
                None => eps / SQRT_2 * (-g.gx * tp).exp(),
            };
            evaluate(dx, du, tp, &inputs, mode)?
        }
        (None, None) => {
            let d = SearchGrid::default_for(&inputs);
            let grid = SearchGrid {
                tp: log_space(
                    look.f64_or("bound", "tp_lo", d.tp[0])?,
                    look.f64_or("bound", "tp_hi", *d.tp.last().expect("nonempty"))?,
                    look.usize_or("bound", "tp_count", d.tp.len())?,
                ),
                du: log_space(
                    look.f64_or("bound", "du_lo", d.du[0])?,
                    look.f64_or("bound", "du_hi", *d.du.last().expect("nonempty"))?,
                    look.usize_or("bound", "du_count", d.du.len())?,
                ),
                refinement_passes: look.usize_or("bound", "passes", d.refinement_passes)?,
            };
            optimize(&inputs, mode, &grid)?
        }
        _ => return Err(CliError::Usage("[bound] tp and du must be pinned together".into())),
    };
    Ok(Chosen { inputs, mode, result })
}

fn cmd_bound(ctx: &Ctx) -> CliResult<Report> {
    let sys = build_system(&ctx.look)?;
    let (budget, k) = budget(&ctx.look, &sys)?;
    let c = choose(&ctx.look, &sys, &budget, &k)?;
    let r = &c.result;
    let body = csv(&ctx.provenance(), BoundResult::CSV_HEADER, &[r.csv_row()]);
    let summary = format!(
        "{} {}: gc={:.4e} go={:.4e} bits/time at Tp={:.3e} dx={:.3e} du={:.3e} ({})",
        sys.name(),
        r.mode,
        r.gc,
        r.go,
        r.tp,
        r.dx,
        r.du,
        if r.feasible { "feasible" } else { "infeasible" }
    );
    Ok(Report {
        files: vec![("bound.csv".into(), body)],
        summary,
        exit: if r.feasible { 0 } else { EXIT_INFEASIBLE },
    })
}

fn z_csv(provenance: &[String], segments: &[est_entropy::estimator::ZSegment], n: usize) -> String {
    let header = std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("z{i}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows: Vec<String> = segments
        .iter()
        .flat_map(|s| {
            s.times.iter().zip(&s.states).map(move |(t, z)| {
                std::iter::once(s.start + t)
                    .chain(z.iter().copied())
                    .map(|v| format!("{v:.8e}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
        })
        .collect();
    csv(provenance, &header, &rows)
}

fn cmd_estimate(ctx: &Ctx, stream: Option<&Path>) -> CliResult<Report> {
    let look = &ctx.look;
    let sys = build_system(look)?;
    let (budget, k) = budget(look, &sys)?;
    let c = choose(look, &sys, &budget, &k)?;
    let horizon = look.f64_or("estimate", "horizon", 1.0)?;
    let mut p = EstimatorParams::new(horizon, c.result.tp, c.result.dx, c.result.du, c.inputs.eps)?
        .assess(&c.inputs, c.mode);
    if let Some(dt) = look.opt_f64("estimate", "dt")? {
        p = p.with_dt(dt)?;
    }
    if !p.feasible {
        return Err(CliError::Lib(est_entropy::Error::Infeasible(format!(
            "Tp={:e} dx={:e} du={:e} violate the feasibility constraint (gc={:e})",
            p.tp, p.dx, p.du, c.result.gc
        ))));
    }

    if let Some(path) = stream {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = SymbolStream::parse(&text)?;
        let z = decode(&parsed, &k, &budget, &p, &sys)?;
        let mut summary = format!("decoded {} of {} steps", z.len(), p.steps());
        if z.len() < p.steps() {
            summary.push_str(" (warning: stream is truncated, decoded the prefix)");
        }
        return Ok(Report {
            files: vec![("decoded.csv".into(), z_csv(&ctx.provenance(), &z, sys.n()))],
            summary,
            exit: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let x0 = match look.raw("estimate", "x0") {
        Some(_) => look.vec_or("estimate", "x0", &[0.0], Some(sys.n()))?,
        None => (0..sys.n())
            .map(|i| {
                let (lo, hi) = (k.lo()[i], k.hi()[i]);
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect(),
    };
    let pieces = look.usize_or("estimate", "pieces", 4)?;
    let u = random_slowly_varying(&mut rng, &budget, horizon, pieces)?;
    let af = encode(&sys, &x0, &u, &budget, &k, &p)?;
    let stream = SymbolStream::from_encoding(&af, &sys, &budget, &p);
    let prov = ctx.provenance();
    let row = format!(
        "{},{:.8e},{:.8e},{:.8e},{:.8e},{}",
        af.steps.len(),
        af.realized_sup_error,
        af.empirical_bit_rate(),
        c.result.go,
        c.inputs.eps,
        p.feasible
    );
    let summary = format!(
        "{}: {} steps, sup error {:.4e} (eps {}), bit rate {:.4e} bits/time",
        sys.name(),
        af.steps.len(),
        af.realized_sup_error,
        c.inputs.eps,
        af.empirical_bit_rate()
    );
    Ok(Report {
        files: vec![
            (
                "estimate.csv".into(),
                csv(&prov, "steps,sup_error,bit_rate,go,eps,feasible", &[row]),
            ),
            ("stream.txt".into(), stream.to_text()),
            ("z.csv".into(), z_csv(&prov, &af.segments, sys.n())),
        ],
        summary,
        exit: 0,
    })
}

fn cmd_separated(ctx: &Ctx) -> CliResult<Report> {
    let look = &ctx.look;
    let sys = build_system(look)?;
    let eps = look.f64_or("accuracy", "eps", 0.1)?;
    let alpha = look.f64_or("accuracy", "alpha", 0.0)?;
    let a = look.f64_or("separated", "a", 1.0)?;
    let b = look.f64_or("separated", "b", 0.0)?;
    let t_end = look.f64_or("separated", "horizon", 3.0)?;
    let x0 = look.vec_or("separated", "x0", &[0.0], Some(sys.n()))?;
    let max_switches = look.usize_or("separated", "max_switches", 10)?;
    let max_members = look.usize_or("separated", "max_members", 1024)?;
    let default = if alpha == 0.0 { "uniform" } else { "alpha" };
    let tseq = match look.str_or("separated", "construction", default).as_str() {
        "uniform" => tseq_uniform(t_end, eps, a, b, max_switches)?,
        "alpha" => tseq_alpha(t_end, eps, alpha, a, b, max_switches)?,
        other => {
            return Err(CliError::Usage(format!(
                "[separated] construction must be uniform or alpha, got {other:?}"
            )))
        }
    };
    let spec = SeparationSpec::new(t_end, eps, alpha, 0.0)?;
    let fam = build_family(&sys, &x0, &tseq, a, b, &spec, max_members)?;
    let prov = ctx.provenance();
    let mut files = vec![(
        "separated.csv".to_string(),
        csv(&prov, FamilyReport::CSV_HEADER, &[fam.report.csv_row()]),
    )];
    if look.bool_or("separated", "dump_gaps", false)? {
        let g = pairwise_scaled_gap(&fam.trajectories, alpha)?;
        let header = std::iter::once("member".to_string())
            .chain(fam.strings.iter().cloned())
            .collect::<Vec<_>>()
            .join(",");
        let rows: Vec<String> = g
            .iter()
            .zip(&fam.strings)
            .map(|(row, s)| {
                std::iter::once(s.clone())
                    .chain(row.iter().map(|v| format!("{v:.8e}")))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        files.push(("gaps.csv".into(), csv(&prov, &header, &rows)));
    }
    let r = &fam.report;
    Ok(Report {
        files,
        summary: format!(
            "{} members over {} gaps, separated={}, min gap ratio {:.4}, {:.4} bits/time",
            r.count, r.gap_count, r.separated, r.min_max_gap, r.growth_log2_per_t
        ),
        exit: 0,
    })
}

fn cmd_switched(ctx: &Ctx) -> CliResult<Report> {
    let look = &ctx.look;
    let eps = look.f64_or("accuracy", "eps", 0.1)?;
    let alpha = look.f64_or("accuracy", "alpha", 1.0)?;
    let a = look.f64_or("switched", "a", 1.0)?;
    let b = look.f64_or("switched", "b", 0.0)?;
    let dwell = look.f64_or("switched", "dwell", 1.0)?;
    let tau = look.f64_or("switched", "tau", dwell)?;
    let sw = match look.str_or("switched", "modes", "constant").as_str() {
        "constant" => SwitchedSystem::constant_pair(a, b, dwell)?,
        "linear" => SwitchedSystem::scalar_linear_pair(a, b, dwell)?,
        other => {
            return Err(CliError::Usage(format!(
                "[switched] modes must be constant or linear, got {other:?}"
            )))
        }
    };
    let d = ReachConfig::default_for(&sw, ctx.seed);
    let horizon = look.f64_or("switched", "reach_horizon", d.horizon)?;
    let cfg = ReachConfig {
        horizon,
        signals: look.usize_or("switched", "signals", d.signals)?,
        sample_every: look.f64_or("switched", "sample_every", horizon / 20.0)?,
        dt: look.f64_or("switched", "dt", d.dt)?,
        seed: ctx.seed,
    };
    let k = Hyperbox::new(
        look.vec_or("switched", "k_lo", &[-1.0], Some(1))?,
        look.vec_or("switched", "k_hi", &[1.0], Some(1))?,
    )?;
    let samples = reach_samples(&sw, &k, &cfg)?;
    let prof = mode_divergence_profile(&sw, &samples, tau.min(dwell), cfg.dt)?;
    let r = switched_bound(&sw, eps, alpha, tau, &prof)?;
    let mut prov = ctx.provenance();
    prov.push(format!("# T_e = {:.8e}", r.te));
    prov.push(format!("# d(T_e) = {:.8e}", r.d_te));
    prov.push(format!("# threshold = {:.8e}", r.threshold));
    prov.push(format!("# bound = {:.8e}", r.bound));
    if let Some(why) = &r.diagnosis {
        prov.push(format!("# diagnosis = {why}"));
    }
    Ok(Report {
        files: vec![(
            "switched.csv".into(),
            csv(&prov, DivergenceProfile::CSV_HEADER, &prof.csv_rows()),
        )],
        summary: format!(
            "T_e = {:.6}, d(T_e) = {:.4e}, bound = {:.6} bits/time{}",
            r.te,
            r.d_te,
            r.bound,
            r.diagnosis.as_ref().map(|d| format!(" ({d})")).unwrap_or_default()
        ),
        exit: 0,
    })
}

fn cmd_sweep(ctx: &Ctx) -> CliResult<Report> {
    let look = &ctx.look;
    let sys = build_system(look)?;
    let alpha = look.f64_or("accuracy", "alpha", 0.0)?;
    let a = look.f64_or("separated", "a", 1.0)?;
    let b = look.f64_or("separated", "b", 0.0)?;
    let x0 = look.vec_or("separated", "x0", &[0.0], Some(sys.n()))?;
    let eps_list = look.vec_or("separated", "eps_list", &[0.1, 0.05], None)?;
    let t_list = look.vec_or("separated", "t_list", &[1.0, 2.0, 3.0], None)?;
    let cap = look.usize_or("separated", "verify_cap", 1024)?;
    let rows = growth_sweep(&sys, &x0, a, b, alpha, &eps_list, &t_list, cap)?;
    let body = csv(
        &ctx.provenance(),
        GrowthRow::CSV_HEADER,
        &rows.iter().map(GrowthRow::csv_row).collect::<Vec<_>>(),
    );
    Ok(Report {
        files: vec![("sweep.csv".into(), body)],
        summary: format!("{} rows", rows.len()),
        exit: 0,
    })
}

fn load(cli: &Cli) -> CliResult<ExperimentConfig> {
    match &cli.config {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(ExperimentConfig::parse(&text)?)
        }
    }
}

fn run(cli: &Cli) -> CliResult<Report> {
    let cfg = load(cli).map_err(|e| match e {
        CliError::Io { path, source } => CliError::Usage(format!("{}: {source}", path.display())),
        other => other,
    })?;
    let look = Lookup::new(&cfg);
    let seed = match cli.seed {
        Some(s) => s,
        None => look.usize_or("run", "seed", 0)? as u64,
    };
    let (command, stream) = match &cli.command {
        Command::Bound => ("bound", None),
        Command::Estimate { stream } => ("estimate", stream.as_deref()),
        Command::Separated => ("separated", None),
        Command::Switched => ("switched", None),
        Command::Sweep => ("sweep", None),
    };
    let ctx = Ctx { look, command, seed };
    let mut report = match &cli.command {
        Command::Bound => cmd_bound(&ctx),
        Command::Estimate { .. } => cmd_estimate(&ctx, stream),
        Command::Separated => cmd_separated(&ctx),
        Command::Switched => cmd_switched(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
    }?;
    report.files.push(("config.txt".into(), cfg.to_text()));
    Ok(report)
}

fn write_report(report: &Report, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            for (name, body) in &report.files {
                let path = dir.join(name);
                fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
            }
        }
        None => {
            // only the primary table goes to stdout
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(report.files[0].1.as_bytes())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = run(&cli).and_then(|r| write_report(&r, cli.out.as_deref()).map(|_| r));
    match outcome {
        Ok(r) => {
            eprintln!("{}", r.summary);
            ExitCode::from(r.exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
