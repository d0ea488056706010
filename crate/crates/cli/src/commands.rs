use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use scolab_core::divergence::ClaimTally;
use scolab_core::instance::InstanceDescriptor;
use scolab_core::net::{build_net, packing_bound};
use scolab_core::rademacher::rad_upper_bound_estimate;
use scolab_core::report::{emit_report, regenerate};
use scolab_core::sweep::FamilySpec;
use scolab_core::verify::{self, VerificationReport, VerifyMode};
use scolab_core::{
    build_certificate, check_conditional_claims, divergence_report, invariant_battery,
    minimize_empirical, population_minimizer, rad_exact, rad_inverse, rad_mc, run_sweep, seed,
    verify_concentration, NormBall, NormFamily, ScoInstance, SweepConfig, CERTIFICATE_TOL,
};

use crate::output::{resolve_out, write_json, write_text, Manifest};
use crate::{Cli, Command, FamilyArg, InstanceArgs, RadArgs};

/// Gap at which the solver cross-checks a family's known minimizer.
const XSTAR_CHECK_TOL: f64 = 1e-2;

pub enum Outcome {
    Success,
    CheckFailed,
}

pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

type CliResult<T> = Result<T, CliError>;

/// Bad flags, unreadable or invalid configuration: exit 2.
fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: e.into(),
    }
}

/// Failures while running a well-formed request: exit 1.
fn run_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        error: e.into(),
    }
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    match &cli.command {
        Command::Instance { inst, probes } => cmd_instance(cli, inst, *probes),
        Command::Net {
            family,
            dim,
            eps,
            budget,
        } => cmd_net(cli, family, *dim, *eps, *budget),
        Command::Rad(args) => cmd_rad(args, cli.seed.unwrap_or(0)),
        Command::Erm { inst, n, tol } => cmd_erm(cli, inst, *n, *tol),
        Command::Divergence { inst, x, n, net_eps } => cmd_divergence(cli, inst, x, *n, *net_eps),
        Command::Verify => cmd_verify(cli),
        Command::Sweep => cmd_sweep(cli),
        Command::Report { results } => cmd_report(cli, results),
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(config_err)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(config_err)
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(run_err)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (`| head`) is not a failure of the computation
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(run_err(e)),
        _ => Ok(()),
    }
}

fn parse_family(s: &str) -> CliResult<NormFamily> {
    s.parse::<NormFamily>().map_err(config_err)
}

// ---------------------------------------------------------------------------
// instance selection

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceConfig {
    instance: InstanceDescriptor,
}

fn descriptor(cli: &Cli, args: &InstanceArgs) -> CliResult<InstanceDescriptor> {
    if let Some(path) = &cli.config {
        return Ok(read_config::<InstanceConfig>(path)?.instance);
    }
    let eps0 = args.eps0;
    Ok(match args.family {
        FamilyArg::Coin => InstanceDescriptor::Coin {
            eps0: eps0.unwrap_or(0.1),
        },
        FamilyArg::Hard => {
            let dim = args.dim.unwrap_or(4);
            InstanceDescriptor::Hard {
                dim,
                eps0: eps0.unwrap_or(0.25),
                m: args.m.unwrap_or_else(|| FamilySpec::default_hard_m(dim)),
                seed: cli.seed.unwrap_or(0),
                directions: None,
            }
        }
        FamilyArg::Quadratic => {
            let centers = match &args.centers {
                Some(text) => serde_json::from_str(text)
                    .context("--centers must be a JSON array of vectors")
                    .map_err(config_err)?,
                None => vec![vec![-1.0], vec![1.0]],
            };
            let norm = match &args.norm {
                Some(n) => parse_family(n)?,
                None => NormFamily::L2,
            };
            InstanceDescriptor::Quadratic { centers, norm }
        }
        FamilyArg::Appendix => InstanceDescriptor::Appendix,
    })
}

fn build(desc: &InstanceDescriptor) -> CliResult<ScoInstance> {
    desc.build().map_err(config_err)
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_instance(cli: &Cli, args: &InstanceArgs, probes: usize) -> CliResult<Outcome> {
    let desc = descriptor(cli, args)?;
    let inst = build(&desc)?;
    let report = invariant_battery(&inst, probes, cli.seed.unwrap_or(0));
    #[derive(Serialize)]
    struct Summary<'a> {
        label: &'a str,
        family: &'a str,
        dim: usize,
        norm: String,
        lipschitz: f64,
        bound: f64,
        outcomes: Option<usize>,
        known_minimizer: Option<Vec<f64>>,
        invariants: &'a scolab_core::instance::InvariantReport,
        passed: bool,
    }
    print_json(&Summary {
        label: inst.label(),
        family: desc.family_name(),
        dim: inst.dim(),
        norm: inst.ball().family.name(),
        lipschitz: inst.lipschitz(),
        bound: inst.bound(),
        outcomes: inst.outcome_count(),
        known_minimizer: inst.known_minimizer(),
        invariants: &report,
        passed: report.passed(),
    })?;
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}

fn cmd_net(cli: &Cli, family: &str, dim: usize, eps: f64, budget: usize) -> CliResult<Outcome> {
    let ball = NormBall::new(parse_family(family)?, dim).map_err(config_err)?;
    let seed = cli.seed.unwrap_or(0);
    let net = build_net(&ball, eps, budget, seed).map_err(config_err)?;
    let out = resolve_out(cli.out.as_deref(), None);
    let path = write_json(&out, "net.json", &net).map_err(run_err)?;
    #[derive(Serialize)]
    struct Args<'a> {
        family: &'a str,
        dim: usize,
        eps: f64,
        budget: usize,
    }
    Manifest::new("net", Args { family, dim, eps, budget })
        .map_err(run_err)?
        .seed("net", seed)
        .write(&out, &[&path])
        .map_err(run_err)?;
    println!(
        "{} points (packing bound {:.0}), cover radius {}, measured {:.4} -> {}",
        net.len(),
        packing_bound(dim, eps),
        net.cover_radius,
        net.measured_radius,
        path.display()
    );
    Ok(Outcome::Success)
}

fn cmd_rad(args: &RadArgs, seed: u64) -> CliResult<Outcome> {
    let family = parse_family(&args.family)?;
    if let Some(eps) = args.inverse {
        let ball = NormBall::new(family, args.dim).map_err(config_err)?;
        println!("{}", rad_inverse(&ball, eps).map_err(config_err)?);
        return Ok(Outcome::Success);
    }
    if let Some(n) = args.bound {
        let ball = NormBall::new(family, args.dim).map_err(config_err)?;
        print_json(&rad_upper_bound_estimate(&ball, n).map_err(config_err)?)?;
        return Ok(Outcome::Success);
    }
    let Some(text) = &args.sample else {
        return Err(config_err(anyhow!("rad needs one of --inverse, --bound or --sample")));
    };
    let s: Vec<Vec<f64>> = serde_json::from_str(text)
        .context("--sample must be a JSON array of vectors")
        .map_err(config_err)?;
    let dim = s.first().map(Vec::len).unwrap_or(args.dim);
    let ball = NormBall::new(family, dim).map_err(config_err)?;
    let est = match args.mc {
        Some(trials) => rad_mc(&ball, &s, trials, seed),
        None => rad_exact(&ball, &s),
    }
    .map_err(config_err)?;
    print_json(&est)?;
    Ok(Outcome::Success)
}

fn cmd_erm(cli: &Cli, args: &InstanceArgs, n: usize, tol: f64) -> CliResult<Outcome> {
    let desc = descriptor(cli, args)?;
    let inst = build(&desc)?;
    let seed = cli.seed.unwrap_or(0);
    let s = inst.draw_sample(n, seed).map_err(config_err)?;
    let report = minimize_empirical(&inst, &s, tol).map_err(run_err)?;
    let out = resolve_out(cli.out.as_deref(), None);
    let path = write_json(&out, "erm.json", &report).map_err(run_err)?;
    #[derive(Serialize)]
    struct Args<'a> {
        instance: &'a InstanceDescriptor,
        n: usize,
        tol: f64,
    }
    Manifest::new("erm", Args { instance: &desc, n, tol })
        .map_err(run_err)?
        .seed("sample", seed)
        .write(&out, &[&path])
        .map_err(run_err)?;
    print_json(&report)?;
    Ok(Outcome::Success)
}

fn cmd_divergence(cli: &Cli, args: &InstanceArgs, x: &str, n: usize, net_eps: f64) -> CliResult<Outcome> {
    let desc = descriptor(cli, args)?;
    let inst = build(&desc)?;
    let x: Vec<f64> = serde_json::from_str(x)
        .context("--x must be a JSON array")
        .map_err(config_err)?;
    let seed = cli.seed.unwrap_or(0);
    let s = inst.draw_sample(n, seed).map_err(config_err)?;
    let xstar = population_minimizer(&inst, XSTAR_CHECK_TOL).map_err(run_err)?.point;
    let cert = build_certificate(&inst, &xstar, CERTIFICATE_TOL).map_err(run_err)?;
    let net = build_net(&inst.ball(), net_eps, 20_000, seed).map_err(config_err)?;
    let report = divergence_report(&cert, &inst, &s, &net, &x).map_err(config_err)?;
    #[derive(Serialize)]
    struct Output<'a> {
        certificate: &'a scolab_core::OptimalityCertificate,
        report: &'a scolab_core::DivergenceReport,
    }
    let body = Output {
        certificate: &cert,
        report: &report,
    };
    let out = resolve_out(cli.out.as_deref(), None);
    let path = write_json(&out, "divergence.json", &body).map_err(run_err)?;
    #[derive(Serialize)]
    struct Args<'a> {
        instance: &'a InstanceDescriptor,
        x: &'a [f64],
        n: usize,
        net_eps: f64,
    }
    Manifest::new(
        "divergence",
        Args {
            instance: &desc,
            x: &x,
            n,
            net_eps,
        },
    )
    .map_err(run_err)?
    .seed("sample", seed)
    .seed("net", seed)
    .write(&out, &[&path])
    .map_err(run_err)?;
    print_json(&body)?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// verify

/// Battery of concentration checks and conditional-claim tallies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub seed: u64,
    pub checks: Vec<VerifyCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCheck {
    pub name: String,
    pub instance: InstanceDescriptor,
    /// Point at which the concentration modes are evaluated.
    pub x: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    #[serde(default)]
    pub modes: Vec<VerifyMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims: Option<ClaimsCheck>,
}

/// Evaluate the conditional claims at every net point over seeded samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimsCheck {
    pub eps: f64,
    pub n: usize,
    pub trials: usize,
    /// Packing separation of the net.
    pub net_eps: f64,
}

#[derive(Debug, Serialize)]
struct ClaimsOutcome<'a> {
    check: &'a str,
    checks: u64,
    violations: u64,
    tally: ClaimTally,
}

#[derive(Debug, Serialize)]
struct VerifyOutput<'a> {
    reports: Vec<(String, VerificationReport)>,
    claims: Vec<ClaimsOutcome<'a>>,
    passed: bool,
}

fn cmd_verify(cli: &Cli) -> CliResult<Outcome> {
    let Some(path) = &cli.config else {
        return Err(config_err(anyhow!("verify needs --config")));
    };
    let mut cfg: VerifyConfig = read_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cfg.checks.is_empty() {
        return Err(config_err(anyhow!("verify config has no checks")));
    }
    let mut reports = Vec::new();
    let mut claims = Vec::new();
    for (i, check) in cfg.checks.iter().enumerate() {
        let inst = build(&check.instance)?;
        let xstar = population_minimizer(&inst, XSTAR_CHECK_TOL).map_err(run_err)?.point;
        let cert = build_certificate(&inst, &xstar, CERTIFICATE_TOL).map_err(run_err)?;
        for (j, mode) in check.modes.iter().enumerate() {
            let s = seed::mix(cfg.seed, &[i as u64, j as u64]);
            let r = verify_concentration(&inst, &cert, &check.x, check.n, check.trials, s, *mode, None)
                .with_context(|| format!("check {:?}, mode {mode}", check.name))
                .map_err(config_err)?;
            log::info!("{} {mode}: empirical {} vs bound {} -> {}", check.name, r.empirical, r.analytic_bound, r.pass);
            reports.push((check.name.clone(), r));
        }
        if let Some(c) = &check.claims {
            let net_seed = seed::mix(cfg.seed, &[i as u64, u64::MAX]);
            let net = build_net(&inst.ball(), c.net_eps, 20_000, net_seed).map_err(config_err)?;
            let mut tally = ClaimTally::default();
            for t in 0..c.trials {
                let s = inst
                    .draw_sample(c.n, seed::mix(cfg.seed, &[i as u64, 0x636c61696d, t as u64]))
                    .map_err(config_err)?;
                tally.merge(&check_conditional_claims(&cert, &inst, &s, &net, c.eps).map_err(run_err)?);
            }
            claims.push(ClaimsOutcome {
                check: &check.name,
                checks: tally.checks(),
                violations: tally.violations(),
                tally,
            });
        }
    }
    let passed = reports.iter().all(|(_, r)| r.pass) && claims.iter().all(|c| c.violations == 0);
    let out = resolve_out(cli.out.as_deref(), cfg.output.as_deref());
    let mut csv = String::from("check,");
    csv.push_str(verify::CSV_HEADER);
    csv.push('\n');
    for (name, r) in &reports {
        csv.push_str(&format!("{name},{}\n", r.csv_row()));
    }
    let csv_path = write_text(&out, "verify.csv", &csv).map_err(run_err)?;
    for (name, r) in &reports {
        println!(
            "{:<5} {name} {}: empirical {:.4e} <= {:.4e} + 3*{:.2e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.mode,
            r.empirical,
            r.analytic_bound,
            r.mc_stderr
        );
    }
    for c in &claims {
        println!(
            "{:<5} {} claims: {} violations over {} checks",
            if c.violations == 0 { "PASS" } else { "FAIL" },
            c.check,
            c.violations,
            c.checks
        );
    }
    let json_path = write_json(&out, "verify.json", &VerifyOutput { reports, claims, passed }).map_err(run_err)?;
    Manifest::new("verify", &cfg)
        .map_err(run_err)?
        .seed("master", cfg.seed)
        .write(&out, &[&json_path, &csv_path])
        .map_err(run_err)?;
    Ok(if passed {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}

// ---------------------------------------------------------------------------
// sweep and report

fn cmd_sweep(cli: &Cli) -> CliResult<Outcome> {
    let Some(path) = &cli.config else {
        return Err(config_err(anyhow!("sweep needs --config")));
    };
    let mut cfg: SweepConfig = read_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate().map_err(config_err)?;
    let out = resolve_out(cli.out.as_deref(), cfg.output.as_deref());
    let result = run_sweep(&cfg).map_err(run_err)?;
    if result.is_empty() {
        return Err(run_err(anyhow!(
            "every cell was skipped: {}",
            result.skipped.iter().map(|s| s.reason.as_str()).collect::<Vec<_>>().join("; ")
        )));
    }
    let files = emit_report(&result, &out).map_err(run_err)?;
    Manifest::new("sweep", &cfg)
        .map_err(run_err)?
        .seed("master", cfg.master_seed)
        .write(&out, &[&files.json, &files.csv, &files.svg])
        .map_err(run_err)?;
    for t in &result.thresholds {
        println!("d={} eps={}: n*={:?} n0={:?} n_uc={:?}", t.d, t.eps, t.n_star, t.n0_theorem, t.n_uc);
    }
    for f in &result.fits {
        println!("fit {:?} at {}: exponent {:.3} (residual {:.3})", f.axis, f.fixed, f.fit.exponent, f.fit.residual);
    }
    println!(
        "{} cells, {} skipped, claim violations {} -> {}",
        result.cells.len(),
        result.skipped.len(),
        result.claims.violations(),
        out.display()
    );
    Ok(Outcome::Success)
}

fn cmd_report(cli: &Cli, results: &Path) -> CliResult<Outcome> {
    if !results.exists() {
        return Err(config_err(anyhow!("{} does not exist", results.display())));
    }
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => results.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let files = regenerate(results, &out).map_err(config_err)?;
    Manifest::new("report", serde_json::json!({ "results": results }))
        .map_err(run_err)?
        .write(&out, &[&files.csv, &files.svg])
        .map_err(run_err)?;
    println!("{}\n{}", files.csv.display(), files.svg.display());
    Ok(Outcome::Success)
}
