mod config;
mod example;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qecsa::codes::csa_matrix;
use qecsa::nsumbox::BoxError;
use qecsa::protocol::{build_gh, declared_erasures, plan_shape, rate, run_end_to_end, SchemeParams};
use qecsa::verify::{
    verify_box_algebra, verify_correctness, verify_duality, verify_lemma1_mode, verify_mds, verify_rate_table,
    verify_t_privacy, verify_x_security, RateCase, VerifyConfig, VerifyError, VerifyMode, VerifyReport,
};
use qecsa::Fe;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use config::{CommonArgs, RunConfig};

/// Erasure-resilient secure private information retrieval over the N-sum box.
#[derive(Debug, Parser)]
#[command(name = "qecsa", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rate, regime and per-instance plan for (N, X, T, E)
    Rate(CommonArgs),
    /// Code, G, H and transfer matrices
    Build(CommonArgs),
    /// One seeded end-to-end run, printed as a transcript
    Run(CommonArgs),
    /// Run verification suites; exits nonzero on any failure
    Verify(VerifyArgs),
    /// Reproduce the q = 5 worked example against its golden values
    #[command(name = "example-f5")]
    ExampleF5(CommonArgs),
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    /// Noise seeds per correctness cell
    #[arg(long)]
    seeds: Option<usize>,
    /// Trials in sampled mode
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Correctness,
    XSecurity,
    TPrivacy,
    Lemma1,
    Duality,
    RateTable,
    BoxAlgebra,
    Mds,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Rate(a) => cmd_rate(&RunConfig::resolve(&a)?),
        Command::Build(a) => cmd_build(&RunConfig::resolve(&a)?),
        Command::Run(a) => cmd_run(&RunConfig::resolve(&a)?),
        Command::Verify(a) => cmd_verify(&RunConfig::resolve(&a.common)?, &a),
        Command::ExampleF5(a) => cmd_example(&a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_rate(cfg: &RunConfig) -> Result<bool> {
    let r = rate(cfg.n, cfg.x, cfg.t, cfg.e)?;
    let (regime, shape) = plan_shape(cfg.n, cfg.x, cfg.t, cfg.e)?;
    let delivered: usize = shape.iter().map(|s| s.1).sum();
    let instances: Vec<Value> = shape.iter().map(|&(t, l)| json!({"t_private": t, "l_symbols": l})).collect();
    eprintln!("N={} X={} T={} E={}: regime {regime}, rate {r}", cfg.n, cfg.x, cfg.t, cfg.e);
    emit(
        &json!({
            "n": cfg.n,
            "x": cfg.x,
            "t": cfg.t,
            "e": cfg.e,
            "regime": regime.to_string(),
            "rate": r.to_string(),
            "classical_rate": format!("{}/{}", cfg.n - cfg.x - cfg.t - cfg.e, cfg.n),
            "delivered_symbols": delivered,
            "instances": instances,
        }),
        cfg.out.as_deref(),
    )?;
    Ok(true)
}

fn cmd_build(cfg: &RunConfig) -> Result<bool> {
    let p = cfg.params()?;
    let mut instances = Vec::new();
    for (i, plan) in p.instances.iter().enumerate() {
        let csa = csa_matrix(&p.points.with_poles(plan.l_symbols), plan.vdm_cols);
        instances.push(json!({"csa": csa, "qcsa": p.instance_code(i)?}));
    }
    let mut out = json!({"params": p, "instances": instances});
    if p.regime.is_quantum() {
        let declared = declared_erasures(&p, &cfg.erase0())?;
        let (g, h) = build_gh(&p, &declared)?;
        let m = qecsa::nsumbox::NSumBoxSpec::build(g.clone(), h.clone())?;
        out["erasure_set"] = json!(declared.iter().map(|s| s + 1).collect::<Vec<_>>());
        out["g"] = json!(g);
        out["h"] = json!(h);
        out["transfer"] = json!(m.transfer());
    } else {
        eprintln!("regime {} uses the classical scheme; no N-sum box matrices", p.regime);
    }
    emit(&out, cfg.out.as_deref())?;
    Ok(true)
}

/// Offsets for the erased servers: from `--delta`, or drawn from the seed.
fn deltas(cfg: &RunConfig, p: &SchemeParams, count: usize) -> Result<Vec<(Fe, Fe)>> {
    let f = p.field;
    match &cfg.delta {
        Some(d) => {
            ensure!(d.len() == 2 * count, "--delta needs {} values for {count} erased servers", 2 * count);
            if let Some(v) = d.iter().find(|&&v| v >= f.modulus()) {
                bail!("delta entry {v} is not a residue mod {}", f.modulus());
            }
            Ok((0..count).map(|j| (f.elem(d[j]), f.elem(d[count + j]))).collect())
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD17A);
            Ok((0..count)
                .map(|_| (f.elem(rng.gen_range(0..f.modulus())), f.elem(rng.gen_range(0..f.modulus()))))
                .collect())
        }
    }
}

fn cmd_run(cfg: &RunConfig) -> Result<bool> {
    let p = cfg.params()?;
    let erase = cfg.erase0();
    let d = if p.regime.is_quantum() { deltas(cfg, &p, erase.len())? } else { Vec::new() };
    let tr = run_end_to_end(&p, cfg.theta0(), cfg.seed, &erase, &d)?;
    eprintln!(
        "theta={} erased={:?} regime {}: {}",
        cfg.theta,
        cfg.erase,
        p.regime,
        if tr.success { "decoded" } else { "DECODE MISMATCH" }
    );
    emit(&tr, cfg.out.as_deref())?;
    Ok(tr.success)
}

fn run_security(
    name: &str,
    f: impl Fn(VerifyMode) -> Result<VerifyReport, VerifyError>,
    mode: VerifyMode,
    fallback: bool,
) -> Result<VerifyReport> {
    match f(mode) {
        Err(VerifyError::EnumerationCap { states, cap }) if fallback => {
            eprintln!("{name}: {states} noise states exceed cap {cap}; using rank_condition");
            Ok(f(VerifyMode::RankCondition)?)
        }
        r => Ok(r?),
    }
}

fn cmd_verify(cfg: &RunConfig, args: &VerifyArgs) -> Result<bool> {
    let p = cfg.params()?;
    let mut vc = VerifyConfig::from_env();
    vc.seed = cfg.seed;
    if let Some(s) = args.seeds {
        vc.seeds = s;
    }
    if let Some(s) = args.samples {
        vc.samples = s;
    }
    let mode: VerifyMode = cfg.mode.into();
    let all = args.suite == Suite::All;
    let wants = |s: Suite| all || args.suite == s;
    let quantum = p.regime.is_quantum();
    let mut reports = Vec::new();

    if wants(Suite::RateTable) {
        let case = RateCase { n: p.n, x: p.x, t: p.t, e: p.e, expected: None };
        reports.push(verify_rate_table(&[case], &vc));
    }
    if wants(Suite::Duality) {
        reports.push(verify_duality(p.field, p.points.alpha(), p.mult.u(), &vc)?);
    }
    if wants(Suite::Mds) {
        reports.push(verify_mds(&p, &vc)?);
    }
    if quantum && wants(Suite::BoxAlgebra) {
        reports.push(verify_box_algebra(&p, &vc)?);
    }
    if quantum && wants(Suite::Lemma1) {
        let lemma = |m| verify_lemma1_mode(&p, &cfg.erase0(), m, &vc);
        let lemma_mode = if mode == VerifyMode::Sampled { mode } else { VerifyMode::Exhaustive };
        reports.push(match lemma(lemma_mode) {
            Err(VerifyError::Box(BoxError::EnumerationCap { states, cap })) if all => {
                eprintln!("lemma1: {states} span vectors exceed cap {cap}; sampling instead");
                lemma(VerifyMode::Sampled)?
            }
            r => r?,
        });
    }
    if !quantum && matches!(args.suite, Suite::BoxAlgebra | Suite::Lemma1) {
        bail!("regime {} has no N-sum box to verify", p.regime);
    }
    if wants(Suite::XSecurity) {
        reports.push(run_security("x_security", |m| verify_x_security(&p, m, &vc), mode, all)?);
    }
    if wants(Suite::TPrivacy) {
        reports.push(run_security("t_privacy", |m| verify_t_privacy(&p, m, &vc), mode, all)?);
    }
    if wants(Suite::Correctness) {
        reports.push(verify_correctness(&p, mode, &vc)?);
    }

    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        eprintln!("{:<12} {:<15} {} ({} trials)", r.suite, mode_name(r.mode), if r.pass { "PASS" } else { "FAIL" }, r.trials);
    }
    emit(&json!({"pass": pass, "enum_cap": vc.enum_cap, "reports": reports}), cfg.out.as_deref())?;
    Ok(pass)
}

fn mode_name(m: VerifyMode) -> &'static str {
    match m {
        VerifyMode::Exhaustive => "exhaustive",
        VerifyMode::Sampled => "sampled",
        VerifyMode::RankCondition => "rank_condition",
    }
}

fn cmd_example(args: &CommonArgs) -> Result<bool> {
    let fixed = [("-N", args.n.is_some()), ("-K", args.k.is_some()), ("-X", args.x.is_some()), ("-T", args.t.is_some()), ("-E", args.e.is_some()), ("-q", args.q.is_some())];
    if let Some((flag, _)) = fixed.iter().find(|(_, set)| *set) {
        bail!("example-f5 has fixed parameters; {flag} is not accepted");
    }
    let mut with_default_erase = args.clone();
    if with_default_erase.erase.is_none() {
        with_default_erase.erase = Some("3".into());
    }
    let cfg = RunConfig::resolve(&with_default_erase)?;
    ensure!(cfg.erase.len() == 1, "example-f5 erases exactly one server");
    let p = example::params()?;
    let d = deltas(&cfg, &p, 1)?[0];
    let out = example::run(cfg.theta0(), cfg.erase0()[0], (d.0.value(), d.1.value()), cfg.seed)?;
    print_example_summary(&out);
    emit(&out, cfg.out.as_deref())?;
    Ok(out["pass"] == true)
}

fn print_example_summary(out: &Value) {
    eprintln!("q = 5, alpha = {}, f = {}, u = {}, v = {}", out["alpha"], out["f"], out["u"], out["v"]);
    if let Ok(g) = serde_json::from_value::<Vec<Vec<u64>>>(out["g"].clone()) {
        eprintln!("G =");
        for row in g {
            eprintln!("  {row:?}");
        }
    }
    eprintln!("server {} erased, delta = {}", out["erasure_set"][0], out["delta"]);
    eprintln!("y = {}  (expected W = {})", out["y"], out["expected"]);
    for c in out["checks"].as_array().into_iter().flatten() {
        eprintln!("  {:<22} {}", c["name"].as_str().unwrap_or(""), if c["pass"] == true { "ok" } else { "DEVIATES" });
    }
    eprintln!("rate {}", out["rate"]);
}
