use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lowrank_duel::bm::{monte_carlo, BmOptions, InitRule};
use lowrank_duel::certificates::{certify_instance, Certificate};
use lowrank_duel::completer::{cross_check, propagate_complete, CrossCheck};
use lowrank_duel::instances::{Instance, ObservationGraph};
use lowrank_duel::rip::{rip_table, RipRow};
use lowrank_duel::sdp::{kkt_residuals, solve_sdp, KktReport};
use lowrank_duel::Error;
use serde::Serialize;

use crate::config::{
    generate, instance_seed, load_instances, EffectiveTolerances, ExperimentConfig, Family,
};
use crate::duel::{run_duel, sdp_verdict, DuelRecord, SdpVerdict};
use crate::{json_with_meta, CliError, Meta, Outcome, EXIT_NOT_APPLICABLE, EXIT_OK, EXIT_VIOLATED};

#[derive(Debug, Parser)]
#[command(name = "lowrank-duel", version, about = "Trace-minimization SDP vs Burer-Monteiro on matrix completion and sensing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to LOWRANK_DUEL_WORKERS.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Cross-check against the SDP solver (certify) or between completer and SDP (sdp, complete).
    #[arg(long, global = true)]
    pub cross_check: bool,
    /// Include wall times; outputs are then no longer reproducible byte for byte.
    #[arg(long, global = true)]
    pub timings: bool,
    #[arg(long, global = true, value_enum)]
    pub family: Option<Family>,
    /// Sizes for chain and cycle families.
    #[arg(long, global = true, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Number of blocks for low_complexity.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub xstar: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub instances: Option<usize>,
    /// Observe the entries induced by both G1 and G2 instead of G1 alone (low_complexity).
    #[arg(long, global = true)]
    pub full_observation: bool,
    /// Instance file for family custom_file.
    #[arg(long, global = true)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured instances as a JSON bundle.
    Generate,
    /// Monte-Carlo gradient descent on every instance; CSV per trial.
    Bm,
    /// Trace minimization on every instance; JSON verdicts.
    Sdp,
    /// SDP and gradient descent side by side with per-family expectations.
    Duel,
    /// Table of the rank-dependent RIP bounds.
    Rip {
        #[arg(long, value_delimiter = ',', default_values_t = 2..=12)]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = 1..=6)]
        rs: Vec<usize>,
    },
    /// Build a trace-reducing certificate for an instance file.
    Certify { input: PathBuf },
    /// Complete an instance file by block propagation.
    Complete { input: PathBuf },
}

impl Common {
    fn overrides(&self) -> ExperimentConfig {
        ExperimentConfig {
            family: self.family,
            n: self.n.clone(),
            xstar: self.xstar.clone(),
            instances: self.instances,
            r: self.r,
            m: self.m,
            sigma: self.sigma,
            observe: self.full_observation.then_some(ObservationGraph::Full),
            epsilon: self.epsilon.clone(),
            file: self.file.clone(),
            trials: self.trials,
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            ..Default::default()
        }
    }

    pub fn effective_config(&self) -> Result<ExperimentConfig, CliError> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.merged(self.overrides()))
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Bm => "bm",
            Command::Sdp => "sdp",
            Command::Duel => "duel",
            Command::Rip { .. } => "rip",
            Command::Certify { .. } => "certify",
            Command::Complete { .. } => "complete",
        }
    }
}

/// Runs a parsed command inside a worker pool of the configured width.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = cli.common.effective_config()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers()? {
        if w == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli, &cfg))
}

/// Where the output goes: `--out`, the config's `out`, or stdout.
pub fn output_path(cli: &Cli) -> Result<Option<PathBuf>, CliError> {
    Ok(cli.common.effective_config()?.out)
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let name = cli.command.name();
    let tols = cfg.tolerances()?;
    let timings = cli.common.timings;
    match &cli.command {
        Command::Generate => cmd_generate(cfg, &tols),
        Command::Bm => cmd_bm(cfg, &tols, timings),
        Command::Sdp => cmd_sdp(cfg, &tols, cli.common.cross_check, timings),
        Command::Duel => cmd_duel(cfg, &tols, timings),
        Command::Rip { ns, rs } => Ok(cmd_rip(ns, rs, &Meta::new(name, &tols))),
        Command::Certify { input } => cmd_certify(input, &tols, cli.common.cross_check),
        Command::Complete { input } => cmd_complete(input, &tols, cli.common.cross_check),
    }
}

/// Output location and worker count do not affect results, so they stay out of the header.
fn meta_for<'a>(command: &'a str, cfg: &ExperimentConfig, tols: &'a EffectiveTolerances) -> Meta<'a> {
    let shown = ExperimentConfig { out: None, workers: None, ..cfg.clone() };
    Meta { config: Some(shown), ..Meta::new(command, tols) }
}

#[derive(Serialize)]
struct BundleEntry {
    id: String,
    family: Family,
    instance: serde_json::Value,
}

fn instance_value(inst: &Instance) -> serde_json::Value {
    serde_json::from_str(&inst.to_json()).expect("instance JSON")
}

fn cmd_generate(cfg: &ExperimentConfig, tols: &EffectiveTolerances) -> Result<Outcome, CliError> {
    cfg.seed()?;
    let entries: Vec<BundleEntry> = generate(cfg)?
        .into_iter()
        .map(|g| BundleEntry { id: g.id, family: g.family, instance: instance_value(&g.instance) })
        .collect();
    Ok(Outcome {
        body: json_with_meta(&meta_for("generate", cfg, tols), "instances", &entries),
        code: EXIT_OK,
    })
}

fn cmd_bm(cfg: &ExperimentConfig, tols: &EffectiveTolerances, timings: bool) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let trials = cfg.trials();
    let meta = meta_for("bm", cfg, tols);
    let mut body = meta.csv_header();
    let mut summary = String::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "instance", "trial", "seed", "iters", "grad_norm", "hess_min_eig", "frob_gap", "class", "recovery",
    ])?;
    for (idx, g) in generate(cfg)?.iter().enumerate() {
        let opts = BmOptions { seed: instance_seed(seed, idx), ..tols.bm.clone() };
        let t0 = Instant::now();
        let s = monte_carlo(&g.instance, trials, &InitRule::Gaussian, &opts)?;
        for t in &s.reports {
            w.write_record([
                g.id.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.iters.to_string(),
                num(t.report.grad_norm),
                num(t.report.hess_min_eig),
                num(t.report.frob_gap),
                t.report.class.as_str().to_string(),
                t.report.recovery.as_str().to_string(),
            ])?;
        }
        summary += &format!(
            "# summary {} success_rate={} second_order={} clusters={} spurious_clusters={}\n",
            g.id,
            num(s.success_rate),
            s.second_order,
            s.clusters.len(),
            s.spurious_clusters
        );
        if timings {
            summary += &format!("# timing {} seconds={}\n", g.id, t0.elapsed().as_secs_f64());
        }
    }
    body += &String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?)
        .expect("csv is utf-8");
    body += &summary;
    Ok(Outcome { body, code: EXIT_OK })
}

#[derive(Serialize)]
struct SdpEntry {
    id: String,
    verdict: SdpVerdict,
    kkt: KktReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

fn cmd_sdp(
    cfg: &ExperimentConfig,
    tols: &EffectiveTolerances,
    cross: bool,
    timings: bool,
) -> Result<Outcome, CliError> {
    cfg.seed()?;
    let mut entries = Vec::new();
    for g in generate(cfg)? {
        let t0 = Instant::now();
        let res = solve_sdp(&g.instance, &tols.sdp)?;
        let seconds = timings.then(|| t0.elapsed().as_secs_f64());
        let cc = if cross {
            match cross_check(&g.instance, &tols.sdp) {
                Ok(c) => Some(c),
                Err(Error::NotApplicable(_)) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        entries.push(SdpEntry {
            id: g.id,
            verdict: sdp_verdict(&res, &g.instance, tols.sdp_recovery_tol)?,
            kkt: kkt_residuals(&res, &g.instance)?,
            cross_check: cc,
            seconds,
        });
    }
    Ok(Outcome {
        body: json_with_meta(&meta_for("sdp", cfg, tols), "results", &entries),
        code: EXIT_OK,
    })
}

fn cmd_duel(cfg: &ExperimentConfig, tols: &EffectiveTolerances, timings: bool) -> Result<Outcome, CliError> {
    let records = run_duel(&generate(cfg)?, cfg.seed()?, cfg.trials(), tols, timings)?;
    let code = if records.iter().all(|r| r.met) { EXIT_OK } else { EXIT_VIOLATED };
    let meta = meta_for("duel", cfg, tols);
    let csv_out = cfg.out.as_ref().and_then(|p| p.extension()).is_some_and(|e| e == "csv");
    let body = if csv_out { duel_csv(&meta, &records)? } else { json_with_meta(&meta, "records", &records) };
    Ok(Outcome { body, code })
}

/// Shortest round-trip form, switching to exponent notation for tiny and huge values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn duel_csv(meta: &Meta, records: &[DuelRecord]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "instance", "family", "n", "r", "sdp_status", "sdp_recovered", "sdp_trace_gap", "sdp_frob_gap",
        "bm_success_rate", "bm_spurious_clusters", "bm_spurious_second_order", "met", "expectation",
    ])?;
    for r in records {
        let s = r.sdp.as_ref();
        let b = r.bm.as_ref();
        w.write_record([
            r.id.clone(),
            r.family.as_str().to_string(),
            r.n.to_string(),
            r.r.to_string(),
            s.map_or_else(|| "skipped".to_string(), |v| v.status.clone()),
            opt(s.map(|v| v.recovered)),
            opt(s.map(|v| num(v.trace_gap))),
            opt(s.map(|v| num(v.frob_gap))),
            opt(b.map(|v| num(v.success_rate))),
            opt(b.map(|v| v.spurious_clusters)),
            opt(b.map(|v| v.spurious_second_order)),
            r.met.to_string(),
            r.expectation.clone(),
        ])?;
    }
    let rows = String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?)
        .expect("csv is utf-8");
    Ok(meta.csv_header() + &rows)
}

/// RIP bound table; exit code 1 if a row breaks monotonicity in r.
pub fn cmd_rip(ns: &[usize], rs: &[usize], meta: &Meta) -> Outcome {
    let rows = rip_table(ns, rs);
    let mut body = meta.csv_header();
    body += "n,r,l,delta_lb_analytic,theorem4_bound\n";
    for RipRow { n, r, l, delta_lb_analytic, theorem4_bound } in &rows {
        body += &format!("{n},{r},{l},{},{}\n", num(*delta_lb_analytic), num(*theorem4_bound));
    }
    let monotone = rows.windows(2).all(|w| {
        w[0].n != w[1].n || w[0].r > w[1].r || w[1].delta_lb_analytic >= w[0].delta_lb_analytic
    });
    Outcome { body, code: if monotone { EXIT_OK } else { EXIT_VIOLATED } }
}

#[derive(Serialize)]
struct SdpComparison {
    sdp_trace: f64,
    bound: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CertifyEntry {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<Certificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    not_applicable: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<SdpComparison>,
}

fn file_meta<'a>(command: &'a str, input: &'a Path, tols: &'a EffectiveTolerances) -> Meta<'a> {
    Meta { input: Some(input), ..Meta::new(command, tols) }
}

fn cmd_certify(input: &Path, tols: &EffectiveTolerances, cross: bool) -> Result<Outcome, CliError> {
    let mut entries = Vec::new();
    let mut code = EXIT_OK;
    for (id, inst) in load_instances(input)? {
        match certify_instance(&inst) {
            Ok(cert) => {
                let cross_check = if cross {
                    let res = solve_sdp(&inst, &tols.sdp)?;
                    let bound = cert.trace_hat + 1e-6;
                    let passed = res.trace() <= bound;
                    if !passed {
                        code = EXIT_VIOLATED;
                    }
                    Some(SdpComparison { sdp_trace: res.trace(), bound, passed })
                } else {
                    None
                };
                entries.push(CertifyEntry { id, certificate: Some(cert), not_applicable: None, cross_check });
            }
            Err(e @ (Error::NotApplicable(_) | Error::ConditionNotMet(_))) => {
                if code == EXIT_OK {
                    code = EXIT_NOT_APPLICABLE;
                }
                entries.push(CertifyEntry {
                    id,
                    certificate: None,
                    not_applicable: Some(e.to_string()),
                    cross_check: None,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Outcome {
        body: json_with_meta(&file_meta("certify", input, tols), "results", &entries),
        code,
    })
}

#[derive(Serialize)]
struct CompleteEntry {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolved: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unresolved_blocks: Option<Vec<(usize, usize)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frob_gap_to_truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<lowrank_duel::linalg::SymMat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
}

fn cmd_complete(input: &Path, tols: &EffectiveTolerances, cross: bool) -> Result<Outcome, CliError> {
    let mut entries = Vec::new();
    let mut code = EXIT_OK;
    for (id, inst) in load_instances(input)? {
        let entry = match propagate_complete(&inst) {
            Ok(c) => {
                let mstar = inst.mstar();
                let gap = (&c.m - &mstar).frobenius_norm() / mstar.frobenius_norm().max(f64::MIN_POSITIVE);
                let cc = if cross { Some(cross_check(&inst, &tols.sdp)?) } else { None };
                CompleteEntry {
                    id,
                    resolved: Some(c.resolved),
                    unresolved_blocks: Some(c.unresolved_blocks),
                    frob_gap_to_truth: Some(gap),
                    m: Some(c.m),
                    error: None,
                    cross_check: cc,
                }
            }
            Err(e @ Error::NotApplicable(_)) => return Err(e.into()),
            Err(e) => {
                code = EXIT_VIOLATED;
                CompleteEntry {
                    id,
                    resolved: None,
                    unresolved_blocks: None,
                    frob_gap_to_truth: None,
                    m: None,
                    error: Some(e.to_string()),
                    cross_check: None,
                }
            }
        };
        entries.push(entry);
    }
    Ok(Outcome {
        body: json_with_meta(&file_meta("complete", input, tols), "results", &entries),
        code,
    })
}
