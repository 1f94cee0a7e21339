//! Runs the SDP solver and the Monte-Carlo landscape study on the same
//! instances and checks each family's expected outcome.

use std::time::Instant;

use lowrank_duel::bm::{monte_carlo, BmOptions, InitRule, LandscapeSummary, PointClass, Recovery};
use lowrank_duel::certificates::certify_instance;
use lowrank_duel::instances::Instance;
use lowrank_duel::sdp::{recovery_check, solve_sdp, SdpResult};
use serde::Serialize;

use crate::config::{instance_seed, EffectiveTolerances, Family, Generated};
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct SdpVerdict {
    pub status: String,
    pub iters: usize,
    pub trace: f64,
    pub trace_star: f64,
    pub recovered: bool,
    pub frob_gap: f64,
    pub trace_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BmVerdict {
    pub trials: usize,
    pub success_rate: f64,
    pub second_order: usize,
    pub spurious_second_order: usize,
    pub not_converged: usize,
    pub spurious_clusters: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub sdp_seconds: f64,
    pub bm_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DuelRecord {
    pub id: String,
    pub family: Family,
    pub n: usize,
    pub r: usize,
    pub sdp: Option<SdpVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdp_skipped: Option<String>,
    pub bm: Option<BmVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm_skipped: Option<String>,
    pub expectation: String,
    pub met: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

pub fn sdp_verdict(res: &SdpResult, inst: &Instance, tol: f64) -> Result<SdpVerdict, CliError> {
    let mstar = inst.mstar();
    let rc = recovery_check(res, &mstar, tol)?;
    Ok(SdpVerdict {
        status: res.status.as_str().to_string(),
        iters: res.iters,
        trace: res.trace(),
        trace_star: mstar.trace(),
        recovered: rc.recovered,
        frob_gap: rc.frob_gap,
        trace_gap: rc.trace_gap,
    })
}

pub fn bm_verdict(s: &LandscapeSummary) -> BmVerdict {
    let count = |f: &dyn Fn(&lowrank_duel::bm::TrialReport) -> bool| s.reports.iter().filter(|t| f(t)).count();
    BmVerdict {
        trials: s.trials,
        success_rate: s.success_rate,
        second_order: s.second_order,
        spurious_second_order: count(&|t| {
            t.report.class == PointClass::SecondOrder && t.report.recovery == Recovery::Spurious
        }),
        not_converged: count(&|t| t.report.class == PointClass::NotConverged),
        spurious_clusters: s.spurious_clusters,
    }
}

/// What a family is expected to show; `None` fields carry no expectation.
struct Expectation {
    text: String,
    sdp_recovers: Option<bool>,
    sdp_trace_at_most: Option<f64>,
    bm_no_spurious_second_order: bool,
    bm_not_always: bool,
}

fn expectation(family: Family, inst: &Instance) -> Expectation {
    let none = Expectation {
        text: "none".into(),
        sdp_recovers: None,
        sdp_trace_at_most: None,
        bm_no_spurious_second_order: false,
        bm_not_always: false,
    };
    match family {
        Family::Chain | Family::Cycle => {
            let witness = certify_instance(inst).ok().filter(|c| c.feasible && c.strict);
            match witness {
                Some(c) => Expectation {
                    text: format!(
                        "bm: every second-order point global; sdp: not recovered, trace <= {} ({} witness)",
                        c.trace_hat, c.family
                    ),
                    sdp_recovers: Some(false),
                    sdp_trace_at_most: Some(c.trace_hat + 1e-6),
                    bm_no_spurious_second_order: true,
                    ..none
                },
                None => Expectation {
                    text: "bm: every second-order point global; sdp: no feasible witness, no expectation".into(),
                    bm_no_spurious_second_order: true,
                    ..none
                },
            }
        }
        Family::LowComplexity => Expectation {
            text: "sdp: recovered; bm: success_rate < 1".into(),
            sdp_recovers: Some(true),
            bm_not_always: true,
            ..none
        },
        Family::PerturbedOp => Expectation {
            text: "sdp: recovered".into(),
            sdp_recovers: Some(true),
            ..none
        },
        Family::CustomFile => none,
    }
}

pub fn run_duel(
    instances: &[Generated],
    seed: u64,
    trials: usize,
    tols: &EffectiveTolerances,
    timings: bool,
) -> Result<Vec<DuelRecord>, CliError> {
    let mut out = Vec::with_capacity(instances.len());
    for (idx, g) in instances.iter().enumerate() {
        let inst = &g.instance;
        let exp = expectation(g.family, inst);

        let t0 = Instant::now();
        let (sdp, sdp_skipped) = match solve_sdp(inst, &tols.sdp) {
            Ok(res) => (Some(sdp_verdict(&res, inst, tols.sdp_recovery_tol)?), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let sdp_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let opts = BmOptions { seed: instance_seed(seed, idx), ..tols.bm.clone() };
        let (bm, bm_skipped) = match monte_carlo(inst, trials, &InitRule::Gaussian, &opts) {
            Ok(s) => (Some(bm_verdict(&s)), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let bm_seconds = t1.elapsed().as_secs_f64();

        let mut met = true;
        if let Some(want) = exp.sdp_recovers {
            met &= sdp.as_ref().is_some_and(|v| v.recovered == want);
        }
        if let Some(cap) = exp.sdp_trace_at_most {
            met &= sdp.as_ref().is_some_and(|v| v.trace <= cap);
        }
        if exp.bm_no_spurious_second_order {
            met &= bm.as_ref().is_some_and(|v| v.spurious_second_order == 0);
        }
        if exp.bm_not_always {
            met &= bm.as_ref().is_some_and(|v| v.success_rate < 1.0);
        }
        out.push(DuelRecord {
            id: g.id.clone(),
            family: g.family,
            n: inst.n,
            r: inst.r,
            sdp,
            sdp_skipped,
            bm,
            bm_skipped,
            expectation: exp.text,
            met,
            timings: timings.then_some(Timings { sdp_seconds, bm_seconds }),
        });
    }
    Ok(out)
}
