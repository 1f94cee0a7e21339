//! Experiment configuration: a JSON file merged with command-line overrides,
//! plus instance generation for each family.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lowrank_duel::bm::BmOptions;
use lowrank_duel::instances::{
    gen_chain, gen_cycle, gen_low_complexity, perturbed_operator, BlockSparsityGraph, Instance,
    LowComplexitySpec, ObservationGraph,
};
use lowrank_duel::sdp::SdpOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Family {
    Chain,
    Cycle,
    LowComplexity,
    PerturbedOp,
    CustomFile,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Chain => "chain",
            Family::Cycle => "cycle",
            Family::LowComplexity => "low_complexity",
            Family::PerturbedOp => "perturbed_op",
            Family::CustomFile => "custom_file",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Option<Family>,
    /// Matrix sizes for chain and cycle families.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    /// Fixed ground truth; replaces random draws for chain, cycle and perturbed_op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xstar: Option<Vec<f64>>,
    /// Random draws per size (chain, cycle) or seeds (low_complexity).
    pub instances: Option<usize>,
    pub r: Option<usize>,
    /// Number of blocks for low_complexity.
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub observe: Option<ObservationGraph>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_INSTANCES: usize = 1;
pub const DEFAULT_BLOCKS: usize = 7;
pub const DEFAULT_EPSILON: [f64; 2] = [0.01, 0.5];
/// Ground truth of the three-node chain used by perturbed_op when none is given.
pub const DEFAULT_PERTURBED_X: [f64; 3] = [1.0, 1.0, 2.0];
pub const WORKERS_ENV: &str = "LOWRANK_DUEL_WORKERS";

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(mut self, over: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(family, xstar, instances, r, m, sigma, observe, file, trials, seed, out, workers);
        if !over.n.is_empty() {
            self.n = over.n;
        }
        if !over.epsilon.is_empty() {
            self.epsilon = over.epsilon;
        }
        self.tolerances.extend(over.tolerances);
        self
    }

    pub fn family(&self) -> Result<Family, CliError> {
        self.family
            .ok_or_else(|| CliError::Usage("family is required (config or --family)".into()))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("seed is required (config or --seed)".into()))
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(DEFAULT_TRIALS)
    }

    /// Worker count from the config or flags, else the environment, else rayon's default.
    pub fn workers(&self) -> Result<Option<usize>, CliError> {
        if let Some(w) = self.workers {
            return Ok(Some(w));
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("{WORKERS_ENV}={v} is not a count"))),
            Err(_) => Ok(None),
        }
    }

    pub fn tolerances(&self) -> Result<EffectiveTolerances, CliError> {
        let mut t = EffectiveTolerances::default();
        for (k, &v) in &self.tolerances {
            let count = || -> Result<usize, CliError> {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(CliError::Usage(format!("tolerance {k} must be a positive integer")))
                }
            };
            match k.as_str() {
                "grad_tol" => t.bm.grad_tol = v,
                "hess_tol" => t.bm.hess_tol = v,
                "recovery_tol" => t.bm.recovery_tol = v,
                "cluster_tol" => t.bm.cluster_tol = v,
                "bm_max_iters" => t.bm.max_iters = count()?,
                "feas_tol" => t.sdp.feas_tol = v,
                "gap_tol" => t.sdp.gap_tol = v,
                "sdp_max_iters" => t.sdp.max_iters = count()?,
                "sdp_recovery_tol" => t.sdp_recovery_tol = v,
                _ => return Err(CliError::Usage(format!("unknown tolerance key {k}"))),
            }
        }
        t.bm.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        t.sdp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectiveTolerances {
    pub bm: BmOptions,
    pub sdp: SdpOptions,
    /// Relative Frobenius gap below which the SDP solution counts as recovered.
    pub sdp_recovery_tol: f64,
}

impl Default for EffectiveTolerances {
    fn default() -> Self {
        Self {
            bm: BmOptions::default(),
            sdp: SdpOptions::default(),
            sdp_recovery_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub id: String,
    pub family: Family,
    pub instance: Instance,
}

/// Uniform magnitude in [0.5, 2] with a random sign.
pub fn draw_entries(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag: f64 = rng.random_range(0.5..=2.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn core(e: lowrank_duel::Error) -> CliError {
    CliError::Core(e)
}

/// Loads a bare instance file or a bundle written by `generate`.
pub fn load_instances(path: &Path) -> Result<Vec<(String, Instance)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad JSON in {}: {e}", path.display())))?;
    let parse = |v: &serde_json::Value| {
        Instance::from_json(&v.to_string())
            .map_err(|e| CliError::Usage(format!("bad instance in {}: {e}", path.display())))
    };
    match value.get("instances").and_then(|v| v.as_array()) {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(k, item)| {
                let id = item
                    .get("id")
                    .and_then(|v| v.as_str())
                    .map_or_else(|| format!("file-{k}"), str::to_string);
                let inst = item.get("instance").ok_or_else(|| {
                    CliError::Usage(format!("bundle entry {k} has no instance"))
                })?;
                Ok((id, parse(inst)?))
            })
            .collect(),
        None => Ok(vec![("file-0".to_string(), parse(&value)?)]),
    }
}

/// Instances described by `cfg`, in a fixed order.
pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<Generated>, CliError> {
    let family = cfg.family()?;
    let count = cfg.instances.unwrap_or(DEFAULT_INSTANCES);
    let mut out = Vec::new();
    let mut push = |id: String, instance: Instance| {
        out.push(Generated { id, family, instance });
    };
    match family {
        Family::Chain | Family::Cycle => {
            let make = |x: &[f64]| match family {
                Family::Chain => gen_chain(x),
                _ => gen_cycle(x),
            };
            let tag = family.as_str();
            if let Some(x) = &cfg.xstar {
                push(format!("{tag}-n{}", x.len()), make(x).map_err(core)?);
            } else {
                if cfg.n.is_empty() {
                    return Err(CliError::Usage(format!("{tag} needs n or xstar")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
                for &n in &cfg.n {
                    for k in 0..count {
                        let x = draw_entries(&mut rng, n);
                        push(format!("{tag}-n{n}-k{k}"), make(&x).map_err(core)?);
                    }
                }
            }
        }
        Family::LowComplexity => {
            let m = cfg.m.unwrap_or(DEFAULT_BLOCKS);
            let r = cfg.r.unwrap_or(1);
            let g = BlockSparsityGraph::canonical_low_complexity(m).map_err(core)?;
            let seed = cfg.seed()?;
            for k in 0..count {
                let spec = LowComplexitySpec {
                    seed: seed.wrapping_add(k as u64),
                    sigma: cfg.sigma,
                    observe: cfg.observe.unwrap_or(ObservationGraph::G1Only),
                    ..Default::default()
                };
                let lc = gen_low_complexity(&g, m * r, r, &spec).map_err(core)?;
                push(format!("low_complexity-m{m}-r{r}-k{k}"), lc.instance);
            }
        }
        Family::PerturbedOp => {
            let x = cfg.xstar.clone().unwrap_or_else(|| DEFAULT_PERTURBED_X.to_vec());
            let chain = gen_chain(&x).map_err(core)?;
            let omega = chain.op.omega_set().expect("entry operator").clone();
            let eps = if cfg.epsilon.is_empty() { DEFAULT_EPSILON.to_vec() } else { cfg.epsilon.clone() };
            for e in eps {
                let op = perturbed_operator(&omega, e).map_err(core)?;
                let inst = Instance::new(chain.xstar.clone(), op).map_err(core)?;
                push(format!("perturbed_op-eps{e}"), inst);
            }
        }
        Family::CustomFile => {
            let path = cfg
                .file
                .as_ref()
                .ok_or_else(|| CliError::Usage("custom_file needs file".into()))?;
            for (id, inst) in load_instances(path)? {
                push(id, inst);
            }
        }
    }
    Ok(out)
}

/// Per-instance seed for Monte-Carlo runs; trial `t` then uses `base ^ t`.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}
