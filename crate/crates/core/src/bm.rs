//! Burer-Monteiro factorized objective, plain gradient descent, and
//! second-order classification of the points it reaches.
//!
//! Entry-based operators use the weighting
//! `f(X) = ¼ Σ_{(i,i)} w (X_i·X_i − M_ii)² + ½ Σ_{(i,j), i<j} w (X_i·X_j − M_ij)²`
//! with each unordered pair counted once and `w = s²` for a measurement scaled
//! by `s`. This equals `¼‖W∘(XXᵀ − M)‖²` over ordered entries, so the gradient is
//! `(W∘R)X`. General operators use `f(X) = ½‖A(XXᵀ) − b‖²`.
//!
//! Factor entries are indexed row-major in the Hessian: `X[i, a]` sits at `i·r + a`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instances::{Factor, Instance, MeasurementOp};
use crate::linalg::{sym_eig, OrderMode, SymMat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed { alpha: f64 },
    /// Armijo backtracking; the first trial of each iteration is the
    /// Barzilai-Borwein step.
    Backtracking { beta: f64, c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmOptions {
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub loss: Loss,
    pub grad_tol: f64,
    pub hess_tol: f64,
    /// Relative `‖XXᵀ − M*‖_F / ‖M*‖_F` below which a point counts as global.
    pub recovery_tol: f64,
    /// Relative radius used to merge second-order points in Monte-Carlo runs.
    pub cluster_tol: f64,
    /// Standard deviation of the Gaussian initialization; `None` means
    /// `‖M*‖_F^{1/2} / √n`.
    pub init_scale: Option<f64>,
    pub seed: u64,
    /// Restart once from a jittered copy of a point that fails the
    /// second-order test.
    pub jitter_restart: bool,
    pub record_trace: bool,
}

impl Default for BmOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            step_rule: StepRule::Backtracking { beta: 0.5, c: 1e-4 },
            loss: Loss::Squared,
            grad_tol: 1e-9,
            hess_tol: 1e-7,
            recovery_tol: 1e-6,
            cluster_tol: 1e-4,
            init_scale: None,
            seed: 0,
            jitter_restart: false,
            record_trace: false,
        }
    }
}

impl BmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return invalid("grad_tol must be positive");
        }
        if !(self.hess_tol >= 0.0) {
            return invalid("hess_tol must be nonnegative");
        }
        if !(self.recovery_tol >= 0.0 && self.cluster_tol >= 0.0) {
            return invalid("recovery_tol and cluster_tol must be nonnegative");
        }
        match self.step_rule {
            StepRule::Fixed { alpha } if !(alpha > 0.0) => invalid("fixed step must be positive"),
            StepRule::Backtracking { beta, c }
                if !(beta > 0.0 && beta < 1.0 && c > 0.0 && c < 1.0) =>
            {
                invalid("backtracking needs beta and c in (0,1)")
            }
            _ => Ok(()),
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            grad_tol: self.grad_tol,
            hess_tol: self.hess_tol,
            recovery_tol: self.recovery_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub grad_tol: f64,
    pub hess_tol: f64,
    pub recovery_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        BmOptions::default().tolerances()
    }
}

#[derive(Clone, Copy, Debug)]
struct EntryTerm {
    i: usize,
    j: usize,
    /// ¼w on the diagonal, ½w off it.
    coef: f64,
    target: f64,
}

#[derive(Clone, Debug)]
enum Terms {
    Entries(Vec<EntryTerm>),
    General { a: Vec<DMatrix<f64>>, b: Vec<f64> },
}

/// Objective data extracted from an instance once and reused across iterations.
#[derive(Clone, Debug)]
pub struct BmProblem {
    n: usize,
    r: usize,
    terms: Terms,
    mstar: SymMat,
    mstar_norm: f64,
}

impl BmProblem {
    pub fn new(inst: &Instance) -> Self {
        let terms = match &inst.op {
            MeasurementOp::General { sensing } => Terms::General {
                a: sensing.iter().map(|s| s.as_matrix().clone()).collect(),
                b: inst.b.clone(),
            },
            op => Terms::Entries(
                op.entry_measurements(inst.n)
                    .expect("entry-based operator")
                    .into_iter()
                    .zip(&inst.b)
                    .map(|((i, j, s), &b)| EntryTerm {
                        i,
                        j,
                        coef: if i == j { 0.25 } else { 0.5 } * s * s,
                        target: b / s,
                    })
                    .collect(),
            ),
        };
        let mstar = inst.mstar();
        let mstar_norm = mstar.frobenius_norm();
        Self {
            n: inst.n,
            r: inst.r,
            terms,
            mstar,
            mstar_norm,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn mstar(&self) -> &SymMat {
        &self.mstar
    }

    fn check(&self, x: &Factor) -> Result<()> {
        if x.shape() != (self.n, self.r) {
            return invalid(format!(
                "factor is {}x{}, instance needs {}x{}",
                x.nrows(),
                x.ncols(),
                self.n,
                self.r
            ));
        }
        Ok(())
    }

    fn dot_rows(a: &Factor, i: usize, b: &Factor, j: usize) -> f64 {
        (0..a.ncols()).map(|k| a[(i, k)] * b[(j, k)]).sum()
    }

    fn general_residuals(a: &[DMatrix<f64>], b: &[f64], x: &Factor) -> Vec<f64> {
        let m = x * x.transpose();
        a.iter()
            .zip(b)
            .map(|(ak, bk)| ak.component_mul(&m).sum() - bk)
            .collect()
    }

    pub fn objective(&self, x: &Factor) -> f64 {
        match &self.terms {
            Terms::Entries(terms) => terms
                .iter()
                .map(|t| {
                    let res = Self::dot_rows(x, t.i, x, t.j) - t.target;
                    t.coef * res * res
                })
                .sum(),
            Terms::General { a, b } => {
                0.5 * Self::general_residuals(a, b, x)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &Factor) -> Factor {
        let (n, r) = (self.n, self.r);
        let mut g = DMatrix::zeros(n, r);
        match &self.terms {
            Terms::Entries(terms) => {
                for t in terms {
                    let res = Self::dot_rows(x, t.i, x, t.j) - t.target;
                    if t.i == t.j {
                        let s = 4.0 * t.coef * res;
                        for a in 0..r {
                            g[(t.i, a)] += s * x[(t.i, a)];
                        }
                    } else {
                        let s = 2.0 * t.coef * res;
                        for a in 0..r {
                            g[(t.i, a)] += s * x[(t.j, a)];
                            g[(t.j, a)] += s * x[(t.i, a)];
                        }
                    }
                }
            }
            Terms::General { a, b } => {
                for (ak, rk) in a.iter().zip(Self::general_residuals(a, b, x)) {
                    g += 2.0 * rk * (ak * x);
                }
            }
        }
        g
    }

    pub fn hessian(&self, x: &Factor) -> SymMat {
        let (n, r) = (self.n, self.r);
        let d = n * r;
        let mut h = DMatrix::zeros(d, d);
        match &self.terms {
            Terms::Entries(terms) => {
                for t in terms {
                    let res = Self::dot_rows(x, t.i, x, t.j) - t.target;
                    let c2 = 2.0 * t.coef;
                    // ∇R has X_j in slot i and X_i in slot j (2X_i when i == j).
                    let mut grad_r: Vec<(usize, f64)> = Vec::with_capacity(2 * r);
                    for a in 0..r {
                        grad_r.push((t.i * r + a, x[(t.j, a)]));
                        grad_r.push((t.j * r + a, x[(t.i, a)]));
                    }
                    for &(p, u) in &grad_r {
                        for &(q, v) in &grad_r {
                            h[(p, q)] += c2 * u * v;
                        }
                    }
                    for a in 0..r {
                        let (p, q) = (t.i * r + a, t.j * r + a);
                        if t.i == t.j {
                            h[(p, p)] += c2 * 2.0 * res;
                        } else {
                            h[(p, q)] += c2 * res;
                            h[(q, p)] += c2 * res;
                        }
                    }
                }
            }
            Terms::General { a, b } => {
                for (ak, rk) in a.iter().zip(Self::general_residuals(a, b, x)) {
                    let akx = ak * x;
                    for p in 0..d {
                        for q in 0..d {
                            let (i, a1) = (p / r, p % r);
                            let (j, a2) = (q / r, q % r);
                            let mut v = 4.0 * akx[(i, a1)] * akx[(j, a2)];
                            if a1 == a2 {
                                v += 2.0 * rk * ak[(i, j)];
                            }
                            h[(p, q)] += v;
                        }
                    }
                }
            }
        }
        SymMat::from_matrix(h).expect("square Hessian")
    }

    /// `f(X + tD) − f(X)` evaluated from the residual expansion
    /// `R(t) = R + t·a + t²·q`, which avoids cancelling against `f(X)`.
    fn line_model(&self, x: &Factor, d: &Factor) -> LineModel {
        match &self.terms {
            Terms::Entries(terms) => LineModel {
                rows: terms
                    .iter()
                    .map(|t| {
                        let res = Self::dot_rows(x, t.i, x, t.j) - t.target;
                        let lin = Self::dot_rows(d, t.i, x, t.j) + Self::dot_rows(x, t.i, d, t.j);
                        let quad = Self::dot_rows(d, t.i, d, t.j);
                        [t.coef, res, lin, quad]
                    })
                    .collect(),
            },
            Terms::General { a, b } => {
                let res = Self::general_residuals(a, b, x);
                let xd = x * d.transpose();
                let lin_m = &xd + xd.transpose();
                let quad_m = d * d.transpose();
                LineModel {
                    rows: a
                        .iter()
                        .zip(res)
                        .map(|(ak, rk)| {
                            [0.5, rk, ak.component_mul(&lin_m).sum(), ak.component_mul(&quad_m).sum()]
                        })
                        .collect(),
                }
            }
        }
    }

    pub fn frob_gap(&self, x: &Factor) -> f64 {
        let gap = (&SymMat::gram(x) - &self.mstar).frobenius_norm();
        if self.mstar_norm > 0.0 {
            gap / self.mstar_norm
        } else {
            gap
        }
    }

    pub fn default_init_scale(&self) -> f64 {
        let s = self.mstar_norm.sqrt() / (self.n as f64).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn random_init(&self, scale: f64, seed: u64) -> Factor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("finite positive scale");
        DMatrix::from_fn(self.n, self.r, |_, _| normal.sample(&mut rng))
    }
}

struct LineModel {
    rows: Vec<[f64; 4]>,
}

impl LineModel {
    fn delta(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .map(|&[coef, res, lin, quad]| {
                let s = t * lin + t * t * quad;
                coef * s * (2.0 * res + s)
            })
            .sum()
    }
}

pub fn bm_objective(x: &Factor, inst: &Instance) -> Result<f64> {
    let p = BmProblem::new(inst);
    p.check(x)?;
    Ok(p.objective(x))
}

pub fn bm_gradient(x: &Factor, inst: &Instance) -> Result<Factor> {
    let p = BmProblem::new(inst);
    p.check(x)?;
    Ok(p.gradient(x))
}

pub fn bm_hessian(x: &Factor, inst: &Instance) -> Result<SymMat> {
    let p = BmProblem::new(inst);
    p.check(x)?;
    Ok(p.hessian(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdStatus {
    Converged,
    MaxIters,
    /// Line search could not find a decrease above the step floor.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct GdRun {
    pub x: Factor,
    pub iters: usize,
    pub status: GdStatus,
    pub objective_start: f64,
    pub objective_end: f64,
    pub grad_norm: f64,
    /// Objective after each accepted step (only with `record_trace`).
    pub objectives: Vec<f64>,
    /// Accepted `f(X_{k+1}) − f(X_k)` values from the line model (only with `record_trace`).
    pub decreases: Vec<f64>,
}

const MIN_STEP: f64 = 1e-30;
const MAX_STEP: f64 = 1e12;

pub fn solve_gd(inst: &Instance, x0: &Factor, opts: &BmOptions) -> Result<GdRun> {
    opts.validate()?;
    let p = BmProblem::new(inst);
    p.check(x0)?;
    run_gd(&p, x0.clone(), opts)
}

fn run_gd(p: &BmProblem, mut x: Factor, opts: &BmOptions) -> Result<GdRun> {
    let f0 = p.objective(&x);
    if !f0.is_finite() {
        return Err(Error::Divergence("initial objective is not finite".into()));
    }
    let mut f = f0;
    let mut g = p.gradient(&x);
    let mut gn2 = g.norm_squared();
    let mut trial = 1.0 / p.mstar_norm.max(1.0);
    let mut objectives = Vec::new();
    let mut decreases = Vec::new();
    let mut status = GdStatus::MaxIters;
    let mut iters = 0;
    while iters < opts.max_iters {
        if gn2.sqrt() <= opts.grad_tol {
            status = GdStatus::Converged;
            break;
        }
        let d = -&g;
        let (t, delta) = match opts.step_rule {
            StepRule::Fixed { alpha } => (alpha, None),
            StepRule::Backtracking { beta, c } => {
                let model = p.line_model(&x, &d);
                let mut t = trial;
                loop {
                    let df = model.delta(t);
                    if df.is_finite() && df <= -c * t * gn2 {
                        break (t, Some(df));
                    }
                    t *= beta;
                    if t < MIN_STEP {
                        break (0.0, None);
                    }
                }
            }
        };
        if t == 0.0 {
            status = GdStatus::Stalled;
            break;
        }
        let x_new = &x + t * &d;
        let f_new = p.objective(&x_new);
        if !f_new.is_finite() {
            return Err(Error::Divergence(format!(
                "objective became non-finite at iteration {}",
                iters + 1
            )));
        }
        let g_new = p.gradient(&x_new);
        // Barzilai-Borwein trial for the next iteration: s·s / s·y.
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        trial = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(MIN_STEP * 1e6, MAX_STEP)
        } else {
            (2.0 * t).min(MAX_STEP)
        };
        if opts.record_trace {
            objectives.push(f_new);
            decreases.push(delta.unwrap_or(f_new - f));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        gn2 = g.norm_squared();
        iters += 1;
    }
    Ok(GdRun {
        x,
        iters,
        status,
        objective_start: f0,
        objective_end: f,
        grad_norm: gn2.sqrt(),
        objectives,
        decreases,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    NotConverged,
    FirstOrderOnly,
    SecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    Global,
    Spurious,
}

impl PointClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PointClass::NotConverged => "not_converged",
            PointClass::FirstOrderOnly => "first_order_only",
            PointClass::SecondOrder => "second_order",
        }
    }
}

impl Recovery {
    pub fn as_str(self) -> &'static str {
        match self {
            Recovery::Global => "global",
            Recovery::Spurious => "spurious",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub objective: f64,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub class: PointClass,
    pub recovery: Recovery,
    pub frob_gap: f64,
}

fn classify_with(p: &BmProblem, x: &Factor, tols: &Tolerances) -> CriticalityReport {
    let grad_norm = p.gradient(x).norm();
    let h = p.hessian(x);
    let hess_min_eig = match sym_eig(&h, OrderMode::DescendingSigned) {
        Ok(e) => *e.eigenvalues.last().expect("non-empty Hessian"),
        Err(_) => f64::NAN,
    };
    let class = if !(grad_norm <= tols.grad_tol) {
        PointClass::NotConverged
    } else if !(hess_min_eig >= -tols.hess_tol) {
        PointClass::FirstOrderOnly
    } else {
        PointClass::SecondOrder
    };
    let frob_gap = p.frob_gap(x);
    CriticalityReport {
        objective: p.objective(x),
        grad_norm,
        hess_min_eig,
        class,
        recovery: if frob_gap <= tols.recovery_tol {
            Recovery::Global
        } else {
            Recovery::Spurious
        },
        frob_gap,
    }
}

pub fn classify_point(x: &Factor, inst: &Instance, tols: &Tolerances) -> Result<CriticalityReport> {
    let p = BmProblem::new(inst);
    p.check(x)?;
    Ok(classify_with(&p, x, tols))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub iters: usize,
    pub status: GdStatus,
    pub report: CriticalityReport,
    #[serde(skip)]
    pub x: Factor,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    /// Trial index of the first member, whose `XXᵀ` is the cluster center.
    pub representative: usize,
    pub size: usize,
    pub recovery: Recovery,
}

#[derive(Clone, Debug, Serialize)]
pub struct LandscapeSummary {
    pub trials: usize,
    pub success_rate: f64,
    pub second_order: usize,
    pub clusters: Vec<Cluster>,
    pub spurious_clusters: usize,
    pub reports: Vec<TrialReport>,
}

#[derive(Clone, Debug)]
pub enum InitRule {
    Gaussian,
    Fixed(Factor),
}

fn run_trial(p: &BmProblem, trial: usize, init: &InitRule, opts: &BmOptions) -> TrialReport {
    let seed = opts.seed ^ trial as u64;
    let scale = opts.init_scale.unwrap_or_else(|| p.default_init_scale());
    let x0 = match init {
        InitRule::Gaussian => p.random_init(scale, seed),
        InitRule::Fixed(x) => x.clone(),
    };
    let tols = opts.tolerances();
    let diverged = |x: Factor| TrialReport {
        trial,
        seed,
        iters: opts.max_iters,
        status: GdStatus::MaxIters,
        report: CriticalityReport {
            objective: f64::INFINITY,
            grad_norm: f64::INFINITY,
            hess_min_eig: f64::NAN,
            class: PointClass::NotConverged,
            recovery: Recovery::Spurious,
            frob_gap: f64::INFINITY,
        },
        x,
    };
    let run = match run_gd(p, x0.clone(), opts) {
        Ok(run) => run,
        Err(_) => return diverged(x0),
    };
    let mut iters = run.iters;
    let mut status = run.status;
    let mut x = run.x;
    let mut report = classify_with(p, &x, &tols);
    if opts.jitter_restart && report.class == PointClass::FirstOrderOnly {
        let jitter = p.random_init(1e-6 * scale, seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        if let Ok(again) = run_gd(p, &x + jitter, opts) {
            iters += again.iters;
            status = again.status;
            x = again.x;
            report = classify_with(p, &x, &tols);
        }
    }
    TrialReport {
        trial,
        seed,
        iters,
        status,
        report,
        x,
    }
}

/// Runs `trials` independent descents in parallel and merges the results in
/// trial order. Trial `t` uses seed `opts.seed ^ t`.
pub fn monte_carlo(
    inst: &Instance,
    trials: usize,
    init: &InitRule,
    opts: &BmOptions,
) -> Result<LandscapeSummary> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    opts.validate()?;
    let p = BmProblem::new(inst);
    if let InitRule::Fixed(x) = init {
        p.check(x)?;
    }
    let reports: Vec<TrialReport> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(&p, t, init, opts))
        .collect();

    let radius = opts.cluster_tol * p.mstar_norm.max(f64::MIN_POSITIVE);
    let mut centers: Vec<SymMat> = Vec::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for rep in reports
        .iter()
        .filter(|r| r.report.class == PointClass::SecondOrder)
    {
        let m = SymMat::gram(&rep.x);
        match centers
            .iter()
            .position(|c| (c - &m).frobenius_norm() <= radius)
        {
            Some(k) => clusters[k].size += 1,
            None => {
                centers.push(m);
                clusters.push(Cluster {
                    representative: rep.trial,
                    size: 1,
                    recovery: rep.report.recovery,
                });
            }
        }
    }
    let successes = reports
        .iter()
        .filter(|r| r.report.recovery == Recovery::Global)
        .count();
    Ok(LandscapeSummary {
        trials,
        success_rate: successes as f64 / trials as f64,
        second_order: clusters.iter().map(|c| c.size).sum(),
        spurious_clusters: clusters
            .iter()
            .filter(|c| c.recovery == Recovery::Spurious)
            .count(),
        clusters,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_chain, gen_cycle};

    fn col(v: &[f64]) -> Factor {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn objective_values() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(bm_objective(&chain.xstar, &chain).unwrap(), 0.0);
        assert_eq!(bm_objective(&col(&[0.0; 3]), &chain).unwrap(), 2.75);
        let cycle = gen_cycle(&[1.0, 1.0, 3.0]).unwrap();
        assert_eq!(bm_objective(&col(&[0.0; 3]), &cycle).unwrap(), 9.5);
        assert!(matches!(
            bm_objective(&col(&[0.0; 2]), &chain),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn chain_gradient_entry() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let g = bm_gradient(&col(&[1.0, 1.0, 1.0]), &chain).unwrap();
        assert_eq!(g[(2, 0)], -1.0);
        assert_eq!(bm_gradient(&chain.xstar, &chain).unwrap().norm(), 0.0);
    }

    #[test]
    fn chain_hessian_table() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let h = bm_hessian(&chain.xstar, &chain).unwrap();
        assert_eq!([h[(0, 0)], h[(1, 1)], h[(2, 2)]], [3.0, 5.0, 1.0]);
        assert_eq!(h[(1, 2)], 2.0);
        assert_eq!(h[(0, 1)], 1.0);
        assert_eq!(h[(0, 2)], 0.0);
    }

    #[test]
    fn classify_truth_and_sign_flip() {
        let chain = gen_chain(&[1.0, -1.5, 2.0]).unwrap();
        let tols = Tolerances::default();
        for x in [chain.xstar.clone(), -chain.xstar.clone()] {
            let rep = classify_point(&x, &chain, &tols).unwrap();
            assert_eq!(rep.class, PointClass::SecondOrder);
            assert_eq!(rep.recovery, Recovery::Global);
        }
    }

    #[test]
    fn zero_entry_stationary_point_is_strict_saddle() {
        // Zero at index 1 of a 4-chain; the tail alternates ∓α^{±1} x*.
        let xs = [1.0, 1.5, 2.0, 0.8];
        let chain = gen_chain(&xs).unwrap();
        let alpha = (xs[0] / xs[2]).powi(2);
        let x = col(&[xs[0], 0.0, -alpha * xs[2], -xs[3] / alpha]);
        let rep = classify_point(&x, &chain, &Tolerances::default()).unwrap();
        assert!(rep.grad_norm < 1e-12, "{rep:?}");
        assert_eq!(rep.class, PointClass::FirstOrderOnly);
        assert!(rep.hess_min_eig < -1e-7);
    }

    #[test]
    fn zero_init_stays_at_saddle() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let run = solve_gd(&chain, &col(&[0.0; 3]), &BmOptions::default()).unwrap();
        assert_eq!(run.iters, 0);
        assert_eq!(run.status, GdStatus::Converged);
        let rep = classify_point(&run.x, &chain, &Tolerances::default()).unwrap();
        assert_eq!(rep.class, PointClass::FirstOrderOnly);
        assert!(rep.hess_min_eig < 0.0);
    }

    #[test]
    fn gd_from_near_truth_converges() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let x0 = col(&[1.1, 0.9, 2.1]);
        let opts = BmOptions {
            record_trace: true,
            ..Default::default()
        };
        let run = solve_gd(&chain, &x0, &opts).unwrap();
        assert_eq!(run.status, GdStatus::Converged);
        let p = BmProblem::new(&chain);
        assert!(p.frob_gap(&run.x) < 1e-8);
        assert!(run.decreases.iter().all(|d| *d <= 0.0));
        let mut prev = run.objective_start;
        for f in &run.objectives {
            assert!(*f <= prev + 1e-15 * prev.abs().max(1e-300));
            prev = *f;
        }
    }

    #[test]
    fn fixed_step_divergence_reported() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let opts = BmOptions {
            step_rule: StepRule::Fixed { alpha: 10.0 },
            ..Default::default()
        };
        assert!(matches!(
            solve_gd(&chain, &col(&[3.0, 3.0, 3.0]), &opts),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn monte_carlo_fixed_truth() {
        let chain = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let s = monte_carlo(&chain, 1, &InitRule::Fixed(chain.xstar.clone()), &BmOptions::default())
            .unwrap();
        assert_eq!(s.success_rate, 1.0);
        assert_eq!(s.clusters.len(), 1);
        assert!(monte_carlo(&chain, 0, &InitRule::Gaussian, &BmOptions::default()).is_err());
    }

    #[test]
    fn monte_carlo_chain_all_global() {
        let chain = gen_chain(&[1.0, -0.7, 1.3, 2.0]).unwrap();
        let opts = BmOptions {
            seed: 42,
            ..Default::default()
        };
        let s = monte_carlo(&chain, 100, &InitRule::Gaussian, &opts).unwrap();
        // Some trajectories slide off to infinity along a valley of the
        // non-coercive objective; none may stop at a spurious second-order point.
        assert!(s.success_rate > 0.5);
        assert_eq!(s.spurious_clusters, 0);
        for r in &s.reports {
            if r.report.class == PointClass::SecondOrder {
                assert_eq!(r.report.recovery, Recovery::Global);
            }
        }
        for (k, r) in s.reports.iter().enumerate() {
            assert_eq!(r.trial, k);
            assert_eq!(r.seed, 42 ^ k as u64);
        }
    }

    #[test]
    fn options_validation() {
        let bad = BmOptions {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BmOptions {
            step_rule: StepRule::Backtracking { beta: 1.5, c: 1e-4 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
