//! Dense primal-dual interior-point method for
//!
//! ```text
//! minimize tr(M)  subject to  A(M) = b,  M ⪰ 0
//! ```
//!
//! with dual `maximize bᵀy  subject to  A*(y) + S = I,  S ⪰ 0`.
//!
//! Search directions are HKM (`ΔX = sym((R_c − XΔS)S⁻¹)`) with a Mehrotra
//! predictor-corrector step. The Schur complement `B_kl = tr(A_k X A_l S⁻¹)`
//! is factored by dense Cholesky.
//!
//! Constraints are normalized before solving: an observed diagonal entry
//! becomes `⟨E_ii, M⟩ = M_ii`, an off-diagonal pair becomes
//! `⟨(E_ij + E_ji)/√2, M⟩ = √2·M_ij`, and general sensing matrices are scaled
//! to unit Frobenius norm. The dual vector `y` refers to these normalized rows.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instances::{Instance, MeasurementOp};
use crate::linalg::SymMat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    pub max_iters: usize,
    /// Centering parameter used when `predictor_corrector` is off.
    pub mu_reduction: f64,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub step_fraction: f64,
    pub predictor_corrector: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            mu_reduction: 0.1,
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            step_fraction: 0.98,
            predictor_corrector: true,
        }
    }
}

impl SdpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_reduction > 0.0 && self.mu_reduction < 1.0) {
            return invalid("mu_reduction must lie in (0,1)");
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return invalid("step_fraction must lie in (0,1)");
        }
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        Ok(())
    }
}

/// A symmetric constraint matrix stored as ordered entries `(p, q, value)`;
/// off-diagonal positions appear twice.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub entries: Vec<(usize, usize, f64)>,
}

impl Constraint {
    fn inner(&self, g: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(p, q, a)| a * g[(p, q)]).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub n: usize,
    pub rows: Vec<Constraint>,
    pub rhs: Vec<f64>,
}

impl ConstraintSystem {
    pub fn from_instance(inst: &Instance) -> Result<Self> {
        let n = inst.n;
        let mut rows = Vec::with_capacity(inst.b.len());
        let mut rhs = Vec::with_capacity(inst.b.len());
        match &inst.op {
            MeasurementOp::General { sensing } => {
                for (k, (a, &bk)) in sensing.iter().zip(&inst.b).enumerate() {
                    let norm = a.frobenius_norm();
                    if norm == 0.0 {
                        return invalid(format!("sensing matrix {k} is zero"));
                    }
                    let entries = (0..n)
                        .flat_map(|p| (0..n).map(move |q| (p, q)))
                        .filter(|&(p, q)| a[(p, q)] != 0.0)
                        .map(|(p, q)| (p, q, a[(p, q)] / norm))
                        .collect();
                    rows.push(Constraint { entries });
                    rhs.push(bk / norm);
                }
            }
            op => {
                let meas = op.entry_measurements(n).expect("entry-based operator");
                for ((i, j, s), &bk) in meas.into_iter().zip(&inst.b) {
                    let value = bk / s;
                    if i == j {
                        rows.push(Constraint {
                            entries: vec![(i, i, 1.0)],
                        });
                        rhs.push(value);
                    } else {
                        let v = std::f64::consts::FRAC_1_SQRT_2;
                        rows.push(Constraint {
                            entries: vec![(i, j, v), (j, i, v)],
                        });
                        rhs.push(std::f64::consts::SQRT_2 * value);
                    }
                }
            }
        }
        Ok(Self { n, rows, rhs })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `A(G)`; a non-symmetric argument acts through its symmetric part.
    pub fn apply(&self, g: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|c| c.inner(g)))
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (c, &yk) in self.rows.iter().zip(y.iter()) {
            for &(p, q, a) in &c.entries {
                out[(p, q)] += yk * a;
            }
        }
        out
    }

    /// `B_kl = tr(A_k X A_l W)`.
    fn schur(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let d = self.rows.len();
        let mut b = DMatrix::zeros(d, d);
        let mut g = DMatrix::zeros(n, n);
        for (l, cl) in self.rows.iter().enumerate() {
            g.fill(0.0);
            for &(i, j, c) in &cl.entries {
                // G += c · X[:, i] W[j, :]
                for q in 0..n {
                    let wq = c * w[(j, q)];
                    if wq != 0.0 {
                        for p in 0..n {
                            g[(p, q)] += x[(p, i)] * wq;
                        }
                    }
                }
            }
            for (k, ck) in self.rows.iter().enumerate() {
                // tr(A_k G) = Σ a · G[q, p]
                b[(k, l)] = ck.entries.iter().map(|&(p, q, a)| a * g[(q, p)]).sum();
            }
        }
        let bt = b.transpose();
        (b + bt) * 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    MaxIters,
    InfeasibleDetected,
}

impl SdpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::MaxIters => "max_iters",
            SdpStatus::InfeasibleDetected => "infeasible_detected",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    /// `|yᵀR_p| + |⟨X, R_d⟩|`: how far weak duality may be off at an infeasible iterate.
    pub infeasibility_slack: f64,
}

#[derive(Clone, Debug)]
pub struct SdpResult {
    pub m_opt: SymMat,
    pub y: Vec<f64>,
    pub s: SymMat,
    pub primal_res: f64,
    pub dual_res: f64,
    /// `⟨M, S⟩`.
    pub duality_gap: f64,
    pub status: SdpStatus,
    pub iters: usize,
    pub history: Vec<IterRecord>,
}

impl SdpResult {
    pub fn trace(&self) -> f64 {
        self.m_opt.trace()
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest `α` with `X + αΔ ⪰ 0`, or `∞` when every step stays feasible.
fn max_step(x: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(x.clone())
        .ok_or_else(|| Error::NumericalFailure("iterate lost positive definiteness".into()))?;
    let l = chol.l();
    let linv_d = l
        .solve_lower_triangular(delta)
        .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&linv_d.transpose())
        .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    let lmin = SymmetricEigen::new(sym(&m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

struct SchurFactor {
    b: DMatrix<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl SchurFactor {
    fn new(b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() == 0 {
            return Ok(Self { b, chol: None });
        }
        if let Some(c) = Cholesky::new(b.clone()) {
            return Ok(Self { b, chol: Some(c) });
        }
        let scale = b.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut ridge = 1e-14 * scale;
        while ridge <= 1e-6 * scale {
            let mut shifted = b.clone();
            for k in 0..shifted.nrows() {
                shifted[(k, k)] += ridge;
            }
            if let Some(c) = Cholesky::new(shifted) {
                return Ok(Self { b, chol: Some(c) });
            }
            ridge *= 100.0;
        }
        Err(Error::NumericalFailure(
            "Schur complement is not positive definite even after ridge regularization".into(),
        ))
    }

    /// Cholesky solve followed by one step of iterative refinement.
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => {
                let mut x = c.solve(rhs);
                let r = rhs - &self.b * &x;
                x += c.solve(&r);
                x
            }
            None => rhs.clone(),
        }
    }
}

struct Direction {
    dx: DMatrix<f64>,
    dy: DVector<f64>,
    dz: DMatrix<f64>,
}

const POLISH_TARGET: f64 = 1e-2;
const STALL_LIMIT: usize = 3;

pub fn solve_sdp(inst: &Instance, opts: &SdpOptions) -> Result<SdpResult> {
    let sys = ConstraintSystem::from_instance(inst)?;
    solve_system(&sys, opts)
}

pub fn solve_system(sys: &ConstraintSystem, opts: &SdpOptions) -> Result<SdpResult> {
    opts.validate()?;
    let n = sys.n;
    let d = sys.len();
    let nf = n as f64;
    let rhs = DVector::from_column_slice(&sys.rhs);
    let b_norm = rhs.norm();
    let eye = DMatrix::<f64>::identity(n, n);
    let tau = rhs.amax().max(1.0);

    let mut x = &eye * tau;
    let mut y = DVector::zeros(d);
    let mut z = eye.clone();
    let mut history = Vec::new();
    let mut iters = 0;
    // Best iterate so far by `max(primal_res/feas_tol, dual_res/feas_tol, gap/gap_tol)`.
    let mut best: Option<(f64, usize, DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = None;
    let mut since_best = 0;
    let mut failure = None;

    let status = loop {
        let rp = &rhs - sys.apply(&x);
        let rd = &eye - sys.adjoint(&y) - &z;
        let gap = inner(&x, &z);
        let primal_res = rp.norm();
        let dual_res = rd.norm();
        let dual_obj = rhs.dot(&y);
        history.push(IterRecord {
            primal_obj: x.trace(),
            dual_obj,
            primal_res,
            dual_res,
            gap,
            infeasibility_slack: y.dot(&rp).abs() + inner(&x, &rd).abs(),
        });
        let merit = (primal_res / opts.feas_tol)
            .max(dual_res / opts.feas_tol)
            .max(gap.max(0.0) / opts.gap_tol);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, iters, x.clone(), y.clone(), z.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        // Keep polishing past the tolerances until progress stalls.
        if merit <= POLISH_TARGET {
            break SdpStatus::Optimal;
        }
        if dual_obj > 1e12 * (1.0 + b_norm) {
            break SdpStatus::InfeasibleDetected;
        }
        // Rounding noise has taken over once the merit stops improving.
        if iters >= opts.max_iters || since_best >= STALL_LIMIT {
            break SdpStatus::MaxIters;
        }
        match newton_step(sys, opts, &x, &y, &z, &rp, &rd, gap / nf) {
            Ok((nx, ny, nz)) => {
                x = nx;
                y = ny;
                z = nz;
                iters += 1;
            }
            Err(e) => {
                failure = Some(e);
                break SdpStatus::MaxIters;
            }
        }
    };

    let (merit, best_iter, bx, by, bz) = best.expect("at least one iterate");
    let status = match status {
        SdpStatus::InfeasibleDetected => status,
        _ if merit <= 1.0 => SdpStatus::Optimal,
        _ => match failure {
            Some(e) => return Err(e),
            None => SdpStatus::MaxIters,
        },
    };
    let rec = history[best_iter];
    Ok(SdpResult {
        m_opt: SymMat::from_matrix(bx).expect("square iterate"),
        y: by.iter().cloned().collect(),
        s: SymMat::from_matrix(bz).expect("square iterate"),
        primal_res: rec.primal_res,
        dual_res: rec.dual_res,
        duality_gap: rec.gap,
        status,
        iters: best_iter,
        history: history[..=best_iter].to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
fn newton_step(
    sys: &ConstraintSystem,
    opts: &SdpOptions,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    rp: &DVector<f64>,
    rd: &DMatrix<f64>,
    mu: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = sys.n;
    let eye = DMatrix::<f64>::identity(n, n);
    let w = Cholesky::new(z.clone())
        .ok_or_else(|| Error::NumericalFailure("dual slack lost positive definiteness".into()))?
        .inverse();
    let w = sym(&w);
    let schur = SchurFactor::new(sys.schur(x, &w))?;
    let x_rd_w = x * rd * &w;
    let direction = |rc: &DMatrix<f64>| -> Direction {
        let rhs_y = rp - sys.apply(&(rc * &w)) + sys.apply(&x_rd_w);
        let dy = schur.solve(&rhs_y);
        let dz = sym(&(rd - sys.adjoint(&dy)));
        let dx = sym(&((rc - x * &dz) * &w));
        Direction { dx, dy, dz }
    };
    let xz = x * z;
    let step = if opts.predictor_corrector {
        let aff = direction(&(-&xz));
        let ap = max_step(x, &aff.dx)?.min(1.0);
        let ad = max_step(z, &aff.dz)?.min(1.0);
        let mu_aff = inner(&(x + ap * &aff.dx), &(z + ad * &aff.dz)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        direction(&(&eye * (sigma * mu) - &xz - &aff.dx * &aff.dz))
    } else {
        direction(&(&eye * (opts.mu_reduction * mu) - &xz))
    };
    let ap = (opts.step_fraction * max_step(x, &step.dx)?).min(1.0);
    let ad = (opts.step_fraction * max_step(z, &step.dz)?).min(1.0);
    Ok((
        sym(&(x + ap * &step.dx)),
        y + ad * &step.dy,
        sym(&(z + ad * &step.dz)),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecoveryVerdict {
    pub recovered: bool,
    /// `‖M − M*‖_F / ‖M*‖_F` (absolute when `M* = 0`).
    pub frob_gap: f64,
    /// `tr(M*) − tr(M)`.
    pub trace_gap: f64,
}

pub fn recovery_check(res: &SdpResult, mstar: &SymMat, tol: f64) -> Result<RecoveryVerdict> {
    if res.m_opt.n() != mstar.n() {
        return invalid("dimension mismatch between solution and ground truth");
    }
    let diff = (&res.m_opt - mstar).frobenius_norm();
    let scale = mstar.frobenius_norm();
    let frob_gap = if scale > 0.0 { diff / scale } else { diff };
    Ok(RecoveryVerdict {
        recovered: frob_gap <= tol,
        frob_gap,
        trace_gap: mstar.trace() - res.m_opt.trace(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktReport {
    /// `‖A(M) − b‖₂` in the instance's own measurement scaling.
    pub primal_res: f64,
    /// `‖A*(y) + S − I‖_F` over the normalized constraint rows.
    pub dual_res: f64,
    /// `⟨M, S⟩`.
    pub complementarity: f64,
}

pub fn kkt_residuals(res: &SdpResult, inst: &Instance) -> Result<KktReport> {
    let sys = ConstraintSystem::from_instance(inst)?;
    if res.y.len() != sys.len() || res.m_opt.n() != inst.n || res.s.n() != inst.n {
        return invalid("result does not match the instance dimensions");
    }
    let am = inst.op.apply(&res.m_opt);
    let primal_res = am
        .iter()
        .zip(&inst.b)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let y = DVector::from_column_slice(&res.y);
    let eye = DMatrix::<f64>::identity(inst.n, inst.n);
    let dual_res = (sys.adjoint(&y) + res.s.as_matrix() - eye).norm();
    Ok(KktReport {
        primal_res,
        dual_res,
        complementarity: inner(res.m_opt.as_matrix(), res.s.as_matrix()),
    })
}
