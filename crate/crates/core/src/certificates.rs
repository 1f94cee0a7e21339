//! Explicit feasible points with trace below `tr(M*)` for chain and odd-cycle
//! completion instances. Each one is a witness that trace minimization cannot
//! return the ground truth, provided it passes [`verify_certificate`].
//!
//! Constructions work on `|x*|` and are mapped back with `D·M̂·D`,
//! `D = diag(sign x*)`, which preserves observed products, PSD-ness and trace.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::instances::{gen_chain, gen_cycle, unordered, Instance, OpKind, Pair};
use crate::linalg::{pivoted_cholesky_psd, SymMat, PSD_TOL};

/// Relative tolerance for matching observed entries (rounding of products like
/// `(|x_j x_k| − x_j²) + x_j²`).
pub const ENTRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub family: String,
    pub m_hat: SymMat,
    pub feasible: bool,
    /// `λ_min(M̂)`.
    pub psd_margin: f64,
    /// Pivoted-Cholesky PSD verdict, kept next to the eigenvalue one.
    pub psd_cholesky: bool,
    /// Largest `|A(M̂) − b|` over the measurements.
    pub entry_residual: f64,
    pub trace_hat: f64,
    pub trace_star: f64,
    pub strict: bool,
}

fn signs(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect()
}

fn abs(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.abs()).collect()
}

/// `D·M·D` with `D = diag(sign x)`.
fn resign(m: DMatrix<f64>, x: &[f64]) -> SymMat {
    let s = signs(x);
    let n = m.nrows();
    SymMat::from_matrix(DMatrix::from_fn(n, n, |i, j| s[i] * s[j] * m[(i, j)])).expect("square")
}

fn strictly_below(hat: f64, star: f64) -> bool {
    hat < star - 1e-12 * star.abs().max(1.0)
}

/// Re-derives every verdict of `cert` against `inst`. Disagreement is
/// reported through `feasible = false`, never as an error.
pub fn verify_certificate(cert: &Certificate, inst: &Instance) -> Result<Certificate> {
    if cert.m_hat.n() != inst.n {
        return invalid(format!(
            "certificate is {}x{}, instance is {}x{}",
            cert.m_hat.n(),
            cert.m_hat.n(),
            inst.n,
            inst.n
        ));
    }
    let m = &cert.m_hat;
    let measured = inst.op.apply(m);
    let scale = inst.b.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let entry_residual = measured
        .iter()
        .zip(&inst.b)
        .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    let psd_margin = m.min_eigenvalue();
    let psd_eig = psd_margin >= -PSD_TOL;
    let psd_cholesky = pivoted_cholesky_psd(m, PSD_TOL);
    let trace_hat = m.trace();
    let trace_star = inst.mstar().trace();
    Ok(Certificate {
        family: cert.family.clone(),
        m_hat: m.clone(),
        feasible: m.is_finite() && entry_residual <= ENTRY_TOL * scale && psd_eig && psd_cholesky,
        psd_margin,
        psd_cholesky,
        entry_residual,
        trace_hat,
        trace_star,
        strict: strictly_below(trace_hat, trace_star),
    })
}

fn finish(family: &str, m_hat: SymMat, inst: &Instance) -> Result<Certificate> {
    let draft = Certificate {
        family: family.to_string(),
        m_hat,
        feasible: false,
        psd_margin: f64::NAN,
        psd_cholesky: false,
        entry_residual: f64::NAN,
        trace_hat: f64::NAN,
        trace_star: f64::NAN,
        strict: false,
    };
    verify_certificate(&draft, inst)
}

/// `M̂ = yyᵀ + zzᵀ` on the chain instance of `xstar`, with `y = |x*|` except
/// `y_k = |x*_j|` and `z_j = z_k = (|x_j x_k| − x_j²)^{1/2}`. Needs
/// `j, k ≥ 2`, `j ≠ k` and `|x*_k| ≥ |x*_j| > 0`.
pub fn chain_certificate(xstar: &[f64], j: usize, k: usize) -> Result<Certificate> {
    let n = xstar.len();
    if j < 2 || k < 2 || j == k || j >= n || k >= n {
        return invalid(format!("need distinct j, k in 2..{n}, got j={j}, k={k}"));
    }
    let a = abs(xstar);
    if !(a[j] > 0.0 && a[k] >= a[j]) {
        return invalid(format!("need |x_k| >= |x_j| > 0, got {} and {}", a[k], a[j]));
    }
    let inst = gen_chain(xstar)?;
    let mut y = DVector::from_column_slice(&a);
    y[k] = a[j];
    let mut z = DVector::zeros(n);
    let zz = (a[j] * a[k] - a[j] * a[j]).max(0.0).sqrt();
    z[j] = zz;
    z[k] = zz;
    let m = &y * y.transpose() + &z * z.transpose();
    finish("chain", resign(m, xstar), &inst)
}

/// Rank-1 `M̂ = yyᵀ` on the odd cycle of `xstar`. With node 0 placed at each
/// rotation in turn, `M̂₀₀ = x₀²·(Σ_odd / Σ_even)^{1/2}` is the trace-optimal
/// diagonal once `Σ_odd > Σ_even`; the cheapest qualifying rotation is kept.
pub fn cycle_certificate(xstar: &[f64]) -> Result<Certificate> {
    let inst = gen_cycle(xstar)?;
    let n = xstar.len();
    let a = abs(xstar);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in 0..n {
        let node = |i: usize| (s + i) % n;
        let odd: f64 = (1..n).step_by(2).map(|i| a[node(i)].powi(2)).sum();
        let even: f64 = (0..n).step_by(2).map(|i| a[node(i)].powi(2)).sum();
        if odd <= even {
            continue;
        }
        let x0 = a[s];
        let m00 = x0 * x0 * (odd / even).sqrt();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            y[node(i)] = match i {
                0 => m00.sqrt(),
                _ if i % 2 == 1 => a[node(i)] * x0 / m00.sqrt(),
                _ => a[node(i)] / x0 * m00.sqrt(),
            };
        }
        let trace = y.norm_squared();
        if best.as_ref().is_none_or(|(t, _)| trace < *t) {
            best = Some((trace, y));
        }
    }
    let Some((_, y)) = best else {
        return Err(Error::ConditionNotMet(
            "odd-position mass never exceeds even-position mass".into(),
        ));
    };
    finish("cycle", resign(&y * y.transpose(), xstar), &inst)
}

/// Three-node chain: `M̂₁₁ = M̂₂₂ = |x₁x₂|`, `M̂₀₂ = |x₀x₁|`, the rest copied from `M*`.
pub fn example1_certificate(xstar: &[f64]) -> Result<Certificate> {
    if xstar.len() != 3 {
        return invalid("example1 needs exactly three entries");
    }
    let inst = gen_chain(xstar)?;
    let a = abs(xstar);
    if a[2] < a[1] {
        return Err(Error::ConditionNotMet(format!(
            "|x_2| = {} is below |x_1| = {}",
            a[2], a[1]
        )));
    }
    let (p, q) = (a[0] * a[1], a[1] * a[2]);
    let m = DMatrix::from_row_slice(3, 3, &[a[0] * a[0], p, p, p, q, q, p, q, q]);
    finish("example1", resign(m, xstar), &inst)
}

/// Three-cycle: with `|x|` sorted as `a ≤ b ≤ c`, diagonal
/// `(a(c − b), b(c − a), c(a + b))` and observed off-diagonals.
pub fn example2_certificate(xstar: &[f64]) -> Result<Certificate> {
    if xstar.len() != 3 {
        return invalid("example2 needs exactly three entries");
    }
    let inst = gen_cycle(xstar)?;
    let a = abs(xstar);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));
    let [p, q, r] = order.map(|i| a[i]);
    if r < p + q {
        return Err(Error::ConditionNotMet(format!(
            "largest entry {r} is below the sum {} of the others",
            p + q
        )));
    }
    let diag = [p * (r - q), q * (r - p), r * (p + q)];
    let mut m = DMatrix::from_fn(3, 3, |i, j| a[i] * a[j]);
    for (slot, &i) in order.iter().enumerate() {
        m[(i, i)] = diag[slot];
    }
    finish("example2", resign(m, xstar), &inst)
}

fn rank1_entries(inst: &Instance) -> Option<(Vec<f64>, &BTreeSet<Pair>)> {
    if inst.r != 1 || inst.op.kind() != OpKind::Omega {
        return None;
    }
    Some((inst.xstar.column(0).iter().copied().collect(), inst.op.omega_set()?))
}

fn chain_omega(n: usize) -> BTreeSet<Pair> {
    std::iter::once((0, 0)).chain((0..n - 1).map(|i| (i, i + 1))).collect()
}

fn cycle_omega(n: usize) -> BTreeSet<Pair> {
    (0..n).map(|i| unordered(i, (i + 1) % n)).collect()
}

fn rank(c: &Certificate) -> (bool, bool, f64) {
    (!c.feasible, !c.strict, c.trace_hat)
}

fn pick(cands: Vec<Certificate>) -> Option<Certificate> {
    cands
        .into_iter()
        .min_by(|a, b| {
            let (fa, sa, ta) = rank(a);
            let (fb, sb, tb) = rank(b);
            fa.cmp(&fb).then(sa.cmp(&sb)).then(ta.total_cmp(&tb))
        })
}

/// Picks a certificate family from the shape of `inst` and returns the best
/// candidate (feasible first, then strict, then lowest trace). Instances that
/// are not rank-1 chains or odd cycles give `NotApplicable`.
pub fn certify_instance(inst: &Instance) -> Result<Certificate> {
    let not_applicable = || Error::NotApplicable("no certificate family matches this instance".into());
    let (x, omega) = rank1_entries(inst).ok_or_else(not_applicable)?;
    let n = x.len();
    let mut cands = Vec::new();
    if n >= 2 && *omega == chain_omega(n) {
        if n == 3 {
            cands.extend(example1_certificate(&x).ok());
        }
        for j in 2..n {
            for k in 2..n {
                cands.extend(chain_certificate(&x, j, k).ok());
            }
        }
    } else if n >= 3 && n % 2 == 1 && *omega == cycle_omega(n) {
        if n == 3 {
            cands.extend(example2_certificate(&x).ok());
        }
        cands.extend(cycle_certificate(&x).ok());
    } else {
        return Err(not_applicable());
    }
    pick(cands).ok_or_else(|| Error::ConditionNotMet("no construction applies to this x*".into()))
}
