//! RIP lower-bound machinery: eigen-block decomposition of `M* − M`, the
//! analytic bound `2r / (n + (n − 2r)(2l − 5))`, the η(e) closed form with a
//! bisection cross-check, and the singular-value inequality for PSD pairs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::instances::MeasurementOp;
use crate::linalg::{psd_check, singular_values, sym_eig, vec, OrderMode, SymMat};

#[derive(Clone, Debug)]
pub struct EBlocks {
    pub n: usize,
    pub r: usize,
    /// `⌈n / r⌉`.
    pub l: usize,
    /// `vec(M* − M)`.
    pub e: Vec<f64>,
    /// `e_1, …, e_l`; block `i` collects eigenpairs `i·r .. min((i+1)·r, n)`
    /// in descending absolute order.
    pub blocks: Vec<Vec<f64>>,
    pub e_2r: Vec<f64>,
    pub e_c: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl EBlocks {
    pub fn e_norm2(&self) -> f64 {
        norm2(&self.e)
    }

    pub fn e_c_norm2(&self) -> f64 {
        norm2(&self.e_c)
    }
}

pub fn decompose_e(mstar: &SymMat, m: &SymMat, r: usize) -> Result<EBlocks> {
    let n = mstar.n();
    if m.n() != n {
        return invalid("M and M* differ in dimension");
    }
    if r == 0 || r > n {
        return invalid(format!("rank {r} outside 1..={n}"));
    }
    let diff = mstar - m;
    let eig = sym_eig(&diff, OrderMode::DescendingAbsolute)?;
    let l = n.div_ceil(r);
    let blocks: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            let mut acc = DMatrix::zeros(n, n);
            for k in i * r..((i + 1) * r).min(n) {
                let u = eig.eigenvectors.column(k);
                acc += eig.eigenvalues[k] * &u * u.transpose();
            }
            vec(&acc)
        })
        .collect();
    let zero = vec![0.0; n * n];
    let e_2r = add(&blocks[0], blocks.get(1).unwrap_or(&zero));
    let e_c = blocks
        .iter()
        .skip(2)
        .fold(zero, |acc, b| add(&acc, b));
    Ok(EBlocks {
        n,
        r,
        l,
        e: vec(diff.as_matrix()),
        blocks,
        e_2r,
        e_c,
        eigenvalues: eig.eigenvalues,
    })
}

fn check_rank_range(n: usize, r: usize) -> Result<()> {
    if r == 0 || 2 * r > n {
        return invalid(format!("need 1 <= r <= n/2, got n={n}, r={r}"));
    }
    Ok(())
}

/// `2r / (n + (n − 2r)(2l − 5))` with `l = ⌈n / r⌉`.
pub fn delta_lb_analytic(n: usize, r: usize) -> Result<f64> {
    check_rank_range(n, r)?;
    let l = n.div_ceil(r) as f64;
    let (n, r) = (n as f64, r as f64);
    Ok(2.0 * r / (n + (n - 2.0 * r) * (2.0 * l - 5.0)))
}

/// RIP constant below which trace minimization recovers every rank-r truth.
pub fn sdp_sufficient_rip(n: usize, r: usize) -> Result<f64> {
    Ok(delta_lb_analytic(n, r)?.max(0.5))
}

/// `(c², d²) = (2(l − 3)‖e_c‖², 2‖e_c‖²)`. `e_c` vanishes whenever `l < 3`.
fn cd2(eb: &EBlocks) -> (f64, f64) {
    let ec = eb.e_c_norm2();
    (2.0 * (eb.l as f64 - 3.0).max(0.0) * ec, 2.0 * ec)
}

fn nonzero(eb: &EBlocks) -> Result<()> {
    if eb.e_norm2() == 0.0 {
        return invalid("e is zero");
    }
    Ok(())
}

/// `min{1, (c² + d²) / (2‖e‖² + c² − d²)}`.
pub fn eta_closed_form(eb: &EBlocks) -> Result<f64> {
    nonzero(eb)?;
    let (c2, d2) = cd2(eb);
    let num = c2 + d2;
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok((num / (2.0 * eb.e_norm2() + c2 - d2)).min(1.0))
}

/// Minimum of `eᵀH̃e` over the operator interval `ηI ⪯ H̃ ⪯ I`. Every such
/// `H̃ − ηI` is PSD, so the minimum `η‖e‖²` is attained at `H̃ = ηI`.
fn interval_min(eta: f64, e_norm2: f64) -> f64 {
    eta * e_norm2
}

fn eta_feasible(eta: f64, eb: &EBlocks) -> bool {
    let (c2, d2) = cd2(eb);
    interval_min(eta, eb.e_norm2()) <= 0.5 * (1.0 - eta) * c2 + 0.5 * (1.0 + eta) * d2
}

/// Largest feasible η in [0, 1] found by bisection to width `tol`.
pub fn eta_numeric(eb: &EBlocks, tol: f64) -> Result<f64> {
    nonzero(eb)?;
    if !(tol > 0.0) {
        return invalid("tol must be positive");
    }
    if eta_feasible(1.0, eb) {
        return Ok(1.0);
    }
    if !eta_feasible(0.0, eb) || !eta_feasible(f64::MIN_POSITIVE, eb) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if eta_feasible(mid, eb) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub const ETA_TOL: f64 = 1e-12;

/// `(1 − η) / (1 + η)` with η from [`eta_numeric`].
pub fn delta_lb_numeric(eb: &EBlocks) -> Result<f64> {
    let eta = eta_numeric(eb, ETA_TOL)?;
    Ok((1.0 - eta) / (1.0 + eta))
}

pub const WEYL_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeylCheck {
    pub holds: bool,
    /// `Σ_{i≤r} σ_i − Σ_{i>r} σ_i` of `M* − M`.
    pub slack: f64,
}

/// Checks `σ_1 + … + σ_r ≥ σ_{r+1} + … + σ_n` for `M* − M`, after validating
/// that `M*` is PSD of rank `r`, `M` is PSD and `tr(M) ≤ tr(M*)`.
pub fn verify_weyl_lemma(mstar: &SymMat, m: &SymMat, r: usize) -> Result<WeylCheck> {
    let n = mstar.n();
    if m.n() != n || r == 0 || r > n {
        return invalid("dimension or rank out of range");
    }
    let scale = mstar.frobenius_norm().max(m.frobenius_norm()).max(1.0);
    let psd_tol = 1e-9 * scale;
    if !psd_check(mstar, psd_tol) || !psd_check(m, psd_tol) {
        return invalid("both matrices must be PSD");
    }
    let sv = singular_values(mstar.as_matrix());
    let rank_tol = 1e-8 * sv[0].max(1.0);
    let rank = sv.iter().filter(|s| **s > rank_tol).count();
    if rank != r {
        return invalid(format!("M* has numerical rank {rank}, expected {r}"));
    }
    if m.trace() > mstar.trace() + 1e-12 * scale {
        return invalid("tr(M) exceeds tr(M*)");
    }
    let s = singular_values((mstar - m).as_matrix());
    let head: f64 = s[..r].iter().sum();
    let tail: f64 = s[r..].iter().sum();
    let slack = head - tail;
    Ok(WeylCheck {
        holds: slack >= -WEYL_SLACK * scale,
        slack,
    })
}

/// Draws `M* = FFᵀ` with `F` an n×r Gaussian, and a Wishart `M` rescaled so
/// that `tr(M) = 0.9·tr(M*)`. `F` is redrawn until `σ_r(M*) > 1e-6·σ_1(M*)`.
pub fn sample_feasible_pair<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> (SymMat, SymMat) {
    assert!(r >= 1 && r <= n, "rank must lie in 1..=n");
    let mut gauss = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
    };
    let mstar = loop {
        let f: DMatrix<f64> = gauss(n, r);
        let sv = singular_values(&f);
        if sv[r - 1].powi(2) > 1e-6 * sv[0].powi(2) {
            break SymMat::gram(&f);
        }
    };
    let g: DMatrix<f64> = gauss(n, n);
    let w = SymMat::gram(&g);
    let scale = 0.9 * mstar.trace() / w.trace();
    let m = SymMat::from_matrix(w.into_matrix() * scale).expect("square");
    (mstar, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RipConstants {
    /// `(hi − lo) / (hi + lo)` for the extreme squared measurement scales,
    /// i.e. `|1 − ε²| / (1 + ε²)` when Ω and its complement are both nonempty.
    pub computed: f64,
    /// `(1 − ε) / (1 + ε)`, the value quoted alongside the scaled operator in the literature.
    pub quoted_formula: f64,
}

/// RIP constant of an ε-scaled entry operator after optimal normalization.
/// `‖A(M)‖² / ‖M‖²` over ordered entries ranges in `[lo, hi]` with `lo, hi`
/// the extreme squared scales, and `c·lo = 1 − δ`, `c·hi = 1 + δ` gives δ.
pub fn rip_constant_explicit(op: &MeasurementOp, n: usize) -> Result<RipConstants> {
    let MeasurementOp::OmegaScaled { epsilon, .. } = op else {
        return invalid("rip_constant_explicit needs an omega_scaled operator");
    };
    op.validate(n)?;
    let scales: Vec<f64> = op
        .entry_measurements(n)
        .expect("entry-based")
        .into_iter()
        .map(|(_, _, s)| s * s)
        .collect();
    let lo = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().cloned().fold(0.0, f64::max);
    Ok(RipConstants {
        computed: (hi - lo) / (hi + lo),
        quoted_formula: (1.0 - epsilon) / (1.0 + epsilon),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RipRow {
    pub n: usize,
    pub r: usize,
    pub l: usize,
    pub delta_lb_analytic: f64,
    pub theorem4_bound: f64,
}

/// One row per `(n, r)` with `1 <= r <= n/2`; pairs outside that range are skipped.
pub fn rip_table(ns: &[usize], rs: &[usize]) -> Vec<RipRow> {
    let mut rows = Vec::new();
    for &n in ns {
        for &r in rs {
            if let (Ok(lb), Ok(t4)) = (delta_lb_analytic(n, r), sdp_sufficient_rip(n, r)) {
                rows.push(RipRow {
                    n,
                    r,
                    l: n.div_ceil(r),
                    delta_lb_analytic: lb,
                    theorem4_bound: t4,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::instances::perturbed_operator;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn diag_pair(d: &[f64]) -> (SymMat, SymMat) {
        (SymMat::from_diagonal(d), SymMat::zeros(d.len()))
    }

    #[test]
    fn equal_matrices_give_zero_blocks() {
        let m = SymMat::from_diagonal(&[2.0, 1.0, 0.0]);
        let eb = decompose_e(&m, &m, 1).unwrap();
        assert!(eb.blocks.iter().all(|b| b.iter().all(|v| *v == 0.0)));
        assert!(matches!(eta_closed_form(&eb), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn diagonal_blocks() {
        let (a, b) = diag_pair(&[5.0, -3.0, 1.0]);
        let eb = decompose_e(&a, &b, 1).unwrap();
        assert_eq!(eb.l, 3);
        assert!((eb.eigenvalues[0] - 5.0).abs() < 1e-12);
        assert!((eb.eigenvalues[1] + 3.0).abs() < 1e-12);
        assert!((eb.e_c_norm2() - 1.0).abs() < 1e-12);
        assert!((eta_closed_form(&eb).unwrap() - 1.0 / 34.0).abs() < 1e-14);
        assert!((eta_numeric(&eb, 1e-10).unwrap() - 1.0 / 34.0).abs() < 1e-8);
        assert!((delta_lb_numeric(&eb).unwrap() - 33.0 / 35.0).abs() < 1e-10);
    }

    #[test]
    fn block_count_with_remainder() {
        let (a, b) = diag_pair(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let eb = decompose_e(&a, &b, 2).unwrap();
        assert_eq!(eb.l, 3);
        assert!((norm2(&eb.blocks[2]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eta_with_four_blocks() {
        let h = f64::sqrt(0.5);
        let (a, b) = diag_pair(&[2.4, 1.8, h, h]);
        let eb = decompose_e(&a, &b, 1).unwrap();
        assert_eq!(eb.l, 4);
        assert!((eb.e_norm2() - 10.0).abs() < 1e-12);
        assert!((eb.e_c_norm2() - 1.0).abs() < 1e-12);
        assert!((eta_closed_form(&eb).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_when_e_fits_in_2r() {
        let (a, b) = diag_pair(&[3.0, -1.0, 0.0]);
        let eb = decompose_e(&a, &b, 1).unwrap();
        assert_eq!(eta_closed_form(&eb).unwrap(), 0.0);
        assert_eq!(eta_numeric(&eb, 1e-10).unwrap(), 0.0);
        assert_eq!(delta_lb_numeric(&eb).unwrap(), 1.0);
    }

    #[test]
    fn analytic_bound_values() {
        assert_eq!(delta_lb_analytic(6, 3).unwrap(), 1.0);
        assert_eq!(delta_lb_analytic(6, 1).unwrap(), 2.0 / 34.0);
        assert_eq!(delta_lb_analytic(10, 5).unwrap(), 1.0);
        assert_eq!(delta_lb_analytic(10, 1).unwrap(), 2.0 / 130.0);
        assert_eq!(delta_lb_analytic(6, 2).unwrap(), 0.5);
        assert!(matches!(delta_lb_analytic(6, 4), Err(Error::InvalidInput(_))));
        assert_eq!(sdp_sufficient_rip(6, 1).unwrap(), 0.5);
        assert_eq!(sdp_sufficient_rip(6, 3).unwrap(), 1.0);
        assert_eq!(sdp_sufficient_rip(6, 2).unwrap(), 0.5);
        assert_eq!(sdp_sufficient_rip(4, 2).unwrap(), 1.0);
    }

    #[test]
    fn analytic_bound_monotone_in_r() {
        for n in 2..=40 {
            let vals: Vec<f64> = (1..=n / 2).map(|r| delta_lb_analytic(n, r).unwrap()).collect();
            for w in vals.windows(2) {
                assert!(w[1] >= w[0], "n={n}: {vals:?}");
            }
        }
    }

    #[test]
    fn weyl_examples() {
        let m = SymMat::from_diagonal(&[4.0, 0.0]);
        let same = verify_weyl_lemma(&m, &m, 1).unwrap();
        assert!(same.holds && same.slack == 0.0);
        let w = verify_weyl_lemma(&m, &SymMat::from_diagonal(&[1.0, 1.0]), 1).unwrap();
        assert!(w.holds);
        assert!((w.slack - 2.0).abs() < 1e-12);
        assert!(verify_weyl_lemma(&m, &SymMat::from_diagonal(&[3.0, 3.0]), 1).is_err());
        assert!(verify_weyl_lemma(&m, &m, 2).is_err());
    }

    #[test]
    fn rip_constants() {
        let omega: BTreeSet<_> = [(0, 0), (0, 1)].into_iter().collect();
        let one = rip_constant_explicit(&perturbed_operator(&omega, 1.0).unwrap(), 3).unwrap();
        assert_eq!(one.computed, 0.0);
        let half = rip_constant_explicit(&perturbed_operator(&omega, 0.5).unwrap(), 3).unwrap();
        assert!((half.computed - 0.6).abs() < 1e-15);
        assert!((half.quoted_formula - 1.0 / 3.0).abs() < 1e-15);
        let tiny = rip_constant_explicit(&perturbed_operator(&omega, 1e-6).unwrap(), 3).unwrap();
        assert!(tiny.computed > 0.999_999 && tiny.quoted_formula > 0.999_99);
        let eps = rip_constant_explicit(&perturbed_operator(&omega, 0.01).unwrap(), 3).unwrap();
        assert!((eps.computed - 0.9998).abs() < 1e-6);
        assert!(rip_constant_explicit(&MeasurementOp::omega([(0, 1)]), 3).is_err());
    }

    #[test]
    fn rip_table_rows() {
        let rows = rip_table(&[6], &[1, 2, 3, 4]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].theorem4_bound, 1.0);
    }

    #[test]
    fn random_pairs_satisfy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..300 {
            let n = 2 + t % 7;
            let r = 1 + (t / 7) % (n / 2);
            let (ms, m) = sample_feasible_pair(n, r, &mut rng);
            let eb = decompose_e(&ms, &m, r).unwrap();
            let closed = eta_closed_form(&eb).unwrap();
            let numeric = eta_numeric(&eb, 1e-10).unwrap();
            assert!((closed - numeric).abs() <= 1e-10);
            let lb = delta_lb_numeric(&eb).unwrap();
            assert!(lb >= delta_lb_analytic(n, r).unwrap() - 1e-9, "n={n} r={r}");
            assert!(verify_weyl_lemma(&ms, &m, r).unwrap().holds);
        }
    }

    proptest! {
        #[test]
        fn blocks_orthogonal_and_complete(seed in any::<u64>(), n in 2usize..7, r in 1usize..4) {
            let r = r.min(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ms, m) = sample_feasible_pair(n, r, &mut rng);
            let eb = decompose_e(&ms, &m, r).unwrap();
            let scale = eb.e_norm2().sqrt().max(1.0);
            let sum = eb.blocks.iter().fold(vec![0.0; n * n], |acc, b| add(&acc, b));
            let err = norm2(&add(&sum, &eb.e.iter().map(|v| -v).collect::<Vec<_>>())).sqrt();
            prop_assert!(err <= 1e-10 * scale);
            for i in 0..eb.l {
                for j in 0..i {
                    let ip: f64 = eb.blocks[i].iter().zip(&eb.blocks[j]).map(|(a, b)| a * b).sum();
                    prop_assert!(ip.abs() <= 1e-10 * scale * scale);
                }
            }
            let split = norm2(&eb.e_2r) + norm2(&eb.e_c);
            prop_assert!((eb.e_norm2() - split).abs() <= 1e-10 * scale * scale);
        }
    }
}
