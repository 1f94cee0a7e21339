//! Combinatorial completion by propagating factors along fully observed blocks.
//!
//! Blocks are r×r; a block pair is an edge when every entry of it is observed.
//! Inside a connected component an anchor factor is taken from an observed
//! diagonal block (`X_I = M_II^{1/2}`) and pushed across edges with
//! `X_J = M_IJᵀ X_I^{-T}`. For r = 1 a component without observed diagonal
//! entries is still solvable when it contains an odd cycle: propagating with a
//! free scale `t` gives `x_v = q_v·t^{±1}` by depth parity, and any edge between
//! two nodes of equal parity fixes `t²`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::instances::{unordered, Instance, MeasurementOp, Pair};
use crate::linalg::{psd_sqrt, singular_values, sym_eig, OrderMode, SymMat};
use crate::sdp::{recovery_check, solve_sdp, SdpOptions};

/// Relative tolerance for the final check against the observations.
pub const CONSISTENCY_TOL: f64 = 1e-8;
/// A factor block is treated as singular below this `σ_min / σ_max`.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraversalOrder {
    #[default]
    Bfs,
    Dfs,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompletionResult {
    pub m: SymMat,
    pub resolved: bool,
    /// Block pairs `(I, J)`, `I <= J`, whose value could not be inferred.
    pub unresolved_blocks: Vec<Pair>,
}

/// Observed entries `M_ij`, `i <= j`, recovered from the measurements.
pub fn observed_entries(inst: &Instance) -> Result<BTreeMap<Pair, f64>> {
    let Some(meas) = inst.op.entry_measurements(inst.n) else {
        return Err(Error::NotApplicable("completion needs an entry-based operator".into()));
    };
    Ok(meas
        .into_iter()
        .zip(&inst.b)
        .map(|((i, j, s), b)| ((i, j), if s == 1.0 { *b } else { b / s }))
        .collect())
}

struct Blocks<'a> {
    r: usize,
    nb: usize,
    obs: &'a BTreeMap<Pair, f64>,
}

impl Blocks<'_> {
    fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.obs.get(&unordered(i, j)).copied()
    }

    fn block(&self, bi: usize, bj: usize) -> Option<DMatrix<f64>> {
        let r = self.r;
        let mut out = DMatrix::zeros(r, r);
        for a in 0..r {
            for c in 0..r {
                out[(a, c)] = self.get(bi * r + a, bj * r + c)?;
            }
        }
        Some(out)
    }

    fn edges(&self) -> BTreeSet<Pair> {
        let mut e = BTreeSet::new();
        for bi in 0..self.nb {
            for bj in bi..self.nb {
                if self.block(bi, bj).is_some() {
                    e.insert((bi, bj));
                }
            }
        }
        e
    }
}

fn components(nb: usize, edges: &BTreeSet<Pair>) -> Vec<Vec<usize>> {
    let mut seen = vec![false; nb];
    let mut out = Vec::new();
    for s in 0..nb {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            for &(a, b) in edges {
                let v = if a == u { b } else if b == u { a } else { continue };
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn neighbors(u: usize, edges: &BTreeSet<Pair>) -> Vec<usize> {
    edges
        .iter()
        .filter_map(|&(a, b)| match (a == u, b == u) {
            (true, false) => Some(b),
            (false, true) => Some(a),
            _ => None,
        })
        .collect()
}

fn pop(frontier: &mut VecDeque<usize>, order: TraversalOrder) -> Option<usize> {
    match order {
        TraversalOrder::Bfs => frontier.pop_front(),
        TraversalOrder::Dfs => frontier.pop_back(),
    }
}

fn ordered_neighbors(u: usize, edges: &BTreeSet<Pair>, order: TraversalOrder) -> Vec<usize> {
    let mut nb = neighbors(u, edges);
    if order == TraversalOrder::Dfs {
        nb.reverse();
    }
    nb
}

/// Spanning-tree edges `(parent, child)` from `root` in discovery order.
fn spanning_tree(root: usize, edges: &BTreeSet<Pair>, order: TraversalOrder) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::from([root]);
    let mut tree = Vec::new();
    let mut frontier = VecDeque::from([root]);
    while let Some(u) = pop(&mut frontier, order) {
        for v in ordered_neighbors(u, edges, order) {
            if seen.insert(v) {
                tree.push((u, v));
                frontier.push_back(v);
            }
        }
    }
    tree
}

fn invertible(x: &DMatrix<f64>) -> bool {
    let s = singular_values(x);
    let (hi, lo) = (s[0], s[s.len() - 1]);
    hi > 0.0 && lo > SINGULAR_TOL * hi
}

/// Factor blocks for one component anchored at an observed diagonal block.
/// Nodes whose factor turns out singular are assigned but not expanded.
fn anchored(
    blocks: &Blocks,
    comp: &[usize],
    anchor: usize,
    edges: &BTreeSet<Pair>,
    order: TraversalOrder,
) -> Result<BTreeMap<usize, DMatrix<f64>>> {
    let mii = SymMat::from_matrix(blocks.block(anchor, anchor).expect("observed"))?;
    let x0 = psd_sqrt(&mii)?;
    if !invertible(&x0) {
        return Err(Error::RankDeficiency(format!("diagonal block {anchor} is singular")));
    }
    let mut x = BTreeMap::from([(anchor, x0)]);
    let mut frontier = VecDeque::from([anchor]);
    while let Some(u) = pop(&mut frontier, order) {
        if !invertible(&x[&u]) {
            continue;
        }
        let lu = x[&u].clone().lu();
        for v in ordered_neighbors(u, edges, order) {
            if x.contains_key(&v) {
                continue;
            }
            let xvt = lu.solve(&blocks.block(u, v).expect("edge observed")).expect("invertible");
            x.insert(v, xvt.transpose());
            frontier.push_back(v);
        }
    }
    if let Some(&miss) = comp.iter().find(|v| !x.contains_key(v)) {
        return Err(Error::RankDeficiency(format!(
            "block {miss} is only reachable through singular factor blocks"
        )));
    }
    Ok(x)
}

/// Rank-1 component without observed diagonal entries. `None` when the
/// component is bipartite, so the scale stays free.
fn odd_cycle_scalar(
    blocks: &Blocks,
    comp: &[usize],
    edges: &BTreeSet<Pair>,
    order: TraversalOrder,
) -> Result<Option<BTreeMap<usize, DMatrix<f64>>>> {
    let root = comp[0];
    let tree = spanning_tree(root, edges, order);
    // x_v = q_v · t^{parity ? -1 : 1}
    let mut q = BTreeMap::from([(root, 1.0f64)]);
    let mut odd = BTreeMap::from([(root, false)]);
    for (p, c) in tree {
        let m = blocks.get(p, c).expect("edge observed");
        if m == 0.0 {
            return Err(Error::RankDeficiency(format!("observed entry ({p},{c}) is zero")));
        }
        q.insert(c, m / q[&p]);
        odd.insert(c, !odd[&p]);
    }
    let closing = edges
        .iter()
        .filter(|(a, b)| a != b && q.contains_key(a) && q.contains_key(b))
        .find(|(a, b)| odd[a] == odd[b]);
    let Some(&(a, b)) = closing else {
        return Ok(None);
    };
    let m = blocks.get(a, b).expect("edge observed");
    let qq = q[&a] * q[&b];
    let t2 = if odd[&a] { qq / m } else { m / qq };
    if !(t2 > 0.0 && t2.is_finite()) {
        return Err(Error::Inconsistency(format!(
            "odd cycle through ({a},{b}) implies a nonpositive square {t2}"
        )));
    }
    let t = t2.sqrt();
    Ok(Some(
        q.into_iter()
            .map(|(v, qv)| {
                let xv = if odd[&v] { qv / t } else { qv * t };
                (v, DMatrix::from_element(1, 1, xv))
            })
            .collect(),
    ))
}

pub fn propagate_complete(inst: &Instance) -> Result<CompletionResult> {
    propagate_complete_with(inst, TraversalOrder::Bfs)
}

pub fn propagate_complete_with(inst: &Instance, order: TraversalOrder) -> Result<CompletionResult> {
    let (n, r) = (inst.n, inst.r);
    if n % r != 0 {
        return invalid(format!("n={n} is not divisible by r={r}"));
    }
    let obs = observed_entries(inst)?;
    let blocks = Blocks { r, nb: n / r, obs: &obs };
    let edges = blocks.edges();
    let mut factors: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let comps = components(blocks.nb, &edges);
    let mut comp_of = vec![0usize; blocks.nb];
    let mut solved = vec![false; comps.len()];
    for (ci, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = ci;
        }
        let anchor = comp.iter().copied().find(|v| edges.contains(&(*v, *v)));
        let part = match anchor {
            Some(a) => Some(anchored(&blocks, comp, a, &edges, order)?),
            None if r == 1 => odd_cycle_scalar(&blocks, comp, &edges, order)?,
            None => None,
        };
        if let Some(part) = part {
            factors.extend(part);
            solved[ci] = true;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    let mut unresolved = Vec::new();
    for bi in 0..blocks.nb {
        for bj in bi..blocks.nb {
            let same = comp_of[bi] == comp_of[bj] && solved[comp_of[bi]];
            if same {
                let v = &factors[&bi] * factors[&bj].transpose();
                m.view_mut((bi * r, bj * r), (r, r)).copy_from(&v);
                m.view_mut((bj * r, bi * r), (r, r)).copy_from(&v.transpose());
            } else {
                unresolved.push((bi, bj));
                for a in 0..r {
                    for c in 0..r {
                        let (i, j) = (bi * r + a, bj * r + c);
                        if let Some(v) = blocks.get(i, j) {
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                }
            }
        }
    }
    let m = SymMat::from_matrix(m)?;
    let scale = obs.values().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some((&(i, j), v)) = obs
        .iter()
        .find(|(&(i, j), v)| (m[(i, j)] - **v).abs() > CONSISTENCY_TOL * scale)
    {
        return Err(Error::Inconsistency(format!(
            "completed entry ({i},{j}) = {} but observed {v}",
            m[(i, j)]
        )));
    }
    Ok(CompletionResult {
        m,
        resolved: unresolved.is_empty(),
        unresolved_blocks: unresolved,
    })
}

/// Numerical rank from the eigenvalues: count of `|λ| > tol·|λ_1|`.
pub fn numerical_rank(m: &SymMat, tol: f64) -> Result<usize> {
    let eig = sym_eig(m, OrderMode::DescendingAbsolute)?;
    let top = eig.eigenvalues[0].abs();
    Ok(eig.eigenvalues.iter().filter(|l| l.abs() > tol * top).count())
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    pub completer_resolved: bool,
    /// `‖M_completer − M_sdp‖_F / ‖M*‖_F`, absent when the completer did not resolve.
    pub gap: Option<f64>,
    pub sdp_frob_gap: f64,
    pub completer_frob_gap: Option<f64>,
}

pub fn cross_check(inst: &Instance, opts: &SdpOptions) -> Result<CrossCheck> {
    let comp = propagate_complete(inst)?;
    let sdp = solve_sdp(inst, opts)?;
    let mstar = inst.mstar();
    let scale = mstar.frobenius_norm();
    let rel = |d: f64| if scale > 0.0 { d / scale } else { d };
    let sdp_frob_gap = recovery_check(&sdp, &mstar, 0.0)?.frob_gap;
    let (gap, completer_frob_gap) = if comp.resolved {
        (
            Some(rel((&comp.m - &sdp.m_opt).frobenius_norm())),
            Some(rel((&comp.m - &mstar).frobenius_norm())),
        )
    } else {
        (None, None)
    };
    Ok(CrossCheck {
        completer_resolved: comp.resolved,
        gap,
        sdp_frob_gap,
        completer_frob_gap,
    })
}

/// Completion of a fully observed entry operator is the data itself; exposed
/// for callers that want to skip the graph machinery.
pub fn is_fully_observed(inst: &Instance) -> bool {
    match &inst.op {
        MeasurementOp::OmegaScaled { .. } => true,
        MeasurementOp::Omega { omega } => omega.len() == inst.n * (inst.n + 1) / 2,
        MeasurementOp::General { .. } => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{
        gen_chain, gen_cycle, gen_low_complexity, perturbed_operator, BlockSparsityGraph,
        LowComplexitySpec, ObservationGraph,
    };

    fn rel_gap(a: &SymMat, b: &SymMat) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm()
    }

    fn x(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn chain_with_self_loop() {
        let inst = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let c = propagate_complete(&inst).unwrap();
        assert!(c.resolved);
        assert!(rel_gap(&c.m, &inst.mstar()) < 1e-14);
    }

    #[test]
    fn odd_cycle_without_diagonal() {
        let inst = gen_cycle(&[1.0, -3.0, 1.5, 3.0, 0.7]).unwrap();
        for order in [TraversalOrder::Bfs, TraversalOrder::Dfs] {
            let c = propagate_complete_with(&inst, order).unwrap();
            assert!(c.resolved);
            assert!(rel_gap(&c.m, &inst.mstar()) < 1e-12);
        }
        // Closed-form elimination around the cycle: x₀² = M₀₁·M₄₀·M₂₃ / (M₁₂·M₃₄).
        let m = inst.mstar();
        let x0sq = m[(0, 1)] * m[(4, 0)] * m[(2, 3)] / (m[(1, 2)] * m[(3, 4)]);
        let c = propagate_complete(&inst).unwrap();
        assert!((c.m[(0, 0)] - x0sq).abs() < 1e-12);
    }

    #[test]
    fn even_cycle_stays_unresolved() {
        let inst = Instance::new(
            x(&[1.0, 2.0, 3.0, 4.0]),
            MeasurementOp::omega([(0, 1), (1, 2), (2, 3), (3, 0)]),
        )
        .unwrap();
        let c = propagate_complete(&inst).unwrap();
        assert!(!c.resolved);
        assert_eq!(c.unresolved_blocks.len(), 10);
    }

    #[test]
    fn disconnected_graph() {
        let inst = Instance::new(
            x(&[1.0, 2.0, 3.0, 4.0]),
            MeasurementOp::omega([(0, 0), (0, 1), (2, 2), (2, 3)]),
        )
        .unwrap();
        let c = propagate_complete(&inst).unwrap();
        assert!(!c.resolved);
        assert_eq!(c.unresolved_blocks, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(c.m[(0, 1)], 2.0);
    }

    #[test]
    fn inconsistent_observations() {
        let mut inst = gen_cycle(&[1.0, 2.0, 3.0]).unwrap();
        let mut inst2 = inst.clone();
        inst.b[0] = -inst.b[0];
        assert!(matches!(propagate_complete(&inst), Err(Error::Inconsistency(_))));
        inst2.op = MeasurementOp::omega([(0, 0), (0, 1), (0, 2), (1, 2)]);
        inst2.b = vec![1.0, 2.0, 3.0, 7.0];
        assert!(matches!(propagate_complete(&inst2), Err(Error::Inconsistency(_))));
    }

    #[test]
    fn singular_anchor() {
        let xs = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 1.0, 0.0, 0.0, 1.0]);
        let full: Vec<Pair> = (0..4).flat_map(|i| (i..4).map(move |j| (i, j))).collect();
        let inst = Instance::new(xs, MeasurementOp::omega(full)).unwrap();
        assert!(matches!(propagate_complete(&inst), Err(Error::RankDeficiency(_))));
    }

    #[test]
    fn low_complexity_matches_truth() {
        for (m, r, seed) in [(5, 1, 1), (5, 2, 2), (7, 2, 3), (7, 3, 4)] {
            let g = BlockSparsityGraph::canonical_low_complexity(m).unwrap();
            for observe in [ObservationGraph::G1Only, ObservationGraph::Full] {
                let spec = LowComplexitySpec { seed, observe, ..Default::default() };
                let lc = gen_low_complexity(&g, m * r, r, &spec).unwrap();
                let bfs = propagate_complete_with(&lc.instance, TraversalOrder::Bfs).unwrap();
                let dfs = propagate_complete_with(&lc.instance, TraversalOrder::Dfs).unwrap();
                assert!(bfs.resolved);
                let mstar = lc.instance.mstar();
                assert!(rel_gap(&bfs.m, &mstar) < 1e-9, "m={m} r={r}");
                assert!((&bfs.m - &dfs.m).frobenius_norm() <= 1e-9 * mstar.frobenius_norm());
                assert!(numerical_rank(&bfs.m, 1e-8).unwrap() <= r);
                assert!(bfs.m.min_eigenvalue() >= -1e-9 * mstar.frobenius_norm());
            }
        }
    }

    #[test]
    fn scaled_operator_is_full_observation() {
        let inst = Instance::new(
            x(&[1.0, 1.0, 2.0]),
            perturbed_operator(&[(0, 0), (0, 1), (1, 2)].into_iter().collect(), 0.5).unwrap(),
        )
        .unwrap();
        assert!(is_fully_observed(&inst));
        let c = propagate_complete(&inst).unwrap();
        assert!(c.resolved && rel_gap(&c.m, &inst.mstar()) < 1e-14);
    }

    #[test]
    fn general_operator_not_applicable() {
        let inst = Instance::new(
            x(&[1.0, 2.0]),
            MeasurementOp::General { sensing: vec![SymMat::identity(2)] },
        )
        .unwrap();
        assert!(matches!(propagate_complete(&inst), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn cross_check_cases() {
        let opts = SdpOptions::default();
        let full: Vec<Pair> = (0..3).flat_map(|i| (i..3).map(move |j| (i, j))).collect();
        let inst = Instance::new(x(&[1.0, -2.0, 0.5]), MeasurementOp::omega(full)).unwrap();
        let cc = cross_check(&inst, &opts).unwrap();
        assert!(cc.gap.unwrap() < 1e-7);

        let inst = gen_chain(&[1.0, 1.0, 2.0]).unwrap();
        let cc = cross_check(&inst, &opts).unwrap();
        assert!(cc.completer_frob_gap.unwrap() < 1e-14);
        assert!((cc.gap.unwrap() - cc.sdp_frob_gap).abs() < 1e-12);
        assert!(cc.sdp_frob_gap > 0.1);
    }
}
