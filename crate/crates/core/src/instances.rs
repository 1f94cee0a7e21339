//! Problem instances: measurement operators, block sparsity graphs and the
//! generators for every instance family used by the solvers.
//!
//! Indices are 0-based throughout, including chain instances. Entry sets are
//! stored as unordered pairs `(i, j)` with `i <= j`; membership of `(j, i)` is
//! implied, so symmetry under transposition holds by construction.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{singular_values, SymMat};

pub type Pair = (usize, usize);

/// n×r factor `X` with `M = XXᵀ`.
pub type Factor = DMatrix<f64>;

pub fn unordered(i: usize, j: usize) -> Pair {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Pair of edge sets over `m` block indices. `e1` blocks are observed in full,
/// `e2` blocks only off their diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSparsityGraph {
    m: usize,
    e1: BTreeSet<Pair>,
    e2: BTreeSet<Pair>,
}

impl BlockSparsityGraph {
    pub fn new(
        m: usize,
        e1: impl IntoIterator<Item = Pair>,
        e2: impl IntoIterator<Item = Pair>,
    ) -> Result<Self> {
        if m == 0 {
            return invalid("graph needs at least one node");
        }
        let norm = |edges: &mut dyn Iterator<Item = Pair>| -> Result<BTreeSet<Pair>> {
            edges
                .map(|(i, j)| {
                    if i >= m || j >= m {
                        invalid(format!("edge ({i},{j}) has an endpoint outside [0,{m})"))
                    } else {
                        Ok(unordered(i, j))
                    }
                })
                .collect()
        };
        let e1 = norm(&mut e1.into_iter())?;
        let e2 = norm(&mut e2.into_iter())?;
        if let Some(p) = e1.intersection(&e2).next() {
            return invalid(format!("edge {p:?} appears in both e1 and e2"));
        }
        Ok(Self { m, e1, e2 })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn e1(&self) -> &BTreeSet<Pair> {
        &self.e1
    }

    pub fn e2(&self) -> &BTreeSet<Pair> {
        &self.e2
    }

    /// Neighbours of `v` in G1, self-loops excluded.
    pub fn g1_neighbors(&self, v: usize) -> Vec<usize> {
        self.e1
            .iter()
            .filter_map(|&(a, b)| match (a == v, b == v) {
                (true, false) => Some(b),
                (false, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn g1_connected(&self) -> bool {
        let mut seen = vec![false; self.m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in self.g1_neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Odd cycle `C_m` with a self-loop on every node as G1, and a path through
    /// the greedy maximal independent set of G1 as G2.
    pub fn canonical_low_complexity(m: usize) -> Result<Self> {
        if m < 3 || m % 2 == 0 {
            return invalid(format!("canonical graph needs odd m >= 3, got {m}"));
        }
        let mut e1: Vec<Pair> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        e1.extend((0..m).map(|i| (i, i)));
        let g1 = Self::new(m, e1.clone(), [])?;
        let s = maximal_independent_set(&g1);
        let e2: Vec<Pair> = s.windows(2).map(|w| (w[0], w[1])).collect();
        Self::new(m, e1, e2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphFile {
            m: self.m,
            e1: self.e1.iter().map(|&(i, j)| [i, j]).collect(),
            e2: self.e2.iter().map(|&(i, j)| [i, j]).collect(),
        })
        .expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GraphFile = serde_json::from_str(text)?;
        Self::new(
            g.m,
            g.e1.into_iter().map(|[i, j]| (i, j)),
            g.e2.into_iter().map(|[i, j]| (i, j)),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    m: usize,
    e1: Vec<[usize; 2]>,
    #[serde(default)]
    e2: Vec<[usize; 2]>,
}

/// Entry set induced by a block sparsity graph with r×r blocks.
pub fn induced_measurement_set(
    g: &BlockSparsityGraph,
    n: usize,
    r: usize,
) -> Result<BTreeSet<Pair>> {
    if r == 0 || n % r != 0 {
        return invalid(format!("n={n} is not divisible by r={r}"));
    }
    if n / r != g.m {
        return invalid(format!("n/r = {} but the graph has {} nodes", n / r, g.m));
    }
    let mut omega = BTreeSet::new();
    for (&(bi, bj), full) in g
        .e1
        .iter()
        .map(|p| (p, true))
        .chain(g.e2.iter().map(|p| (p, false)))
    {
        for a in 0..r {
            for c in 0..r {
                if full || a != c {
                    omega.insert(unordered(bi * r + a, bj * r + c));
                }
            }
        }
    }
    Ok(omega)
}

/// Ordered-entry count of an induced measurement set, from the edge lists alone.
pub fn induced_cardinality(g: &BlockSparsityGraph, r: usize) -> usize {
    let e1: usize = g
        .e1
        .iter()
        .map(|&(i, j)| if i == j { r * r } else { 2 * r * r })
        .sum();
    let e2: usize = g
        .e2
        .iter()
        .map(|&(i, j)| if i == j { r * r - r } else { 2 * r * (r - 1) })
        .sum();
    e1 + e2
}

/// Number of ordered entries `(i, j)` covered by a set of unordered pairs.
pub fn ordered_count(omega: &BTreeSet<Pair>) -> usize {
    omega.iter().map(|&(i, j)| if i == j { 1 } else { 2 }).sum()
}

/// Greedy maximal independent set of G1, scanning nodes in ascending order.
/// Self-loops do not block a node.
pub fn maximal_independent_set(g1: &BlockSparsityGraph) -> Vec<usize> {
    let mut blocked = vec![false; g1.m];
    let mut s = Vec::new();
    for v in 0..g1.m {
        if !blocked[v] {
            s.push(v);
            for w in g1.g1_neighbors(v) {
                blocked[w] = true;
            }
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementOp {
    /// One measurement per observed unordered pair, in ascending pair order.
    Omega { omega: BTreeSet<Pair> },
    /// Every unordered pair is measured; pairs outside Ω are scaled by `epsilon`.
    OmegaScaled { omega: BTreeSet<Pair>, epsilon: f64 },
    /// `b_k = ⟨A_k, M⟩`.
    General { sensing: Vec<SymMat> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Omega,
    OmegaScaled,
    General,
}

impl MeasurementOp {
    pub fn omega(entries: impl IntoIterator<Item = Pair>) -> Self {
        MeasurementOp::Omega {
            omega: entries.into_iter().map(|(i, j)| unordered(i, j)).collect(),
        }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            MeasurementOp::Omega { .. } => OpKind::Omega,
            MeasurementOp::OmegaScaled { .. } => OpKind::OmegaScaled,
            MeasurementOp::General { .. } => OpKind::General,
        }
    }

    pub fn omega_set(&self) -> Option<&BTreeSet<Pair>> {
        match self {
            MeasurementOp::Omega { omega } | MeasurementOp::OmegaScaled { omega, .. } => {
                Some(omega)
            }
            MeasurementOp::General { .. } => None,
        }
    }

    pub fn observes(&self, i: usize, j: usize) -> bool {
        self.omega_set()
            .is_some_and(|o| o.contains(&unordered(i, j)))
    }

    /// Entry-wise view for the entry-based kinds: `(i, j, scale)` per
    /// measurement with `i <= j`, in measurement order.
    pub fn entry_measurements(&self, n: usize) -> Option<Vec<(usize, usize, f64)>> {
        match self {
            MeasurementOp::Omega { omega } => {
                Some(omega.iter().map(|&(i, j)| (i, j, 1.0)).collect())
            }
            MeasurementOp::OmegaScaled { omega, epsilon } => Some(
                (0..n)
                    .flat_map(|i| (i..n).map(move |j| (i, j)))
                    .map(|p| (p.0, p.1, if omega.contains(&p) { 1.0 } else { *epsilon }))
                    .collect(),
            ),
            MeasurementOp::General { .. } => None,
        }
    }

    pub fn len(&self, n: usize) -> usize {
        match self {
            MeasurementOp::Omega { omega } => omega.len(),
            MeasurementOp::OmegaScaled { .. } => n * (n + 1) / 2,
            MeasurementOp::General { sensing } => sensing.len(),
        }
    }

    pub fn is_empty(&self, n: usize) -> bool {
        self.len(n) == 0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(omega) = self.omega_set() {
            if let Some(&(i, j)) = omega.iter().find(|&&(i, j)| i >= n || j >= n) {
                return invalid(format!("observed entry ({i},{j}) outside a {n}x{n} matrix"));
            }
        }
        match self {
            MeasurementOp::OmegaScaled { epsilon, .. } if *epsilon == 0.0 || !epsilon.is_finite() => {
                invalid("epsilon must be finite and nonzero")
            }
            MeasurementOp::General { sensing } => {
                if let Some(k) = sensing.iter().position(|a| a.n() != n) {
                    invalid(format!("sensing matrix {k} is not {n}x{n}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, m: &SymMat) -> Vec<f64> {
        match self {
            MeasurementOp::General { sensing } => sensing
                .iter()
                .map(|a| a.as_matrix().component_mul(m.as_matrix()).sum())
                .collect(),
            _ => self
                .entry_measurements(m.n())
                .expect("entry-based operator")
                .into_iter()
                .map(|(i, j, s)| if s == 1.0 { m[(i, j)] } else { s * m[(i, j)] })
                .collect(),
        }
    }
}

/// Eq.-(5) style operator: entries in Ω as is, all others scaled by `epsilon`.
pub fn perturbed_operator(omega: &BTreeSet<Pair>, epsilon: f64) -> Result<MeasurementOp> {
    if epsilon == 0.0 || !epsilon.is_finite() {
        return invalid("epsilon must be finite and nonzero");
    }
    Ok(MeasurementOp::OmegaScaled {
        omega: omega.clone(),
        epsilon,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub r: usize,
    pub xstar: Factor,
    pub op: MeasurementOp,
    pub b: Vec<f64>,
}

impl Instance {
    pub fn new(xstar: Factor, op: MeasurementOp) -> Result<Self> {
        let (n, r) = xstar.shape();
        if n == 0 || r == 0 || r > n {
            return invalid(format!("factor shape {n}x{r} needs 1 <= r <= n"));
        }
        if xstar.iter().any(|v| !v.is_finite()) {
            return invalid("factor has non-finite entries");
        }
        op.validate(n)?;
        let b = op.apply(&SymMat::gram(&xstar));
        Ok(Self { n, r, xstar, op, b })
    }

    pub fn mstar(&self) -> SymMat {
        SymMat::gram(&self.xstar)
    }

    /// True iff the stored measurement vector equals a fresh evaluation bit for bit.
    pub fn measurements_consistent(&self) -> bool {
        let fresh = self.op.apply(&self.mstar());
        fresh.len() == self.b.len()
            && fresh
                .iter()
                .zip(&self.b)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile::from(self)).expect("instance serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self))
            .expect("instance serialization cannot fail")
    }

    /// Loads an instance file. `b` is recomputed from the factor; a stored `b`
    /// that disagrees beyond 1e-9 relative is rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.xstar.len() != file.n || file.xstar.iter().any(|row| row.len() != file.r) {
            return invalid(format!("xstar is not {}x{}", file.n, file.r));
        }
        let x = DMatrix::from_fn(file.n, file.r, |i, a| file.xstar[i][a]);
        let op = match file.op.kind {
            OpKind::Omega => MeasurementOp::omega(file.op.omega.iter().map(|&[i, j]| (i, j))),
            OpKind::OmegaScaled => perturbed_operator(
                &file.op.omega.iter().map(|&[i, j]| unordered(i, j)).collect(),
                file.op
                    .epsilon
                    .ok_or_else(|| Error::InvalidInput("omega_scaled needs epsilon".into()))?,
            )?,
            OpKind::General => MeasurementOp::General {
                sensing: file
                    .op
                    .sensing
                    .iter()
                    .map(|rows| SymMat::from_rows(rows))
                    .collect::<Result<_>>()?,
            },
        };
        let inst = Instance::new(x, op)?;
        if let Some(b) = file.b {
            let scale = inst.b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let ok = b.len() == inst.b.len()
                && b.iter().zip(&inst.b).all(|(u, v)| (u - v).abs() <= 1e-9 * scale);
            if !ok {
                return invalid("stored measurements disagree with xstar");
            }
        }
        Ok(inst)
    }
}

#[derive(Serialize, Deserialize)]
struct OpFile {
    kind: OpKind,
    #[serde(default)]
    omega: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sensing: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    r: usize,
    xstar: Vec<Vec<f64>>,
    op: OpFile,
    #[serde(default)]
    b: Option<Vec<f64>>,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        let omega = inst
            .op
            .omega_set()
            .map(|o| o.iter().map(|&(i, j)| [i, j]).collect())
            .unwrap_or_default();
        let (epsilon, sensing) = match &inst.op {
            MeasurementOp::OmegaScaled { epsilon, .. } => (Some(*epsilon), Vec::new()),
            MeasurementOp::General { sensing } => (None, sensing.iter().map(SymMat::rows).collect()),
            MeasurementOp::Omega { .. } => (None, Vec::new()),
        };
        InstanceFile {
            n: inst.n,
            r: inst.r,
            xstar: (0..inst.n)
                .map(|i| (0..inst.r).map(|a| inst.xstar[(i, a)]).collect())
                .collect(),
            op: OpFile {
                kind: inst.op.kind(),
                omega,
                epsilon,
                sensing,
            },
            b: Some(inst.b.clone()),
        }
    }
}

fn check_nonzero(x: &[f64]) -> Result<()> {
    if let Some(i) = x.iter().position(|v| *v == 0.0 || !v.is_finite()) {
        return invalid(format!("entry {i} of xstar is zero or non-finite"));
    }
    Ok(())
}

/// Rank-1 chain: Ω = {(0,0)} ∪ {(i,i+1)}.
pub fn gen_chain(xstar: &[f64]) -> Result<Instance> {
    if xstar.is_empty() {
        return invalid("empty xstar");
    }
    check_nonzero(xstar)?;
    let n = xstar.len();
    let mut omega = vec![(0, 0)];
    omega.extend((0..n - 1).map(|i| (i, i + 1)));
    Instance::new(
        DMatrix::from_column_slice(n, 1, xstar),
        MeasurementOp::omega(omega),
    )
}

/// Rank-1 odd cycle: Ω = {(i, i+1 mod n)}, no diagonal entries.
pub fn gen_cycle(xstar: &[f64]) -> Result<Instance> {
    let n = xstar.len();
    if n < 3 || n % 2 == 0 {
        return invalid(format!("cycle length must be odd and >= 3, got {n}"));
    }
    check_nonzero(xstar)?;
    Instance::new(
        DMatrix::from_column_slice(n, 1, xstar),
        MeasurementOp::omega((0..n).map(|i| (i, (i + 1) % n))),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationGraph {
    /// Ω induced by G1 alone.
    G1Only,
    /// Ω induced by both G1 and G2.
    Full,
}

#[derive(Clone, Debug)]
pub struct LowComplexitySpec {
    pub seed: u64,
    /// Perturbation standard deviation; `None` means `0.1 · magnitude`.
    pub sigma: Option<f64>,
    /// Scale of the identity blocks placed on the independent set.
    pub magnitude: f64,
    pub independent_set: Option<Vec<usize>>,
    pub observe: ObservationGraph,
}

impl Default for LowComplexitySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma: None,
            magnitude: 1.0,
            independent_set: None,
            observe: ObservationGraph::G1Only,
        }
    }
}

pub const RANK_RESAMPLE_CAP: usize = 100;
pub const BLOCK_RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LowComplexityInstance {
    pub instance: Instance,
    pub graph: BlockSparsityGraph,
    pub independent_set: Vec<usize>,
    /// Unperturbed factor (identity blocks on the independent set).
    pub base: Factor,
    pub draws: usize,
}

/// Smallest singular value over the diagonal r×r blocks of a stacked factor.
pub fn min_block_singular_value(x: &Factor, r: usize) -> f64 {
    (0..x.nrows() / r)
        .map(|i| {
            let blk = x.rows(i * r, r).into_owned();
            singular_values(&blk).last().copied().unwrap_or(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn gen_low_complexity(
    g: &BlockSparsityGraph,
    n: usize,
    r: usize,
    spec: &LowComplexitySpec,
) -> Result<LowComplexityInstance> {
    if r == 0 || n % r != 0 || n / r != g.m() {
        return invalid(format!("n={n}, r={r} do not tile {} blocks", g.m()));
    }
    if !g.g1_connected() {
        return invalid("G1 must be connected");
    }
    let sigma = spec.sigma.unwrap_or(0.1 * spec.magnitude);
    if !(sigma >= 0.0 && sigma.is_finite()) || spec.magnitude == 0.0 || !spec.magnitude.is_finite() {
        return invalid("sigma must be finite and nonnegative, magnitude finite and nonzero");
    }
    let s = match &spec.independent_set {
        None => maximal_independent_set(g),
        Some(s) => {
            let set: BTreeSet<usize> = s.iter().copied().collect();
            if set.iter().any(|&v| v >= g.m()) {
                return invalid("independent set node out of range");
            }
            let independent = set
                .iter()
                .all(|&v| g.g1_neighbors(v).iter().all(|w| !set.contains(w)));
            let maximal = (0..g.m())
                .filter(|v| !set.contains(v))
                .all(|v| g.g1_neighbors(v).iter().any(|w| set.contains(w)));
            if !independent || !maximal {
                return Err(Error::ConstructionFailure(format!(
                    "{s:?} is not a maximal independent set of G1"
                )));
            }
            set.into_iter().collect()
        }
    };
    let mut base = DMatrix::zeros(n, r);
    for &v in &s {
        for a in 0..r {
            base[(v * r + a, a)] = spec.magnitude;
        }
    }
    let omega = match spec.observe {
        ObservationGraph::G1Only => {
            let g1 = BlockSparsityGraph::new(g.m(), g.e1().iter().copied(), [])?;
            induced_measurement_set(&g1, n, r)?
        }
        ObservationGraph::Full => induced_measurement_set(g, n, r)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for draw in 1..=RANK_RESAMPLE_CAP {
        let eps = DMatrix::from_fn(n, r, |_, _| normal.sample(&mut rng));
        let x = &base + eps;
        // With sigma = 0 the off-set blocks are zero by construction; only the
        // independent-set blocks can be checked for rank.
        let ok = if sigma == 0.0 {
            true
        } else {
            min_block_singular_value(&x, r) > BLOCK_RANK_TOL
        };
        if ok {
            return Ok(LowComplexityInstance {
                instance: Instance::new(x, MeasurementOp::Omega { omega: omega.clone() })?,
                graph: g.clone(),
                independent_set: s,
                base,
                draws: draw,
            });
        }
    }
    Err(Error::ConstructionFailure(format!(
        "no perturbation with full-rank blocks after {RANK_RESAMPLE_CAP} draws"
    )))
}
