//! Finite-difference checks of the factored objective at random points.

use lowrank_duel::bm::{bm_gradient, bm_hessian, bm_objective};
use lowrank_duel::instances::{
    gen_chain, gen_cycle, gen_low_complexity, perturbed_operator, BlockSparsityGraph, Factor,
    Instance, LowComplexitySpec, MeasurementOp,
};
use lowrank_duel::linalg::SymMat;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const POINTS: usize = 100;

fn gauss(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Factor {
    DMatrix::from_fn(n, r, |_, _| rng.sample(StandardNormal))
}

/// Objective straight from its definition over ordered entries or sensing matrices.
fn oracle_objective(x: &Factor, inst: &Instance) -> f64 {
    let m = x * x.transpose();
    let mstar = inst.mstar();
    match &inst.op {
        MeasurementOp::Omega { omega } => {
            let mut s = 0.0;
            for i in 0..inst.n {
                for j in 0..inst.n {
                    if omega.contains(&(i.min(j), i.max(j))) {
                        s += (m[(i, j)] - mstar[(i, j)]).powi(2);
                    }
                }
            }
            0.25 * s
        }
        MeasurementOp::OmegaScaled { omega, epsilon } => {
            let mut s = 0.0;
            for i in 0..inst.n {
                for j in 0..inst.n {
                    let w = if omega.contains(&(i.min(j), i.max(j))) { 1.0 } else { epsilon * epsilon };
                    s += w * (m[(i, j)] - mstar[(i, j)]).powi(2);
                }
            }
            0.25 * s
        }
        MeasurementOp::General { sensing } => {
            0.5 * sensing
                .iter()
                .zip(&inst.b)
                .map(|(a, b)| (a.as_matrix().component_mul(&m).sum() - b).powi(2))
                .sum::<f64>()
        }
    }
}

fn flat(x: &Factor) -> Vec<f64> {
    let (n, r) = x.shape();
    (0..n).flat_map(|i| (0..r).map(move |a| x[(i, a)])).collect()
}

fn bump(x: &Factor, idx: usize, h: f64) -> Factor {
    let r = x.ncols();
    let mut y = x.clone();
    y[(idx / r, idx % r)] += h;
    y
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_family(name: &str, insts: &[Instance], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for p in 0..POINTS {
        let inst = &insts[p % insts.len()];
        let x = gauss(&mut rng, inst.n, inst.r);
        let f = bm_objective(&x, inst).unwrap();
        let fo = oracle_objective(&x, inst);
        assert!((f - fo).abs() <= 1e-12 * fo.abs().max(1.0), "{name}: objective {f} vs {fo}");

        let g = flat(&bm_gradient(&x, inst).unwrap());
        let d = g.len();
        let g_fd: Vec<f64> = (0..d)
            .map(|k| {
                (bm_objective(&bump(&x, k, H), inst).unwrap()
                    - bm_objective(&bump(&x, k, -H), inst).unwrap())
                    / (2.0 * H)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&g_fd).map(|(a, b)| a - b).collect();
        let gerr = norm(&diff) / norm(&g).max(1.0);
        assert!(gerr <= 1e-6, "{name}: gradient rel err {gerr}");

        let hess = bm_hessian(&x, inst).unwrap();
        let mut hd = DMatrix::zeros(d, d);
        for k in 0..d {
            let gp = flat(&bm_gradient(&bump(&x, k, H), inst).unwrap());
            let gm = flat(&bm_gradient(&bump(&x, k, -H), inst).unwrap());
            for l in 0..d {
                hd[(l, k)] = (gp[l] - gm[l]) / (2.0 * H);
            }
        }
        let herr = (hess.as_matrix() - &hd).norm() / hess.as_matrix().norm().max(1.0);
        assert!(herr <= 1e-5, "{name}: hessian rel err {herr}");
        worst = (worst.0.max(gerr), worst.1.max(herr));
    }
    println!("{name}: worst gradient {:.2e}, worst hessian {:.2e}", worst.0, worst.1);
}

fn uniform_entries(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.5..2.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect()
}

#[test]
fn chain_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let insts: Vec<_> = (3..=8).map(|n| gen_chain(&uniform_entries(&mut rng, n)).unwrap()).collect();
    check_family("chain", &insts, 11);
}

#[test]
fn cycle_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let insts: Vec<_> = [3, 5, 7].iter().map(|&n| gen_cycle(&uniform_entries(&mut rng, n)).unwrap()).collect();
    check_family("cycle", &insts, 12);
}

#[test]
fn low_complexity_family() {
    let insts: Vec<_> = [(5, 1), (5, 2), (7, 2)]
        .iter()
        .map(|&(m, r)| {
            let g = BlockSparsityGraph::canonical_low_complexity(m).unwrap();
            let spec = LowComplexitySpec { seed: 3, ..Default::default() };
            gen_low_complexity(&g, m * r, r, &spec).unwrap().instance
        })
        .collect();
    check_family("low_complexity", &insts, 13);
}

#[test]
fn perturbed_family() {
    let omega = [(0, 0), (0, 1), (1, 2)].into_iter().collect();
    let x = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 2.0]);
    let insts: Vec<_> = [0.01, 0.5]
        .iter()
        .map(|&e| Instance::new(x.clone(), perturbed_operator(&omega, e).unwrap()).unwrap())
        .collect();
    check_family("perturbed_op", &insts, 14);
}

#[test]
fn general_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let insts: Vec<_> = [(4, 1), (5, 2)]
        .iter()
        .map(|&(n, r)| {
            let sensing = (0..2 * n * r)
                .map(|_| SymMat::from_matrix(gauss(&mut rng, n, n)).unwrap())
                .collect();
            Instance::new(gauss(&mut rng, n, r), MeasurementOp::General { sensing }).unwrap()
        })
        .collect();
    check_family("general", &insts, 15);
}
