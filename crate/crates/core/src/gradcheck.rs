//! Central finite-difference verification of the backward rules.
//!
//! Each check rebuilds the graph from scratch for every perturbed parameter
//! and only reads forward values, so it does not share any code path with
//! the backward pass it checks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, OpKind, Tensor, Var};
use crate::error::Result;
use crate::seed::{rng_for, SeededRng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude, errors are measured in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: OpKind,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `backward` against central differences of `build` with respect
/// to every entry of every tensor in `params`. Returns the max relative
/// error and the number of entries checked.
pub fn check_graph<F>(params: &[Tensor], build: F, fault: Option<OpKind>) -> Result<(f64, usize)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let new_graph = || match fault {
        Some(op) => Graph::with_corrupted_backward(op),
        None => Graph::new(),
    };
    let mut g = new_graph();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok(g.value(l).item().unwrap_or(f64::NAN))
    };

    let mut worst = 0.0f64;
    let mut count = 0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.len() {
            let orig = p.data()[j];
            work[pi].data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(analytic[pi][j], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            count += 1;
        }
    }
    Ok((worst, count))
}

fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

/// Random values kept away from zero so kinked ops are differentiable there.
fn randn_away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.5 } else { 0.5 };
        }
    }
    t
}

/// `mean(y ⊙ r)` for a fixed random `r`, which makes every output entry
/// contribute a distinct weight.
fn project(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(y, rv)?;
    g.mean(p)
}

/// Runs the finite-difference check for one op kind on `trials` random
/// instances.
pub fn check_op(op: OpKind, seed: u64, trials: usize, fault: Option<OpKind>) -> Result<OpCheck> {
    let mut rng = rng_for(seed, &format!("gradcheck/{}", op.name()));
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..trials {
        let (err, n) = match op {
            OpKind::MatMul => {
                let a = randn(&mut rng, &[3, 4]);
                let x = randn(&mut rng, &[4]);
                let b = randn(&mut rng, &[4, 2]);
                let r1 = randn(&mut rng, &[3]);
                let r2 = randn(&mut rng, &[3, 2]);
                check_graph(
                    &[a, x, b],
                    |g, v| {
                        let y1 = g.matmul(v[0], v[1])?;
                        let y2 = g.matmul(v[0], v[2])?;
                        let l1 = project(g, y1, &r1)?;
                        let l2 = project(g, y2, &r2)?;
                        let s = g.stack(&[l1, l2])?;
                        g.mean(s)
                    },
                    fault,
                )?
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let a = randn(&mut rng, &[5]);
                let b = randn(&mut rng, &[5]);
                let r = randn(&mut rng, &[5]);
                check_graph(
                    &[a, b],
                    |g, v| {
                        let y = g.apply(op, &[v[0], v[1]])?;
                        project(g, y, &r)
                    },
                    fault,
                )?
            }
            OpKind::Relu | OpKind::Tanh => {
                let a = randn_away_from_zero(&mut rng, &[6]);
                let r = randn(&mut rng, &[6]);
                check_graph(
                    &[a],
                    |g, v| {
                        let y = g.apply(op, &[v[0]])?;
                        project(g, y, &r)
                    },
                    fault,
                )?
            }
            OpKind::L2Normalize => {
                let a = randn(&mut rng, &[5]);
                let r = randn(&mut rng, &[5]);
                check_graph(
                    &[a],
                    |g, v| {
                        let y = g.l2_normalize(v[0])?;
                        project(g, y, &r)
                    },
                    fault,
                )?
            }
            OpKind::SquaredEuclidean => {
                let a = randn(&mut rng, &[5]);
                let b = randn(&mut rng, &[5]);
                check_graph(&[a, b], |g, v| g.squared_euclidean(v[0], v[1]), fault)?
            }
            OpKind::Max0 => {
                let a = randn_away_from_zero(&mut rng, &[]);
                let b = randn_away_from_zero(&mut rng, &[]);
                let r = randn(&mut rng, &[2]);
                check_graph(
                    &[a, b],
                    |g, v| {
                        let ya = g.max0(v[0])?;
                        let yb = g.max0(v[1])?;
                        let s = g.stack(&[ya, yb])?;
                        project(g, s, &r)
                    },
                    fault,
                )?
            }
            OpKind::Mean => {
                let a = randn(&mut rng, &[7]);
                let b = randn(&mut rng, &[2, 3]);
                check_graph(
                    &[a, b],
                    |g, v| {
                        let ma = g.mean(v[0])?;
                        let mb = g.mean(v[1])?;
                        let t = g.tanh(mb)?;
                        let s = g.stack(&[ma, t])?;
                        g.mean(s)
                    },
                    fault,
                )?
            }
            OpKind::Stack => {
                let a = randn(&mut rng, &[]);
                let b = randn(&mut rng, &[]);
                let c = randn(&mut rng, &[]);
                let r = randn(&mut rng, &[4]);
                check_graph(
                    &[a, b, c],
                    |g, v| {
                        let s = g.stack(&[v[0], v[1], v[2], v[0]])?;
                        project(g, s, &r)
                    },
                    fault,
                )?
            }
        };
        worst = worst.max(err);
        checked += n;
    }
    Ok(OpCheck {
        op,
        max_rel_error: worst,
        checked,
    })
}

/// One report entry per op kind, in [`OpKind::ALL`] order.
pub fn check_all(seed: u64, trials: usize, fault: Option<OpKind>) -> Result<Vec<OpCheck>> {
    OpKind::ALL
        .iter()
        .map(|&op| check_op(op, seed, trials, fault))
        .collect()
}
