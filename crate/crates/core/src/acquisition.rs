//! Maximization of the GP-UCB criterion over a bounded action box.
//!
//! The criterion is evaluated on a full lattice (endpoints included), the
//! `top_k` lattice points seed a bounded Nelder–Mead refinement, and the best
//! refined point wins. Ties always resolve to the lowest lattice index, so
//! the result does not depend on evaluation order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpState;
use crate::mechanism::{Action, ActionBounds, MechanismKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub grid: usize,
    pub top_k: usize,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl AcquisitionConfig {
    pub fn for_kind(kind: MechanismKind) -> Self {
        AcquisitionConfig {
            grid: match kind {
                MechanismKind::Slider => 25,
                MechanismKind::Door => 12,
            },
            top_k: 5,
            max_iters: 100,
            tolerance: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 || self.top_k < 1 || self.max_iters < 1 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid acquisition config {self:?}")));
        }
        Ok(())
    }
}

/// Regular grid over the bounds. Points are ordered lexicographically with
/// the first dimension varying slowest, so index 0 is the all-low corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    grid: usize,
    points: Vec<f64>,
    spacing: Vec<f64>,
}

impl Lattice {
    pub fn new(bounds: &ActionBounds, grid: usize) -> Self {
        assert!(grid >= 2);
        let dim = bounds.dim();
        let spacing: Vec<f64> = (0..dim)
            .map(|d| (bounds.high[d] - bounds.low[d]) / (grid - 1) as f64)
            .collect();
        let count = grid.pow(dim as u32);
        let mut points = Vec::with_capacity(count * dim);
        for index in 0..count {
            let mut rem = index;
            let mut coords = vec![0.0; dim];
            for d in (0..dim).rev() {
                let i = rem % grid;
                rem /= grid;
                coords[d] = if i == grid - 1 {
                    bounds.high[d]
                } else {
                    bounds.low[d] + i as f64 * spacing[d]
                };
            }
            points.extend(coords);
        }
        Lattice {
            dim,
            grid,
            points,
            spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn evaluate<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        (0..self.len()).into_par_iter().map(|i| f(self.point(i))).collect()
    }
}

fn score_key(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Indices of the `k` best scores, best first, ties to the lowest index.
fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        score_key(scores[b])
            .total_cmp(&score_key(scores[a]))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Bounded Nelder–Mead maximizing `f` from `start`. Proposals outside the box
/// are clipped. The start vertex wins ties, so the result is never worse
/// than `f(start)`.
fn nelder_mead<F>(f: &F, start: &[f64], start_value: f64, step: &[f64], bounds: &ActionBounds, cfg: &AcquisitionConfig) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let eval = |x: &[f64]| score_key(f(x));
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), score_key(start_value)));
    for d in 0..n {
        let mut x = start.to_vec();
        x[d] = if x[d] + step[d] <= bounds.high[d] {
            x[d] + step[d]
        } else {
            x[d] - step[d]
        };
        bounds.clip(&mut x);
        let v = eval(&x);
        simplex.push((x, v));
    }
    let range: f64 = (0..n)
        .map(|d| bounds.high[d] - bounds.low[d])
        .fold(0.0, f64::max);

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        // Stable: earlier vertices win ties.
        s.sort_by(|a, b| b.1.total_cmp(&a.1));
    };
    let toward = |from: &[f64], to: &[f64], t: f64| -> Vec<f64> {
        let mut x: Vec<f64> = from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect();
        bounds.clip(&mut x);
        x
    };

    order(&mut simplex);
    for _ in 0..cfg.max_iters {
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (best - worst).abs() <= cfg.tolerance && diameter <= cfg.tolerance * range.max(1.0) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst_x = simplex[n].0.clone();
        let reflected = toward(&centroid, &worst_x, -1.0);
        let fr = eval(&reflected);
        if fr > best {
            let expanded = toward(&centroid, &worst_x, -2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr > simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr > worst {
                (reflected, fr)
            } else {
                (worst_x, worst)
            };
            let contracted = toward(&centroid, &target, 0.5);
            let fc = eval(&contracted);
            if fc > ft {
                simplex[n] = (contracted, fc);
            } else {
                let best_x = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x = toward(&best_x, &vertex.0, 0.5);
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
        order(&mut simplex);
    }
    simplex.swap_remove(0)
}

/// Maximizes `score_fn` given its values on `lattice` (precomputed by the
/// caller, in lattice order).
pub fn maximize_from_lattice<F>(score_fn: &F, bounds: &ActionBounds, cfg: &AcquisitionConfig, lattice: &Lattice, scores: &[f64]) -> (Action, f64)
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(scores.len(), lattice.len());
    let step: Vec<f64> = lattice.spacing().iter().map(|s| 0.5 * s).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for i in top_indices(scores, cfg.top_k) {
        let (x, v) = nelder_mead(score_fn, lattice.point(i), scores[i], &step, bounds, cfg);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    let (x, v) = best.expect("top_k >= 1");
    (Action(x), v)
}

/// Lattice search followed by Nelder–Mead refinement of the `top_k` best
/// lattice points.
pub fn maximize<F>(score_fn: F, bounds: &ActionBounds, cfg: &AcquisitionConfig) -> (Action, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let lattice = Lattice::new(bounds, cfg.grid);
    let scores = lattice.evaluate(&score_fn);
    maximize_from_lattice(&score_fn, bounds, cfg, &lattice, &scores)
}

/// A prior mean over actions with its values cached on the acquisition
/// lattice. The cache is reused by every maximization within one context.
pub struct PriorSurface<'a> {
    f: Option<Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>>,
    lattice: Lattice,
    lattice_values: Vec<f64>,
}

impl<'a> PriorSurface<'a> {
    pub fn new<F>(f: F, bounds: &ActionBounds, cfg: &AcquisitionConfig) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync + 'a,
    {
        let lattice = Lattice::new(bounds, cfg.grid);
        let lattice_values = lattice.evaluate(&f);
        PriorSurface {
            f: Some(Box::new(f)),
            lattice,
            lattice_values,
        }
    }

    pub fn zero(bounds: &ActionBounds, cfg: &AcquisitionConfig) -> Self {
        let lattice = Lattice::new(bounds, cfg.grid);
        let lattice_values = vec![0.0; lattice.len()];
        PriorSurface {
            f: None,
            lattice,
            lattice_values,
        }
    }

    pub fn value(&self, a: &[f64]) -> f64 {
        self.f.as_ref().map_or(0.0, |f| f(a))
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
}

/// `argmax prior(a) + μ(a) + √β σ(a)`.
pub fn select_ucb_action(prior: &PriorSurface<'_>, gp: &GpState, bounds: &ActionBounds, beta: f64, cfg: &AcquisitionConfig) -> Result<Action> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    if gp.kernel().dim() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            got: gp.kernel().dim(),
        });
    }
    if prior.lattice.grid() != cfg.grid || prior.lattice.len() != cfg.grid.pow(bounds.dim() as u32) {
        return Err(Error::InvalidArgument("prior surface built for a different lattice".into()));
    }
    let lattice = &prior.lattice;
    let scores: Vec<f64> = (0..lattice.len())
        .into_par_iter()
        .map(|i| gp.ucb_unchecked(prior.lattice_values[i], lattice.point(i), beta))
        .collect();
    let score = |a: &[f64]| gp.ucb_unchecked(prior.value(a), a, beta);
    Ok(maximize_from_lattice(&score, bounds, cfg, lattice, &scores).0)
}

/// The agent's current best guess: [`select_ucb_action`] with β = 0.
pub fn best_estimate(prior: &PriorSurface<'_>, gp: &GpState, bounds: &ActionBounds, cfg: &AcquisitionConfig) -> Result<Action> {
    select_ucb_action(prior, gp, bounds, 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;

    fn square() -> ActionBounds {
        ActionBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    fn cfg(grid: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            grid,
            top_k: 5,
            max_iters: 100,
            tolerance: 1e-6,
        }
    }

    #[test]
    fn lattice_order_and_endpoints() {
        let l = Lattice::new(&square(), 3);
        assert_eq!(l.len(), 9);
        assert_eq!(l.point(0), &[-1.0, -1.0]);
        assert_eq!(l.point(1), &[-1.0, 0.0]);
        assert_eq!(l.point(3), &[0.0, -1.0]);
        assert_eq!(l.point(8), &[1.0, 1.0]);
    }

    #[test]
    fn quadratic_optimum_found() {
        let c = [0.37, -0.52];
        let (a, v) = maximize(|x: &[f64]| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)), &square(), &cfg(7));
        assert!((a[0] - c[0]).abs() < 1e-3 && (a[1] - c[1]).abs() < 1e-3, "{a:?}");
        assert!(v <= 0.0);
    }

    #[test]
    fn constant_score_returns_first_lattice_point() {
        let (a, v) = maximize(|_: &[f64]| 2.5, &square(), &cfg(5));
        assert_eq!(&a[..], &[-1.0, -1.0]);
        assert_eq!(v, 2.5);
    }

    #[test]
    fn optimum_on_boundary_is_clipped() {
        let (a, _) = maximize(|x: &[f64]| x[0] + x[1], &square(), &cfg(4));
        assert_eq!(&a[..], &[1.0, 1.0]);
    }

    #[test]
    fn top_indices_tie_break() {
        assert_eq!(top_indices(&[1.0, 3.0, 3.0, f64::NAN, 2.0], 3), vec![1, 2, 4]);
    }

    #[test]
    fn empty_gp_zero_beta_maximizes_prior() {
        let b = square();
        let c = cfg(9);
        let k = KernelParams::new(vec![0.3, 0.3], 0.04, 1e-6).unwrap();
        let gp = GpState::new(k).unwrap();
        let prior_fn = |x: &[f64]| -(x[0] - 0.2).powi(2) - (x[1] + 0.4).powi(2);
        let prior = PriorSurface::new(prior_fn, &b, &c);
        let a = best_estimate(&prior, &gp, &b, &c).unwrap();
        let (direct, _) = maximize(prior_fn, &b, &c);
        assert_eq!(a, direct);
    }

    #[test]
    fn zero_prior_empty_gp_is_first_lattice_point() {
        let b = square();
        let c = cfg(6);
        let k = KernelParams::new(vec![0.3, 0.3], 0.04, 1e-6).unwrap();
        let gp = GpState::new(k).unwrap();
        let a = select_ucb_action(&PriorSurface::zero(&b, &c), &gp, &b, 4.0, &c).unwrap();
        assert_eq!(&a[..], &[-1.0, -1.0]);
    }

    #[test]
    fn single_bump_pulls_best_estimate() {
        let b = square();
        let c = cfg(11);
        let k = KernelParams::new(vec![0.3, 0.3], 0.04, 1e-6).unwrap();
        let obs = [0.33, -0.61];
        let gp = GpState::new(k).unwrap().add_observation(&obs, 0.2).unwrap();
        let a = best_estimate(&PriorSurface::zero(&b, &c), &gp, &b, &c).unwrap();
        for d in 0..2 {
            assert!((a[d] - obs[d]).abs() <= 0.2, "{a:?}");
        }
    }

    #[test]
    fn negative_beta_rejected() {
        let b = square();
        let c = cfg(3);
        let gp = GpState::new(KernelParams::new(vec![0.3, 0.3], 0.04, 0.0).unwrap()).unwrap();
        assert!(select_ucb_action(&PriorSurface::zero(&b, &c), &gp, &b, -0.1, &c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AcquisitionConfig::for_kind(MechanismKind::Door).validate().is_ok());
        assert!(AcquisitionConfig { grid: 1, ..cfg(3) }.validate().is_err());
        assert!(AcquisitionConfig { tolerance: 0.0, ..cfg(3) }.validate().is_err());
    }
}
