//! Path integration of the state carried by an [`Immersion`] (parallel
//! frames, flat coordinates, parallel sections), plus a finite-difference
//! wrapper for maps whose analytic jet order is exhausted.

use std::sync::Arc;

use rayon::prelude::*;

use crate::grid::Grid;
use crate::jets::{fd_jet, FdConfig, Jet2};
use crate::surfaces::{check_order, Immersion};
use crate::{Domain, Error, Jet4, Result, Vec2};

/// `(∂u s, ∂v s)` at `at`.
fn state_rhs(imm: &dyn Immersion, at: Vec2, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let jets = imm.state_jets(at, s, 1)?;
    let du: Vec<f64> = jets.iter().map(|j| j.coeff(1, 0)).collect();
    let dv: Vec<f64> = jets.iter().map(|j| j.coeff(0, 1)).collect();
    if du.iter().chain(&dv).all(|x| x.is_finite()) {
        Ok((du, dv))
    } else {
        Err(Error::NotImmersion(at[0], at[1]))
    }
}

fn axpy(s: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    s.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Relative local error accepted per RK4 step.
const STEP_TOL: f64 = 1e-8;
/// Maximum number of step halvings below the requested step.
const MAX_REFINE: u32 = 6;

type Slope<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a;
type Stepper<'a> = dyn Fn(f64, &[f64], f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// Integrate along a coordinate segment from `from` to the point with
/// coordinate `to` on `axis`, using at least `steps` classical RK4 steps.
/// Each step is checked against two half steps and subdivided while the
/// difference exceeds the local tolerance, which keeps the error under
/// control next to curves where the connection coefficients blow up.
pub fn rk4_leg(imm: &dyn Immersion, from: Vec2, state: &[f64], axis: usize, to: f64, steps: usize) -> Result<Vec<f64>> {
    let mut s = state.to_vec();
    if s.is_empty() || to == from[axis] {
        return Ok(s);
    }
    let steps = steps.max(1);
    let h = (to - from[axis]) / steps as f64;
    let pick = |t: f64, s: &[f64]| -> Result<Vec<f64>> {
        let mut at = from;
        at[axis] = t;
        let (du, dv) = state_rhs(imm, at, s)?;
        Ok(if axis == 0 { du } else { dv })
    };
    let step = |t: f64, s: &[f64], h: f64, k1: &[f64]| -> Result<Vec<f64>> {
        let k2 = pick(t + 0.5 * h, &axpy(s, 0.5 * h, k1))?;
        let k3 = pick(t + 0.5 * h, &axpy(s, 0.5 * h, &k2))?;
        let k4 = pick(t + h, &axpy(s, h, &k3))?;
        Ok((0..s.len())
            .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    };
    fn refine(t: f64, s: &[f64], h: f64, depth: u32, pick: &Slope<'_>, step: &Stepper<'_>) -> Result<Vec<f64>> {
        let k1 = pick(t, s)?;
        let full = step(t, s, h, &k1)?;
        let half = step(t, s, 0.5 * h, &k1)?;
        let two = step(t + 0.5 * h, &half, 0.5 * h, &pick(t + 0.5 * h, &half)?)?;
        let scale = 1.0 + s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let err = full.iter().zip(&two).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if err <= STEP_TOL * scale || !err.is_finite() || depth == 0 {
            return Ok(two.iter().zip(&full).map(|(b, a)| b + (b - a) / 15.0).collect());
        }
        let mid = refine(t, s, 0.5 * h, depth - 1, pick, step)?;
        refine(t + 0.5 * h, &mid, 0.5 * h, depth - 1, pick, step)
    }
    for n in 0..steps {
        let t0 = from[axis] + n as f64 * h;
        let hn = if n + 1 == steps { to - t0 } else { h };
        s = refine(t0, &s, hn, MAX_REFINE, &pick, &step)?;
    }
    let mut at = from;
    at[axis] = to;
    if s.iter().all(|x| x.is_finite()) && imm.state_valid(at, &s) {
        Ok(s)
    } else {
        Err(Error::NotImmersion(at[0], at[1]))
    }
}

/// Carry `state` from `from` to `to` along the `u` leg, then the `v` leg.
pub fn transport(imm: &dyn Immersion, from: Vec2, state: &[f64], to: Vec2, steps: usize) -> Result<Vec<f64>> {
    let s = rk4_leg(imm, from, state, 0, to[0], steps)?;
    rk4_leg(imm, [to[0], from[1]], &s, 1, to[1], steps)
}

/// Carry `state` over a short distance with one classical RK4 step per leg
/// and no error control; meant for finite-difference stencils.
fn transport_short(imm: &dyn Immersion, from: Vec2, state: &[f64], to: Vec2) -> Result<Vec<f64>> {
    let mut s = state.to_vec();
    let mut at = from;
    for axis in 0..2 {
        let h = to[axis] - at[axis];
        if s.is_empty() || h == 0.0 {
            continue;
        }
        let t = at[axis];
        let pick = |dt: f64, s: &[f64]| -> Result<Vec<f64>> {
            let mut q = at;
            q[axis] = t + dt;
            let (du, dv) = state_rhs(imm, q, s)?;
            Ok(if axis == 0 { du } else { dv })
        };
        let k1 = pick(0.0, &s)?;
        let k2 = pick(0.5 * h, &axpy(&s, 0.5 * h, &k1))?;
        let k3 = pick(0.5 * h, &axpy(&s, 0.5 * h, &k2))?;
        let k4 = pick(h, &axpy(&s, h, &k3))?;
        for i in 0..s.len() {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        at[axis] = to[axis];
    }
    Ok(s)
}

/// Path-integrated state at every grid node; `None` marks nodes the
/// integration could not reach.
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: Grid,
    pub start: (usize, usize),
    pub states: Vec<Option<Vec<f64>>>,
    pub substeps: usize,
}

impl Solution {
    /// Solution of an immersion without state.
    pub fn stateless(grid: Grid) -> Self {
        Solution {
            grid,
            start: (0, 0),
            states: vec![Some(Vec::new()); grid.len()],
            substeps: 1,
        }
    }

    /// Integrate from `start` with `init` along the base row, then along
    /// every column.
    pub fn solve(imm: &dyn Immersion, grid: Grid, start: (usize, usize), init: Vec<f64>, substeps: usize) -> Self {
        let (i0, j0) = start;
        let mut row: Vec<Option<Vec<f64>>> = vec![None; grid.nu];
        if init.iter().all(|x| x.is_finite()) && imm.state_valid(grid.point(i0, j0), &init) {
            row[i0] = Some(init);
        }
        let step = |from: (usize, usize), s: &[f64], to: (usize, usize)| -> Option<Vec<f64>> {
            let (p, q) = (grid.point(from.0, from.1), grid.point(to.0, to.1));
            let axis = if from.0 != to.0 { 0 } else { 1 };
            rk4_leg(imm, p, s, axis, q[axis], substeps).ok()
        };
        for i in i0 + 1..grid.nu {
            row[i] = row[i - 1].as_ref().and_then(|s| step((i - 1, j0), s, (i, j0)));
        }
        for i in (0..i0).rev() {
            row[i] = row[i + 1].as_ref().and_then(|s| step((i + 1, j0), s, (i, j0)));
        }
        let columns: Vec<Vec<Option<Vec<f64>>>> = (0..grid.nu)
            .into_par_iter()
            .map(|i| {
                let mut col = vec![None; grid.nv];
                col[j0] = row[i].clone();
                for j in j0 + 1..grid.nv {
                    col[j] = col[j - 1].as_ref().and_then(|s| step((i, j - 1), s, (i, j)));
                }
                for j in (0..j0).rev() {
                    col[j] = col[j + 1].as_ref().and_then(|s| step((i, j + 1), s, (i, j)));
                }
                col
            })
            .collect();
        let mut states = vec![None; grid.len()];
        for (i, col) in columns.into_iter().enumerate() {
            for (j, s) in col.into_iter().enumerate() {
                states[grid.index(i, j)] = s;
            }
        }
        Solution {
            grid,
            start,
            states,
            substeps,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.states[self.grid.index(i, j)].as_deref()
    }

    pub fn coverage(&self) -> f64 {
        self.states.iter().filter(|s| s.is_some()).count() as f64 / self.states.len() as f64
    }

    /// Reachable node nearest to `target` (grid index distance, ties by index).
    pub fn nearest_valid(&self, target: (usize, usize)) -> Option<(usize, usize)> {
        (0..self.grid.len())
            .filter(|k| self.states[*k].is_some())
            .map(|k| self.grid.ij(k))
            .min_by_key(|&(i, j)| {
                let di = i.abs_diff(target.0);
                let dj = j.abs_diff(target.1);
                (di * di + dj * dj, j, i)
            })
    }

    /// State at an arbitrary chart point, transported from the nearest node.
    pub fn state_at(&self, imm: &dyn Immersion, at: Vec2) -> Result<Vec<f64>> {
        let (i, j) = self.grid.nearest(at);
        let (i, j) = self.nearest_valid((i, j)).ok_or(Error::NoReachableBase)?;
        let s = self.get(i, j).unwrap();
        transport(imm, self.grid.point(i, j), s, at, self.substeps)
    }
}

/// Fill Taylor coefficients of a state solving `∂u s = F_u(s)`, `∂v s = F_v(s)`
/// from its value, degree by degree. `rhs` receives the current state jets
/// (order `order`) and must return the two derivative jets, correct to
/// degree `d` whenever its input is correct to degree `d`.
pub fn integrate_jets<F>(init: &[f64], order: usize, rhs: F) -> Result<Vec<Jet2>>
where
    F: Fn(&[Jet2]) -> Result<(Vec<Jet2>, Vec<Jet2>)>,
{
    let mut s: Vec<Jet2> = init.iter().map(|x| Jet2::constant(*x, order)).collect();
    for d in 0..order {
        let (fu, fv) = rhs(&s)?;
        let n = d + 1;
        for (m, sm) in s.iter_mut().enumerate() {
            for a in 0..=n {
                let b = n - a;
                let c = if a >= 1 {
                    fu[m].coeff(a - 1, b) / a as f64
                } else {
                    fv[m].coeff(0, b - 1) / b as f64
                };
                sm.set_coeff(a, b, c);
            }
        }
    }
    Ok(s)
}

/// Finite-difference jets (order ≤ 2) of a map evaluated at order 0, with
/// state carried to every stencil point by transport.
pub struct FdImmersion {
    inner: Arc<dyn Immersion>,
    cfg: FdConfig,
    /// Use finite differences even when analytic jets are available.
    force: bool,
}

impl FdImmersion {
    pub fn new(inner: Arc<dyn Immersion>, cfg: FdConfig, force: bool) -> Self {
        FdImmersion { inner, cfg, force }
    }

    /// Wrap `imm` only when it cannot supply second-order jets itself.
    pub fn ensure_order2(imm: Arc<dyn Immersion>) -> Arc<dyn Immersion> {
        if imm.max_order() >= 2 {
            imm
        } else {
            Arc::new(FdImmersion::new(imm, FdConfig::default(), false))
        }
    }
}

impl Immersion for FdImmersion {
    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn max_order(&self) -> usize {
        if self.force {
            2
        } else {
            self.inner.max_order().max(2)
        }
    }

    fn exact_order(&self) -> usize {
        if self.force {
            0
        } else {
            self.inner.exact_order()
        }
    }

    fn jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Jet4> {
        check_order(order, self.max_order())?;
        if !self.force && order <= self.inner.max_order() {
            return self.inner.jets(at, state, order);
        }
        let bounds = self.inner.domain().bounds();
        let j = fd_jet(
            |q| {
                let s = transport_short(self.inner.as_ref(), at, state, q)?;
                Ok::<_, Error>(self.inner.jets(q, &s, 0)?.map(|x| x.value()).to_vec())
            },
            at,
            order,
            &self.cfg,
            Some(&bounds),
        )?;
        Ok([j[0], j[1], j[2], j[3]])
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn state_max_order(&self) -> usize {
        self.inner.state_max_order()
    }

    fn state_jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Vec<Jet2>> {
        self.inner.state_jets(at, state, order)
    }

    fn state_valid(&self, at: Vec2, state: &[f64]) -> bool {
        self.inner.state_valid(at, state)
    }

    fn fd_bounds(&self) -> Option<crate::jets::Bounds> {
        Some(self.inner.domain().bounds())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `s = (exp(u + 2v))` carried as state of the plane.
    struct ExpState;

    impl Immersion for ExpState {
        fn domain(&self) -> Domain {
            Domain::new(-1.0, 1.0, -1.0, 1.0).unwrap()
        }
        fn max_order(&self) -> usize {
            4
        }
        fn jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Jet4> {
            let (u, v) = Jet2::coords(at, order);
            let s = self.state_jets(at, state, order)?[0];
            Ok([u, v, s, Jet2::zero(order)])
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn state_jets(&self, _at: Vec2, state: &[f64], order: usize) -> Result<Vec<Jet2>> {
            integrate_jets(state, order, |s| Ok((vec![s[0]], vec![s[0] * 2.0])))
        }
    }

    #[test]
    fn jet_recursion_reproduces_exponential() {
        let s = ExpState.state_jets([0.0, 0.0], &[1.0], 4).unwrap();
        let (u, v) = Jet2::coords([0.0, 0.0], 4);
        let want = (u + v * 2.0).exp();
        for (a, b) in s[0].coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_solution_and_transport() {
        let grid = Grid::new(ExpState.domain(), 11, 9).unwrap();
        let sol = Solution::solve(&ExpState, grid, (5, 4), vec![1.0], 16);
        let mut worst: f64 = 0.0;
        for k in 0..grid.len() {
            let p = grid.point_at(k);
            let s = sol.states[k].as_ref().unwrap()[0];
            worst = worst.max((s / (p[0] + 2.0 * p[1]).exp() - 1.0).abs());
        }
        assert!(worst < 1e-7, "{worst}");
        let s = sol.state_at(&ExpState, [0.33, -0.41]).unwrap()[0];
        assert!((s - (0.33f64 - 0.82).exp()).abs() < 1e-7);
    }

    #[test]
    fn fd_wrapper_matches_analytic_second_derivatives() {
        let imm: Arc<dyn Immersion> = Arc::new(ExpState);
        let fd = FdImmersion::new(imm.clone(), FdConfig::default(), true);
        let at = [0.1, 0.2];
        let s = [(0.5f64).exp()];
        let a = imm.jets(at, &s, 2).unwrap()[2];
        let b = fd.jets(at, &s, 2).unwrap()[2];
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
    }
}
