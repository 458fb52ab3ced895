//! Rectangular sample lattices and grid-sampled fields along a surface.

use serde::{Deserialize, Serialize};

use crate::{Domain, Error, Result, Vec2, Vec4};

/// `nu × nv` lattice of chart points including the domain corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Domain,
    pub nu: usize,
    pub nv: usize,
}

impl Grid {
    pub fn new(domain: Domain, nu: usize, nv: usize) -> Result<Self> {
        if nu < 2 || nv < 2 {
            return Err(Error::InvalidSpec(format!("grid too small: {nu} x {nv}")));
        }
        Ok(Grid { domain, nu, nv })
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn du(&self) -> f64 {
        (self.domain.u[1] - self.domain.u[0]) / (self.nu - 1) as f64
    }

    pub fn dv(&self) -> f64 {
        (self.domain.v[1] - self.domain.v[0]) / (self.nv - 1) as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nu + i
    }

    #[inline]
    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.nu, index / self.nu)
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        // exact endpoints
        let u = if i + 1 == self.nu {
            self.domain.u[1]
        } else {
            self.domain.u[0] + i as f64 * self.du()
        };
        let v = if j + 1 == self.nv {
            self.domain.v[1]
        } else {
            self.domain.v[0] + j as f64 * self.dv()
        };
        [u, v]
    }

    pub fn point_at(&self, index: usize) -> Vec2 {
        let (i, j) = self.ij(index);
        self.point(i, j)
    }

    pub fn nearest(&self, at: Vec2) -> (usize, usize) {
        let i = ((at[0] - self.domain.u[0]) / self.du()).round();
        let j = ((at[1] - self.domain.v[0]) / self.dv()).round();
        (
            i.clamp(0.0, (self.nu - 1) as f64) as usize,
            j.clamp(0.0, (self.nv - 1) as f64) as usize,
        )
    }

    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.len()).map(|k| self.point_at(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bundle {
    Tangent,
    Normal,
}

/// Vector field sampled at grid nodes; `None` marks a masked node.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionField {
    pub bundle: Bundle,
    pub grid: Grid,
    pub values: Vec<Option<Vec4>>,
}

impl SectionField {
    pub fn new(bundle: Bundle, grid: Grid, values: Vec<Option<Vec4>>) -> Self {
        assert_eq!(values.len(), grid.len());
        SectionField { bundle, grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<Vec4> {
        self.values[self.grid.index(i, j)]
    }

    /// Fraction of unmasked nodes.
    pub fn coverage(&self) -> f64 {
        self.values.iter().filter(|v| v.is_some()).count() as f64 / self.values.len() as f64
    }

    /// Bicubic (local 4×4 Lagrange) interpolation; `None` when the patch
    /// touches a masked node or the grid is smaller than 4×4.
    pub fn interpolate(&self, at: Vec2) -> Option<Vec4> {
        let g = &self.grid;
        if g.nu < 4 || g.nv < 4 {
            return None;
        }
        let su = (at[0] - g.domain.u[0]) / g.du();
        let sv = (at[1] - g.domain.v[0]) / g.dv();
        let i0 = (su.floor() as i64 - 1).clamp(0, g.nu as i64 - 4) as usize;
        let j0 = (sv.floor() as i64 - 1).clamp(0, g.nv as i64 - 4) as usize;
        let w = |s: f64| {
            [
                -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
                s * (s - 2.0) * (s - 3.0) / 2.0,
                -s * (s - 1.0) * (s - 3.0) / 2.0,
                s * (s - 1.0) * (s - 2.0) / 6.0,
            ]
        };
        let (wu, wv) = (w(su - i0 as f64), w(sv - j0 as f64));
        let mut out = [0.0; 4];
        for (b, wb) in wv.iter().enumerate() {
            for (a, wa) in wu.iter().enumerate() {
                let p = self.get(i0 + a, j0 + b)?;
                for k in 0..4 {
                    out[k] += wa * wb * p[k];
                }
            }
        }
        Some(out)
    }
}
