//! Knot grids and normalized Gaussian kernel weights.
//!
//! For a site `s`, the weight on knot `v_l` is `ω_l(s) = g_l(s) / Σ_m g_m(s)`
//! with `g_l` the isotropic Gaussian density of bandwidth `τ` centred at
//! `v_l`. Normalization happens in log space so sites far from every knot
//! still get weights that sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// A planar location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub x: f64,
    pub y: f64,
}

impl Site {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Site { x, y })
        } else {
            Err(Error::domain(format!("site ({x}, {y}) has non-finite coordinates")))
        }
    }

    #[inline]
    pub fn dist2(&self, other: &Site) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Site) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let r = Rect { x_min, x_max, y_min, y_max };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.x_max > self.x_min && self.y_max > self.y_min {
            Ok(())
        } else {
            Err(Error::domain(format!("degenerate rectangle {self:?}")))
        }
    }

    /// Smallest rectangle holding all sites, padded so it is never degenerate.
    pub fn bounding(sites: &[Site]) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::domain("cannot bound an empty site list"));
        }
        let mut r = Rect {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for s in sites {
            r.x_min = r.x_min.min(s.x);
            r.x_max = r.x_max.max(s.x);
            r.y_min = r.y_min.min(s.y);
            r.y_max = r.y_max.max(s.y);
        }
        let pad = 0.5 * ((r.x_max - r.x_min).max(r.y_max - r.y_min)).max(1e-6) * 1e-3;
        if r.x_max - r.x_min < pad {
            r.x_min -= pad;
            r.x_max += pad;
        }
        if r.y_max - r.y_min < pad {
            r.y_min -= pad;
            r.y_max += pad;
        }
        Ok(r)
    }
}

/// Ordered knot locations `v_1..v_L`, shared by every leaf variable.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    knots: Vec<Site>,
    /// `(dx, dy)` cell size when the grid came from [`make_regular_grid`].
    spacing: Option<(f64, f64)>,
}

impl KnotGrid {
    /// Arbitrary knot list; knots must be finite and pairwise distinct.
    pub fn from_knots(knots: Vec<Site>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::domain("knot grid needs at least one knot"));
        }
        for (i, a) in knots.iter().enumerate() {
            Site::new(a.x, a.y)?;
            if knots[..i].iter().any(|b| b == a) {
                return Err(Error::domain(format!("duplicate knot at ({}, {})", a.x, a.y)));
            }
        }
        Ok(KnotGrid { knots, spacing: None })
    }

    pub fn knots(&self) -> &[Site] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Largest distance from a knot to its nearest neighbour; the lattice
    /// cell size for regular grids. `None` for a single knot.
    pub fn spacing(&self) -> Option<f64> {
        if let Some((dx, dy)) = self.spacing {
            return Some(match (dx.is_finite(), dy.is_finite()) {
                (true, true) => dx.max(dy),
                (true, false) => dx,
                (false, true) => dy,
                (false, false) => return None,
            });
        }
        if self.knots.len() < 2 {
            return None;
        }
        let worst = self
            .knots
            .iter()
            .enumerate()
            .map(|(i, a)| {
                self.knots
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| a.dist2(b))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        Some(worst.sqrt())
    }
}

/// `nx·ny` knots at the cell centres of a regular lattice over `bounds`,
/// in row-major order (x varies fastest).
pub fn make_regular_grid(bounds: Rect, nx: usize, ny: usize) -> Result<KnotGrid> {
    bounds.check()?;
    if nx == 0 || ny == 0 {
        return Err(Error::domain(format!("grid dimensions {nx}x{ny} must be positive")));
    }
    let dx = (bounds.x_max - bounds.x_min) / nx as f64;
    let dy = (bounds.y_max - bounds.y_min) / ny as f64;
    let mut knots = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            knots.push(Site {
                x: bounds.x_min + (i as f64 + 0.5) * dx,
                y: bounds.y_min + (j as f64 + 0.5) * dy,
            });
        }
    }
    let spacing = (
        if nx > 1 { dx } else { f64::INFINITY },
        if ny > 1 { dy } else { f64::INFINITY },
    );
    Ok(KnotGrid { knots, spacing: Some(spacing) })
}

/// A knot grid paired with one Gaussian bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct KernelBasis<'a> {
    pub grid: &'a KnotGrid,
    pub bandwidth: f64,
}

impl<'a> KernelBasis<'a> {
    pub fn new(grid: &'a KnotGrid, bandwidth: f64) -> Result<Self> {
        if bandwidth > 0.0 && bandwidth.is_finite() {
            Ok(KernelBasis { grid, bandwidth })
        } else {
            Err(Error::domain(format!("bandwidth {bandwidth} must be positive")))
        }
    }

    /// `log ω_l(s)` for every knot; `-inf` where a weight underflows.
    pub fn log_weights_into(&self, s: &Site, out: &mut [f64]) {
        log_weights_into(self.grid, self.bandwidth, s, out)
    }

    pub fn log_weights(&self, s: &Site) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.log_weights_into(s, &mut out);
        out
    }

    /// Normalized weights `ω_l(s)`; non-negative and summing to one.
    pub fn weights(&self, s: &Site) -> Vec<f64> {
        self.log_weights(s).into_iter().map(f64::exp).collect()
    }

    /// Row-major `D × L` table of `log ω_l(s_d)`.
    pub fn log_weight_table(&self, sites: &[Site]) -> Vec<f64> {
        let l = self.grid.len();
        let mut table = vec![0.0; sites.len() * l];
        for (d, s) in sites.iter().enumerate() {
            self.log_weights_into(s, &mut table[d * l..(d + 1) * l]);
        }
        table
    }
}

pub(crate) fn log_weights_into(grid: &KnotGrid, bandwidth: f64, s: &Site, out: &mut [f64]) {
    debug_assert_eq!(out.len(), grid.len());
    let scale = -0.5 / (bandwidth * bandwidth);
    for (o, v) in out.iter_mut().zip(grid.knots()) {
        *o = scale * s.dist2(v);
    }
    let norm = log_sum_exp(out.iter().copied());
    for o in out.iter_mut() {
        let w = *o - norm;
        // exp() of anything below this is exactly zero in f64
        *o = if w < -745.2 { f64::NEG_INFINITY } else { w };
    }
}

/// Flag raised when knots are spaced more widely than the kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingWarning {
    pub spacing: f64,
    pub bandwidth: f64,
}

impl std::fmt::Display for SpacingWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "knot spacing {:.4} exceeds kernel bandwidth {:.4}; the fitted field may be artificially non-stationary",
            self.spacing, self.bandwidth
        )
    }
}

/// Advisory check that the knot spacing is at most the bandwidth. Never fatal.
pub fn check_grid_spacing(basis: &KernelBasis<'_>) -> Option<SpacingWarning> {
    let spacing = basis.grid.spacing()?;
    // Equality allowed; small slack absorbs rounding in the lattice arithmetic.
    (spacing > basis.bandwidth * (1.0 + 1e-12))
        .then_some(SpacingWarning { spacing, bandwidth: basis.bandwidth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn study_grid_has_25_knots() {
        let g = make_regular_grid(Rect::new(0.0, 6.0, 0.0, 6.0).unwrap(), 5, 5).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g.spacing().unwrap() - 1.2).abs() < 1e-12);
        assert!(g.knots()[1].dist(&Site { x: 1.8, y: 0.6 }) < 1e-12);
    }

    #[test]
    fn single_knot_sits_at_centre() {
        let g = make_regular_grid(Rect::new(-2.0, 4.0, 1.0, 3.0).unwrap(), 1, 1).unwrap();
        assert_eq!(g.knots(), &[Site { x: 1.0, y: 2.0 }]);
        assert_eq!(g.spacing(), None);
    }

    #[test]
    fn figure_grid_has_ten_thousand_knots() {
        let g = make_regular_grid(unit(), 100, 100).unwrap();
        assert_eq!(g.len(), 10_000);
    }

    #[test]
    fn degenerate_rectangle_is_rejected() {
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        let bad = Rect { x_min: 1.0, x_max: 0.0, y_min: 0.0, y_max: 1.0 };
        assert!(make_regular_grid(bad, 2, 2).is_err());
        assert!(make_regular_grid(unit(), 0, 2).is_err());
    }

    #[test]
    fn duplicate_knots_are_rejected() {
        let s = Site { x: 0.0, y: 0.0 };
        assert!(KnotGrid::from_knots(vec![s, s]).is_err());
    }

    #[test]
    fn single_knot_weight_is_one() {
        let g = make_regular_grid(unit(), 1, 1).unwrap();
        let b = KernelBasis::new(&g, 0.01).unwrap();
        assert_eq!(b.weights(&Site { x: 50.0, y: -3.0 }), vec![1.0]);
    }

    #[test]
    fn equidistant_knots_split_evenly() {
        let g = KnotGrid::from_knots(vec![Site { x: -1.0, y: 0.0 }, Site { x: 1.0, y: 0.0 }])
            .unwrap();
        let b = KernelBasis::new(&g, 0.7).unwrap();
        let w = b.weights(&Site { x: 0.0, y: 5.0 });
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_sites_do_not_underflow() {
        let g = make_regular_grid(unit(), 4, 4).unwrap();
        let b = KernelBasis::new(&g, 0.01).unwrap();
        let w = b.weights(&Site { x: 100.0, y: 100.0 });
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the corner knot dominates
        assert!((w[15] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spacing_advisory() {
        let g = make_regular_grid(Rect::new(0.0, 7.5, 0.0, 7.5).unwrap(), 5, 5).unwrap();
        assert!((g.spacing().unwrap() - 1.5).abs() < 1e-12);
        assert!(check_grid_spacing(&KernelBasis::new(&g, 3.0).unwrap()).is_none());

        let g = make_regular_grid(Rect::new(0.0, 4.0, 0.0, 4.0).unwrap(), 4, 4).unwrap();
        assert!(check_grid_spacing(&KernelBasis::new(&g, 1.0).unwrap()).is_none());

        let g = make_regular_grid(Rect::new(0.0, 8.0, 0.0, 8.0).unwrap(), 4, 4).unwrap();
        let w = check_grid_spacing(&KernelBasis::new(&g, 0.1).unwrap()).unwrap();
        assert!((w.spacing - 2.0).abs() < 1e-12);
    }

    #[test]
    fn irregular_spacing_uses_nearest_neighbours() {
        let g = KnotGrid::from_knots(vec![
            Site { x: 0.0, y: 0.0 },
            Site { x: 1.0, y: 0.0 },
            Site { x: 4.0, y: 0.0 },
        ])
        .unwrap();
        assert!((g.spacing().unwrap() - 3.0).abs() < 1e-12);
    }
}
