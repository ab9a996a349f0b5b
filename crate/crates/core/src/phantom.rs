//! Analytic tissue label maps for tests and synthetic datasets.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;
use crate::volume::{Grid, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// World center, mm.
    pub center: [f64; 3],
    /// Semi-axes, mm.
    pub radii: [f64; 3],
    pub label: u8,
}

impl Ellipsoid {
    pub fn sphere(center: [f64; 3], radius: f64, label: u8) -> Self {
        Ellipsoid {
            center,
            radii: [radius; 3],
            label,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Axis-aligned slab `[from_mm, to_mm)` along one world axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub axis: usize,
    pub from_mm: f64,
    pub to_mm: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    #[serde(default)]
    pub origin: [f64; 3],
    pub medium_label: u8,
    #[serde(default)]
    pub layers: Vec<Layer>,
    /// Painted in order after layers; later shapes win.
    #[serde(default)]
    pub ellipsoids: Vec<Ellipsoid>,
}

impl PhantomSpec {
    pub fn grid(&self) -> Grid {
        Grid::new(self.dims, [self.spacing_mm; 3], self.origin)
    }

    pub fn label_at(&self, p: [f64; 3]) -> u8 {
        let mut l = self.medium_label;
        for layer in &self.layers {
            if p[layer.axis] >= layer.from_mm && p[layer.axis] < layer.to_mm {
                l = layer.label;
            }
        }
        for e in &self.ellipsoids {
            if e.contains(p) {
                l = e.label;
            }
        }
        l
    }

    pub fn build(&self) -> Result<Volume3D> {
        let grid = self.grid();
        let g = grid.clone();
        Volume3D::from_fn_u8(grid, |i, j, k| self.label_at(g.voxel_to_world([i as f64, j as f64, k as f64])))
    }

    /// World extent of the voxel centers along each axis.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 * self.spacing_mm)
    }
}

/// Random ellipsoid inclusion inside a homogeneous medium. The inclusion is
/// kept inside the central part of the grid so probes above it see it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomEllipsoidFamily {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub medium_label: u8,
    pub inclusion_label: u8,
    pub radius_range_mm: [f64; 2],
    /// Optional bright rim or second inclusion label.
    #[serde(default)]
    pub distractor_label: Option<u8>,
}

impl RandomEllipsoidFamily {
    pub fn draw(&self, seed: u64, index: u64) -> PhantomSpec {
        let u = |k: u64| rng::uniform(&[seed, rng::stream::DATASET, index, k]);
        let ext = [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 * self.spacing_mm);
        let [rlo, rhi] = self.radius_range_mm;
        let radii = [0u64, 1, 2].map(|k| rlo + (rhi - rlo) * u(k));
        let center = [0usize, 1, 2].map(|a| {
            let margin = radii[a] + 0.15 * ext[a];
            let span = (ext[a] - 2.0 * margin).max(0.0);
            margin.min(ext[a] / 2.0) + span * u(3 + a as u64)
        });
        let mut ellipsoids = Vec::new();
        if let Some(d) = self.distractor_label {
            let r = 0.5 * (rlo + rhi) * 0.6;
            let c = [0usize, 1, 2].map(|a| ext[a] * (0.2 + 0.6 * u(10 + a as u64)));
            ellipsoids.push(Ellipsoid::sphere(c, r, d));
        }
        ellipsoids.push(Ellipsoid {
            center,
            radii,
            label: self.inclusion_label,
        });
        PhantomSpec {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin: [0.0; 3],
            medium_label: self.medium_label,
            layers: Vec::new(),
            ellipsoids,
        }
    }
}
