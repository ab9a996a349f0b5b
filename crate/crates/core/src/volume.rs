//! Scalar 3D grids with physical geometry, sampling and resampling.
//!
//! Voxel data is stored x-fastest. A voxel index `(i, j, k)` maps to world
//! space as `origin + direction * (spacing ∘ (i, j, k))`; `origin` is the
//! world position of the center of voxel `(0, 0, 0)`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates within this distance (in voxels) of the grid are still inside.
const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Float32,
    UInt8,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::F32(v) => v.len(),
            VoxelData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            VoxelData::F32(_) => ElementKind::Float32,
            VoxelData::U8(_) => ElementKind::UInt8,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            VoxelData::F32(v) => v[i] as f64,
            VoxelData::U8(v) => v[i] as f64,
        }
    }

    /// Little-endian byte image of the voxel data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::U8(v) => v.clone(),
        }
    }
}

/// Physical sampling geometry shared by volumes on the same lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub direction: Matrix3<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Grid {
            dims,
            spacing,
            origin,
            direction: Matrix3::identity(),
        }
    }

    pub fn with_direction(mut self, direction: Matrix3<f64>) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("zero dimension in {:?}", self.dims)));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::BadSpacing(self.spacing));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite origin {:?}", self.origin)));
        }
        let gram = self.direction.transpose() * self.direction;
        if (gram - Matrix3::identity()).abs().max() > 1e-6 || !gram.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidVolume("direction matrix is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn voxel_to_world(&self, c: [f64; 3]) -> [f64; 3] {
        let scaled = Vector3::new(
            c[0] * self.spacing[0],
            c[1] * self.spacing[1],
            c[2] * self.spacing[2],
        );
        let w = Vector3::from(self.origin) + self.direction * scaled;
        [w.x, w.y, w.z]
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        let local = self.direction.transpose() * (Vector3::from(p) - Vector3::from(self.origin));
        [
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        ]
    }

    /// World position of the grid's geometric center.
    pub fn center(&self) -> [f64; 3] {
        self.voxel_to_world([
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ])
    }

    /// Nearest voxel index per axis, ties toward the lower index.
    #[inline]
    pub fn nearest_index(&self, c: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let n = (c[a] - 0.5).ceil();
            if !(n >= 0.0 && n < self.dims[a] as f64) {
                return None;
            }
            out[a] = n as usize;
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: VoxelData,
    /// MetaImage keys without semantic meaning here, preserved across I/O.
    extra: Vec<(String, String)>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: VoxelData) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "voxel data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Volume3D {
            grid,
            data,
            extra: Vec::new(),
        })
    }

    pub fn zeros_f32(grid: Grid) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, VoxelData::F32(vec![0.0; n]))
    }

    pub fn zeros_u8(grid: Grid) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, VoxelData::U8(vec![0; n]))
    }

    /// Build a volume by evaluating `f(i, j, k)` on every voxel.
    pub fn from_fn_f32(grid: Grid, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let data = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self::new(grid, VoxelData::F32(data))
    }

    pub fn from_fn_u8(grid: Grid, f: impl Fn(usize, usize, usize) -> u8) -> Result<Self> {
        let data = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self::new(grid, VoxelData::U8(data))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }
    pub fn origin(&self) -> [f64; 3] {
        self.grid.origin
    }
    pub fn direction(&self) -> &Matrix3<f64> {
        &self.grid.direction
    }
    pub fn data(&self) -> &VoxelData {
        &self.data
    }
    pub fn kind(&self) -> ElementKind {
        self.data.kind()
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn extra(&self) -> &[(String, String)] {
        &self.extra
    }
    pub fn set_extra(&mut self, extra: Vec<(String, String)>) {
        self.extra = extra;
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            VoxelData::F32(v) => Some(v),
            VoxelData::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            VoxelData::U8(v) => Some(v),
            VoxelData::F32(_) => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut [f32]> {
        match &mut self.data {
            VoxelData::F32(v) => Some(v),
            VoxelData::U8(_) => None,
        }
    }

    pub fn as_u8_mut(&mut self) -> Option<&mut [u8]> {
        match &mut self.data {
            VoxelData::U8(v) => Some(v),
            VoxelData::F32(_) => None,
        }
    }

    pub fn into_data(self) -> VoxelData {
        self.data
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data.get(self.grid.index(i, j, k))
    }

    pub fn voxel_to_world(&self, c: [f64; 3]) -> [f64; 3] {
        self.grid.voxel_to_world(c)
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        self.grid.world_to_voxel(p)
    }

    /// Sample at world point `p`; points outside the grid give 0.
    pub fn sample(&self, p: [f64; 3], interp: Interpolation) -> f64 {
        self.sample_voxel(self.world_to_voxel(p), interp)
    }

    /// Sample at a continuous voxel coordinate.
    pub fn sample_voxel(&self, c: [f64; 3], interp: Interpolation) -> f64 {
        match interp {
            Interpolation::Nearest => match self.grid.nearest_index(c) {
                Some([i, j, k]) => self.value(i, j, k),
                None => 0.0,
            },
            Interpolation::Trilinear => self.trilinear(c),
        }
    }

    fn trilinear(&self, c: [f64; 3]) -> f64 {
        let dims = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let hi = dims[a] as f64 - 1.0;
            if !(c[a] >= -EDGE_TOLERANCE && c[a] <= hi + EDGE_TOLERANCE) {
                return 0.0;
            }
            let x = c[a].clamp(0.0, hi);
            let i0 = (x.floor() as usize).min(dims[a].saturating_sub(2));
            base[a] = i0;
            frac[a] = x - i0 as f64;
        }
        let mut acc = 0.0;
        for dk in 0..2 {
            let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
            if wk == 0.0 {
                continue;
            }
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                if wj == 0.0 {
                    continue;
                }
                for di in 0..2 {
                    let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wi == 0.0 {
                        continue;
                    }
                    acc += wi * wj * wk * self.value(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
        acc
    }

    /// Resample onto an isotropic or anisotropic grid covering the same
    /// world extent, anchored at the input's outer corner.
    pub fn resample(&self, target_spacing: [f64; 3], interp: Interpolation) -> Result<Volume3D> {
        if target_spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::BadSpacing(target_spacing));
        }
        check_interp(self.kind(), interp)?;
        let src = &self.grid;
        let mut dims = [0usize; 3];
        let mut scale = [0.0; 3];
        let mut offset = [0.0; 3];
        for a in 0..3 {
            let extent = src.dims[a] as f64 * src.spacing[a];
            if extent <= 0.0 || !extent.is_finite() {
                return Err(Error::InvalidVolume("degenerate extent".into()));
            }
            dims[a] = ((extent / target_spacing[a]) - 1e-9).ceil().max(1.0) as usize;
            scale[a] = target_spacing[a] / src.spacing[a];
            offset[a] = (scale[a] - 1.0) / 2.0;
        }
        let origin = src.voxel_to_world(offset);
        let grid = Grid {
            dims,
            spacing: target_spacing,
            origin,
            direction: src.direction,
        };
        let hi = [
            src.dims[0] as f64 - 1.0,
            src.dims[1] as f64 - 1.0,
            src.dims[2] as f64 - 1.0,
        ];
        let coord = |idx: [usize; 3]| -> [f64; 3] {
            let mut c = [0.0; 3];
            for a in 0..3 {
                c[a] = (idx[a] as f64 * scale[a] + offset[a]).clamp(0.0, hi[a]);
            }
            c
        };
        self.fill_from(grid, interp, coord)
    }

    /// Resample onto an arbitrary target grid; points falling outside this
    /// volume receive 0.
    pub fn resample_to_grid(&self, target: &Grid, interp: Interpolation) -> Result<Volume3D> {
        target.validate()?;
        check_interp(self.kind(), interp)?;
        if target == &self.grid {
            return Ok(Volume3D {
                grid: target.clone(),
                data: self.data.clone(),
                extra: Vec::new(),
            });
        }
        let coord = |idx: [usize; 3]| {
            let w = target.voxel_to_world([idx[0] as f64, idx[1] as f64, idx[2] as f64]);
            self.world_to_voxel(w)
        };
        self.fill_from(target.clone(), interp, coord)
    }

    fn fill_from<F>(&self, grid: Grid, interp: Interpolation, coord: F) -> Result<Volume3D>
    where
        F: Fn([usize; 3]) -> [f64; 3] + Sync,
    {
        let plane = grid.dims[0] * grid.dims[1];
        let g = &grid;
        let data = match self.kind() {
            ElementKind::Float32 => {
                let mut out = vec![0f32; grid.len()];
                out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
                    for (n, v) in slab.iter_mut().enumerate() {
                        let c = coord([n % g.dims[0], n / g.dims[0], k]);
                        *v = self.sample_voxel(c, interp) as f32;
                    }
                });
                VoxelData::F32(out)
            }
            ElementKind::UInt8 => {
                let mut out = vec![0u8; grid.len()];
                out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
                    for (n, v) in slab.iter_mut().enumerate() {
                        let c = coord([n % g.dims[0], n / g.dims[0], k]);
                        *v = self.sample_voxel(c, Interpolation::Nearest) as u8;
                    }
                });
                VoxelData::U8(out)
            }
        };
        Volume3D::new(grid, data)
    }

    /// Sorted distinct values of a label volume.
    pub fn unique_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        match &self.data {
            VoxelData::U8(v) => v.iter().for_each(|&x| seen[x as usize] = true),
            VoxelData::F32(v) => v
                .iter()
                .filter(|x| (0.0..=255.0).contains(*x))
                .for_each(|&x| seen[x as usize] = true),
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Binary mask (0/1, uint8) of voxels whose value satisfies `pred`.
    pub fn mask_where(&self, pred: impl Fn(f64) -> bool) -> Volume3D {
        let data = (0..self.len()).map(|i| pred(self.data.get(i)) as u8).collect();
        Volume3D {
            grid: self.grid.clone(),
            data: VoxelData::U8(data),
            extra: Vec::new(),
        }
    }
}

fn check_interp(kind: ElementKind, interp: Interpolation) -> Result<()> {
    if kind == ElementKind::UInt8 && interp != Interpolation::Nearest {
        return Err(Error::Config("label (uint8) volumes must use nearest interpolation".into()));
    }
    Ok(())
}
