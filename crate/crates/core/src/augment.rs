//! Random similarity augmentation and patch extraction.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::volume::{ElementKind, Grid, Interpolation, Volume3D, VoxelData};

/// `x' = c + s·R·(x − c) + t` in world millimetres. A `None` center binds
/// to the volume center when applied.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation_mm: [f64; 3],
    pub center_mm: Option<[f64; 3]>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation_mm: [0.0; 3],
            center_mm: None,
        }
    }

    /// From XYZ Euler angles in degrees, X applied first.
    pub fn from_euler_deg(scale: f64, angles: [f64; 3]) -> Self {
        let [x, y, z] = angles.map(f64::to_radians);
        SimilarityTransform {
            scale,
            rotation: *Rotation3::from_euler_angles(x, y, z).matrix(),
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("similarity scale must be positive, got {}", self.scale)));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::Config("similarity rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let t = rt * Vector3::from(self.translation_mm) / self.scale;
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation_mm: [-t.x, -t.y, -t.z],
            center_mm: self.center_mm,
        }
    }

    fn bound_center(&self, grid: &Grid) -> Vector3<f64> {
        Vector3::from(self.center_mm.unwrap_or_else(|| grid.center()))
    }

    pub fn apply_point(&self, c: &Vector3<f64>, p: [f64; 3]) -> [f64; 3] {
        let q = c + self.scale * (self.rotation * (Vector3::from(p) - c)) + Vector3::from(self.translation_mm);
        [q.x, q.y, q.z]
    }
}

/// Draw a random similarity with scale in `1 ± max_scale_pct/100` and each
/// Euler angle in `±max_rot_deg`.
pub fn draw_similarity(seed: u64, index: u64, max_scale_pct: f64, max_rot_deg: f64) -> SimilarityTransform {
    let u = |k: u64| 2.0 * rng::uniform(&[seed, stream::AUGMENT, index, k]) - 1.0;
    let scale = 1.0 + max_scale_pct / 100.0 * u(0);
    let angles = [u(1), u(2), u(3)].map(|a| max_rot_deg * a);
    SimilarityTransform::from_euler_deg(scale, angles)
}

/// Warp `vol` by `t` onto its own grid. uint8 volumes always use nearest.
pub fn apply_transform(vol: &Volume3D, t: &SimilarityTransform, interp: Interpolation) -> Result<Volume3D> {
    t.validate()?;
    let grid = vol.grid().clone();
    let c = t.bound_center(&grid);
    let inv = t.inverse();
    let at = |i: usize, j: usize, k: usize| {
        let p = grid.voxel_to_world([i as f64, j as f64, k as f64]);
        inv.apply_point(&c, p)
    };
    match vol.kind() {
        ElementKind::UInt8 => Volume3D::from_fn_u8(grid.clone(), |i, j, k| vol.sample(at(i, j, k), Interpolation::Nearest) as u8),
        ElementKind::Float32 => Volume3D::from_fn_f32(grid.clone(), |i, j, k| vol.sample(at(i, j, k), interp) as f32),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    ForegroundBiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub pad_value: f64,
    pub sampling: Sampling,
    pub foreground_fraction: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: [128; 3],
            pad_value: 0.0,
            sampling: Sampling::ForegroundBiased,
            foreground_fraction: 0.5,
        }
    }
}

impl PatchSpec {
    pub fn cube(n: usize) -> Self {
        PatchSpec {
            size: [n; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.contains(&0) {
            return Err(Error::Config("patch size components must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::Config("foreground_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub image: Volume3D,
    pub label: Volume3D,
    /// Voxel index of the patch origin in the source volume.
    pub corner: [usize; 3],
    /// A foreground-biased draw was requested but the label is empty.
    pub foreground_fallback: bool,
}

/// Summed-area table of foreground counts, (n+1)-padded on each axis.
struct Integral {
    dims: [usize; 3],
    sums: Vec<u32>,
}

impl Integral {
    fn new(label: &[u8], dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let mut sums = vec![0u32; sx * sy * (nz + 1)];
        let at = |x: usize, y: usize, z: usize| x + sx * (y + sy * z);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = (label[x + nx * (y + ny * z)] > 0) as u32;
                    sums[at(x + 1, y + 1, z + 1)] = v + sums[at(x, y + 1, z + 1)] + sums[at(x + 1, y, z + 1)]
                        + sums[at(x + 1, y + 1, z)]
                        - sums[at(x, y, z + 1)]
                        - sums[at(x, y + 1, z)]
                        - sums[at(x + 1, y, z)]
                        + sums[at(x, y, z)];
                }
            }
        }
        Integral { dims, sums }
    }

    fn total(&self) -> u32 {
        let [nx, ny, nz] = self.dims;
        self.sums[nx + (nx + 1) * (ny + (ny + 1) * nz)]
    }

    /// Foreground count in [lo, hi) clipped to the volume.
    fn count(&self, lo: [usize; 3], hi: [usize; 3]) -> u32 {
        let hi = [0, 1, 2].map(|a| hi[a].min(self.dims[a]));
        let (sx, sy) = (self.dims[0] + 1, self.dims[1] + 1);
        let s = |x: usize, y: usize, z: usize| self.sums[x + sx * (y + sy * z)] as i64;
        let (a, b) = (lo, hi);
        (s(b[0], b[1], b[2]) - s(a[0], b[1], b[2]) - s(b[0], a[1], b[2]) - s(b[0], b[1], a[2])
            + s(a[0], a[1], b[2])
            + s(a[0], b[1], a[2])
            + s(b[0], a[1], a[2])
            - s(a[0], a[1], a[2])) as u32
    }
}

/// Draw one patch. The corner is a pure function of `(seed, index)` and
/// the label volume.
pub fn sample_patch(image: &Volume3D, label: &Volume3D, spec: &PatchSpec, seed: u64, index: u64) -> Result<Patch> {
    spec.validate()?;
    if image.grid() != label.grid() {
        return Err(Error::ShapeMismatch("image and label must share a grid".into()));
    }
    let labels = label
        .as_u8()
        .ok_or_else(|| Error::Config("label volume must be uint8".into()))?;
    let dims = image.dims();
    let p = spec.size;
    // number of admissible corners per axis
    let range = [0, 1, 2].map(|a| dims[a].saturating_sub(p[a]) + 1);
    let biased = spec.sampling == Sampling::ForegroundBiased
        && rng::uniform(&[seed, stream::PATCH, index, 0]) < spec.foreground_fraction;
    let uniform_corner = || [0, 1, 2].map(|a| rng::below(&[seed, stream::PATCH, index, 1 + a as u64], range[a] as u64) as usize);
    let mut fallback = false;
    let corner = if biased {
        let integral = Integral::new(labels, dims);
        if integral.total() == 0 {
            fallback = true;
            uniform_corner()
        } else {
            let valid = |c: [usize; 3]| integral.count(c, [c[0] + p[0], c[1] + p[1], c[2] + p[2]]) > 0;
            let mut corners = Vec::new();
            for z in 0..range[2] {
                for y in 0..range[1] {
                    for x in 0..range[0] {
                        if valid([x, y, z]) {
                            corners.push([x, y, z]);
                        }
                    }
                }
            }
            corners[rng::below(&[seed, stream::PATCH, index, 4], corners.len() as u64) as usize]
        }
    } else {
        uniform_corner()
    };
    Ok(Patch {
        image: extract(image, corner, p, spec.pad_value)?,
        label: extract(label, corner, p, 0.0)?,
        corner,
        foreground_fallback: fallback,
    })
}

/// Copy the box at `corner` of size `size`, padding outside the source.
pub fn extract(vol: &Volume3D, corner: [usize; 3], size: [usize; 3], pad: f64) -> Result<Volume3D> {
    let g = vol.grid();
    let origin = g.voxel_to_world(corner.map(|c| c as f64));
    let grid = Grid::new(size, g.spacing, origin).with_direction(g.direction);
    let dims = g.dims;
    let src = |i: usize, j: usize, k: usize| -> Option<usize> {
        let (x, y, z) = (corner[0] + i, corner[1] + j, corner[2] + k);
        (x < dims[0] && y < dims[1] && z < dims[2]).then(|| g.index(x, y, z))
    };
    let n = grid.len();
    let data = match vol.data() {
        VoxelData::F32(d) => {
            let mut out = vec![pad as f32; n];
            fill(&mut out, size, &src, d);
            VoxelData::F32(out)
        }
        VoxelData::U8(d) => {
            let mut out = vec![pad as u8; n];
            fill(&mut out, size, &src, d);
            VoxelData::U8(out)
        }
    };
    Volume3D::new(grid, data)
}

fn fill<T: Copy>(out: &mut [T], size: [usize; 3], src: &impl Fn(usize, usize, usize) -> Option<usize>, d: &[T]) {
    let mut o = 0;
    for k in 0..size[2] {
        for j in 0..size[1] {
            for i in 0..size[0] {
                if let Some(s) = src(i, j, k) {
                    out[o] = d[s];
                }
                o += 1;
            }
        }
    }
}
