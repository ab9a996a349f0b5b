//! Forward compounding of posed frames into an isotropic volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{Frame, Sweep};
use crate::volume::{Grid, Volume3D, VoxelData};

const MAX_VOXELS: usize = 1 << 29;
const FRAMES_PER_PARTIAL: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulation {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompoundingConfig {
    pub target_spacing_mm: f64,
    pub hole_fill_radius_voxels: usize,
    pub accumulation: Accumulation,
}

impl Default for CompoundingConfig {
    fn default() -> Self {
        CompoundingConfig {
            target_spacing_mm: 0.3,
            hole_fill_radius_voxels: 1,
            accumulation: Accumulation::Mean,
        }
    }
}

/// Compounded intensities plus the masks describing where they came from.
#[derive(Clone, Debug)]
pub struct Compounded {
    pub volume: Volume3D,
    /// 1 where at least one pixel landed (before hole filling).
    pub coverage: Volume3D,
    /// 1 where the volume holds data: hit or hole-filled.
    pub support: Volume3D,
}

/// Axis-aligned grid spanning every frame corner at the target spacing.
pub fn output_grid(sweep: &Sweep, cfg: &CompoundingConfig) -> Result<Grid> {
    let s = cfg.target_spacing_mm;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Config("target_spacing_mm must be > 0".into()));
    }
    if sweep.frames.is_empty() {
        return Err(Error::Empty("sweep has no frames".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for f in &sweep.frames {
        for c in f.corners() {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if lo.iter().chain(&hi).any(|x| !x.is_finite()) {
        return Err(Error::InvalidVolume("non-finite frame corners".into()));
    }
    let mut dims = [0usize; 3];
    let mut flat = 0;
    for a in 0..3 {
        let extent = hi[a] - lo[a];
        if extent < s * 1e-6 {
            flat += 1;
        }
        dims[a] = (extent / s + 1e-6).floor() as usize + 1;
    }
    if flat >= 2 {
        return Err(Error::InvalidVolume("degenerate bounding box: frames span less than a plane".into()));
    }
    if dims.iter().try_fold(1usize, |n, &d| n.checked_mul(d)).is_none_or(|n| n > MAX_VOXELS) {
        return Err(Error::InvalidVolume(format!("compounding grid {dims:?} is too large")));
    }
    Ok(Grid::new(dims, [s; 3], lo))
}

struct Accumulator {
    sum: Vec<f64>,
    max: Vec<f32>,
    count: Vec<u32>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            sum: vec![0.0; n],
            max: vec![f32::NEG_INFINITY; n],
            count: vec![0; n],
        }
    }

    fn splat(&mut self, grid: &Grid, frame: &Frame) {
        let s = grid.spacing[0];
        for row in 0..frame.rows() {
            for col in 0..frame.cols() {
                if !frame.geometry.pixel_in_view(row, col) {
                    continue;
                }
                let w = frame.pixel_world(row, col);
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    let c = ((w[a] - grid.origin[a]) / s - 0.5).ceil();
                    idx[a] = c.clamp(0.0, (grid.dims[a] - 1) as f64) as usize;
                }
                let i = grid.index(idx[0], idx[1], idx[2]);
                let v = frame.pixel(row, col);
                self.sum[i] += v as f64;
                self.max[i] = self.max[i].max(v);
                self.count[i] += 1;
            }
        }
    }

    fn merge(&mut self, other: Accumulator) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.max[i] = self.max[i].max(other.max[i]);
            self.count[i] += other.count[i];
        }
    }
}

fn accumulate(sweep: &Sweep, grid: &Grid) -> Accumulator {
    // fixed partition of frames, merged in order: schedule-independent
    let partials: Vec<Accumulator> = sweep
        .frames
        .par_chunks(FRAMES_PER_PARTIAL)
        .map(|chunk| {
            let mut acc = Accumulator::new(grid.len());
            for f in chunk {
                acc.splat(grid, f);
            }
            acc
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| Accumulator::new(grid.len()));
    for p in iter {
        total.merge(p);
    }
    total
}

pub fn compound_detailed(sweep: &Sweep, cfg: &CompoundingConfig) -> Result<Compounded> {
    if sweep.frames.is_empty() {
        return Err(Error::Empty("sweep has no frames".into()));
    }
    for f in &sweep.frames {
        f.pose.validate()?;
    }
    let grid = output_grid(sweep, cfg)?;
    let acc = accumulate(sweep, &grid);
    let n = grid.len();
    let mut value = vec![0f32; n];
    for i in 0..n {
        if acc.count[i] > 0 {
            value[i] = match cfg.accumulation {
                crate::compound::Accumulation::Mean => (acc.sum[i] / acc.count[i] as f64) as f32,
                crate::compound::Accumulation::Max => acc.max[i],
            };
        }
    }
    let coverage: Vec<u8> = acc.count.iter().map(|&c| (c > 0) as u8).collect();
    let mut support = coverage.clone();
    let r = cfg.hole_fill_radius_voxels as isize;
    if r > 0 {
        let filled: Vec<(usize, f32)> = (0..n)
            .into_par_iter()
            .filter(|&i| coverage[i] == 0)
            .filter_map(|i| {
                let [x, y, z] = grid.coords(i);
                let (mut sum, mut cnt) = (0.0f64, 0u32);
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (xi, yi, zi) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if xi < 0 || yi < 0 || zi < 0 {
                                continue;
                            }
                            let (xi, yi, zi) = (xi as usize, yi as usize, zi as usize);
                            if xi >= grid.dims[0] || yi >= grid.dims[1] || zi >= grid.dims[2] {
                                continue;
                            }
                            let j = grid.index(xi, yi, zi);
                            if coverage[j] == 1 {
                                sum += value[j] as f64;
                                cnt += 1;
                            }
                        }
                    }
                }
                (cnt > 0).then(|| (i, (sum / cnt as f64) as f32))
            })
            .collect();
        for (i, v) in filled {
            value[i] = v;
            support[i] = 1;
        }
    }
    for v in &mut value {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Compounded {
        volume: Volume3D::new(grid.clone(), VoxelData::F32(value))?,
        coverage: Volume3D::new(grid.clone(), VoxelData::U8(coverage))?,
        support: Volume3D::new(grid, VoxelData::U8(support))?,
    })
}

pub fn compound(sweep: &Sweep, cfg: &CompoundingConfig) -> Result<Volume3D> {
    compound_detailed(sweep, cfg).map(|c| c.volume)
}

pub fn coverage_mask(sweep: &Sweep, cfg: &CompoundingConfig) -> Result<Volume3D> {
    let grid = output_grid(sweep, cfg)?;
    let acc = accumulate(sweep, &grid);
    let mask = acc.count.iter().map(|&c| (c > 0) as u8).collect();
    Volume3D::new(grid, VoxelData::U8(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::RigidTransform;
    use crate::simulate::{ImagingParams, ProbeGeometry, SweepMeta};
    use nalgebra::Matrix3;

    fn down() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
    }

    /// 5 lines x 5 samples with 1 mm pixel pitch.
    fn geom() -> ProbeGeometry {
        ProbeGeometry::linear(5, 4.0, 4.0, 5, 5.0)
    }

    fn frame(y: f64, f: impl Fn(usize, usize) -> f32) -> Frame {
        let g = geom();
        let pixels = (0..25).map(|i| f(i / 5, i % 5)).collect();
        Frame {
            pixels,
            pose: RigidTransform::new(down(), [2.0, y, 0.0]),
            geometry: g,
        }
    }

    fn sweep(frames: Vec<Frame>) -> Sweep {
        Sweep {
            frames,
            geometry: geom(),
            params: ImagingParams::default(),
            meta: SweepMeta {
                tissue_map_id: None,
                params_id: String::new(),
            },
        }
    }

    fn cfg(hole: usize) -> CompoundingConfig {
        CompoundingConfig {
            target_spacing_mm: 1.0,
            hole_fill_radius_voxels: hole,
            accumulation: Accumulation::Mean,
        }
    }

    #[test]
    fn single_frame_embeds_on_a_plane() {
        let f = frame(0.0, |r, c| (r * 5 + c) as f32 / 25.0);
        let s = Sweep { frames: vec![f.clone()], ..sweep(vec![]) };
        let v = compound(&s, &cfg(0)).unwrap();
        assert_eq!(v.dims(), [5, 1, 5]);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(v.value(c, 0, r) as f32, f.pixel(r, c));
            }
        }
    }

    #[test]
    fn two_separated_frames_leave_zero_between() {
        let s = sweep(vec![frame(0.0, |_, _| 0.5), frame(3.0, |_, _| 0.5)]);
        let v = compound(&s, &cfg(0)).unwrap();
        assert_eq!(v.dims(), [5, 4, 5]);
        assert_eq!(v.value(2, 1, 2), 0.0);
        assert_eq!(v.value(2, 3, 2), 0.5);
    }

    #[test]
    fn coincident_frames_mean_idempotent() {
        let f = frame(0.0, |r, c| ((r * 3 + c * 7) % 5) as f32 / 5.0);
        let one = compound(&Sweep { frames: vec![f.clone()], ..sweep(vec![]) }, &cfg(1)).unwrap();
        let two = compound(&sweep(vec![f.clone(), f]), &cfg(1)).unwrap();
        assert_eq!(one, two);
    }

    /// Brute-force splat: every pixel center, nearest voxel by rounding.
    fn oracle(frames: &[Frame], grid: &Grid) -> Vec<Option<f64>> {
        let mut sums = vec![(0.0, 0usize); grid.len()];
        for f in frames {
            for r in 0..f.rows() {
                for c in 0..f.cols() {
                    let w = f.pixel_world(r, c);
                    let idx: Vec<usize> = (0..3).map(|a| ((w[a] - grid.origin[a]) / grid.spacing[a]).round() as usize).collect();
                    let i = grid.index(idx[0], idx[1], idx[2]);
                    sums[i].0 += f.pixel(r, c) as f64;
                    sums[i].1 += 1;
                }
            }
        }
        sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()
    }

    #[test]
    fn parallel_constant_stack_matches_oracle() {
        let frames: Vec<Frame> = (0..5).map(|i| frame(i as f64, |_, _| 0.75)).collect();
        let s = sweep(frames.clone());
        let v = compound(&s, &cfg(1)).unwrap();
        assert_eq!(v.dims(), [5, 5, 5]);
        let want = oracle(&frames, v.grid());
        for (i, w) in want.iter().enumerate() {
            assert_eq!(*w, Some(0.75));
            assert_eq!(v.data().get(i), 0.75);
        }
    }

    #[test]
    fn hole_fill_and_coverage() {
        let s = sweep(vec![frame(0.0, |_, _| 0.2), frame(2.0, |_, _| 0.6)]);
        let c = compound_detailed(&s, &cfg(1)).unwrap();
        // middle plane gets the mean of both neighbours
        assert!((c.volume.value(2, 1, 2) - 0.4).abs() < 1e-6);
        assert_eq!(c.coverage.value(2, 1, 2), 0.0);
        assert_eq!(c.support.value(2, 1, 2), 1.0);
        let m = coverage_mask(&s, &cfg(1)).unwrap();
        assert_eq!(&m, &c.coverage);
        assert_eq!(m.dims(), c.volume.dims());
    }

    #[test]
    fn disjoint_frames_give_two_components() {
        let s = sweep(vec![frame(0.0, |_, _| 0.2), frame(4.0, |_, _| 0.6)]);
        let m = coverage_mask(&s, &cfg(0)).unwrap();
        assert!(connected_components(&m) >= 2);
    }

    fn connected_components(m: &Volume3D) -> usize {
        let g = m.grid().clone();
        let data = m.as_u8().unwrap();
        let mut seen = vec![false; data.len()];
        let mut count = 0;
        for start in 0..data.len() {
            if data[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let [x, y, z] = g.coords(i);
                let nbrs = [
                    (x.wrapping_sub(1), y, z),
                    (x + 1, y, z),
                    (x, y.wrapping_sub(1), z),
                    (x, y + 1, z),
                    (x, y, z.wrapping_sub(1)),
                    (x, y, z + 1),
                ];
                for (a, b, c) in nbrs {
                    if a < g.dims[0] && b < g.dims[1] && c < g.dims[2] {
                        let j = g.index(a, b, c);
                        if data[j] == 1 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn mean_mode_order_invariant_and_bounded() {
        let frames: Vec<Frame> = (0..12)
            .map(|i| frame(i as f64 * 0.37, move |r, c| ((r * 5 + c + i) % 7) as f32 / 7.0))
            .collect();
        let a = compound(&sweep(frames.clone()), &cfg(1)).unwrap();
        let mut rev = frames;
        rev.reverse();
        let b = compound(&sweep(rev), &cfg(1)).unwrap();
        for (x, y) in a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()) {
            assert!((x - y).abs() <= 1e-6);
            assert!((0.0..=6.0 / 7.0 + 1e-6).contains(x));
        }
        assert_eq!(a.spacing(), [1.0; 3]);
    }

    #[test]
    fn max_mode_takes_brightest() {
        let s = sweep(vec![frame(0.0, |_, _| 0.2), frame(0.0, |_, _| 0.9)]);
        let c = CompoundingConfig { accumulation: Accumulation::Max, ..cfg(0) };
        assert!(compound(&s, &c).unwrap().as_f32().unwrap().iter().all(|&v| v == 0.9));
    }

    #[test]
    fn errors() {
        assert!(compound(&sweep(vec![]), &cfg(0)).is_err());
        let line = ProbeGeometry::linear(1, 4.0, 4.0, 5, 5.0);
        let f = Frame {
            pixels: vec![0.0; 5],
            pose: RigidTransform::new(down(), [0.0; 3]),
            geometry: line.clone(),
        };
        let s = Sweep { frames: vec![f.clone(), f], geometry: line, ..sweep(vec![]) };
        assert!(compound(&s, &cfg(0)).is_err());
    }
}
