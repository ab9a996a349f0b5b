//! Overlap and surface-distance metrics between binary masks, plus per-case
//! and aggregate reports.
//!
//! "Average distance" is the symmetric average surface distance: the mean,
//! over the surface points of both masks, of the Euclidean distance to the
//! other mask's surface. Hausdorff is the exact maximum of the two directed
//! distances. Distances between an empty mask and anything are undefined
//! and reported as missing rather than 0.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Interpolation, Volume3D};

fn binary(v: &Volume3D) -> Result<&[u8]> {
    let data = v
        .as_u8()
        .ok_or_else(|| Error::Config("masks must be uint8 volumes".into()))?;
    if let Some(&bad) = data.iter().find(|&&x| x > 1) {
        return Err(Error::NonBinary(bad));
    }
    Ok(data)
}

fn pair<'a>(a: &'a Volume3D, b: &'a Volume3D) -> Result<(&'a [u8], &'a [u8])> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((binary(a)?, binary(b)?))
}

/// `(|A ∩ B|, |A|, |B|)`.
pub fn overlap_counts(a: &Volume3D, b: &Volume3D) -> Result<(usize, usize, usize)> {
    let (x, y) = pair(a, b)?;
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&p, &q) in x.iter().zip(y) {
        inter += (p & q) as usize;
        na += p as usize;
        nb += q as usize;
    }
    Ok((inter, na, nb))
}

pub fn dice(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let (i, na, nb) = overlap_counts(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 })
}

pub fn jaccard(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let (i, na, nb) = overlap_counts(a, b)?;
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// World centers of foreground voxels with a background or out-of-grid
/// face neighbour.
pub fn surface_points(mask: &Volume3D) -> Result<Vec<[f64; 3]>> {
    let data = binary(mask)?;
    let g = mask.grid();
    let [nx, ny, nz] = g.dims;
    let fg = |x: isize, y: isize, z: isize| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && data[g.index(x as usize, y as usize, z as usize)] == 1
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if data[g.index(x, y, z)] == 0 {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let interior = fg(xi - 1, yi, zi)
                    && fg(xi + 1, yi, zi)
                    && fg(xi, yi - 1, zi)
                    && fg(xi, yi + 1, zi)
                    && fg(xi, yi, zi - 1)
                    && fg(xi, yi, zi + 1);
                if !interior {
                    out.push(g.voxel_to_world([x as f64, y as f64, z as f64]));
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn euclidean(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform bucket grid over a point set for exact nearest-distance queries.
pub struct PointIndex<'a> {
    points: &'a [[f64; 3]],
    lo: [f64; 3],
    cell: f64,
    dims: [i64; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        // roughly cbrt(n) buckets along the longest axis
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let mut cell = max_ext / per_axis;
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|a| (ext[a] / cell).floor() as i64 + 1);
        let mut buckets = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        let mut idx = PointIndex {
            points,
            lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = idx.cell_of(p);
            let b = idx.bucket(c);
            buckets[b].push(i as u32);
        }
        idx.buckets = buckets;
        idx
    }

    fn cell_of(&self, p: &[f64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.lo[a]) / self.cell).floor() as i64)
    }

    fn bucket(&self, c: [i64; 3]) -> usize {
        let c = [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] - 1));
        (c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])) as usize
    }

    /// Call `f` on every in-grid bucket at Chebyshev distance exactly `r`
    /// from cell `qc`.
    fn visit_shell(&self, qc: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let lo = [0, 1, 2].map(|a| (qc[a] - r).max(0));
        let hi = [0, 1, 2].map(|a| (qc[a] + r).min(self.dims[a] - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let face = (z - qc[2]).abs() == r || (y - qc[1]).abs() == r;
                if face {
                    for x in lo[0]..=hi[0] {
                        f(self.bucket([x, y, z]));
                    }
                } else {
                    // r > 0 here, so the two x faces are distinct
                    for x in [qc[0] - r, qc[0] + r] {
                        if x >= lo[0] && x <= hi[0] {
                            f(self.bucket([x, y, z]));
                        }
                    }
                }
            }
        }
    }

    /// Distance from `q` to the closest indexed point (infinite if empty).
    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let qc = self.cell_of(q);
        // Chebyshev distance from the query cell to the bucket block
        let gap = |a: usize| (-qc[a]).max(qc[a] - (self.dims[a] - 1)).max(0);
        let first = gap(0).max(gap(1)).max(gap(2));
        let reach = (0..3)
            .map(|a| qc[a].abs().max((qc[a] - (self.dims[a] - 1)).abs()))
            .max()
            .unwrap();
        let mut best = f64::INFINITY;
        for r in first..=reach {
            self.visit_shell(qc, r, |b| {
                for &i in &self.buckets[b] {
                    best = best.min(euclidean(q, &self.points[i as usize]));
                }
            });
            // every bucket in ring r + 1 is at least r cells away; keep half
            // a cell of slack for bucket assignment rounding
            if best <= (r as f64 - 0.5).max(0.0) * self.cell {
                break;
            }
        }
        best
    }
}

/// Distances from each of `from` to the nearest of `to`, in input order.
pub fn directed_distances(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    let index = PointIndex::new(to);
    from.par_iter().map(|p| index.nearest_distance(p)).collect()
}

struct SurfacePair {
    ab: Vec<f64>,
    ba: Vec<f64>,
}

fn surface_pair(a: &Volume3D, b: &Volume3D) -> Result<SurfacePair> {
    pair(a, b)?;
    let sa = surface_points(a)?;
    let sb = surface_points(b)?;
    if sa.is_empty() {
        return Err(Error::UndefinedDistance("first"));
    }
    if sb.is_empty() {
        return Err(Error::UndefinedDistance("second"));
    }
    Ok(SurfacePair {
        ab: directed_distances(&sa, &sb),
        ba: directed_distances(&sb, &sa),
    })
}

pub fn average_surface_distance(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let d = surface_pair(a, b)?;
    Ok(asd_from(&d))
}

fn asd_from(d: &SurfacePair) -> f64 {
    let total: f64 = d.ab.iter().sum::<f64>() + d.ba.iter().sum::<f64>();
    total / (d.ab.len() + d.ba.len()) as f64
}

fn hd_from(d: &SurfacePair) -> f64 {
    d.ab.iter().chain(&d.ba).cloned().fold(0.0, f64::max)
}

pub fn hausdorff(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let d = surface_pair(a, b)?;
    Ok(hd_from(&d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub fold: i64,
    pub dice: f64,
    pub jaccard: f64,
    pub avg_distance_mm: Option<f64>,
    pub hausdorff_mm: Option<f64>,
}

/// Compare a prediction against ground truth on the truth grid.
pub fn evaluate_case(pred: &Volume3D, truth: &Volume3D, case_id: &str, fold: i64) -> Result<CaseReport> {
    let resampled;
    let pred = if pred.grid() != truth.grid() {
        resampled = pred.resample_to_grid(truth.grid(), Interpolation::Nearest)?;
        &resampled
    } else {
        pred
    };
    if pred.dims() != truth.dims() {
        return Err(Error::ShapeMismatch("prediction and truth grids differ after resampling".into()));
    }
    let (i, np, nt) = overlap_counts(pred, truth)?;
    let dice = if np + nt == 0 { 1.0 } else { 2.0 * i as f64 / (np + nt) as f64 };
    let union = np + nt - i;
    let jaccard = if union == 0 { 1.0 } else { i as f64 / union as f64 };
    let (avg, hd) = if np > 0 && nt > 0 {
        let d = surface_pair(pred, truth)?;
        (Some(asd_from(&d)), Some(hd_from(&d)))
    } else {
        (None, None)
    };
    Ok(CaseReport {
        case_id: case_id.to_string(),
        fold,
        dice,
        jaccard,
        avg_distance_mm: avg,
        hausdorff_mm: hd,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Number of cases contributing (missing values excluded).
    pub n: usize,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MetricSummary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_cases: usize,
    pub dice: MetricSummary,
    pub jaccard: MetricSummary,
    pub avg_distance_mm: Option<MetricSummary>,
    pub hausdorff_mm: Option<MetricSummary>,
    pub missing_distances: usize,
}

pub fn aggregate(reports: &[CaseReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Empty("no case reports to aggregate".into()));
    }
    let mut sorted: Vec<&CaseReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id).then(a.fold.cmp(&b.fold)));
    let col = |f: &dyn Fn(&CaseReport) -> Option<f64>| -> Vec<f64> { sorted.iter().filter_map(|r| f(r)).collect() };
    let dice = col(&|r| Some(r.dice));
    let jaccard = col(&|r| Some(r.jaccard));
    let avg = col(&|r| r.avg_distance_mm);
    let hd = col(&|r| r.hausdorff_mm);
    Ok(AggregateReport {
        n_cases: reports.len(),
        dice: MetricSummary::of(&dice).unwrap(),
        jaccard: MetricSummary::of(&jaccard).unwrap(),
        avg_distance_mm: MetricSummary::of(&avg),
        hausdorff_mm: MetricSummary::of(&hd),
        missing_distances: reports.len() - avg.len(),
    })
}

pub const CASE_CSV_HEADER: [&str; 6] = ["case_id", "fold", "dice", "jaccard", "avg_distance_mm", "hausdorff_mm"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_case_csv<W: Write>(reports: &[CaseReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Config(format!("CSV write failed: {e}"));
    out.write_record(CASE_CSV_HEADER).map_err(io)?;
    for r in reports {
        out.write_record([
            r.case_id.clone(),
            r.fold.to_string(),
            r.dice.to_string(),
            r.jaccard.to_string(),
            opt(r.avg_distance_mm),
            opt(r.hausdorff_mm),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_case_csv<R: Read>(r: R) -> Result<Vec<CaseReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let bad = |m: String| Error::Config(format!("case CSV: {m}"));
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CASE_CSV_HEADER {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
    let optnum = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        out.push(CaseReport {
            case_id: rec[0].to_string(),
            fold: rec[1].parse().map_err(|_| bad(format!("bad fold {:?}", &rec[1])))?,
            dice: num(&rec[2])?,
            jaccard: num(&rec[3])?,
            avg_distance_mm: optnum(&rec[4])?,
            hausdorff_mm: optnum(&rec[5])?,
        });
    }
    Ok(out)
}
