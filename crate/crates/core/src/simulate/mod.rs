//! B-mode frame and sweep synthesis from tissue maps.
//!
//! Each scanline is ray-marched through the label volume. Impedance
//! interfaces produce specular echoes and scatterers produce diffuse echoes,
//! both scaled by two-way attenuation and the energy transmitted so far.
//! The resulting RF-like image is convolved with a separable point spread
//! function, envelope-detected, gain-compensated and log-compressed.

mod io;

pub use io::{load_sweep, parse_sweep_json, save_sweep, FrameEntry, SweepFile};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::RigidTransform;
use crate::rng::{self, stream};
use crate::tissue::TissueMap;
use crate::volume::{Grid, Volume3D, VoxelData};

/// Speed of sound in mm/µs (1540 m/s).
pub const SPEED_OF_SOUND_MM_PER_US: f64 = 1.54;
/// Percentile of frame amplitudes mapped to full brightness.
pub const NORMALIZATION_PERCENTILE: f64 = 99.5;
const LOG_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Curvilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    pub kind: ProbeKind,
    /// Scanlines per frame.
    pub element_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture_angle_deg: Option<f64>,
    pub depth_mm: f64,
    pub samples_per_line: usize,
    #[serde(rename = "center_frequency_MHz")]
    pub center_frequency_mhz: f64,
}

impl ProbeGeometry {
    pub fn linear(element_count: usize, width_mm: f64, depth_mm: f64, samples: usize, freq_mhz: f64) -> Self {
        ProbeGeometry {
            kind: ProbeKind::Linear,
            element_count,
            width_mm: Some(width_mm),
            aperture_angle_deg: None,
            depth_mm,
            samples_per_line: samples,
            center_frequency_mhz: freq_mhz,
        }
    }

    pub fn curvilinear(element_count: usize, aperture_deg: f64, depth_mm: f64, samples: usize, freq_mhz: f64) -> Self {
        ProbeGeometry {
            kind: ProbeKind::Curvilinear,
            element_count,
            width_mm: None,
            aperture_angle_deg: Some(aperture_deg),
            depth_mm,
            samples_per_line: samples,
            center_frequency_mhz: freq_mhz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("probe geometry: {m}")));
        if self.element_count == 0 {
            return bad("element_count must be positive");
        }
        if !(self.depth_mm > 0.0 && self.depth_mm.is_finite()) {
            return bad("depth_mm must be > 0");
        }
        if self.samples_per_line < 2 {
            return bad("samples_per_line must be >= 2");
        }
        if !(self.center_frequency_mhz > 0.0 && self.center_frequency_mhz.is_finite()) {
            return bad("center frequency must be > 0");
        }
        match self.kind {
            ProbeKind::Linear => match self.width_mm {
                Some(w) if w > 0.0 && w.is_finite() => {}
                _ => return bad("linear probes need width_mm > 0"),
            },
            ProbeKind::Curvilinear => {
                match self.aperture_angle_deg {
                    Some(a) if a > 0.0 && a < 180.0 => {}
                    _ => return bad("curvilinear probes need aperture_angle_deg in (0, 180)"),
                }
                if self.element_count < 2 {
                    return bad("curvilinear probes need at least 2 elements");
                }
            }
        }
        Ok(())
    }

    pub fn axial_step_mm(&self) -> f64 {
        self.depth_mm / (self.samples_per_line - 1) as f64
    }

    fn aperture_rad(&self) -> f64 {
        self.aperture_angle_deg.unwrap_or(0.0).to_radians()
    }

    /// Lateral distance between neighbouring scanlines used to size the
    /// lateral PSF; for fans this is the arc spacing at half depth.
    pub fn line_spacing_mm(&self) -> f64 {
        let n = self.element_count;
        match self.kind {
            ProbeKind::Linear => {
                let w = self.width_mm.unwrap_or(1.0);
                if n > 1 {
                    w / (n - 1) as f64
                } else {
                    w
                }
            }
            ProbeKind::Curvilinear => self.aperture_rad() / (n - 1) as f64 * self.depth_mm / 2.0,
        }
    }

    /// Scanline origin and unit direction in frame-plane coordinates
    /// (x lateral, y depth, z elevation).
    pub fn scanline(&self, j: usize) -> ([f64; 3], [f64; 3]) {
        let n = self.element_count;
        match self.kind {
            ProbeKind::Linear => {
                let w = self.width_mm.unwrap_or(0.0);
                let u = if n > 1 { -w / 2.0 + j as f64 * w / (n - 1) as f64 } else { 0.0 };
                ([u, 0.0, 0.0], [0.0, 1.0, 0.0])
            }
            ProbeKind::Curvilinear => {
                let a = self.aperture_rad();
                let th = -a / 2.0 + j as f64 * a / (n - 1) as f64;
                ([0.0; 3], [th.sin(), th.cos(), 0.0])
            }
        }
    }

    /// Cartesian pixel lattice of a (scan-converted) frame.
    pub fn plane(&self) -> FramePlane {
        let rows = self.samples_per_line;
        let cols = self.element_count;
        let dv = self.axial_step_mm();
        let (u0, du) = match self.kind {
            ProbeKind::Linear => {
                let w = self.width_mm.unwrap_or(1.0);
                if cols > 1 {
                    (-w / 2.0, w / (cols - 1) as f64)
                } else {
                    (0.0, w)
                }
            }
            ProbeKind::Curvilinear => {
                let hw = self.depth_mm * (self.aperture_rad() / 2.0).sin();
                (-hw, 2.0 * hw / (cols - 1) as f64)
            }
        };
        FramePlane { rows, cols, u0, du, dv }
    }

    /// Whether pixel `(row, col)` lies inside the field of view.
    pub fn pixel_in_view(&self, row: usize, col: usize) -> bool {
        match self.kind {
            ProbeKind::Linear => true,
            ProbeKind::Curvilinear => {
                let p = self.plane();
                let (u, v) = p.coords(row, col);
                let r = (u * u + v * v).sqrt();
                let th = u.atan2(v);
                r <= self.depth_mm * (1.0 + 1e-9) && th.abs() <= self.aperture_rad() / 2.0 + 1e-9
            }
        }
    }
}

/// Regular pixel lattice in frame-plane millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePlane {
    pub rows: usize,
    pub cols: usize,
    pub u0: f64,
    pub du: f64,
    pub dv: f64,
}

impl FramePlane {
    #[inline]
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        (self.u0 + col as f64 * self.du, row as f64 * self.dv)
    }
}

/// How scatterer draws are keyed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeckleKeying {
    /// Keyed by the tissue voxel a sample falls in, so the same region
    /// yields the same scatterers from every frame.
    #[default]
    Voxel,
    /// Keyed by `(line_index, sample_index)`; independent per sample.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingParams {
    pub tgc_gain_db_per_cm: f64,
    pub dynamic_range_db: f64,
    pub psf_axial_sigma_mm: f64,
    pub psf_lateral_sigma_mm: f64,
    pub noise_floor: f64,
    pub seed: u64,
    #[serde(default)]
    pub speckle: SpeckleKeying,
}

impl Default for ImagingParams {
    fn default() -> Self {
        ImagingParams {
            tgc_gain_db_per_cm: 0.5,
            dynamic_range_db: 50.0,
            psf_axial_sigma_mm: 0.15,
            psf_lateral_sigma_mm: 0.4,
            noise_floor: 0.0,
            seed: 0,
            speckle: SpeckleKeying::Voxel,
        }
    }
}

impl ImagingParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("imaging params: {m}")));
        if !(20.0..=100.0).contains(&self.dynamic_range_db) {
            return bad("dynamic_range_db must lie in [20, 100]");
        }
        if !(self.psf_axial_sigma_mm > 0.0 && self.psf_lateral_sigma_mm > 0.0) {
            return bad("PSF sigmas must be > 0");
        }
        if !(self.noise_floor >= 0.0) || !self.tgc_gain_db_per_cm.is_finite() {
            return bad("noise_floor must be >= 0 and TGC finite");
        }
        Ok(())
    }

    /// Short stable identifier of these parameters.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        format!("{:016x}", rng::str_key(&json))
    }
}

/// Row-major 2D image; rows are axial samples, columns are scanlines.
#[derive(Clone, Debug, PartialEq)]
pub struct RfImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub axial_step_mm: f64,
    pub lateral_step_mm: f64,
}

impl RfImage {
    pub fn zeros(rows: usize, cols: usize, axial_step_mm: f64, lateral_step_mm: f64) -> Self {
        RfImage {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            axial_step_mm,
            lateral_step_mm,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn from_lines(lines: &[Vec<f64>], axial_step_mm: f64, lateral_step_mm: f64) -> Self {
        let cols = lines.len();
        let rows = lines.first().map_or(0, |l| l.len());
        let mut img = RfImage::zeros(rows, cols, axial_step_mm, lateral_step_mm);
        for (c, line) in lines.iter().enumerate() {
            for (r, &v) in line.iter().enumerate() {
                img.data[r * cols + c] = v;
            }
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Row-major `samples_per_line x element_count`, values in [0, 1].
    pub pixels: Vec<f32>,
    pub pose: RigidTransform,
    pub geometry: ProbeGeometry,
}

impl Frame {
    pub fn rows(&self) -> usize {
        self.geometry.samples_per_line
    }

    pub fn cols(&self) -> usize {
        self.geometry.element_count
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols() + col]
    }

    /// World position of a pixel center.
    #[inline]
    pub fn pixel_world(&self, row: usize, col: usize) -> [f64; 3] {
        let (u, v) = self.geometry.plane().coords(row, col);
        self.pose.apply([u, v, 0.0])
    }

    /// World positions of the four outer pixel centers.
    pub fn corners(&self) -> [[f64; 3]; 4] {
        let (r, c) = (self.rows() - 1, self.cols() - 1);
        [
            self.pixel_world(0, 0),
            self.pixel_world(0, c),
            self.pixel_world(r, 0),
            self.pixel_world(r, c),
        ]
    }

    /// The frame as a single-slice volume whose affine encodes the pose.
    pub fn to_volume(&self) -> Result<Volume3D> {
        let plane = self.geometry.plane();
        let grid = Grid {
            dims: [plane.cols, plane.rows, 1],
            spacing: [plane.du, plane.dv, 1.0],
            origin: self.pose.apply([plane.u0, 0.0, 0.0]),
            direction: self.pose.rotation,
        };
        Volume3D::new(grid, VoxelData::F32(self.pixels.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    #[serde(default)]
    pub tissue_map_id: Option<String>,
    pub params_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub frames: Vec<Frame>,
    pub geometry: ProbeGeometry,
    pub params: ImagingParams,
    pub meta: SweepMeta,
}

impl Sweep {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Empty("a sweep needs at least 2 frames".into()));
        }
        for f in &self.frames {
            if f.geometry != self.geometry {
                return Err(Error::Config("frames of a sweep must share one probe geometry".into()));
            }
            f.pose.validate()?;
            if f.pixels.len() != f.rows() * f.cols() {
                return Err(Error::ShapeMismatch("frame pixel count does not match geometry".into()));
            }
        }
        Ok(())
    }
}

/// Intensity reflection coefficient at an interface between impedances.
pub fn reflection_coefficient(z1: f64, z2: f64) -> Result<f64> {
    if !(z1 >= 0.0 && z2 >= 0.0) {
        return Err(Error::Numerical(format!("impedances must be non-negative, got {z1}, {z2}")));
    }
    if z1 == 0.0 && z2 == 0.0 {
        return Err(Error::Numerical("both impedances are zero".into()));
    }
    let r = (z2 - z1) / (z2 + z1);
    Ok(r * r)
}

/// Amplitude multiplier after `path_mm` through tissue attenuating at
/// `att` dB/(cm·MHz) at frequency `f_mhz`.
pub fn attenuation_factor(att: f64, f_mhz: f64, path_mm: f64) -> f64 {
    10f64.powf(-att * f_mhz * (path_mm / 10.0) / 20.0)
}

/// Per-sample echo and transmitted energy of one scanline.
#[derive(Clone, Debug)]
pub struct ScanlineTrace {
    pub echo: Vec<f64>,
    /// Energy remaining after the interfaces up to and including each sample.
    pub transmitted: Vec<f64>,
}

pub fn trace_scanline(
    tm: &TissueMap,
    ray_origin: [f64; 3],
    ray_dir: [f64; 3],
    geom: &ProbeGeometry,
    params: &ImagingParams,
    line_index: usize,
) -> Result<Vec<f64>> {
    trace_scanline_detailed(tm, ray_origin, ray_dir, geom, params, line_index).map(|t| t.echo)
}

pub fn trace_scanline_detailed(
    tm: &TissueMap,
    ray_origin: [f64; 3],
    ray_dir: [f64; 3],
    geom: &ProbeGeometry,
    params: &ImagingParams,
    line_index: usize,
) -> Result<ScanlineTrace> {
    let norm = ray_dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numerical("scanline direction has zero norm".into()));
    }
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("scanline direction is not unit length ({norm})")));
    }
    let n = geom.samples_per_line;
    let step = geom.axial_step_mm();
    let f = geom.center_frequency_mhz;
    let bg = tm.background();

    let mut echo = vec![0.0; n];
    let mut transmitted = vec![0.0; n];
    let mut energy = 1.0;
    let mut one_way_db = 0.0;
    let mut prev: Option<u8> = None;

    for k in 0..n {
        let d = k as f64 * step;
        let p = [
            ray_origin[0] + ray_dir[0] * d,
            ray_origin[1] + ray_dir[1] * d,
            ray_origin[2] + ray_dir[2] * d,
        ];
        let (label, voxel) = tm.label_at(p);
        let props = tm.properties_of(label);
        if let Some(pl) = prev {
            one_way_db += tm.properties_of(pl).attenuation * f * step / 10.0;
        }
        let two_way = 10f64.powf(-2.0 * one_way_db / 20.0);

        let mut e = 0.0;
        if let Some(pl) = prev {
            // background acts as a transparent coupling medium: no interface
            if pl != label && pl != bg && label != bg {
                let r = reflection_coefficient(tm.properties_of(pl).impedance, props.impedance)?;
                e += r * energy * two_way;
                energy *= 1.0 - r;
            }
        }
        if label != bg && props.scatter_density > 0.0 {
            let key = match (params.speckle, voxel) {
                (SpeckleKeying::Voxel, Some(v)) => [0, v as u64],
                _ => [1 + line_index as u64, k as u64],
            };
            let present = rng::uniform(&[params.seed, stream::SCATTER_PRESENCE, key[0], key[1]]);
            if present < props.scatter_density {
                let z = rng::normal(&[params.seed, stream::SCATTER_AMPLITUDE, key[0], key[1]]);
                let a = (props.scatter_mean + props.scatter_sigma * z).max(0.0);
                e += a * energy * two_way;
            }
        }
        echo[k] = e;
        transmitted[k] = energy;
        prev = Some(label);
    }
    Ok(ScanlineTrace { echo, transmitted })
}

/// Axial (modulated Gaussian) and lateral (Gaussian) PSF kernels, both
/// centered and truncated at 3 sigma.
pub fn psf_kernels(params: &ImagingParams, axial_step_mm: f64, lateral_step_mm: f64, freq_mhz: f64) -> (Vec<f64>, Vec<f64>) {
    let wavelength = SPEED_OF_SOUND_MM_PER_US / freq_mhz;
    let sa = params.psf_axial_sigma_mm / axial_step_mm;
    let ha = (3.0 * sa).ceil() as i64;
    let axial = (-ha..=ha)
        .map(|k| {
            let k = k as f64;
            (-k * k / (2.0 * sa * sa)).exp()
                * (2.0 * std::f64::consts::PI * k * axial_step_mm / wavelength).cos()
        })
        .collect();
    let sl = params.psf_lateral_sigma_mm / lateral_step_mm;
    let hl = (3.0 * sl).ceil() as i64;
    let lateral = (-hl..=hl)
        .map(|k| {
            let k = k as f64;
            (-k * k / (2.0 * sl * sl)).exp()
        })
        .collect();
    (axial, lateral)
}

/// Separable zero-padded convolution: `axial` along rows, `lateral` along
/// columns. Kernels must have odd length.
pub fn convolve_separable(img: &RfImage, axial: &[f64], lateral: &[f64]) -> Result<RfImage> {
    if axial.len() > img.rows || lateral.len() > img.cols {
        return Err(Error::Config(format!(
            "PSF kernel ({}x{}) is wider than the image ({}x{})",
            axial.len(),
            lateral.len(),
            img.rows,
            img.cols
        )));
    }
    let (rows, cols) = (img.rows, img.cols);
    let ha = (axial.len() / 2) as isize;
    let hl = (lateral.len() / 2) as isize;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for (t, &w) in axial.iter().enumerate() {
            let src = r as isize + t as isize - ha;
            if src < 0 || src >= rows as isize {
                continue;
            }
            let s = src as usize * cols;
            for c in 0..cols {
                tmp[r * cols + c] += w * img.data[s + c];
            }
        }
    }
    let mut out = RfImage::zeros(rows, cols, img.axial_step_mm, img.lateral_step_mm);
    for r in 0..rows {
        let row = &tmp[r * cols..(r + 1) * cols];
        let dst = &mut out.data[r * cols..(r + 1) * cols];
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &w) in lateral.iter().enumerate() {
                let src = c as isize + t as isize - hl;
                if src >= 0 && (src as usize) < cols {
                    acc += w * row[src as usize];
                }
            }
            *d = acc;
        }
    }
    Ok(out)
}

/// Magnitude followed by an axial moving maximum over `window` samples.
pub fn envelope(img: &RfImage, window: usize) -> RfImage {
    let window = window.max(1);
    let (rows, cols) = (img.rows, img.cols);
    let back = (window / 2) as isize;
    let mut out = RfImage::zeros(rows, cols, img.axial_step_mm, img.lateral_step_mm);
    for r in 0..rows {
        let lo = (r as isize - back).max(0) as usize;
        let hi = ((r as isize - back + window as isize) as usize).min(rows);
        for c in 0..cols {
            let mut m = 0.0f64;
            for rr in lo..hi {
                m = m.max(img.data[rr * cols + c].abs());
            }
            out.data[r * cols + c] = m;
        }
    }
    out
}

pub fn convolve_psf(rf: &RfImage, params: &ImagingParams, geom: &ProbeGeometry) -> Result<RfImage> {
    if !(params.psf_axial_sigma_mm > 0.0 && params.psf_lateral_sigma_mm > 0.0) {
        return Err(Error::Config("PSF sigmas must be > 0".into()));
    }
    let f = geom.center_frequency_mhz;
    let (axial, lateral) = psf_kernels(params, rf.axial_step_mm, rf.lateral_step_mm, f);
    let conv = convolve_separable(rf, &axial, &lateral)?;
    let period = SPEED_OF_SOUND_MM_PER_US / f / rf.axial_step_mm;
    Ok(envelope(&conv, period.round() as usize))
}

/// Log compression of an amplitude already divided by its normalizer.
#[inline]
pub fn log_compress(x: f64, dynamic_range_db: f64) -> f64 {
    ((20.0 * (x + LOG_EPSILON).log10() + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0)
}

/// Nearest-rank percentile; 0 for an empty slice.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Time-gain compensation, additive noise and log compression into [0, 1].
pub fn postprocess(env: &RfImage, params: &ImagingParams) -> RfImage {
    let (rows, cols) = (env.rows, env.cols);
    let mut x = env.data.clone();
    for r in 0..rows {
        let depth_cm = r as f64 * env.axial_step_mm / 10.0;
        let gain = 10f64.powf(params.tgc_gain_db_per_cm * depth_cm / 20.0);
        for c in 0..cols {
            let v = &mut x[r * cols + c];
            *v *= gain;
            if params.noise_floor > 0.0 {
                *v += params.noise_floor * rng::uniform(&[params.seed, stream::NOISE, c as u64, r as u64]);
            }
        }
    }
    let norm = percentile(&x, NORMALIZATION_PERCENTILE);
    let data = x
        .iter()
        .map(|&v| if norm > 0.0 { log_compress(v / norm, params.dynamic_range_db) } else { 0.0 })
        .collect();
    RfImage { data, ..env.clone() }
}

/// Bilinear resampling of fan data (rows = radius, cols = angle) onto the
/// Cartesian frame lattice; pixels outside the fan are 0.
pub fn scan_convert(polar: &RfImage, geom: &ProbeGeometry) -> RfImage {
    let plane = geom.plane();
    let a = geom.aperture_rad();
    let dr = geom.axial_step_mm();
    let dth = a / (geom.element_count - 1) as f64;
    let mut out = RfImage::zeros(plane.rows, plane.cols, plane.dv, plane.du);
    for row in 0..plane.rows {
        for col in 0..plane.cols {
            if !geom.pixel_in_view(row, col) {
                continue;
            }
            let (u, v) = plane.coords(row, col);
            let ri = ((u * u + v * v).sqrt() / dr).clamp(0.0, (polar.rows - 1) as f64);
            let ti = ((u.atan2(v) + a / 2.0) / dth).clamp(0.0, (polar.cols - 1) as f64);
            let r0 = (ri.floor() as usize).min(polar.rows - 2);
            let t0 = (ti.floor() as usize).min(polar.cols - 2);
            let (fr, ft) = (ri - r0 as f64, ti - t0 as f64);
            let val = (1.0 - fr) * (1.0 - ft) * polar.at(r0, t0)
                + (1.0 - fr) * ft * polar.at(r0, t0 + 1)
                + fr * (1.0 - ft) * polar.at(r0 + 1, t0)
                + fr * ft * polar.at(r0 + 1, t0 + 1);
            out.data[row * plane.cols + col] = val;
        }
    }
    out
}

/// Raw echo image (pre-PSF) for every scanline of a frame.
pub fn trace_frame(tm: &TissueMap, pose: &RigidTransform, geom: &ProbeGeometry, params: &ImagingParams) -> Result<RfImage> {
    let lines = (0..geom.element_count)
        .into_par_iter()
        .map(|j| {
            let (o, d) = geom.scanline(j);
            trace_scanline(tm, pose.apply(o), pose.apply_vector(d), geom, params, j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RfImage::from_lines(&lines, geom.axial_step_mm(), geom.line_spacing_mm()))
}

pub fn render_frame(tm: &TissueMap, pose: &RigidTransform, geom: &ProbeGeometry, params: &ImagingParams) -> Result<Frame> {
    geom.validate()?;
    params.validate()?;
    pose.validate()?;
    let rf = trace_frame(tm, pose, geom, params)?;
    let env = convolve_psf(&rf, params, geom)?;
    let mut img = postprocess(&env, params);
    if geom.kind == ProbeKind::Curvilinear {
        img = scan_convert(&img, geom);
    }
    let pixels = img.data.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(Frame {
        pixels,
        pose: *pose,
        geometry: geom.clone(),
    })
}

pub fn simulate_sweep(
    tm: &TissueMap,
    trajectory: &[RigidTransform],
    geom: &ProbeGeometry,
    params: &ImagingParams,
) -> Result<Sweep> {
    if trajectory.len() < 2 {
        return Err(Error::Empty(format!(
            "trajectory has {} poses, a sweep needs at least 2",
            trajectory.len()
        )));
    }
    let frames = trajectory
        .par_iter()
        .map(|pose| render_frame(tm, pose, geom, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        frames,
        geometry: geom.clone(),
        params: params.clone(),
        meta: SweepMeta {
            tissue_map_id: None,
            params_id: params.id(),
        },
    })
}

#[cfg(test)]
mod tests;
