use nalgebra::Matrix3;

use super::*;
use crate::phantom::{Ellipsoid, Layer, PhantomSpec};
use crate::tissue::{bind_tissue_map, AcousticProperties, TissueTable};

/// Frame lateral -> world x, depth -> world z, elevation -> world -y.
pub(crate) fn looking_down() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}

fn table(entries: &[(u8, AcousticProperties)]) -> TissueTable {
    let mut t = TissueTable::default();
    for (l, p) in entries {
        t.labels.insert(*l, p.clone());
    }
    t
}

fn block(label: u8, props: AcousticProperties) -> TissueMap {
    let spec = PhantomSpec {
        dims: [20, 20, 60],
        spacing_mm: 0.5,
        origin: [0.0; 3],
        medium_label: label,
        layers: vec![],
        ellipsoids: vec![],
    };
    bind_tissue_map(spec.build().unwrap(), table(&[(label, props)]), 0).unwrap()
}

/// Medium 1 above z = 10 mm, medium 2 below.
fn two_layer(p1: AcousticProperties, p2: AcousticProperties) -> TissueMap {
    let spec = PhantomSpec {
        dims: [40, 20, 60],
        spacing_mm: 0.5,
        origin: [0.0; 3],
        medium_label: 1,
        layers: vec![Layer {
            axis: 2,
            from_mm: 10.0,
            to_mm: 1e9,
            label: 2,
        }],
        ellipsoids: vec![],
    };
    bind_tissue_map(spec.build().unwrap(), table(&[(1, p1), (2, p2)]), 0).unwrap()
}

fn params() -> ImagingParams {
    ImagingParams {
        tgc_gain_db_per_cm: 0.0,
        dynamic_range_db: 50.0,
        psf_axial_sigma_mm: 0.1,
        psf_lateral_sigma_mm: 0.3,
        noise_floor: 0.0,
        seed: 42,
        speckle: SpeckleKeying::Voxel,
    }
}

fn geom() -> ProbeGeometry {
    ProbeGeometry::linear(16, 8.0, 20.0, 101, 5.0)
}

#[test]
fn reflection_hand_values() {
    assert_eq!(reflection_coefficient(1.6, 1.6).unwrap(), 0.0);
    let r = reflection_coefficient(1.5, 7.8).unwrap();
    assert!((r - (6.3f64 / 9.3).powi(2)).abs() < 1e-15);
    assert!((r - 0.4589).abs() < 1e-4, "{r}");
    assert_eq!(reflection_coefficient(7.8, 1.5).unwrap(), r);
    assert_eq!(reflection_coefficient(0.0, 1.5).unwrap(), 1.0);
    assert!(reflection_coefficient(0.0, 0.0).is_err());
}

#[test]
fn attenuation_hand_values() {
    assert_eq!(attenuation_factor(0.5, 5.0, 0.0), 1.0);
    let a = attenuation_factor(0.5, 5.0, 20.0);
    assert!((a - 10f64.powf(-0.25)).abs() < 1e-15);
    assert!((a - 0.5623).abs() < 1e-4);
    let mut last = 1.0;
    for mm in 1..50 {
        let v = attenuation_factor(0.7, 3.0, mm as f64);
        assert!(v < last && v > 0.0);
        last = v;
    }
}

#[test]
fn background_ray_is_silent() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.5, 1.0, 0.5, 0.1));
    let line = trace_scanline(&tm, [-100.0, -100.0, 0.0], [0.0, 0.0, 1.0], &geom(), &params(), 0).unwrap();
    assert!(line.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_direction_rejected() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.5, 1.0, 0.5, 0.1));
    assert!(trace_scanline(&tm, [0.0; 3], [0.0; 3], &geom(), &params(), 0).is_err());
}

#[test]
fn homogeneous_block_constant_mean() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.0, 1.0, 0.5, 0.0));
    let line = trace_scanline(&tm, [5.0, 5.0, 0.0], [0.0, 0.0, 1.0], &geom(), &params(), 0).unwrap();
    assert!(line.iter().all(|&v| v == 0.5), "{line:?}");
}

#[test]
fn homogeneous_block_mean_within_three_sigma() {
    // independent samples: E[max(0, m + s z)] ~= m for m >> s
    let (m, s) = (0.5, 0.1);
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.0, 1.0, m, s));
    let mut p = params();
    p.speckle = SpeckleKeying::Sample;
    let g = geom();
    let mut all = Vec::new();
    for line in 0..20 {
        all.extend(trace_scanline(&tm, [5.0, 5.0, 0.0], [0.0, 0.0, 1.0], &g, &p, line).unwrap());
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    assert!((mean - m).abs() < 3.0 * s / n.sqrt(), "mean {mean}");
}

#[test]
fn interface_echo_is_the_maximum_at_predicted_row() {
    let lo = AcousticProperties::new("a", 1.5, 0.0, 1.0, 0.02, 0.0);
    let hi = AcousticProperties::new("b", 7.8, 0.0, 1.0, 0.02, 0.0);
    let tm = two_layer(lo, hi);
    let g = geom();
    let z0 = 0.3;
    let line = trace_scanline(&tm, [5.0, 5.0, z0], [0.0, 0.0, 1.0], &g, &params(), 0).unwrap();
    // nearest voxel changes label once z > 9.75 mm (voxel 20 center at 10 mm)
    let step = g.axial_step_mm();
    let predicted = (0..g.samples_per_line).find(|&k| z0 + k as f64 * step > 9.75).unwrap();
    let argmax = line
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(argmax, predicted);
}

#[test]
fn transmission_is_product_of_interface_losses() {
    let spec = PhantomSpec {
        dims: [10, 10, 80],
        spacing_mm: 0.5,
        origin: [0.0; 3],
        medium_label: 1,
        layers: vec![
            Layer { axis: 2, from_mm: 8.0, to_mm: 16.0, label: 2 },
            Layer { axis: 2, from_mm: 16.0, to_mm: 24.0, label: 3 },
            Layer { axis: 2, from_mm: 24.0, to_mm: 1e9, label: 1 },
        ],
        ellipsoids: vec![],
    };
    let z = [1.5, 1.9, 1.3];
    let t = table(&[
        (1, AcousticProperties::new("a", z[0], 0.3, 0.5, 0.2, 0.05)),
        (2, AcousticProperties::new("b", z[1], 0.3, 0.5, 0.2, 0.05)),
        (3, AcousticProperties::new("c", z[2], 0.3, 0.5, 0.2, 0.05)),
    ]);
    let tm = bind_tissue_map(spec.build().unwrap(), t, 0).unwrap();
    let g = ProbeGeometry::linear(4, 2.0, 36.0, 181, 5.0);
    let tr = trace_scanline_detailed(&tm, [2.0, 2.0, 0.5], [0.0, 0.0, 1.0], &g, &params(), 0).unwrap();
    let r: Vec<f64> = [(z[0], z[1]), (z[1], z[2]), (z[2], z[0])]
        .iter()
        .map(|&(a, b)| reflection_coefficient(a, b).unwrap())
        .collect();
    let expect_final: f64 = r.iter().map(|x| 1.0 - x).product();
    assert!((tr.transmitted.last().unwrap() - expect_final).abs() < 1e-12);
    for w in tr.transmitted.windows(2) {
        assert!(w[1] <= w[0]);
    }
    for ri in r {
        assert!(ri + (1.0 - ri) <= 1.0 + 1e-15);
    }
}

#[test]
fn attenuated_echo_non_increasing_without_interfaces() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.8, 1.0, 0.4, 0.0));
    let line = trace_scanline(&tm, [5.0, 5.0, 0.0], [0.0, 0.0, 1.0], &geom(), &params(), 0).unwrap();
    for w in line.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(line.last().unwrap() < &line[0]);
}

fn kernel_oracle(sigma_mm: f64, step_mm: f64, carrier: Option<f64>) -> Vec<f64> {
    let s = sigma_mm / step_mm;
    let h = (3.0 * s).ceil() as i64;
    (-h..=h)
        .map(|k| {
            let x = k as f64 * step_mm;
            let gauss = (-(x * x) / (2.0 * sigma_mm * sigma_mm)).exp();
            match carrier {
                Some(f) => gauss * (2.0 * std::f64::consts::PI * f * x / 1.54).cos(),
                None => gauss,
            }
        })
        .collect()
}

#[test]
fn impulse_recovers_kernel() {
    let p = params();
    let (rows, cols) = (61, 21);
    let (dz, dx) = (0.05, 0.2);
    let mut img = RfImage::zeros(rows, cols, dz, dx);
    img.data[30 * cols + 10] = 1.0;
    let (axial, lateral) = psf_kernels(&p, dz, dx, 5.0);
    let out = convolve_separable(&img, &axial, &lateral).unwrap();
    let ka = kernel_oracle(p.psf_axial_sigma_mm, dz, Some(5.0));
    let kl = kernel_oracle(p.psf_lateral_sigma_mm, dx, None);
    let (ha, hl) = (ka.len() / 2, kl.len() / 2);
    for r in 0..rows {
        for c in 0..cols {
            let dr = r as isize - 30 + ha as isize;
            let dc = c as isize - 10 + hl as isize;
            let want = if dr >= 0 && (dr as usize) < ka.len() && dc >= 0 && (dc as usize) < kl.len() {
                ka[dr as usize] * kl[dc as usize]
            } else {
                0.0
            };
            assert!((out.at(r, c) - want).abs() < 1e-6, "({r},{c})");
        }
    }
}

#[test]
fn convolution_is_linear_and_zero_preserving() {
    let p = params();
    let mut img = RfImage::zeros(40, 12, 0.05, 0.3);
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = rng::uniform(&[5, i as u64]);
    }
    let (a, l) = psf_kernels(&p, 0.05, 0.3, 5.0);
    let base = convolve_separable(&img, &a, &l).unwrap();
    let mut scaled = img.clone();
    scaled.data.iter_mut().for_each(|v| *v *= 3.5);
    let out = convolve_separable(&scaled, &a, &l).unwrap();
    for (x, y) in base.data.iter().zip(&out.data) {
        assert!((3.5 * x - y).abs() < 1e-12);
    }
    let zero = RfImage::zeros(40, 12, 0.05, 0.3);
    assert!(convolve_psf(&zero, &p, &geom()).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn oversized_kernel_is_an_error() {
    let img = RfImage::zeros(5, 5, 0.01, 0.01);
    assert!(convolve_psf(&img, &params(), &geom()).is_err());
}

#[test]
fn postprocess_conventions() {
    let p = params();
    let zero = RfImage::zeros(10, 4, 0.2, 0.5);
    assert!(postprocess(&zero, &p).data.iter().all(|&v| v == 0.0));
    // every value equals the normalization percentile
    let mut flat = RfImage::zeros(10, 4, 0.2, 0.5);
    flat.data.iter_mut().for_each(|v| *v = 0.37);
    assert!(postprocess(&flat, &p).data.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    let mut last = 0.0;
    for i in 0..1000 {
        let y = log_compress(i as f64 * 1e-3, 60.0);
        assert!(y >= last && (0.0..=1.0).contains(&y));
        last = y;
    }
}

#[test]
fn postprocess_output_bounded_with_noise_and_gain() {
    let mut p = params();
    p.noise_floor = 0.05;
    p.tgc_gain_db_per_cm = 2.0;
    let mut img = RfImage::zeros(50, 8, 0.2, 0.5);
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = rng::uniform(&[1, i as u64]) * 3.0;
    }
    let out = postprocess(&img, &p);
    assert!(out.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
}

fn pose_at(x: f64, y: f64, z: f64) -> RigidTransform {
    RigidTransform::new(looking_down(), [x, y, z])
}

#[test]
fn background_scene_gives_zero_frame() {
    let v = Volume3D::zeros_u8(Grid::new([10, 10, 10], [1.0; 3], [0.0; 3])).unwrap();
    let tm = bind_tissue_map(v, TissueTable::default(), 0).unwrap();
    let f = render_frame(&tm, &pose_at(5.0, 5.0, 0.0), &geom(), &params()).unwrap();
    assert!(f.pixels.iter().all(|&x| x == 0.0));
}

#[test]
fn frame_is_thread_count_invariant() {
    let lo = AcousticProperties::new("a", 1.5, 0.5, 0.6, 0.3, 0.1);
    let hi = AcousticProperties::new("b", 1.7, 0.5, 0.6, 0.3, 0.1);
    let tm = two_layer(lo, hi);
    let pose = pose_at(10.0, 5.0, 0.2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render_frame(&tm, &pose, &geom(), &params()).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert!(a.pixels.iter().zip(&b.pixels).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn two_layer_frame_has_band_at_interface_row() {
    let lo = AcousticProperties::new("a", 1.5, 0.0, 1.0, 0.02, 0.0);
    let hi = AcousticProperties::new("b", 7.8, 0.0, 1.0, 0.02, 0.0);
    let tm = two_layer(lo, hi);
    let g = geom();
    let z0 = 0.3;
    let f = render_frame(&tm, &pose_at(10.0, 5.0, z0), &g, &params()).unwrap();
    let step = g.axial_step_mm();
    let predicted = (0..g.samples_per_line).find(|&k| z0 + k as f64 * step > 9.75).unwrap();
    for c in 0..f.cols() {
        let col: Vec<f32> = (0..f.rows()).map(|r| f.pixel(r, c)).collect();
        let argmax = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        assert!((argmax as isize - predicted as isize).abs() <= 1, "col {c}: {argmax} vs {predicted}");
    }
}

#[test]
fn curvilinear_frame_blank_outside_fan() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.2, 1.0, 0.5, 0.1));
    let g = ProbeGeometry::curvilinear(24, 60.0, 20.0, 120, 5.0);
    let f = render_frame(&tm, &pose_at(5.0, 5.0, 0.1), &g, &params()).unwrap();
    let mut inside = 0;
    for r in 0..f.rows() {
        for c in 0..f.cols() {
            if !g.pixel_in_view(r, c) {
                assert_eq!(f.pixel(r, c), 0.0);
            } else {
                inside += 1;
            }
        }
    }
    assert!(inside > 0 && inside < f.rows() * f.cols());
    assert!(f.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn identical_poses_identical_frames() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.2, 0.7, 0.5, 0.1));
    let traj = vec![pose_at(5.0, 5.0, 0.1); 3];
    let s = simulate_sweep(&tm, &traj, &geom(), &params()).unwrap();
    assert_eq!(s.frames.len(), 3);
    assert_eq!(s.frames[0], s.frames[1]);
    assert_eq!(s.frames[1], s.frames[2]);
    assert!(simulate_sweep(&tm, &traj[..1], &geom(), &params()).is_err());
    assert!(simulate_sweep(&tm, &[], &geom(), &params()).is_err());
}

#[test]
fn sphere_cross_section_rises_then_falls() {
    // bright inclusion in a nearly echo-free medium
    let spec = PhantomSpec {
        dims: [40, 40, 40],
        spacing_mm: 0.5,
        origin: [0.0; 3],
        medium_label: 3,
        layers: vec![],
        ellipsoids: vec![Ellipsoid::sphere([10.0, 10.0, 10.0], 6.0, 1)],
    };
    let t = table(&[
        (3, AcousticProperties::new("dark", 1.6, 0.0, 0.0, 0.0, 0.0)),
        (1, AcousticProperties::new("bright", 1.6, 0.0, 1.0, 0.8, 0.05)),
    ]);
    let tm = bind_tissue_map(spec.build().unwrap(), t, 0).unwrap();
    let g = ProbeGeometry::linear(40, 19.0, 19.0, 96, 5.0);
    let ys: Vec<f64> = (0..9).map(|i| 10.0 - 8.0 + 2.0 * i as f64).collect();
    let traj: Vec<_> = ys.iter().map(|&y| pose_at(10.0, y, 0.25)).collect();
    let s = simulate_sweep(&tm, &traj, &g, &params()).unwrap();
    let area: Vec<usize> = s.frames.iter().map(|f| f.pixels.iter().filter(|&&v| v > 0.6).count()).collect();
    let radius: Vec<f64> = ys.iter().map(|y| (36.0 - (y - 10.0f64).powi(2)).max(0.0).sqrt()).collect();
    let peak = area.iter().enumerate().max_by_key(|x| x.1).unwrap().0;
    assert_eq!(peak, 4, "{area:?}");
    for i in 0..4 {
        if radius[i] < radius[i + 1] {
            assert!(area[i] <= area[i + 1], "{area:?}");
        }
        if radius[8 - i] < radius[7 - i] {
            assert!(area[8 - i] <= area[7 - i], "{area:?}");
        }
    }
    assert!(area[0] < area[4] && area[8] < area[4]);
}

#[test]
fn sweep_persists_exactly() {
    let tm = block(3, AcousticProperties::new("x", 1.5, 0.2, 0.7, 0.5, 0.1));
    let traj: Vec<_> = (0..3).map(|i| pose_at(5.0, 3.0 + i as f64 * 0.7, 0.1)).collect();
    let mut s = simulate_sweep(&tm, &traj, &geom(), &params()).unwrap();
    s.meta.tissue_map_id = Some("block".into());
    let dir = tempfile::tempdir().unwrap();
    save_sweep(&s, dir.path()).unwrap();
    let back = load_sweep(dir.path()).unwrap();
    assert_eq!(back, s);
}
