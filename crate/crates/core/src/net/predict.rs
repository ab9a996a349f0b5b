use super::model::Network;
use super::tensor::Tensor;
use crate::augment::{extract, PatchSpec};
use crate::error::{Error, Result};
use crate::volume::{Volume3D, VoxelData};

/// Window start positions along one axis: a regular stride with the last
/// window flush against the end.
fn starts(n: usize, p: usize, overlap: f64) -> Vec<usize> {
    if n <= p {
        return vec![0];
    }
    let stride = ((p as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut out: Vec<usize> = (0..=n - p).step_by(stride).collect();
    if *out.last().unwrap() != n - p {
        out.push(n - p);
    }
    out
}

/// Sliding-window foreground probabilities on the input grid, averaging
/// overlapping windows.
pub fn predict_probabilities(net: &Network, vol: &Volume3D, patch: &PatchSpec, overlap: f64) -> Result<Volume3D> {
    patch.validate()?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let dims = vol.dims();
    let p = patch.size;
    let pos: Vec<Vec<usize>> = (0..3).map(|a| starts(dims[a], p[a], overlap)).collect();
    let mut sum = vec![0.0f64; vol.len()];
    let mut count = vec![0u32; vol.len()];
    let g = vol.grid();
    for &z0 in &pos[2] {
        for &y0 in &pos[1] {
            for &x0 in &pos[0] {
                let window = extract(vol, [x0, y0, z0], p, patch.pad_value)?;
                let probs = net.forward(&Tensor::from_volume(&window))?;
                for k in 0..p[2].min(dims[2] - z0) {
                    for j in 0..p[1].min(dims[1] - y0) {
                        for i in 0..p[0].min(dims[0] - x0) {
                            let dst = g.index(x0 + i, y0 + j, z0 + k);
                            sum[dst] += probs.at(0, i, j, k);
                            count[dst] += 1;
                        }
                    }
                }
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(s, &c)| (s / c as f64) as f32).collect();
    Volume3D::new(g.clone(), VoxelData::F32(data))
}

/// Binary prediction: averaged probability strictly above `threshold`.
pub fn predict_volume(net: &Network, vol: &Volume3D, patch: &PatchSpec, overlap: f64, threshold: f64) -> Result<Volume3D> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let probs = predict_probabilities(net, vol, patch, overlap)?;
    Ok(probs.mask_where(|p| p > threshold))
}
