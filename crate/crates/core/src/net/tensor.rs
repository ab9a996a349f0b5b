use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Dense multi-channel 3D array, layout `[c][z][y][x]` (x fastest, matching
/// volume storage).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_data(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels} x {dims:?}",
                data.len()
            )));
        }
        Ok(Tensor { channels, dims, data })
    }

    /// Single-channel tensor holding a volume's voxel values.
    pub fn from_volume(vol: &Volume3D) -> Self {
        let d = vol.data();
        Tensor {
            channels: 1,
            dims: vol.dims(),
            data: (0..d.len()).map(|i| d.get(i)).collect(),
        }
    }

    pub fn plane(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[((c * self.dims[2] + z) * self.dims[1] + y) * self.dims[0] + x]
    }

    /// Channel-wise concatenation; all parts share spatial dims.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let dims = parts[0].dims;
        debug_assert!(parts.iter().all(|p| p.dims == dims));
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor {
            channels: parts.iter().map(|p| p.channels).sum(),
            dims,
            data,
        }
    }

    /// Inverse of `concat` given the channel count of each part.
    pub fn split(&self, sizes: &[usize]) -> Vec<Tensor> {
        let n = self.plane();
        let mut start = 0;
        sizes
            .iter()
            .map(|&c| {
                let t = Tensor {
                    channels: c,
                    dims: self.dims,
                    data: self.data[start * n..(start + c) * n].to_vec(),
                };
                start += c;
                t
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Mask `grad` by the support of a post-ReLU activation.
    pub fn relu_backward(&mut self, activation: &Tensor) {
        for (g, &a) in self.data.iter_mut().zip(&activation.data) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
    }
}
