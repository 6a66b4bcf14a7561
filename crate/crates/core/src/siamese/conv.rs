//! Strided 1-D convolution and the CNN text encoder built on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SiameseError;

/// Valid (unpadded) strided sliding dot product:
/// `y(j) = sum_{i<z} x(j*s + i) * h(i)` for `j = 0 .. floor((n - z) / s)`.
pub fn conv1d(x: &[f64], h: &[f64], stride: usize) -> Result<Vec<f64>, SiameseError> {
    if stride == 0 {
        return Err(SiameseError::InvalidSpec("stride must be at least 1".into()));
    }
    if h.is_empty() {
        return Err(SiameseError::InvalidSpec("kernel must be non-empty".into()));
    }
    if x.len() < h.len() {
        return Err(SiameseError::InputShorterThanKernel {
            len: x.len(),
            kernel: h.len(),
        });
    }
    let windows = (x.len() - h.len()) / stride + 1;
    Ok((0..windows)
        .map(|j| {
            let start = j * stride;
            x[start..start + h.len()]
                .iter()
                .zip(h)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub filters: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            kernel_size: 3,
            stride: 1,
            filters: 256,
        }
    }
}

impl ConvSpec {
    /// Number of output positions for an input of `len` rows.
    pub fn window_count(&self, len: usize) -> Result<usize, SiameseError> {
        if len < self.kernel_size {
            return Err(SiameseError::InputShorterThanKernel {
                len,
                kernel: self.kernel_size,
            });
        }
        Ok((len - self.kernel_size) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<(), SiameseError> {
        if self.kernel_size == 0 || self.stride == 0 || self.filters == 0 {
            return Err(SiameseError::InvalidSpec(format!(
                "kernel size, stride and filters must be positive (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Borrowed `(max_len x dim)` matrix of which only the first `stored` rows
/// are materialised; the remaining rows are zero.
#[derive(Debug, Clone, Copy)]
pub struct SeqView<'a> {
    pub values: &'a [f64],
    pub max_len: usize,
    pub dim: usize,
}

impl SeqView<'_> {
    fn stored_rows(&self) -> usize {
        self.values.len() / self.dim
    }
}

/// Per-filter max-pooled activations and the winning window of each.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub features: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// Conv layer over embedding rows followed by global max pooling.
/// Weights are `(filters x kernel_size x dim)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnEncoder {
    pub spec: ConvSpec,
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CnnEncoder {
    pub fn zeros(spec: ConvSpec, dim: usize) -> Self {
        CnnEncoder {
            spec,
            dim,
            weight: vec![0.0; spec.filters * spec.kernel_size * dim],
            bias: vec![0.0; spec.filters],
        }
    }

    pub fn glorot<R: Rng>(spec: ConvSpec, dim: usize, rng: &mut R) -> Self {
        let mut enc = Self::zeros(spec, dim);
        let fan_in = spec.kernel_size * dim;
        let fan_out = spec.kernel_size * spec.filters;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut enc.weight {
            *w = rng.gen_range(-limit..limit);
        }
        enc
    }

    pub fn output_dim(&self) -> usize {
        self.spec.filters
    }

    fn window_len(&self) -> usize {
        self.spec.kernel_size * self.dim
    }

    /// Flattened input window `j` (zero-extended past the stored rows).
    pub fn window(&self, x: SeqView<'_>, j: usize, out: &mut Vec<f64>) {
        let start = j * self.spec.stride * self.dim;
        let end = start + self.window_len();
        out.clear();
        let avail = x.values.len().min(end);
        if start < avail {
            out.extend_from_slice(&x.values[start..avail]);
        }
        out.resize(self.window_len(), 0.0);
    }

    pub fn forward(&self, x: SeqView<'_>) -> Result<Pooled, SiameseError> {
        debug_assert_eq!(x.dim, self.dim);
        let windows = self.spec.window_count(x.max_len)?;
        let stored = x.stored_rows();
        let wl = self.window_len();
        // Windows starting at or past the stored rows see only zeros.
        let live = windows.min(stored.div_ceil(self.spec.stride));
        let has_dead = live < windows;

        let mut features = Vec::with_capacity(self.spec.filters);
        let mut argmax = Vec::with_capacity(self.spec.filters);
        for f in 0..self.spec.filters {
            let kernel = &self.weight[f * wl..(f + 1) * wl];
            let bias = self.bias[f];
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..live {
                let start = j * self.spec.stride * self.dim;
                let end = (start + wl).min(x.values.len());
                let v = bias
                    + x.values[start..end]
                        .iter()
                        .zip(kernel)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            if has_dead && bias > best {
                best = bias;
                best_j = live;
            }
            features.push(best);
            argmax.push(best_j);
        }
        Ok(Pooled { features, argmax })
    }

    /// Accumulates weight and bias gradients given `d_features`.
    pub fn backward(
        &self,
        x: SeqView<'_>,
        pooled: &Pooled,
        d_features: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
    ) {
        let wl = self.window_len();
        let mut window = Vec::with_capacity(wl);
        for f in 0..self.spec.filters {
            let g = d_features[f];
            if g == 0.0 {
                continue;
            }
            d_bias[f] += g;
            self.window(x, pooled.argmax[f], &mut window);
            for (dw, &xv) in d_weight[f * wl..(f + 1) * wl].iter_mut().zip(&window) {
                *dw += g * xv;
            }
        }
    }
}
