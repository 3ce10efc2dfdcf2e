//! Vector-quantization codebook.
//!
//! K codewords of dimension D; assignment is nearest squared-L2 with ties
//! resolved to the lowest index, so quantization is a pure function of the
//! codebook bits and the input.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F: Scalar> {
    entries: Tensor<F>,
}

impl<F: Scalar> Codebook<F> {
    pub fn new(entries: Tensor<F>) -> Result<Self> {
        match entries.shape() {
            [k, d] if *k > 0 && *d > 0 => {
                let _ = (k, d);
                Ok(Codebook { entries })
            }
            other => Err(Error::Shape(format!(
                "codebook entries must be [K,D] with K,D > 0, got {other:?}"
            ))),
        }
    }

    /// Uniform init on [−1/K, 1/K], the usual small-spread VQ start.
    pub fn init(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / k as f64;
        let data = (0..k * d)
            .map(|_| F::of(rng.random_range(-bound..bound)))
            .collect();
        Codebook {
            entries: Tensor::new(vec![k, d], data).expect("consistent"),
        }
    }

    pub fn k(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor<F> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Tensor<F> {
        &mut self.entries
    }

    pub fn row(&self, idx: usize) -> &[F] {
        &self.entries.data()[idx * self.dim()..(idx + 1) * self.dim()]
    }

    /// Nearest codeword by squared L2; ties take the lowest index.
    pub fn nearest(&self, v: &[F]) -> Result<u32> {
        if v.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query dim {} vs codebook dim {}",
                v.len(),
                self.dim()
            )));
        }
        let mut best = 0u32;
        let mut best_d = F::infinity();
        for i in 0..self.k() {
            let mut dist = F::zero();
            for (&a, &b) in self.row(i).iter().zip(v) {
                let diff = a - b;
                dist += diff * diff;
            }
            if dist < best_d {
                best_d = dist;
                best = i as u32;
            }
        }
        Ok(best)
    }
}

/// Quantize a grid of vectors laid out with D as the last axis
/// ([..., D] → indices in row-major grid order; quantized same shape).
pub fn quantize<F: Scalar>(
    latents: &Tensor<F>,
    cb: &Codebook<F>,
) -> Result<(Tensor<F>, Vec<u32>)> {
    let d = cb.dim();
    match latents.shape().last() {
        Some(&last) if last == d => {}
        other => {
            return Err(Error::Shape(format!(
                "latent last axis {other:?} must equal codebook dim {d}"
            )))
        }
    }
    let n = latents.numel() / d;
    let mut indices = Vec::with_capacity(n);
    let mut out = Tensor::zeros(latents.shape());
    for p in 0..n {
        let v = &latents.data()[p * d..(p + 1) * d];
        let idx = cb.nearest(v)?;
        indices.push(idx);
        out.data_mut()[p * d..(p + 1) * d].copy_from_slice(cb.row(idx as usize));
    }
    Ok((out, indices))
}

/// Quantize channel fibers of a [B, D, GH, GW] feature map (the layout the
/// conv stacks produce). Indices come back in (b, gy, gx) scan order.
pub fn quantize_channel_fibers<F: Scalar>(
    latents: &Tensor<F>,
    cb: &Codebook<F>,
) -> Result<Vec<u32>> {
    let [b, d, gh, gw] = match latents.shape() {
        [b, d, gh, gw] => [*b, *d, *gh, *gw],
        other => {
            return Err(Error::Shape(format!(
                "channel-fiber latents must be [B,D,GH,GW], got {other:?}"
            )))
        }
    };
    if d != cb.dim() {
        return Err(Error::Shape(format!(
            "latent channel count {d} must equal codebook dim {}",
            cb.dim()
        )));
    }
    let grid = gh * gw;
    let mut fiber = vec![F::zero(); d];
    let mut indices = Vec::with_capacity(b * grid);
    let data = latents.data();
    for bi in 0..b {
        for g in 0..grid {
            for (di, f) in fiber.iter_mut().enumerate() {
                *f = data[(bi * d + di) * grid + g];
            }
            indices.push(cb.nearest(&fiber)?);
        }
    }
    Ok(indices)
}

/// Inverse of [`quantize_channel_fibers`]: indices in (b, gy, gx) order back
/// to a [B, D, GH, GW] feature map of codewords.
pub fn gather_channel_fibers<F: Scalar>(
    cb: &Codebook<F>,
    indices: &[u32],
    grid: (usize, usize, usize),
) -> Result<Tensor<F>> {
    let (b, gh, gw) = grid;
    let (d, cells) = (cb.dim(), gh * gw);
    if indices.len() != b * cells {
        return Err(Error::Shape(format!(
            "{} symbols for {b} frames of {cells} cells",
            indices.len()
        )));
    }
    let mut out = Tensor::zeros(&[b, d, gh, gw]);
    for bi in 0..b {
        for g in 0..cells {
            let idx = indices[bi * cells + g];
            if idx as usize >= cb.k() {
                return Err(Error::SymbolOutOfRange {
                    index: idx,
                    alphabet: cb.k() as u32,
                });
            }
            for (di, &v) in cb.row(idx as usize).iter().enumerate() {
                out.data_mut()[(bi * d + di) * cells + g] = v;
            }
        }
    }
    Ok(out)
}
