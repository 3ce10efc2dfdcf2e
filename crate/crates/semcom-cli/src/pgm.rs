//! Plain (ASCII) 8-bit PGM output for reconstruction montages. Plain PGM is
//! dependency-free, diffable in review tools, and every image viewer opens
//! it.

use std::path::Path;

use semcom::tensor::Tensor;

use crate::error::{CliError, Result};

const MAXVAL: u32 = 255;

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Fixed-size grid of equally sized grayscale cells separated by 1-pixel
/// gutters. Cells start black; `place` fills one.
pub struct Montage {
    rows: usize,
    cols: usize,
    cell_h: usize,
    cell_w: usize,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Montage {
    pub fn new(rows: usize, cols: usize, cell_h: usize, cell_w: usize) -> Self {
        let width = cols * cell_w + cols.saturating_sub(1);
        let height = rows * cell_h + rows.saturating_sub(1);
        Montage {
            rows,
            cols,
            cell_h,
            cell_w,
            width,
            height,
            // Gutters render mid-gray so cell boundaries stay visible
            // against both dark and bright content.
            pixels: vec![128; width * height],
        }
    }

    /// `image` must be a single-channel [1, H, W] (or [H, W]) tensor with
    /// values in [0, 1].
    pub fn place(&mut self, row: usize, col: usize, image: &Tensor<f32>) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(CliError::new(
                crate::Category::Internal,
                format!("montage cell ({row},{col}) outside {}x{}", self.rows, self.cols),
            ));
        }
        let shape = image.shape();
        let ok = match shape {
            [1, h, w] | [h, w] => *h == self.cell_h && *w == self.cell_w,
            _ => false,
        };
        if !ok {
            return Err(CliError::new(
                crate::Category::Internal,
                format!(
                    "montage cell wants {}x{}, image has shape {shape:?}",
                    self.cell_h, self.cell_w
                ),
            ));
        }
        let y0 = row * (self.cell_h + 1);
        let x0 = col * (self.cell_w + 1);
        let data = image.data();
        for y in 0..self.cell_h {
            for x in 0..self.cell_w {
                self.pixels[(y0 + y) * self.width + x0 + x] = to_u8(data[y * self.cell_w + x]);
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = format!("P2\n{} {}\n{MAXVAL}\n", self.width, self.height);
        // Keep lines comfortably under the traditional 70-character limit.
        for chunk in self.pixels.chunks(16) {
            let line: Vec<String> = chunk.iter().map(|p| p.to_string()).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
    }
}
