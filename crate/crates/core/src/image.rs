use crate::error::{Error, Result};

/// Channel-planar (CHW) float image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim("image", &[channels, height, width], &[]));
        }
        if data.len() != channels * height * width {
            return Err(Error::dim("image", &[channels, height, width], &[data.len()]));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Repeats a single gray channel three times.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let plane = self.plane(0);
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
        Image {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Sub-rectangle `[top, top + h) × [left, left + w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Image {
        debug_assert!(top + h <= self.height && left + w <= self.width);
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + h {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + w]);
            }
        }
        Image {
            channels: self.channels,
            height: h,
            width: w,
            data,
        }
    }

    /// Bilinear resize with half-pixel centers; resizing to the same size is
    /// the identity.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ys = sample_positions(self.height, out_h);
        let xs = sample_positions(self.width, out_w);
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = plane[y0 * self.width + x0] * (1.0 - fx) + plane[y0 * self.width + x1] * fx;
                    let bot = plane[y1 * self.width + x0] * (1.0 - fx) + plane[y1 * self.width + x1] * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Image {
            channels: self.channels,
            height: out_h,
            width: out_w,
            data,
        }
    }
}

/// Source index pair and blend weight for each output coordinate.
fn sample_positions(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}
