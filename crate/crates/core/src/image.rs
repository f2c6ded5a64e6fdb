//! RGB frames and the resampling kernels shared by TTA and augmentation.

use crate::error::{Error, Result};

/// An RGB frame with channel values in `[0, 1]`, stored channel-major
/// (R plane, G plane, B plane), row-major within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::validation(format!(
                "expected {} samples for a {height}x{width} RGB image, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Interleaved 8-bit RGB (as found in a PPM payload) to a float image.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        let n = height * width;
        if rgb.len() != CHANNELS * n {
            return Err(Error::validation(format!(
                "expected {} bytes of RGB, got {}",
                CHANNELS * n,
                rgb.len()
            )));
        }
        let mut data = vec![0f32; CHANNELS * n];
        for (i, px) in rgb.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[c * n + i] = f32::from(px[c]) / 255.0;
            }
        }
        Self::new(height, width, data)
    }

    /// Quantises to interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.plane_len();
        let mut out = Vec::with_capacity(CHANNELS * n);
        for i in 0..n {
            for c in 0..CHANNELS {
                out.push((self.data[c * n + i] * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub(crate) fn planes_mut(&mut self) -> std::slice::ChunksExactMut<'_, f32> {
        let n = self.plane_len();
        self.data.chunks_exact_mut(n)
    }

    /// Mean of the three channels at flat pixel index `i`.
    pub fn intensity(&self, i: usize) -> f32 {
        let n = self.plane_len();
        (self.data[i] + self.data[n + i] + self.data[2 * n + i]) / 3.0
    }

    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        let w = self.width;
        for plane in out.planes_mut() {
            for row in plane.chunks_exact_mut(w) {
                row.reverse();
            }
        }
        out
    }

    /// Bilinear, half-pixel aligned. Identity size returns a clone.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Image> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::validation("resize target must be at least 1x1"));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(CHANNELS * out_h * out_w);
        for c in 0..CHANNELS {
            let plane = resize_plane_bilinear(self.plane(c), self.height, self.width, out_h, out_w);
            data.extend(plane.into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
        }
        Ok(Image {
            height: out_h,
            width: out_w,
            data,
        })
    }

    /// Copies the `h x w` window at `(top, left)`; samples outside the frame
    /// are zero.
    pub fn crop_padded(&self, top: usize, left: usize, h: usize, w: usize) -> Image {
        let mut data = vec![0f32; CHANNELS * h * w];
        for c in 0..CHANNELS {
            let src = self.plane(c);
            let dst = &mut data[c * h * w..(c + 1) * h * w];
            for y in 0..h.min(self.height.saturating_sub(top)) {
                let cols = w.min(self.width.saturating_sub(left));
                let s = (top + y) * self.width + left;
                dst[y * w..y * w + cols].copy_from_slice(&src[s..s + cols]);
            }
        }
        Image {
            height: h,
            width: w,
            data,
        }
    }
}

/// Source coordinate and blend weight for one output index under half-pixel
/// alignment: `src = (dst + 0.5) * (in / out) - 0.5`, clamped to the borders.
#[inline]
pub(crate) fn source_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Resamples one row-major plane with bilinear interpolation.
pub fn resize_plane_bilinear(
    src: &[f32],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), in_h * in_w);
    let cols: Vec<_> = (0..out_w).map(|x| source_taps(x, in_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = source_taps(y, in_h, out_h);
        let r0 = &src[y0 * in_w..(y0 + 1) * in_w];
        let r1 = &src[y1 * in_w..(y1 + 1) * in_w];
        for &(x0, x1, fx) in &cols {
            let top = f64::from(r0[x0]) * (1.0 - fx) + f64::from(r0[x1]) * fx;
            let bottom = f64::from(r1[x0]) * (1.0 - fx) + f64::from(r1[x1]) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Nearest-neighbour lookup index under the same half-pixel convention.
#[inline]
pub(crate) fn nearest_index(dst: usize, in_len: usize, out_len: usize) -> usize {
    let src = (dst as f64 + 0.5) * (in_len as f64 / out_len as f64);
    (src.floor() as usize).min(in_len - 1)
}
