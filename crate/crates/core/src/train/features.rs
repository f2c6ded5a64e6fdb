use crate::image::Image;

/// Per-pixel feature vectors, pixel-major: `data[i * dim + k]`.
///
/// Features, all in `[-1, 1]`: R, G, B, x, y, and optionally the 3x3 local
/// mean intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PixelFeatures {
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn signed(v: f64) -> f64 {
    2.0 * v - 1.0
}

pub fn pixel_features(img: &Image, local_mean: bool) -> PixelFeatures {
    let (h, w) = (img.height(), img.width());
    let dim = if local_mean { 6 } else { 5 };
    let n = h * w;
    let mut data = Vec::with_capacity(n * dim);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for c in 0..3 {
                data.push(signed(f64::from(img.plane(c)[i])));
            }
            data.push(signed((x as f64 + 0.5) / w as f64));
            data.push(signed((y as f64 + 0.5) / h as f64));
            if local_mean {
                let (mut sum, mut count) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        sum += f64::from(img.intensity(yy * w + xx));
                        count += 1.0;
                    }
                }
                data.push(signed(sum / count));
            }
        }
    }
    PixelFeatures {
        height: h,
        width: w,
        dim,
        data,
    }
}
