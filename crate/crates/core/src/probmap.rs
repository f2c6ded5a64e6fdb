use crate::error::{Error, Result};

/// Maximum allowed deviation of a pixel's class-probability sum from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Per-pixel class probabilities for one frame.
///
/// Storage is channel-major: the full `height * width` plane of class 0,
/// then class 1, and so on; each plane is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f32>,
}

impl ProbMap {
    /// Builds a map and checks every invariant: dimensions, value range and
    /// per-pixel normalisation. Values are never clamped.
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        let pm = Self::from_raw(height, width, num_classes, data)?;
        pm.validate()?;
        Ok(pm)
    }

    /// Shape checks only. Used by readers that report normalisation separately.
    pub(crate) fn from_raw(
        height: usize,
        width: usize,
        num_classes: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "probability map must be non-empty, got {height}x{width}"
            )));
        }
        if !(2..=255).contains(&num_classes) {
            return Err(Error::validation(format!(
                "class count must be in [2, 255], got {num_classes}"
            )));
        }
        let expected = height * width * num_classes;
        if data.len() != expected {
            return Err(Error::validation(format!(
                "expected {expected} probabilities for {height}x{width}x{num_classes}, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    /// Every pixel set to `1 / num_classes`.
    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        let v = 1.0 / num_classes as f32;
        Self::new(height, width, num_classes, vec![v; height * width * num_classes])
    }

    /// Builds a map from per-pixel class weights (pixel-major, `f64`),
    /// dividing each pixel by its sum.
    pub fn from_pixel_weights(
        height: usize,
        width: usize,
        num_classes: usize,
        weights: &[f64],
    ) -> Result<Self> {
        let plane = height * width;
        if weights.len() != plane * num_classes {
            return Err(Error::validation(format!(
                "expected {} weights, got {}",
                plane * num_classes,
                weights.len()
            )));
        }
        let mut data = vec![0f32; plane * num_classes];
        for (i, px) in weights.chunks_exact(num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if !(sum > 0.0) || px.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::validation(format!(
                    "pixel {i} has no positive finite weight"
                )));
            }
            for (c, w) in px.iter().enumerate() {
                data[c * plane + i] = (w / sum) as f32;
            }
        }
        Self::new(height, width, num_classes, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pixels per class plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[class * n..(class + 1) * n]
    }

    #[inline]
    pub fn get(&self, class: usize, y: usize, x: usize) -> f32 {
        self.data[class * self.plane_len() + y * self.width + x]
    }

    /// Class probabilities of the pixel at flat index `i` (row-major).
    pub fn pixel(&self, i: usize) -> impl Iterator<Item = f32> + '_ {
        let n = self.plane_len();
        (0..self.num_classes).map(move |c| self.data[c * n + i])
    }

    pub fn same_shape(&self, other: &ProbMap) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.num_classes == other.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::validation(format!(
                "probability {} at index {i} is outside [0, 1]",
                self.data[i]
            )));
        }
        for i in 0..self.plane_len() {
            let sum: f64 = self.pixel(i).map(f64::from).sum();
            if (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::validation(format!(
                    "pixel ({}, {}) sums to {sum}, not 1",
                    i / self.width,
                    i % self.width
                )));
            }
        }
        Ok(())
    }

    /// Builds a map from channel-major `f64` values, dividing every pixel by
    /// its class sum. Inputs are expected to be non-negative with a positive
    /// sum per pixel.
    pub(crate) fn renormalized(
        height: usize,
        width: usize,
        num_classes: usize,
        values: &[f64],
    ) -> Self {
        let plane = height * width;
        let mut data = vec![0f32; values.len()];
        for i in 0..plane {
            let sum: f64 = (0..num_classes).map(|c| values[c * plane + i]).sum();
            for c in 0..num_classes {
                data[c * plane + i] = (values[c * plane + i] / sum) as f32;
            }
        }
        Self {
            height,
            width,
            num_classes,
            data,
        }
    }
}
