use crate::error::{Error, Result};

/// Label value for pixels excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// Hard per-pixel class IDs, row-major. `IGNORE` marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "expected {} labels for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Checks that every non-ignore value is below `num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE && usize::from(v) >= num_classes)
        {
            Some(i) => Err(Error::validation(format!(
                "label {} at pixel ({}, {}) is not a class in [0, {num_classes}) or {IGNORE}",
                self.data[i],
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    /// Fraction of pixels carrying a real label.
    pub fn coverage(&self) -> f64 {
        let labeled = self.data.iter().filter(|&&v| v != IGNORE).count();
        labeled as f64 / self.data.len() as f64
    }

    /// Columns reversed in every row.
    pub fn hflip(&self) -> LabelMap {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        LabelMap { data, ..*self }
    }
}
