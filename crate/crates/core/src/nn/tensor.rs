use crate::error::{Error, Result};

/// Channel-major (CHW) feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{channels}x{height}x{width} values"),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(c, row, col)]
    }

    /// Value at a possibly out-of-bounds position; zero outside the map.
    #[inline]
    pub fn get_padded(&self, c: usize, row: isize, col: isize) -> f32 {
        if row < 0 || col < 0 || row >= self.height as isize || col >= self.width as isize {
            0.0
        } else {
            self.get(c, row as usize, col as usize)
        }
    }

    /// All channels at one location.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, row, col)).collect()
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }
}
