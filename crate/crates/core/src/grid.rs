//! Row-major 2-D grids: binary masks and semantic label maps.

use crate::error::{Error, Result};

/// A binary mask stored one `bool` per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for a {height}x{width} grid",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    /// Mask with the half-open rectangle `[top, bottom) x [left, right)` set.
    pub fn rect(height: usize, width: usize, top: usize, left: usize, bottom: usize, right: usize) -> Self {
        let mut g = Self::new(height, width);
        for y in top..bottom.min(height) {
            for x in left..right.min(width) {
                g.set(y, x, true);
            }
        }
        g
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Nearest-neighbour resize to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> BitGrid {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = BitGrid::new(height, width);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.bits[y * width + x] = self.bits[sy * self.width + sx];
            }
        }
        out
    }
}

/// Per-pixel class indices; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_labels(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    /// Binary mask of pixels carrying `label`.
    pub fn mask_of(&self, label: u8) -> BitGrid {
        BitGrid {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Errors if any pixel exceeds `max_label`.
    pub fn check_range(&self, max_label: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize > max_label) {
            Some(&l) => Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: max_label,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_upsample_doubles_pixels() {
        let g = BitGrid::from_bits(2, 2, vec![true, false, false, true]).unwrap();
        let up = g.resize_nearest(4, 4);
        assert_eq!(up.count_ones(), 8);
        assert!(up.get(1, 1) && up.get(2, 2) && !up.get(1, 2));
    }

    #[test]
    fn rect_is_clipped() {
        let g = BitGrid::rect(4, 4, 2, 2, 10, 10);
        assert_eq!(g.count_ones(), 4);
    }
}
