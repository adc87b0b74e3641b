//! Binary per-object masks.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("mask has {actual} bits, expected {expected}")]
    BitCount { expected: usize, actual: usize },
    #[error("mask shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
}

/// Inclusive tight bounding box of a mask's set pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }
}

/// Row-major binary grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ObjectMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for ObjectMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ObjectMask({}x{}, area {})", self.height, self.width, self.area())
    }
}

impl ObjectMask {
    pub fn empty(height: usize, width: usize) -> Result<Self, MaskError> {
        Self::from_bits(height, width, vec![false; height * width])
    }

    pub fn full(height: usize, width: usize) -> Result<Self, MaskError> {
        Self::from_bits(height, width, vec![true; height * width])
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::EmptyShape { height, width });
        }
        if bits.len() != height * width {
            return Err(MaskError::BitCount {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::from_bits(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn ensure_same_shape(&self, other: &ObjectMask) -> Result<(), MaskError> {
        if self.shape() != other.shape() {
            return Err(MaskError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)`.
    pub fn overlap_counts(&self, other: &ObjectMask) -> Result<(usize, usize), MaskError> {
        self.ensure_same_shape(other)?;
        let (mut inter, mut union) = (0, 0);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok((inter, union))
    }

    pub fn intersection(&self, other: &ObjectMask) -> Result<ObjectMask, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn union(&self, other: &ObjectMask) -> Result<ObjectMask, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn difference(&self, other: &ObjectMask) -> Result<ObjectMask, MaskError> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(
        &self,
        other: &ObjectMask,
        f: impl Fn(bool, bool) -> bool,
    ) -> Result<ObjectMask, MaskError> {
        self.ensure_same_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(ObjectMask {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    /// Keeps only pixels inside `bbox`.
    pub fn restrict_to(&self, bbox: &BoundingBox) -> ObjectMask {
        let mut out = self.clone();
        for (i, bit) in out.bits.iter_mut().enumerate() {
            if *bit && !bbox.contains(i / self.width, i % self.width) {
                *bit = false;
            }
        }
        out
    }

    /// Tight inclusive bounding box, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / self.width, i % self.width);
            bbox = Some(match bbox {
                None => BoundingBox {
                    row_min: r,
                    col_min: c,
                    row_max: r,
                    col_max: c,
                },
                Some(b) => BoundingBox {
                    row_min: b.row_min.min(r),
                    col_min: b.col_min.min(c),
                    row_max: b.row_max.max(r),
                    col_max: b.col_max.max(c),
                },
            });
        }
        bbox
    }

    /// Number of 4-connected components of set pixels.
    pub fn connected_components(&self) -> usize {
        let mut seen = vec![false; self.bits.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for n in self.neighbors4(i) {
                    if self.bits[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        count
    }

    /// Linear indices of the 4-neighbours of linear index `i`.
    pub(crate) fn neighbors4(&self, i: usize) -> impl Iterator<Item = usize> {
        let (h, w) = (self.height, self.width);
        let (r, c) = (i / w, i % w);
        [
            (r > 0).then(|| i - w),
            (r + 1 < h).then(|| i + w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
        ]
        .into_iter()
        .flatten()
    }

    /// Set pixels with an unset 4-neighbour or lying on the image border.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !self.get(r, c) {
                    continue;
                }
                let on_border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
                if on_border
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1)
                {
                    out.push((r, c));
                }
            }
        }
        out
    }
}
