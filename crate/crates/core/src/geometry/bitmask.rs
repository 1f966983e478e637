use super::GeometryError;

/// Dense binary mask. Pixels are stored column-major to line up with RLE runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyMask { width, height });
        }
        Ok(Self { width, height, bits: vec![false; width as usize * height as usize] })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Result<Self, GeometryError> {
        let mut m = Self::new(width, height)?;
        for x in 0..width {
            for y in 0..height {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        x as usize * self.height as usize + y as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = self.index(x, y);
        self.bits[i] = v;
    }

    pub(crate) fn set_column_major(&mut self, idx: usize, v: bool) {
        self.bits[idx] = v;
    }

    pub fn iter_column_major(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Pixelwise OR; shapes must agree.
    pub fn or(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.zip_with(other, |a, b| a && b)
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(bool, bool) -> bool) -> Result<BitMask, GeometryError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(GeometryError::ShapeMismatch { a: (self.height, self.width), b: (other.height, other.width) });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BitMask { width: self.width, height: self.height, bits })
    }
}
