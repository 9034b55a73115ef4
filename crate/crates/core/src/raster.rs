//! Pixel containers shared by the pipeline stages.
//!
//! All rasters are row-major with `(x, y)` addressing, `x` running along a
//! row. They are immutable after construction in normal pipeline use and
//! safe to share read-only across workers.

/// 8-bit-per-channel RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    /// All-black image. Panics if either dimension is zero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        RgbImage {
            width,
            height,
            data: vec![0; (width as usize) * (height as usize) * 3],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    /// Wraps an interleaved RGB byte buffer (`3 * width * height` bytes).
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> crate::Result<Self> {
        let expected = (width as usize) * (height as usize) * 3;
        if width < 1 || height < 1 || data.len() != expected {
            return Err(crate::Error::InvalidInput(format!(
                "raw buffer of {} bytes does not match {}x{} RGB raster",
                data.len(),
                width,
                height
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        ((y as usize) * (self.width as usize) + (x as usize)) * 3
    }
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

/// Per-pixel stone / non-stone mask paired with an [`RgbImage`].
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    /// All-non-stone mask. Panics if either dimension is zero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be >= 1");
        BinaryMask {
            width,
            height,
            data: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// True when the pixel belongs to the stone.
    #[inline]
    pub fn stone(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, stone: bool) {
        let w = self.width as usize;
        self.data[(y as usize) * w + (x as usize)] = stone;
    }

    pub fn stone_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the stone pixels, or
    /// `None` for an all-non-stone mask.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let (mut x0, mut y0) = (u32::MAX, u32::MAX);
        let (mut x1, mut y1) = (0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.stone(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{})", self.width, self.height)
    }
}

/// Single-channel real-valued raster (one HSV plane, an energy map, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "plane dimensions must be >= 1");
        Plane {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut p = Plane::new(width, height);
        for y in 0..height {
            for x in 0..width {
                p.set(x, y, f(x, y));
            }
        }
        p
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.data[(y as usize) * w + (x as usize)] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Real-valued 3-channel raster, interleaved; output of whitening.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        FloatImage {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize) * 3],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = (((y as usize) * (self.width as usize)) + (x as usize)) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, px: [f64; 3]) {
        let i = (((y as usize) * (self.width as usize)) + (x as usize)) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Iterates one channel (0 = R, 1 = G, 2 = B).
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        assert!(c < 3);
        self.data.iter().skip(c).step_by(3).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounding_box_of_block() {
        let m = BinaryMask::from_fn(8, 6, |x, y| (2..5).contains(&x) && (1..4).contains(&y));
        assert_eq!(m.bounding_box(), Some((2, 1, 4, 3)));
        assert_eq!(m.stone_count(), 9);
    }

    #[test]
    fn bounding_box_empty() {
        assert_eq!(BinaryMask::new(4, 4).bounding_box(), None);
    }

    #[test]
    fn rgb_roundtrip_raw() {
        let img = RgbImage::from_fn(3, 2, |x, y| [x as u8, y as u8, 7]);
        let raw = img.clone().into_raw();
        let back = RgbImage::from_raw(3, 2, raw).unwrap();
        assert_eq!(img, back);
        assert_eq!(back.get(2, 1), [2, 1, 7]);
    }

    #[test]
    fn raw_size_checked() {
        assert!(RgbImage::from_raw(2, 2, vec![0; 11]).is_err());
    }
}
