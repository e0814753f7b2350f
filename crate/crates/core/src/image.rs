//! Core domain types: complex images, field maps, pixel coordinates and
//! the complex inner product.
//!
//! Conventions fixed here and used by every other module:
//! * complex data is stored row-major as (re, im) pairs (`Complex<f64>`),
//! * the field of view is normalized to 1.0, so k-space is in cycles/FOV,
//! * the pixel at index `floor(N/2)` along each axis sits at coordinate 0.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// H×W grid of complex image values, the unit of reconstruction,
/// training, and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    /// Build an image from row-major data, checking length and finiteness.
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "image data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("complex image data".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: Complex64) {
        self.data[row * self.width + col] = v;
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Per-pixel magnitudes.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch("image add".into()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch("image sub".into()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// H×W map of off-resonance frequencies in Hz, co-registered with the
/// image it blurs.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FieldMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "field map data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field map data".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, hz: f64) -> Result<Self> {
        Self::new(height, width, vec![hz; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn same_shape_as_image(&self, img: &ComplexImage) -> bool {
        self.height == img.height() && self.width == img.width()
    }
}

/// Pixel coordinates in FOV units for an H×W grid: x in [-1/2, 1/2)
/// spaced by 1/W, the pixel at index floor(N/2) at coordinate 0.
#[derive(Clone, Debug)]
pub struct PixelGrid {
    /// y coordinate per row.
    pub y: Vec<f64>,
    /// x coordinate per column.
    pub x: Vec<f64>,
}

impl PixelGrid {
    /// Coordinate pair of a flat row-major pixel index.
    pub fn pair(&self, idx: usize) -> (f64, f64) {
        let w = self.x.len();
        (self.x[idx % w], self.y[idx / w])
    }

    pub fn n_pixels(&self) -> usize {
        self.x.len() * self.y.len()
    }
}

/// Coordinates of every pixel of an `height`×`width` grid in FOV units.
pub fn pixel_coordinates(height: usize, width: usize) -> PixelGrid {
    assert!(height >= 1 && width >= 1, "grid dimensions must be >= 1");
    let axis = |n: usize| -> Vec<f64> {
        let center = (n / 2) as f64;
        (0..n).map(|j| (j as f64 - center) / n as f64).collect()
    };
    PixelGrid {
        y: axis(height),
        x: axis(width),
    }
}

/// Complex inner product sum(conj(a_i) * b_i).
pub fn inner_product(a: &[Complex64], b: &[Complex64]) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "inner product lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.conj() * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn pixel_coordinates_single_pixel() {
        let g = pixel_coordinates(1, 1);
        assert_eq!(g.pair(0), (0.0, 0.0));
    }

    #[test]
    fn pixel_coordinates_two_by_two() {
        // floor(2/2) = 1 is the zero index.
        let g = pixel_coordinates(2, 2);
        assert_eq!(g.x, vec![-0.5, 0.0]);
        assert_eq!(g.y, vec![-0.5, 0.0]);
    }

    #[test]
    fn pixel_coordinates_84_range() {
        let g = pixel_coordinates(84, 84);
        assert_eq!(g.n_pixels(), 7056);
        for idx in 0..g.n_pixels() {
            let (x, y) = g.pair(idx);
            assert!((-0.5..0.5).contains(&x));
            assert!((-0.5..0.5).contains(&y));
        }
    }

    #[test]
    fn inner_product_trivial() {
        let one = vec![Complex64::new(1.0, 0.0)];
        assert_eq!(inner_product(&one, &one).unwrap(), Complex64::new(1.0, 0.0));
        let i = vec![Complex64::new(0.0, 1.0)];
        // conj(i) * i = 1
        assert_eq!(inner_product(&i, &i).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn inner_product_matches_reference_loop() {
        let mut rng = Rng::new(7);
        let a: Vec<Complex64> = (0..16)
            .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
            .collect();
        let b: Vec<Complex64> = (0..16)
            .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
            .collect();
        // element-by-element reference loop
        let mut expect = Complex64::new(0.0, 0.0);
        for k in 0..16 {
            expect += a[k].conj() * b[k];
        }
        assert_eq!(inner_product(&a, &b).unwrap(), expect);
    }

    #[test]
    fn inner_product_length_mismatch_errors() {
        let a = vec![Complex64::new(1.0, 0.0)];
        let b = vec![Complex64::new(1.0, 0.0); 2];
        assert!(inner_product(&a, &b).is_err());
    }

    #[test]
    fn image_constructor_validates() {
        assert!(ComplexImage::new(2, 2, vec![Complex64::new(0.0, 0.0); 3]).is_err());
        assert!(ComplexImage::new(1, 1, vec![Complex64::new(f64::NAN, 0.0)]).is_err());
        assert!(FieldMap::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    proptest! {
        // coordinate of index j+1 minus index j equals 1/N (to the last
        // representable bit; division rounds each coordinate once)
        #[test]
        fn pixel_coordinates_shift_consistent(n in 1usize..256) {
            let g = pixel_coordinates(n, n);
            let step = 1.0 / n as f64;
            for j in 0..n - 1 {
                prop_assert!((g.x[j + 1] - g.x[j] - step).abs() <= f64::EPSILON);
            }
        }

        // <a, a> is real and >= 0 up to rounding
        #[test]
        fn inner_product_self_nonnegative(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let a: Vec<Complex64> = (0..32)
                .map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
                .collect();
            let p = inner_product(&a, &a).unwrap();
            let norm_sq: f64 = a.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!(p.re >= 0.0);
            prop_assert!(p.im.abs() < 1e-12 * norm_sq.max(1.0));
        }
    }
}
