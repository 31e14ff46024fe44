//! Linear-RGB float images with bilinear sampling and sRGB file IO.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use image::{ImageBuffer, ImageFormat, Rgb, RgbImage};

pub type Rgb16Image = ImageBuffer<Rgb<u16>, Vec<u16>>;
use nalgebra::{Matrix3x2, Vector2, Vector3};

use crate::error::{Error, Result};

/// Row-major linear RGB image. Pixel `(x, y)` has its center at integer
/// coordinates `(x, y)`.
#[derive(Debug)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<Vector3<f64>>,
    out_of_bounds: AtomicUsize,
}

impl Clone for Image {
    fn clone(&self) -> Self {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
            out_of_bounds: AtomicUsize::new(self.out_of_bounds.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Image {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.data == other.data
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Vector3<f64>) -> Self {
        Image {
            width,
            height,
            data: vec![fill; width * height],
            out_of_bounds: AtomicUsize::new(0),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vector3<f64>) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Image {
            width,
            height,
            data,
            out_of_bounds: AtomicUsize::new(0),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Vector3<f64>) {
        self.data[y * self.width + x] = c;
    }

    /// Number of samples requested outside the image so far.
    pub fn out_of_bounds_samples(&self) -> usize {
        self.out_of_bounds.load(Ordering::Relaxed)
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.data.iter().sum::<Vector3<f64>>() / self.data.len().max(1) as f64
    }

    /// Cell origin and fractional offsets for bilinear lookup, clamping
    /// positions outside `[0, w-1] x [0, h-1]` to the border.
    fn cell(&self, u: &Vector2<f64>) -> (usize, usize, f64, f64) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let inside = u.x >= 0.0 && u.y >= 0.0 && u.x <= max_x && u.y <= max_y;
        if !inside {
            self.out_of_bounds.fetch_add(1, Ordering::Relaxed);
        }
        let x = if u.x.is_finite() { u.x.clamp(0.0, max_x) } else { 0.0 };
        let y = if u.y.is_finite() { u.y.clamp(0.0, max_y) } else { 0.0 };
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        (x0, y0, x - x0 as f64, y - y0 as f64)
    }

    pub fn sample(&self, u: &Vector2<f64>) -> Vector3<f64> {
        self.sample_with_gradient(u).0
    }

    /// Bilinear sample and its derivative with respect to the position
    /// (columns: d/dx, d/dy).
    pub fn sample_with_gradient(&self, u: &Vector2<f64>) -> (Vector3<f64>, Matrix3x2<f64>) {
        let (x0, y0, fx, fy) = self.cell(u);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x0 + 1, y0);
        let p01 = self.get(x0, y0 + 1);
        let p11 = self.get(x0 + 1, y0 + 1);
        let top = p00 * (1.0 - fx) + p10 * fx;
        let bottom = p01 * (1.0 - fx) + p11 * fx;
        let value = top * (1.0 - fy) + bottom * fy;
        let dx = (p10 - p00) * (1.0 - fy) + (p11 - p01) * fy;
        let dy = bottom - top;
        (value, Matrix3x2::from_columns(&[dx, dy]))
    }

    /// Reads a PNG or PPM file (8 or 16 bits per channel) and converts sRGB
    /// to linear.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let lin = |v: u16| srgb_to_linear(v as f64 / 65535.0);
        Ok(Image::from_fn(w, h, |x, y| {
            let p = img.get_pixel(x as u32, y as u32);
            Vector3::new(lin(p[0]), lin(p[1]), lin(p[2]))
        }))
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let q = |c: f64| (linear_to_srgb(c) * 255.0).round() as u8;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.get(x as usize, y as usize);
            Rgb([q(c.x), q(c.y), q(c.z)])
        })
    }

    pub fn to_rgb16(&self) -> Rgb16Image {
        let q = |c: f64| (linear_to_srgb(c) * 65535.0).round() as u16;
        Rgb16Image::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.get(x as usize, y as usize);
            Rgb([q(c.x), q(c.y), q(c.z)])
        })
    }

    /// Writes sRGB: 16 bits per channel for `.png`, 8 bits for `.ppm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_ppm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        let written = if is_ppm {
            self.to_rgb8().save_with_format(path, ImageFormat::Pnm)
        } else {
            self.to_rgb16().save_with_format(path, ImageFormat::Png)
        };
        written.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        let vals: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)))
            .collect();
        Image::from_fn(w, h, |x, y| vals[y * w + x])
    }

    #[test]
    fn pixel_centers_and_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 5, 4);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(img.sample(&Vector2::new(x as f64, y as f64)), img.get(x, y));
            }
        }
        let two = Image::from_fn(2, 2, |x, _| Vector3::repeat(x as f64));
        assert_eq!(two.sample(&Vector2::new(0.5, 0.3)), Vector3::repeat(0.5));
        assert_eq!(img.out_of_bounds_samples(), 0);
    }

    #[test]
    fn matches_four_tap_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 9, 7);
        for _ in 0..200 {
            let u: Vector2<f64> = Vector2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..6.0));
            let (x0, y0) = (u.x.floor() as usize, u.y.floor() as usize);
            let (a, b) = (u.x - x0 as f64, u.y - y0 as f64);
            let expected = img.get(x0, y0) * (1.0 - a) * (1.0 - b)
                + img.get(x0 + 1, y0) * a * (1.0 - b)
                + img.get(x0, y0 + 1) * (1.0 - a) * b
                + img.get(x0 + 1, y0 + 1) * a * b;
            assert!((img.sample(&u) - expected).amax() < 1e-14);
        }
    }

    #[test]
    fn gradient_is_derivative_inside_a_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 6, 6);
        for _ in 0..50 {
            let u = Vector2::new(
                rng.random_range(0.0..4.0_f64).floor() + rng.random_range(0.1..0.9),
                rng.random_range(0.0..4.0_f64).floor() + rng.random_range(0.1..0.9),
            );
            let (_, g) = img.sample_with_gradient(&u);
            let h = 1e-6;
            for k in 0..2 {
                let mut up = u;
                up[k] += h;
                let mut um = u;
                um[k] -= h;
                let fd = (img.sample(&up) - img.sample(&um)) / (2.0 * h);
                assert!((fd - g.column(k)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn out_of_bounds_clamps_and_counts() {
        let img = Image::from_fn(3, 3, |x, y| Vector3::new(x as f64, y as f64, 0.0));
        assert_eq!(img.sample(&Vector2::new(-4.0, 1.0)), img.get(0, 1));
        assert_eq!(img.sample(&Vector2::new(2.0, 9.0)), img.get(2, 2));
        assert_eq!(img.out_of_bounds_samples(), 2);
    }

    #[test]
    fn srgb_roundtrip_through_png_and_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 8, 5);
        for (name, tol) in [("a.png", 1e-4), ("a.ppm", 0.01)] {
            let path = dir.path().join(name);
            img.save(&path).unwrap();
            let back = Image::load(&path).unwrap();
            assert_eq!(back.width(), 8);
            assert_eq!(back.height(), 5);
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                // 16-bit (png) or 8-bit (ppm) sRGB quantization
                assert!((a - b).amax() < tol);
            }
            // a second save of the decoded image is lossless
            back.save(&path).unwrap();
            assert_eq!(Image::load(&path).unwrap(), back);
        }
    }
}
