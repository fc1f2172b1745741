//! RGB float images, resampling and PNG IO.
//!
//! Pixel `(i, j)` has its center at continuous coordinate `(i, j)`. Every
//! resize or crop maps coordinates as `x' = (x - left) * S / w`, and the
//! destination pixel `x'` samples the source at `left + x' * w / S`, so
//! keypoints and image content move together.

use std::io::Cursor;

use conekp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::keypoints::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Interleaved RGB in `[0, 1]`, row-major.
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
        out
    }

    /// Resamples the axis-aligned region starting at `(left, top)` with size
    /// `w x h` (source pixels) into an `out_w x out_h` image. Downscaling
    /// averages a grid of bilinear taps per output pixel.
    pub fn crop_resize(&self, left: f64, top: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Image {
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let nx = sx.ceil().max(1.0) as usize;
        let ny = sy.ceil().max(1.0) as usize;
        let norm = 1.0 / (nx * ny) as f32;
        let mut out = Image::new(out_w, out_h);
        for j in 0..out_h {
            for i in 0..out_w {
                let cx = left + i as f64 * sx;
                let cy = top + j as f64 * sy;
                let mut acc = [0.0f32; 3];
                for b in 0..ny {
                    let oy = if ny == 1 {
                        0.0
                    } else {
                        ((b as f64 + 0.5) / ny as f64 - 0.5) * sy
                    };
                    for a in 0..nx {
                        let ox = if nx == 1 {
                            0.0
                        } else {
                            ((a as f64 + 0.5) / nx as f64 - 0.5) * sx
                        };
                        let s = self.sample(cx + ox, cy + oy);
                        for k in 0..3 {
                            acc[k] += s[k];
                        }
                    }
                }
                out.set(i, j, acc.map(|v| v * norm));
            }
        }
        out
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Image {
        self.crop_resize(0.0, 0.0, self.width as f64, self.height as f64, out_w, out_h)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Channel-first `[3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut values = vec![0.0f32; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                values[c * plane + p] = px[c];
            }
        }
        Tensor::new(&[3, self.height, self.width], values).expect("shape matches")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Image> {
        let (h, w) = match *t.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::Image(format!("expected [3, H, W] tensor, got {s:?}"))),
        };
        let plane = h * w;
        let v = t.values();
        let mut data = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            data.extend_from_slice(&[v[p], v[plane + p], v[2 * plane + p]]);
        }
        Image::from_raw(w, h, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("size matches")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Quantizes to 8 bits per channel, as stored on disk.
    pub fn quantized(&self) -> Image {
        Image::from_rgb8(&self.to_rgb8())
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory png encoding");
        buf.into_inner()
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Image> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }
}

/// Maps a source-image point into a crop-and-resize output frame.
pub fn to_crop_frame(p: Point, left: f64, top: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Point {
    [(p[0] - left) * out_w as f64 / w, (p[1] - top) * out_h as f64 / h]
}

/// Inverse of [`to_crop_frame`].
pub fn from_crop_frame(p: Point, left: f64, top: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Point {
    [left + p[0] * w / out_w as f64, top + p[1] * h / out_h as f64]
}

/// HSV with hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [f32; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| v as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 1e-12 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max <= 1e-12 { 0.0 } else { delta / max };
    [hue, sat, max]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, [x as f32 / w as f32, y as f32 / h as f32, 0.5]);
            }
        }
        img
    }

    #[test]
    fn sample_at_pixel_centers_is_exact() {
        let img = gradient(7, 5);
        assert_eq!(img.sample(3.0, 2.0), img.get(3, 2));
        let mid = img.sample(3.5, 2.0);
        assert!((mid[0] - (3.5 / 7.0)).abs() < 1e-6);
    }

    #[test]
    fn tensor_round_trip() {
        let img = gradient(6, 4);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 4, 6]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn png_round_trip_is_lossless_after_quantization() {
        let img = gradient(9, 9).quantized();
        let back = Image::from_png_bytes(&img.to_png_bytes()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn garbage_bytes_fail_to_decode() {
        assert!(Image::from_png_bytes(b"not an image").is_err());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv([0.0, 0.0, 1.0]), [240.0, 1.0, 1.0]);
        let [h, s, _] = rgb_to_hsv([1.0, 1.0, 0.0]);
        assert_eq!((h, s), (60.0, 1.0));
        assert_eq!(rgb_to_hsv([0.5, 0.5, 0.5])[1], 0.0);
    }

    #[test]
    fn crop_frame_maps_invert() {
        let p = [12.5, 30.25];
        let q = to_crop_frame(p, 4.0, 6.0, 50.0, 40.0, 80, 80);
        let r = from_crop_frame(q, 4.0, 6.0, 50.0, 40.0, 80, 80);
        assert!((r[0] - p[0]).abs() < 1e-12 && (r[1] - p[1]).abs() < 1e-12);
    }
}
