//! Image representation, color-space utilities, metrics, and PPM I/O.
//!
//! Images are H×W×3 grids of `f64` linear-RGB intensities stored row-major.
//! The nominal range is [0,1] but intermediates inside a pipeline may exceed
//! it; file I/O quantizes to 16 bits.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// PSNR reported for identical images instead of +inf, keeping metric
/// pipelines total.
pub const PSNR_SENTINEL_DB: f64 = 1e9;

/// Luminance weights for (R, G, B).
pub const LUMINANCE_WEIGHTS: [f64; 3] = [0.27, 0.67, 0.06];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        let mut img = Image::new(height, width);
        img.data.fill(value);
        img
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {}x{}x3, got {}",
                height * width * 3,
                height,
                width,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// Builds an image from a per-(row, col, channel) function.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Image::new(height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.data[(y * width + x) * 3 + c] = f(y, x, c);
                }
            }
        }
        img
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, p: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = p[0];
        self.data[i + 1] = p[1];
        self.data[i + 2] = p[2];
    }

    pub fn zeros_like(&self) -> Image {
        Image::new(self.height, self.width)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 0.27 R + 0.67 G + 0.06 B.
#[inline]
pub fn luminance(rgb: [f64; 3]) -> f64 {
    LUMINANCE_WEIGHTS[0] * rgb[0] + LUMINANCE_WEIGHTS[1] * rgb[1] + LUMINANCE_WEIGHTS[2] * rgb[2]
}

/// Hexcone HSV pixel; hue is a fraction of a full turn in [0,1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvPixel {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

/// Standard hexcone RGB→HSV. Components are clamped to [0,1] first.
/// Achromatic pixels get hue 0 and saturation 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> HsvPixel {
    let r = rgb[0].clamp(0.0, 1.0);
    let g = rgb[1].clamp(0.0, 1.0);
    let b = rgb[2].clamp(0.0, 1.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;

    let value = max;
    let saturation = if max > 0.0 { chroma / max } else { 0.0 };
    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        let mut h6 = (g - b) / chroma;
        if h6 < 0.0 {
            h6 += 6.0;
        }
        h6 / 6.0
    } else if max == g {
        ((b - r) / chroma + 2.0) / 6.0
    } else {
        ((r - g) / chroma + 4.0) / 6.0
    };

    HsvPixel {
        hue,
        saturation,
        value,
    }
}

pub fn hsv_to_rgb(p: HsvPixel) -> [f64; 3] {
    let h6 = p.hue.rem_euclid(1.0) * 6.0;
    let sextant = (h6.floor() as usize).min(5);
    let f = h6 - sextant as f64;
    let v = p.value;
    let s = p.saturation;
    let lo = v * (1.0 - s);
    let falling = v * (1.0 - s * f);
    let rising = v * (1.0 - s * (1.0 - f));
    match sextant {
        0 => [v, rising, lo],
        1 => [falling, v, lo],
        2 => [lo, v, rising],
        3 => [lo, falling, v],
        4 => [rising, lo, v],
        _ => [v, lo, falling],
    }
}

/// Mean squared error over all H×W×3 values. Sequential summation, fixed
/// order, so results are bit-stable.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "mse: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mut acc = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / a.data().len() as f64)
}

/// PSNR in dB with peak 1.0; identical images report [`PSNR_SENTINEL_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok(10.0 * (1.0 / e).log10())
}

/// Arithmetic mean of all H×W×3 values, sequential summation.
pub fn mean_intensity(img: &Image) -> f64 {
    let mut acc = 0.0;
    for &v in img.data() {
        acc += v;
    }
    acc / img.data().len() as f64
}

pub fn clamp01(img: &Image) -> Image {
    img.map(|v| v.clamp(0.0, 1.0))
}

const PPM_MAX_16: u32 = 65535;

/// Writes binary PPM (P6) with 16-bit big-endian samples.
pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes =
        Vec::with_capacity(32 + img.data().len() * 2);
    write!(
        &mut bytes,
        "P6\n{} {}\n{}\n",
        img.width(),
        img.height(),
        PPM_MAX_16
    )?;
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * PPM_MAX_16 as f64).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads binary PPM (P6) with maxval 255 or 65535.
pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments between header fields.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Ppm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P6" {
        return Err(Error::Ppm(format!("expected magic P6, got {magic:?}")));
    }
    let width: usize = next_token(&bytes)?
        .parse()
        .map_err(|e| Error::Ppm(format!("bad width: {e}")))?;
    let height: usize = next_token(&bytes)?
        .parse()
        .map_err(|e| Error::Ppm(format!("bad height: {e}")))?;
    let maxval: u32 = next_token(&bytes)?
        .parse()
        .map_err(|e| Error::Ppm(format!("bad maxval: {e}")))?;
    if width == 0 || height == 0 {
        return Err(Error::Ppm(format!("degenerate size {width}x{height}")));
    }
    if maxval != 255 && maxval != PPM_MAX_16 {
        return Err(Error::Ppm(format!(
            "unsupported maxval {maxval} (expected 255 or 65535)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Ppm("missing header terminator".into()));
    }
    pos += 1;

    let samples = width * height * 3;
    let payload = &bytes[pos..];
    let mut data = Vec::with_capacity(samples);
    if maxval == 255 {
        if payload.len() < samples {
            return Err(Error::Ppm(format!(
                "truncated payload: expected {} bytes, got {}",
                samples,
                payload.len()
            )));
        }
        for &b in &payload[..samples] {
            data.push(b as f64 / 255.0);
        }
    } else {
        if payload.len() < samples * 2 {
            return Err(Error::Ppm(format!(
                "truncated payload: expected {} bytes, got {}",
                samples * 2,
                payload.len()
            )));
        }
        for i in 0..samples {
            let hi = payload[2 * i] as u16;
            let lo = payload[2 * i + 1] as u16;
            data.push(((hi << 8) | lo) as f64 / PPM_MAX_16 as f64);
        }
    }
    Image::from_vec(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn luminance_weights_sum_to_one() {
        assert_eq!(luminance([1.0, 1.0, 1.0]), 1.0);
        assert_eq!(luminance([1.0, 0.0, 0.0]), 0.27);
        assert!((luminance([0.5, 0.25, 0.25]) - 0.3175).abs() < 1e-12);
    }

    #[test]
    fn hsv_known_values() {
        let red = rgb_to_hsv([1.0, 0.0, 0.0]);
        assert_eq!((red.hue, red.saturation, red.value), (0.0, 1.0, 1.0));

        let gray = rgb_to_hsv([0.5, 0.5, 0.5]);
        assert_eq!((gray.hue, gray.saturation, gray.value), (0.0, 0.0, 0.5));

        let p = rgb_to_hsv([0.5, 0.25, 0.25]);
        assert!((p.hue - 0.0).abs() < 1e-12);
        assert!((p.saturation - 0.5).abs() < 1e-12);
        assert!((p.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mse_and_psnr() {
        let a = Image::constant(2, 2, 0.0);
        let b = Image::constant(2, 2, 0.5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_SENTINEL_DB);

        // mse 0.01 -> 20 dB
        let c = Image::constant(2, 2, 0.1);
        let p = psnr(&a, &c).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "psnr={p}");
    }

    #[test]
    fn mse_dimension_mismatch_errors() {
        let a = Image::constant(2, 2, 0.0);
        let b = Image::constant(2, 3, 0.0);
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn mean_intensity_values() {
        assert_eq!(mean_intensity(&Image::constant(3, 3, 0.5)), 0.5);
        let half = Image::from_fn(2, 2, |y, _, _| if y == 0 { 0.0 } else { 1.0 });
        assert_eq!(mean_intensity(&half), 0.5);
        let px = Image::from_vec(1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert!((mean_intensity(&px) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn clamp01_bounds() {
        let img = Image::from_vec(1, 1, vec![0.5, 11.3, -0.2]).unwrap();
        assert_eq!(clamp01(&img).data(), &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn ppm_round_trip_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = Image::constant(3, 5, 0.5);
        save_ppm(&img, &path).unwrap();
        let back = load_ppm(&path).unwrap();
        for &v in back.data() {
            assert!((v - 0.5).abs() <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn ppm_byte_identical_second_save() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        let img = Image::from_fn(4, 3, |y, x, c| (y * 7 + x * 3 + c) as f64 / 40.0);
        save_ppm(&img, &p1).unwrap();
        let back = load_ppm(&p1).unwrap();
        save_ppm(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn ppm_16bit_sample_value() {
        // 32768/65535 ≈ 0.500008
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ppm");
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&32768u16.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let img = load_ppm(&path).unwrap();
        assert!((img.get(0, 0, 0) - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn ppm_8bit_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v8.ppm");
        std::fs::write(&path, b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        let img = load_ppm(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn ppm_malformed_inputs_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");

        std::fs::write(&path, b"P5\n1 1\n255\n\x00").unwrap();
        assert!(matches!(load_ppm(&path), Err(Error::Ppm(_))));

        std::fs::write(&path, b"P6\n2 2\n255\n\x00\x00").unwrap();
        assert!(matches!(load_ppm(&path), Err(Error::Ppm(_))));

        std::fs::write(&path, b"P6\n1 1\n1023\n\x00\x00\x00").unwrap();
        assert!(matches!(load_ppm(&path), Err(Error::Ppm(_))));
    }

    proptest! {
        #[test]
        fn hsv_round_trip(r in 0.0f64..1.0, g in 0.0f64..1.0, b in 0.0f64..1.0) {
            let hsv = rgb_to_hsv([r, g, b]);
            prop_assume!(hsv.saturation > 1e-3);
            let back = hsv_to_rgb(hsv);
            for c in 0..3 {
                prop_assert!((back[c] - [r, g, b][c]).abs() <= 1e-9);
            }
        }

        #[test]
        fn mean_intensity_permutation_invariant(vals in proptest::collection::vec(0.0f64..1.0, 12)) {
            let img = Image::from_vec(2, 2, vals.clone()).unwrap();
            let mut rev = vals.clone();
            rev.reverse();
            let img2 = Image::from_vec(2, 2, rev).unwrap();
            prop_assert!((mean_intensity(&img) - mean_intensity(&img2)).abs() < 1e-12);
        }

        #[test]
        fn ppm_save_load_save_byte_identical(vals in proptest::collection::vec(0.0f64..=1.0, 27)) {
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.ppm");
            let p2 = dir.path().join("b.ppm");
            let img = Image::from_vec(3, 3, vals).unwrap();
            save_ppm(&img, &p1).unwrap();
            let back = load_ppm(&p1).unwrap();
            save_ppm(&back, &p2).unwrap();
            prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }
}
