use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{encode_tensor, Reader};
use crate::tensor::Tensor;

/// Three-channel image, planar (channel, row, column), values on the 0-255 scale, RGB order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "image {width}x{height} needs {} samples, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Image { width, height, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Mean value of each channel.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        std::array::from_fn(|c| self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("image extents are valid")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[3, h, w] => Image::new(w, h, t.data().to_vec()),
            s => Err(Error::shape(format!("image tensor must be [3, H, W], got {s:?}"))),
        }
    }

    /// Bilinear resampling with pixel-centre alignment and clamped borders.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let axis = |out: usize, src: usize| -> Vec<(usize, usize, f32)> {
            let scale = src as f64 / out as f64;
            (0..out)
                .map(|i| {
                    let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                    let lo = p.floor() as usize;
                    let hi = (lo + 1).min(src - 1);
                    (lo, hi, (p - lo as f64) as f32)
                })
                .collect()
        };
        let xs = axis(width, self.width);
        let ys = axis(height, self.height);
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            let plane = self.plane(c);
            for &(y0, y1, fy) in &ys {
                let r0 = &plane[y0 * self.width..(y0 + 1) * self.width];
                let r1 = &plane[y1 * self.width..(y1 + 1) * self.width];
                for &(x0, x1, fx) in &xs {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    data.push(top + (bot - top) * fy);
                }
            }
        }
        Image { width, height, data }
    }

    /// Rectangular sub-image.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Image> {
        if y + height > self.height || x + width > self.width || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({y}, {x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            let plane = self.plane(c);
            for row in y..y + height {
                data.extend_from_slice(&plane[row * self.width + x..row * self.width + x + width]);
            }
        }
        Ok(Image { width, height, data })
    }

    /// Shorter side scaled to `side`, then the centred `side`x`side` square.
    pub fn resize_square(&self, side: usize) -> Image {
        let (w, h) = if self.width <= self.height {
            (side, ((self.height * side) as f64 / self.width as f64).round().max(side as f64) as usize)
        } else {
            (((self.width * side) as f64 / self.height as f64).round().max(side as f64) as usize, side)
        };
        let scaled = self.resize(w, h);
        scaled
            .crop((h - side) / 2, (w - side) / 2, side, side)
            .expect("square fits in the scaled image")
    }
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decodes a binary (P6) PPM with 8-bit samples.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, "truncated PPM header"));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P6" {
        return Err(image_err(path, "not a binary PPM (expected P6 magic)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, format!("bad PPM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(image_err(path, "PPM has zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(image_err(path, format!("only 8-bit PPM is supported (maxval {maxval})")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() < start + need {
        return Err(image_err(path, format!("PPM raster truncated: need {need} bytes")));
    }
    let raster = &bytes[start..start + need];
    let scale = 255.0 / maxval as f32;
    let plane = width * height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 * scale;
        }
    }
    Ok(Image { width, height, data })
}

/// Encodes as P6 PPM, rounding and clamping samples to 0-255.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    let plane = image.width * image.height;
    out.reserve(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            out.push(image.data[c * plane + i].round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Sidecar holding one `[3, H, W]` tensor record in checkpoint tensor encoding.
pub fn encode_tensor_image(image: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    encode_tensor(&image.to_tensor(), &mut out).expect("rank 3 fits");
    out
}

pub fn decode_tensor_image(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut r = Reader::new(bytes);
    let t = r.tensor("image").map_err(|e| image_err(path, e.to_string()))?;
    if r.remaining() != 0 {
        return Err(image_err(path, "trailing bytes after tensor record"));
    }
    Image::from_tensor(&t).map_err(|e| image_err(path, e.to_string()))
}

#[cfg(feature = "image-formats")]
fn decode_other(bytes: &[u8], path: &Path) -> Result<Image> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| image_err(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32;
        }
    }
    Image::new(w, h, data)
}

#[cfg(not(feature = "image-formats"))]
fn decode_other(_bytes: &[u8], path: &Path) -> Result<Image> {
    Err(image_err(
        path,
        "unsupported format (PPM and .tensor are built in; rebuild with the `image-formats` feature for PNG/JPEG)",
    ))
}

/// Reads an image, choosing the decoder by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => decode_ppm(&bytes, path),
        "tensor" => decode_tensor_image(&bytes, path),
        _ => decode_other(&bytes, path),
    }
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}
