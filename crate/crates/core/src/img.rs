//! Grayscale image buffers and the small amount of pixel processing the
//! tracker needs: Gaussian smoothing, Sobel gradients and PGM (P5) I/O.

use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad PGM magic (expected P5)")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (only 8-bit, maxval 255)")]
    UnsupportedMaxval(u32),
    #[error("payload too short: expected {expected} bytes, got {got}")]
    ShortPayload { expected: usize, got: usize },
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Writes the image as binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), PgmError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    /// Reads a binary PGM (P5). Comment lines (`#`) are permitted after the
    /// magic; maxval must be 255.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self, PgmError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode_pgm(&bytes)
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self, PgmError> {
        if bytes.len() < 2 || &bytes[0..2] != b"P5" {
            return Err(PgmError::BadMagic);
        }
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for field in fields.iter_mut() {
            *field = read_header_int(bytes, &mut pos)?;
        }
        // Exactly one whitespace byte separates the header from the payload.
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(PgmError::BadHeader("missing separator before payload".into())),
        }
        let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
        if maxval != 255 {
            return Err(PgmError::UnsupportedMaxval(maxval));
        }
        if width == 0 || height == 0 {
            return Err(PgmError::BadHeader(format!("degenerate size {width}x{height}")));
        }
        let expected = width * height;
        let payload = &bytes[pos..];
        if payload.len() < expected {
            return Err(PgmError::ShortPayload {
                expected,
                got: payload.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: payload[..expected].to_vec(),
        })
    }
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PgmError> {
    // Skip whitespace and comment lines.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            *pos += 1;
        } else {
            break;
        }
    }
    if *pos == start {
        return Err(PgmError::BadHeader("expected integer".into()));
    }
    let text = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| PgmError::BadHeader("non-ascii header".into()))?;
    text.parse::<u32>()
        .map_err(|e| PgmError::BadHeader(format!("bad integer: {e}")))
}

/// f32 image buffer used for gradient work.
#[derive(Debug, Clone)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Separable Gaussian blur with sigma = 1 px (kernel radius 3).
pub fn gaussian_blur_sigma1(src: &GrayImage) -> FloatImage {
    // exp(-k^2/2) for k in -3..=3, normalized.
    const RADIUS: usize = 3;
    let kernel: [f32; 7] = {
        let mut k = [0.0f32; 7];
        let mut sum = 0.0f64;
        let mut vals = [0.0f64; 7];
        let mut i = 0;
        while i < 7 {
            let d = i as f64 - 3.0;
            vals[i] = (-d * d / 2.0_f64).exp();
            sum += vals[i];
            i += 1;
        }
        let mut i = 0;
        while i < 7 {
            k[i] = (vals[i] / sum) as f32;
            i += 1;
        }
        k
    };

    let (w, h) = (src.width, src.height);
    let mut tmp = FloatImage::new(w, h);
    // Horizontal pass with edge clamping.
    for y in 0..h {
        let row = src.row(y);
        let out = &mut tmp.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = (x + ki).saturating_sub(RADIUS).min(w - 1);
                acc += kv * row[sx] as f32;
            }
            out[x] = acc;
        }
    }
    // Vertical pass.
    let mut dst = FloatImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = (y + ki).saturating_sub(RADIUS).min(h - 1);
                acc += kv * tmp.get(x, sy);
            }
            dst.data[y * w + x] = acc;
        }
    }
    dst
}

/// 3x3 Sobel gradients of a float image. The one-pixel border is left zero.
/// Outputs are scaled by 1/4 so that a full-contrast step edge (0..255)
/// reaches magnitude 255.
pub fn sobel_gradients(src: &FloatImage) -> (FloatImage, FloatImage) {
    let (w, h) = (src.width, src.height);
    let mut gx = FloatImage::new(w, h);
    let mut gy = FloatImage::new(w, h);
    if w < 3 || h < 3 {
        return (gx, gy);
    }
    for y in 1..h - 1 {
        let above = &src.data[(y - 1) * w..y * w];
        let here = &src.data[y * w..(y + 1) * w];
        let below = &src.data[(y + 1) * w..(y + 2) * w];
        let gx_row = &mut gx.data[y * w..(y + 1) * w];
        let gy_row = &mut gy.data[y * w..(y + 1) * w];
        for x in 1..w - 1 {
            let (a, b, c) = (above[x - 1], above[x], above[x + 1]);
            let (d, f) = (here[x - 1], here[x + 1]);
            let (g, hh, i) = (below[x - 1], below[x], below[x + 1]);
            gx_row[x] = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) * 0.25;
            gy_row[x] = ((g + 2.0 * hh + i) - (a + 2.0 * b + c)) * 0.25;
        }
    }
    (gx, gy)
}
