//! Image file reading and writing.
//!
//! PNG (8-bit RGB/gray) and PPM (P3/P6) round-trip losslessly; baseline JPEG
//! is read-only. Formats are detected from file content, not extension.

use std::fs;
use std::io::{BufRead, Cursor, Read, Seek, SeekFrom};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use image::{DynamicImage, ImageFormat};

use super::{ImageBuffer, ImagingError};

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"\x89PNG") {
        decode_via_image_crate(path, &bytes, ImageFormat::Png)
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        decode_via_image_crate(path, &bytes, ImageFormat::Jpeg)
    } else if bytes.starts_with(b"P3") || bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else {
        Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "unrecognized magic bytes {:02x?} (supported: PNG, PPM P3/P6, JPEG)",
                &bytes[..bytes.len().min(4)]
            ),
        })
    }
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => save_png(img, path),
        "ppm" => save_ppm(img, path),
        "jpg" | "jpeg" => Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "JPEG is read-only; write PNG or PPM".into(),
        }),
        other => Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("unknown output extension {other:?}"),
        }),
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_png(img: &ImageBuffer, path: &Path) -> Result<(), ImagingError> {
    let w = img.width() as u32;
    let h = img.height() as u32;
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    let dynimg = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer sized by construction"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer sized by construction"),
        ),
        _ => unreachable!("ImageBuffer allows 1 or 3 channels"),
    };
    dynimg
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| ImagingError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}

fn save_ppm(img: &ImageBuffer, path: &Path) -> Result<(), ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "PPM output requires a 3-channel image".into(),
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reader wrapper that records how far the decoder got, so decode errors can
/// report a byte offset.
struct TrackedReader {
    inner: Cursor<Vec<u8>>,
    high_water: Arc<AtomicU64>,
}

impl TrackedReader {
    fn update(&self) {
        self.high_water
            .fetch_max(self.inner.position(), Ordering::Relaxed);
    }
}

impl Read for TrackedReader {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.update();
        Ok(n)
    }
}

impl BufRead for TrackedReader {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.update();
    }
}

impl Seek for TrackedReader {
    fn seek(&mut self, pos: SeekFrom) -> std::io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.update();
        Ok(p)
    }
}

fn decode_via_image_crate(
    path: &Path,
    bytes: &[u8],
    format: ImageFormat,
) -> Result<ImageBuffer, ImagingError> {
    let high_water = Arc::new(AtomicU64::new(0));
    let reader = TrackedReader {
        inner: Cursor::new(bytes.to_vec()),
        high_water: Arc::clone(&high_water),
    };
    let mut img_reader = image::ImageReader::new(reader);
    img_reader.set_format(format);
    let decoded = img_reader.decode().map_err(|e| ImagingError::Decode {
        path: path.to_path_buf(),
        offset: high_water.load(Ordering::Relaxed),
        detail: e.to_string(),
    })?;
    let (h, w) = (decoded.height() as usize, decoded.width() as usize);
    match decoded {
        DynamicImage::ImageLuma8(g) => ImageBuffer::new(
            h,
            w,
            1,
            g.into_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        ),
        other => {
            let rgb = other.to_rgb8();
            ImageBuffer::new(
                h,
                w,
                3,
                rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect(),
            )
        }
    }
}

// -------------------------------------------------------------------------
// PPM (P3 ASCII / P6 binary)
// -------------------------------------------------------------------------

struct PpmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PpmParser<'a> {
    fn err(&self, path: &Path, detail: impl Into<String>) -> ImagingError {
        ImagingError::Decode {
            path: path.to_path_buf(),
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    /// Skip whitespace and `#` comments.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, path: &Path) -> Result<u32, ImagingError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(path, "expected an unsigned integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(path, "integer out of range"))
    }
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<ImageBuffer, ImagingError> {
    let binary = bytes.starts_with(b"P6");
    let mut p = PpmParser { bytes, pos: 2 };
    let width = p.next_uint(path)? as usize;
    let height = p.next_uint(path)? as usize;
    let maxval = p.next_uint(path)?;
    if maxval == 0 || maxval > 255 {
        return Err(p.err(path, format!("unsupported maxval {maxval} (must be 1..=255)")));
    }
    if width == 0 || height == 0 {
        return Err(p.err(path, "zero image dimension"));
    }
    let count = width * height * 3;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the payload.
        if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
            return Err(p.err(path, "missing whitespace before binary payload"));
        }
        p.pos += 1;
        if bytes.len() < p.pos + count {
            p.pos = bytes.len();
            return Err(p.err(path, format!("truncated payload: need {count} bytes")));
        }
        pixels.extend(
            bytes[p.pos..p.pos + count]
                .iter()
                .map(|&b| b as f32 / maxval as f32),
        );
    } else {
        for _ in 0..count {
            let v = p.next_uint(path)?;
            if v > maxval {
                return Err(p.err(path, format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f32 / maxval as f32);
        }
    }
    ImageBuffer::clamped(height, width, 3, pixels)
}
