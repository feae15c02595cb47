//! Netpbm images: PGM (P2/P5) and PPM (P3/P6), maxval up to 65535.
//!
//! Pixel values map linearly from `[0, maxval]` to `[-1, 1]`. Grayscale
//! images load as `[height, width]`, color as `[height, width, 3]`. Writes
//! clamp to `[-1, 1]` first.

use fastcs_core::Tensor;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("cannot write tensor of shape {0:?} as an image")]
    Shape(Vec<usize>),
}

fn parse_err(offset: usize, message: impl Into<String>) -> ImageError {
    ImageError::Parse {
        offset,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Format {
    pub binary: bool,
    pub maxval: u16,
}

impl Default for Format {
    fn default() -> Self {
        Self {
            binary: true,
            maxval: 65535,
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.data.len() {
                parse_err(start, format!("unexpected end of file reading {what}"))
            } else {
                parse_err(start, format!("expected {what}, found byte 0x{:02x}", self.data[start]))
            });
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a Netpbm image from memory.
pub fn decode(data: &[u8]) -> Result<Tensor, ImageError> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(parse_err(0, "not a Netpbm file (missing P magic)"));
    }
    let (channels, binary) = match data[1] {
        b'2' => (1, false),
        b'5' => (1, true),
        b'3' => (3, false),
        b'6' => (3, true),
        c => return Err(parse_err(1, format!("unsupported Netpbm variant P{}", c as char))),
    };
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, "image has zero extent"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height * channels;
    let mut raw = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates header and raster
        if cur.pos >= data.len() || !data[cur.pos].is_ascii_whitespace() {
            return Err(parse_err(cur.pos, "missing whitespace before raster"));
        }
        cur.pos += 1;
        let bytes = if maxval > 255 { 2 } else { 1 };
        let need = n * bytes;
        if data.len() - cur.pos < need {
            return Err(parse_err(
                data.len(),
                format!("truncated raster: {} of {need} bytes", data.len() - cur.pos),
            ));
        }
        for k in 0..n {
            let p = cur.pos + k * bytes;
            let v = if bytes == 2 {
                u32::from(data[p]) << 8 | u32::from(data[p + 1])
            } else {
                u32::from(data[p])
            };
            if v > maxval {
                return Err(parse_err(p, format!("sample {v} exceeds maxval {maxval}")));
            }
            raw.push(v);
        }
    } else {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(parse_err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            raw.push(v);
        }
    }
    let scale = 2.0 / f64::from(maxval);
    let values = raw.into_iter().map(|v| f64::from(v) * scale - 1.0).collect();
    let shape = if channels == 1 {
        vec![height, width]
    } else {
        vec![height, width, 3]
    };
    Ok(Tensor::new(shape, values).expect("shape matches sample count"))
}

/// Encodes `[h, w]` as PGM or `[h, w, 3]` as PPM.
pub fn encode(img: &Tensor, format: Format) -> Result<Vec<u8>, ImageError> {
    let shape = img.shape();
    let (h, w, channels) = match shape {
        [h, w] => (*h, *w, 1),
        [h, w, 3] => (*h, *w, 3),
        _ => return Err(ImageError::Shape(shape.to_vec())),
    };
    let magic = match (channels, format.binary) {
        (1, false) => "P2",
        (1, true) => "P5",
        (_, false) => "P3",
        (_, true) => "P6",
    };
    let maxval = f64::from(format.maxval.max(1));
    let samples = img
        .as_slice()
        .iter()
        .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * maxval).round()) as u16);
    let mut out = format!("{magic}\n{w} {h}\n{}\n", format.maxval.max(1)).into_bytes();
    if format.binary {
        for s in samples {
            if format.maxval > 255 {
                out.extend_from_slice(&s.to_be_bytes());
            } else {
                out.push(s as u8);
            }
        }
    } else {
        let per_line = w * channels;
        for (k, s) in samples.enumerate() {
            out.extend_from_slice(s.to_string().as_bytes());
            out.push(if (k + 1) % per_line == 0 { b'\n' } else { b' ' });
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor, ImageError> {
    let data = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&data)
}

/// Writes 16-bit binary Netpbm.
pub fn write_image(path: &Path, img: &Tensor) -> Result<(), ImageError> {
    let bytes = encode(img, Format::default())?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_pgm_maps_to_unit_range() {
        let img = decode(b"P2\n# tiny\n2 2\n255\n0 255\n0 255\n").unwrap();
        assert_eq!(img.shape(), &[2, 2]);
        assert_eq!(img.as_slice(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_round_trip_is_exact_on_the_grid() {
        let vals: Vec<f64> = (0..12).map(|k| f64::from(k * 5000) * 2.0 / 65535.0 - 1.0).collect();
        let img = Tensor::new(vec![2, 2, 3], vals).unwrap();
        for binary in [true, false] {
            let fmt = Format { binary, maxval: 65535 };
            let back = decode(&encode(&img, fmt).unwrap()).unwrap();
            assert_eq!(back.shape(), img.shape());
            assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
        }
    }

    #[test]
    fn eight_bit_binary_and_clamping() {
        let img = Tensor::new(vec![1, 3], vec![-3.0, 0.0, 2.0]).unwrap();
        let bytes = encode(
            &img,
            Format {
                binary: true,
                maxval: 255,
            },
        )
        .unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.as_slice()[0], -1.0);
        assert_eq!(back.as_slice()[2], 1.0);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let err = decode(b"P5\n4 4\n255\n\x00\x01\x02").unwrap_err();
        match err {
            ImageError::Parse { offset, message } => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode(b"P7\n"), Err(ImageError::Parse { offset: 1, .. })));
        assert!(matches!(decode(b"P2\n2 x\n"), Err(ImageError::Parse { offset: 5, .. })));
        assert!(decode(b"P2\n1 1\n255\n300\n").is_err());
        assert!(decode(b"P2\n1 1\n70000\n0\n").is_err());
        assert!(matches!(
            encode(&Tensor::from_vec(vec![0.0; 4]), Format::default()),
            Err(ImageError::Shape(_))
        ));
    }
}
