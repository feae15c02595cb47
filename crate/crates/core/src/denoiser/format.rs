//! Binary model file for [`MlpDenoiser`].
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE `f64`:
//!
//! ```text
//! magic        8 bytes   "FCSMLP\r\n"
//! version      u32       1
//! activation   u32       0 = tanh
//! n_layers     u32       L
//! widths       u32 x (L + 1)   input (= dim + 2), hidden..., output (= dim)
//! t_max        u32       T
//! alpha_bar    f64 x (T + 1)
//! per layer    f64 x (out * in) weights, row-major; f64 x out biases
//! ```

use std::io::{Read, Write};

use super::mlp::{Activation, Layer, MlpDenoiser};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"FCSMLP\r\n";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_f64s<S: Scalar>(w: &mut impl Write, vs: &[S]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_f64_lossy().to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("reading {what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<S: Scalar>(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<S>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("reading {what}: {e}")))?;
    let out: Vec<S> = buf
        .chunks_exact(8)
        .map(|c| S::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value in {what}")));
    }
    Ok(out)
}

impl<S: Scalar> MlpDenoiser<S> {
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC).map_err(io_err)?;
        put_u32(w, VERSION)?;
        put_u32(
            w,
            match self.activation {
                Activation::Tanh => 0,
            },
        )?;
        put_u32(w, self.layers.len() as u32)?;
        for width in self.widths() {
            put_u32(w, width as u32)?;
        }
        put_u32(w, (self.alpha_bar.len() - 1) as u32)?;
        put_f64s(w, &self.alpha_bar)?;
        for layer in &self.layers {
            put_f64s(w, &layer.w)?;
            put_f64s(w, &layer.b)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.save(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("reading magic: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not an MLP model file".into()));
        }
        let version = get_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let activation = match get_u32(r, "activation")? {
            0 => Activation::Tanh,
            other => return Err(Error::Format(format!("unknown activation {other}"))),
        };
        let n_layers = get_u32(r, "layer count")? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let widths = (0..=n_layers)
            .map(|_| get_u32(r, "widths").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if widths.iter().any(|&w| w == 0 || w > 1 << 16) {
            return Err(Error::Format(format!("implausible widths {widths:?}")));
        }
        let dim = widths[n_layers];
        if widths[0] != dim + 2 {
            return Err(Error::Format(format!(
                "input width {} must be output width {dim} + 2",
                widths[0]
            )));
        }
        let t_max = get_u32(r, "T")? as usize;
        if t_max == 0 || t_max > 1 << 20 {
            return Err(Error::Format(format!("implausible T {t_max}")));
        }
        let alpha_bar = get_f64s(r, t_max + 1, "alpha_bar")?;
        let layers = widths
            .windows(2)
            .map(|io| {
                let (inputs, outputs) = (io[0], io[1]);
                Ok(Layer {
                    inputs,
                    outputs,
                    w: get_f64s(r, inputs * outputs, "weights")?,
                    b: get_f64s(r, outputs, "biases")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(io_err)? != 0 {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(Self {
            dim,
            layers,
            activation,
            alpha_bar,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::load(&mut bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::rng::{gaussian_sample, RngState};
    use crate::schedule::NoiseSchedule;

    #[test]
    fn round_trip_bit_exact() {
        let s = NoiseSchedule::<f64>::linear(50, 1e-3, 0.05, 1.0).unwrap();
        let mut rng = RngState::new(8);
        let m = MlpDenoiser::random(5, &[7, 3], &s, &mut rng);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = MlpDenoiser::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        let x = gaussian_sample::<f64>(&mut rng, &[5]);
        assert_eq!(back.denoise(&x, 20).unwrap(), m.denoise(&x, 20).unwrap());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let s = NoiseSchedule::<f64>::linear(10, 1e-3, 0.05, 1.0).unwrap();
        let m = MlpDenoiser::random(2, &[3], &s, &mut RngState::new(0));
        let bytes = m.to_bytes();
        assert!(MlpDenoiser::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpDenoiser::<f64>::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(MlpDenoiser::<f64>::from_bytes(&extra).is_err());
        let mut ver = bytes;
        ver[8] = 9;
        assert!(MlpDenoiser::<f64>::from_bytes(&ver).is_err());
    }
}
