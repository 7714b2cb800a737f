//! Versioned little-endian weight file.
//!
//! Layout: 8-byte magic, `u32` version, `u64` architecture hash, `u32` layer
//! count, one `u64` parameter count per trainable layer, then every
//! parameter as an `f64`, layers in declaration order (weights then bias).

use std::fs;
use std::path::Path;

use super::{architecture, CnnConfig, CnnError, CnnParameters};

pub const WEIGHTS_MAGIC: [u8; 8] = *b"CPCNNWTS";
pub const WEIGHTS_VERSION: u32 = 1;

/// FNV-1a hash of the architectural fields of `cfg` (training
/// hyperparameters and dropout rates excluded).
pub fn architecture_hash(cfg: &CnnConfig) -> u64 {
    let key = format!(
        "in={};conv={:?};k={};pool={};dense={:?}",
        cfg.input_len, cfg.conv_filters, cfg.kernel, cfg.pool, cfg.dense_widths
    );
    key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn encode_weights(params: &CnnParameters, cfg: &CnnConfig) -> Vec<u8> {
    let counts = params.layer_counts();
    let mut out = Vec::with_capacity(24 + 8 * counts.len() + 8 * params.len());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&architecture_hash(cfg).to_le_bytes());
    out.extend_from_slice(&(counts.len() as u32).to_le_bytes());
    for c in counts {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(CnnError::Io(format!(
                "truncated weight file: need {end} bytes, have {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8], cfg: &CnnConfig) -> Result<CnnParameters, CnnError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != WEIGHTS_MAGIC {
        return Err(CnnError::Io("not a coughpipe weight file".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(CnnError::Io(format!("unsupported weight file version {version}")));
    }
    let expected = architecture_hash(cfg);
    let found = r.u64()?;
    if found != expected {
        return Err(CnnError::ArchitectureMismatch { expected, found });
    }
    let mut params = CnnParameters::zeros(&architecture(cfg)?);
    let n_layers = r.u32()? as usize;
    let counts = (0..n_layers)
        .map(|_| r.u64().map(|c| c as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if counts != params.layer_counts() {
        return Err(CnnError::ArchitectureMismatch { expected, found });
    }
    for v in params.data.iter_mut() {
        *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    }
    if r.at != bytes.len() {
        return Err(CnnError::Io(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.at
        )));
    }
    Ok(params)
}

pub fn save_weights(params: &CnnParameters, cfg: &CnnConfig, path: impl AsRef<Path>) -> Result<(), CnnError> {
    let path = path.as_ref();
    fs::write(path, encode_weights(params, cfg))
        .map_err(|e| CnnError::Io(format!("{}: {e}", path.display())))
}

pub fn load_weights(path: impl AsRef<Path>, cfg: &CnnConfig) -> Result<CnnParameters, CnnError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CnnError::Io(format!("{}: {e}", path.display())))?;
    decode_weights(&bytes, cfg)
}
