//! `.sdec` model checkpoints.
//!
//! Layout (little-endian): magic `SDEC`, `u32` version, `u32` layer count,
//! then per layer `u32` in, `u32` out, `u8` activation tag, `f32` weights
//! (row-major, `out × in`) and `f32` bias. The first half of the layers is
//! the encoder, the second half the decoder. Cluster models append `u32 m`,
//! `u32` latent dim and the `m × latent` centers.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dataio::DataError;
use crate::dec::ClusterModel;
use crate::net::{Activation, Dense, LinearLayer, Network};
use crate::sae::EncoderStack;
use crate::Matrix;

pub const SDEC_MAGIC: &[u8; 4] = b"SDEC";
pub const SDEC_VERSION: u32 = 1;

type Result<T> = std::result::Result<T, DataError>;

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: EncoderStack,
    pub centers: Option<Matrix>,
}

impl Checkpoint {
    pub fn from_model(model: &ClusterModel) -> Self {
        Checkpoint {
            stack: model.stack.clone(),
            centers: Some(model.centers.clone()),
        }
    }

    /// Rebuilds a cluster model; the kernel degree is not stored on disk.
    pub fn into_model(self, nu: f32) -> Result<ClusterModel> {
        let centers = self
            .centers
            .ok_or_else(|| DataError::Validation("checkpoint holds no cluster centers".into()))?;
        ClusterModel::new(self.stack, centers, nu).map_err(|e| DataError::Validation(e.to_string()))
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DataError::Validation(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let layers: Vec<&Dense> = ckpt
        .stack
        .encoder
        .layers()
        .iter()
        .chain(ckpt.stack.decoder.layers())
        .collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(SDEC_MAGIC);
    buf.extend_from_slice(&SDEC_VERSION.to_le_bytes());
    put_u32(&mut buf, layers.len())?;
    for layer in layers {
        let w = &layer.linear.weights;
        if w.iter().chain(&layer.linear.bias).any(|v| !v.is_finite()) {
            return Err(DataError::Validation("refusing to write non-finite weights".into()));
        }
        put_u32(&mut buf, w.ncols())?;
        put_u32(&mut buf, w.nrows())?;
        buf.push(layer.activation.tag());
        put_f32s(&mut buf, w.iter());
        put_f32s(&mut buf, layer.linear.bias.iter());
    }
    if let Some(c) = &ckpt.centers {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Validation("refusing to write non-finite centers".into()));
        }
        put_u32(&mut buf, c.nrows())?;
        put_u32(&mut buf, c.ncols())?;
        put_f32s(&mut buf, c.iter());
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(DataError::Corrupt {
                path: self.path.to_path_buf(),
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| DataError::format(self.path, "array size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < 4 || r.take(4)? != SDEC_MAGIC {
        return Err(DataError::format(path, "bad magic, expected SDEC"));
    }
    let version = r.u32()? as u32;
    if version != SDEC_VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: SDEC_VERSION,
        });
    }
    let count = r.u32()?;
    if count == 0 || count % 2 != 0 {
        return Err(DataError::format(path, format!("layer count {count} is not a positive even number")));
    }
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let (inp, out) = (r.u32()?, r.u32()?);
        let tag = r.take(1)?[0];
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| DataError::format(path, format!("unknown activation tag {tag}")))?;
        let weights = r.f32s(inp.saturating_mul(out))?;
        let bias = r.f32s(out)?;
        let weights = Array2::from_shape_vec((out, inp), weights).expect("length checked");
        let linear = LinearLayer::new(weights, Array1::from(bias))
            .map_err(|e| DataError::format(path, e.to_string()))?;
        layers.push(Dense { linear, activation });
    }
    let decoder = layers.split_off(count / 2);
    let encoder = Network::new(layers).map_err(|e| DataError::format(path, e.to_string()))?;
    let decoder = Network::new(decoder).map_err(|e| DataError::format(path, e.to_string()))?;
    let mut stack =
        EncoderStack::new(encoder, decoder, false).map_err(|e| DataError::format(path, e.to_string()))?;
    stack.tied = stack.weights_are_tied();

    let centers = if r.remaining() == 0 {
        None
    } else {
        let (m, k) = (r.u32()?, r.u32()?);
        if k != stack.latent_dim() {
            return Err(DataError::format(
                path,
                format!("centers have {k} dims, latent space has {}", stack.latent_dim()),
            ));
        }
        let values = r.f32s(m.saturating_mul(k))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::format(path, "non-finite center"));
        }
        Some(Array2::from_shape_vec((m, k), values).expect("length checked"))
    };
    if r.remaining() != 0 {
        return Err(DataError::format(path, format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { stack, centers })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::RngState;
    use proptest::prelude::*;

    fn stack(dims: &[usize], out_dim: usize, seed: u64, tied: bool) -> EncoderStack {
        let mut rng = RngState::new(seed);
        let k = dims.len() - 1;
        let acts: Vec<Activation> =
            (0..k).map(|i| if i + 1 == k { Activation::Identity } else { Activation::Relu }).collect();
        let encoder = Network::random(dims, &acts, &mut rng).unwrap();
        let mut rev: Vec<usize> = dims.iter().rev().copied().collect();
        *rev.last_mut().unwrap() = out_dim;
        let mut decoder = Network::random(&rev, &acts, &mut rng).unwrap();
        if tied {
            for i in 0..k {
                decoder.layers_mut()[k - 1 - i].linear.weights =
                    encoder.layers()[i].linear.weights.t().to_owned();
            }
        }
        EncoderStack::new(encoder, decoder, tied).unwrap()
    }

    fn roundtrip(ckpt: &Checkpoint) -> Checkpoint {
        let bytes = encode_checkpoint(ckpt).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        back
    }

    #[test]
    fn header_layout() {
        let ckpt = Checkpoint { stack: stack(&[3, 2], 3, 1, false), centers: None };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"SDEC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(bytes[20], Activation::Identity.tag());
        let per_layer = |i: usize, o: usize| 9 + 4 * (i * o + o);
        assert_eq!(bytes.len(), 12 + per_layer(3, 2) + per_layer(2, 3));
    }

    #[test]
    fn tied_flag_and_cbow_widths_survive() {
        let tied = stack(&[4, 3, 2], 4, 2, true);
        assert!(roundtrip(&Checkpoint { stack: tied, centers: None }).stack.tied);
        let cbow = stack(&[12, 3], 4, 3, false);
        let back = roundtrip(&Checkpoint { stack: cbow.clone(), centers: Some(Matrix::zeros((2, 3))) });
        assert_eq!(back.stack, cbow);
        assert_eq!(back.stack.output_dim(), 4);
    }

    #[test]
    fn rejects_damaged_files() {
        let ckpt = Checkpoint { stack: stack(&[3, 2], 3, 4, false), centers: Some(Matrix::ones((2, 2))) };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let p = Path::new("x.sdec");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, p), Err(DataError::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint(&bad, p), Err(DataError::UnsupportedVersion { found: 2, .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3], p), Err(DataError::Corrupt { .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(decode_checkpoint(&bad, p).is_err());
        let mut bad = bytes.clone();
        bad[20] = 9;
        assert!(decode_checkpoint(&bad, p).is_err());
    }

    #[test]
    fn file_roundtrip_and_model_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sdec");
        let ckpt = Checkpoint { stack: stack(&[5, 4, 2], 5, 5, false), centers: Some(Matrix::from_elem((3, 2), 0.25)) };
        write_checkpoint(&ckpt, &p).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
        let model = back.into_model(1.0).unwrap();
        assert_eq!(model.m(), 3);
        assert!(Checkpoint { centers: None, ..ckpt }.into_model(1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_checkpoints_roundtrip_bit_exact(
            depth in 1usize..4,
            widths in proptest::collection::vec(1usize..7, 4),
            out_dim in 1usize..7,
            m in 0usize..5,
            seed in any::<u64>(),
            tied in any::<bool>(),
        ) {
            let dims = &widths[..=depth];
            let out_dim = if tied { dims[0] } else { out_dim };
            let s = stack(dims, out_dim, seed, tied);
            let mut rng = RngState::new(seed ^ 1);
            let centers = (m > 0).then(|| Matrix::from_shape_fn((m, s.latent_dim()), |_| rng.uniform_in(-1e6, 1e6)));
            let ckpt = Checkpoint { stack: s, centers };
            let back = roundtrip(&ckpt);
            prop_assert_eq!(back, ckpt);
        }
    }
}
