//! Checkpoint file, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LPCK"
//! 4       2     version (1)
//! 6       4×6   d_model, n_layers, n_heads, ffn_width, vocab_size, max_seq_len (u32)
//! 30      1     ffn_kind (0 standard, 1 gated)
//! 31      1     act_kind (0 gelu, 1 silu)
//! 32      8     norm_eps (f64)
//! 40      8·N   every tensor as f64, row-major, in this order:
//!               tok_emb, pos_emb,
//!               per layer: attn_norm, w_q, w_k, w_v, w_o, ffn_norm, w_1, [w_3], w_2
//!               final_norm, lm_head
//! end-4   4     CRC32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use super::{ActKind, FfnKind, Model, ModelConfig, Weights};
use crate::binio::{check_length_and_crc, push_crc, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LPCK";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 40;

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * model.weights.n_params() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.ffn_width,
        c.vocab_size,
        c.max_seq_len,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(match c.ffn_kind {
        FfnKind::Standard => 0,
        FfnKind::Gated => 1,
    });
    buf.push(match c.act_kind {
        ActKind::Gelu => 0,
        ActKind::Silu => 1,
    });
    buf.extend_from_slice(&c.norm_eps.to_le_bytes());
    for (_, tensor) in model.weights.tensors() {
        for &x in tensor {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    push_crc(&mut buf);
    buf
}

pub fn read_checkpoint(buf: &[u8]) -> Result<Model> {
    let mut r = Reader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims.iter_mut().zip([
        "d_model",
        "n_layers",
        "n_heads",
        "ffn_width",
        "vocab_size",
        "max_seq_len",
    ]) {
        *d = r.u32(name)? as usize;
    }
    let ffn_kind = match r.u8("ffn_kind")? {
        0 => FfnKind::Standard,
        1 => FfnKind::Gated,
        k => return Err(Error::parse(30, format!("unknown ffn_kind {k}"))),
    };
    let act_kind = match r.u8("act_kind")? {
        0 => ActKind::Gelu,
        1 => ActKind::Silu,
        k => return Err(Error::parse(31, format!("unknown act_kind {k}"))),
    };
    let norm_eps = r.f64("norm_eps")?;
    let config = ModelConfig {
        d_model: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        ffn_width: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        ffn_kind,
        act_kind,
        norm_eps,
    };
    config
        .validate()
        .map_err(|e| Error::parse(6, format!("invalid header: {e}")))?;
    let n_params: usize = {
        // Shapes only; avoid allocating before the length check.
        let d = config.d_model;
        let f = config.ffn_width;
        let per_layer = 2 * d + 4 * d * d + 2 * d * f + if ffn_kind == FfnKind::Gated { d * f } else { 0 };
        config.vocab_size * d + config.max_seq_len * d + config.n_layers * per_layer + d + d * config.vocab_size
    };
    check_length_and_crc(buf, HEADER_LEN + 8 * n_params + 4)?;
    let mut weights = Weights::zeros(&config);
    for (key, tensor) in weights.tensors_mut() {
        for x in tensor.iter_mut() {
            *x = r.f64(key.kind.name())?;
        }
    }
    Model::new(config, weights).map_err(|e| Error::parse(HEADER_LEN, e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: FfnKind) -> Model {
        Model::init(ModelConfig::tiny(8, 2, kind), 11).unwrap()
    }

    #[test]
    fn byte_exact_round_trip() {
        for kind in [FfnKind::Standard, FfnKind::Gated] {
            let m = model(kind);
            let bytes = write_checkpoint(&m);
            let back = read_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(write_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&model(FfnKind::Gated));
        assert_eq!(&bytes[..4], b"LPCK");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 8);
        assert_eq!(bytes[30], 1);
        let first = f64::from_le_bytes(bytes[40..48].try_into().unwrap());
        assert_eq!(first, model(FfnKind::Gated).weights.tok_emb[[0, 0]]);
    }

    #[test]
    fn corruption_and_truncation_rejected() {
        let bytes = write_checkpoint(&model(FfnKind::Standard));
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        match read_checkpoint(&flipped) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("unexpected {other:?}"),
        }
        match read_checkpoint(&bytes[..bytes.len() - 9]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 9),
            other => panic!("unexpected {other:?}"),
        }
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(read_checkpoint(&magic), Err(Error::Parse { offset: 0, .. })));
    }
}
