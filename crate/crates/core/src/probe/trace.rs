//! Trace file, little-endian:
//!
//! ```text
//! "LAPE"                magic
//! u16                   version: 1, or 2 with positive-value sums
//! u32 u32               n_layers, ffn_width
//! u16                   n_languages
//! n_languages ×         u8 code length, code bytes
//! n_languages ×         u64 token_count,
//!                       n_layers·ffn_width × (u64 activated_count, f64 value_sum)
//!                       in layer-major neuron order
//! [version 2 only]      n_languages × n_layers·ffn_width × f64 positive_sum
//! u32                   CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::ActivationStats;
use crate::binio::{check_length_and_crc, push_crc, Reader};
use crate::corpus::LanguageId;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LAPE";

pub fn write_trace(stats: &ActivationStats) -> Result<Vec<u8>> {
    if stats.languages.len() > u16::MAX as usize {
        return Err(Error::Format("too many languages for a trace file".into()));
    }
    let (tokens, activated, value_sum, positive) = stats.raw();
    let n = stats.n_neurons();
    let mut buf = Vec::with_capacity(32 + tokens.len() * (8 + 16 * n));
    buf.extend_from_slice(MAGIC);
    let version: u16 = if positive.is_some() { 2 } else { 1 };
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(stats.n_layers as u32).to_le_bytes());
    buf.extend_from_slice(&(stats.ffn_width as u32).to_le_bytes());
    buf.extend_from_slice(&(stats.languages.len() as u16).to_le_bytes());
    for l in &stats.languages {
        buf.push(l.as_str().len() as u8);
        buf.extend_from_slice(l.as_str().as_bytes());
    }
    for li in 0..tokens.len() {
        buf.extend_from_slice(&tokens[li].to_le_bytes());
        for j in 0..n {
            buf.extend_from_slice(&activated[li][j].to_le_bytes());
            buf.extend_from_slice(&value_sum[li][j].to_le_bytes());
        }
    }
    if let Some(p) = positive {
        for row in p {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    push_crc(&mut buf);
    Ok(buf)
}

pub fn read_trace(buf: &[u8]) -> Result<ActivationStats> {
    let mut r = Reader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u16("version")?;
    if version != 1 && version != 2 {
        return Err(Error::parse(4, format!("unsupported trace version {version}")));
    }
    let n_layers = r.u32("n_layers")? as usize;
    let ffn_width = r.u32("ffn_width")? as usize;
    if n_layers == 0 || ffn_width == 0 {
        return Err(Error::parse(6, "trace declares an empty geometry"));
    }
    let k = r.u16("n_languages")? as usize;
    let mut languages = Vec::with_capacity(k);
    for _ in 0..k {
        let at = r.pos();
        let len = r.u8("language code length")? as usize;
        let bytes = r.take(len, "language code")?;
        let code = std::str::from_utf8(bytes)
            .map_err(|_| Error::parse(at, "language code is not UTF-8"))?;
        let id = LanguageId::new(code).map_err(|e| Error::parse(at, e.to_string()))?;
        if languages.contains(&id) {
            return Err(Error::parse(at, format!("language {id} listed twice")));
        }
        languages.push(id);
    }
    let n = n_layers
        .checked_mul(ffn_width)
        .ok_or_else(|| Error::parse(6, "geometry overflows"))?;
    let per_lang = 8 + 16 * n + if version == 2 { 8 * n } else { 0 };
    let expected = r.pos() + k * per_lang + 4;
    check_length_and_crc(buf, expected)?;

    let mut tokens = Vec::with_capacity(k);
    let mut activated = Vec::with_capacity(k);
    let mut value_sum = Vec::with_capacity(k);
    for _ in 0..k {
        tokens.push(r.u64("token_count")?);
        let mut a = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            a.push(r.u64("activated_count")?);
            v.push(r.f64("value_sum")?);
        }
        activated.push(a);
        value_sum.push(v);
    }
    let positive = if version == 2 {
        let mut p = Vec::with_capacity(k);
        for _ in 0..k {
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                row.push(r.f64("positive_sum")?);
            }
            p.push(row);
        }
        Some(p)
    } else {
        None
    };
    let body_start = 4 + 2 + 4 + 4 + 2;
    ActivationStats::from_parts(n_layers, ffn_width, languages, tokens, activated, value_sum, positive)
        .map_err(|e| Error::parse(body_start, e.to_string()))
}

pub fn export_trace(stats: &ActivationStats, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, write_trace(stats)?).map_err(|e| Error::io(path, e))
}

pub fn import_trace(path: &Path) -> Result<ActivationStats> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_trace(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use crate::model::NeuronId;
    use ndarray::Array2;

    fn sample() -> ActivationStats {
        let mut s = ActivationStats::new(2, 3, vec![lang("L0"), lang("zh")]).unwrap();
        let a = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 * 0.37 - j as f64 * 0.61).sin());
        let b = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 * 1.3 + j as f64).cos() * 1e-3);
        s.observe(&lang("zh"), &[a.view(), b.view()]).unwrap();
        s.observe(&lang("L0"), &[b.view(), a.view()]).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let bytes = write_trace(&s).unwrap();
        let back = read_trace(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_trace(&back).unwrap(), bytes);
    }

    #[test]
    fn version_one_has_no_positive_block() {
        let (tokens, act, vals, _) = {
            let s = sample();
            let (t, a, v, p) = s.raw();
            (t.to_vec(), a.to_vec(), v.to_vec(), p.map(|p| p.to_vec()))
        };
        let s = ActivationStats::from_parts(2, 3, vec![lang("L0"), lang("zh")], tokens, act, vals, None).unwrap();
        let bytes = write_trace(&s).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let back = read_trace(&bytes).unwrap();
        assert!(!back.has_positive_sums());
        assert_eq!(back, s);
        assert!(back
            .mean_activation(NeuronId::new(1, 0), &lang("zh"), super::super::MeanMode::Conditional)
            .is_err());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = write_trace(&sample()).unwrap();
        for cut in [3, 17, bytes.len() - 1] {
            match read_trace(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, cut),
                other => panic!("cut {cut}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = write_trace(&sample()).unwrap();
        let at = bytes.len() - 20;
        bytes[at] ^= 1;
        match read_trace(&bytes) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = write_trace(&sample()).unwrap();
        bytes[1] = b'X';
        assert!(matches!(read_trace(&bytes), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = write_trace(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(read_trace(&bytes), Err(Error::Parse { offset: 4, .. })));
    }
}
