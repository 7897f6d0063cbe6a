//! Selection file: JSON Lines. The first line is a header, then one line
//! per selected neuron in `(layer, index)` order:
//!
//! ```text
//! {"format":"lape-selection","version":1,"method":"lape","languages":["L0","L1"],"n_layers":4,"ffn_width":512,"provenance":{...}}
//! {"layer":1,"index":17,"entropy":0.031,"values":[0.91,0.002],"languages":["L0"]}
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, NeuronRecord, NeuronSelection, Provenance};
use crate::corpus::LanguageId;
use crate::error::{Error, Result};

const FORMAT: &str = "lape-selection";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    method: Method,
    languages: Vec<LanguageId>,
    n_layers: usize,
    ffn_width: usize,
    provenance: Provenance,
}

pub fn write_selection(selection: &NeuronSelection, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::new();
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        method: selection.method,
        languages: selection.languages.clone(),
        n_layers: selection.n_layers,
        ffn_width: selection.ffn_width,
        provenance: selection.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for r in &selection.records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_selection(path: &Path) -> Result<NeuronSelection> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty selection file", path.display())))?;
    let header: Header = serde_json::from_str(first)?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::Format(format!(
            "{}: not a version 1 selection file",
            path.display()
        )));
    }
    let mut records: Vec<NeuronRecord> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let r: NeuronRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if r.layer == 0 || r.layer as usize > header.n_layers || r.index as usize >= header.ffn_width {
            return Err(Error::Format(format!(
                "{} line {}: neuron ({}, {}) outside the declared geometry",
                path.display(),
                i + 1,
                r.layer,
                r.index
            )));
        }
        if let Some(l) = r.languages.iter().find(|l| !header.languages.contains(l)) {
            return Err(Error::Format(format!(
                "{} line {}: language {l} not in header",
                path.display(),
                i + 1
            )));
        }
        if let Some(prev) = records.last() {
            if (prev.layer, prev.index) >= (r.layer, r.index) {
                return Err(Error::Format(format!(
                    "{} line {}: records out of order",
                    path.display(),
                    i + 1
                )));
            }
        }
        records.push(r);
    }
    Ok(NeuronSelection::from_assignments(
        header.method,
        header.languages,
        header.n_layers,
        header.ffn_width,
        records,
        header.provenance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use crate::identify::select_random;
    use std::collections::BTreeMap;

    #[test]
    fn round_trip() {
        let sizes: BTreeMap<_, _> = [(lang("L0"), 4), (lang("L1"), 3)].into_iter().collect();
        let sel = select_random(&sizes, 2, 8, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.jsonl");
        write_selection(&sel, &p).unwrap();
        let back = read_selection(&p).unwrap();
        assert_eq!(back, sel);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"format\":\"lape-selection\""));
    }

    #[test]
    fn rejects_unknown_language() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let sizes: BTreeMap<_, _> = [(lang("L0"), 1)].into_iter().collect();
        write_selection(&select_random(&sizes, 1, 2, 0).unwrap(), &p).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text = text.replace("\"languages\":[\"L0\"]}", "\"languages\":[\"zz\"]}");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_selection(&p), Err(Error::Format(_))));
    }
}
