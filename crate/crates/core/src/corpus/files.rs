//! Corpus files (raw bytes, one document per line) and the TOML manifest
//! mapping language codes to file lists.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, LanguageId, TokenId};
use crate::error::{Error, Result};

/// Read a corpus file: every non-empty line is one document. The newline
/// bytes themselves are not part of the documents.
pub fn read_corpus_file(path: &Path, language: LanguageId) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let docs = bytes
        .split(|&b| b == b'\n')
        .map(|line| line.iter().map(|&b| TokenId::from(b)).collect::<Vec<_>>());
    Corpus::from_documents(language, docs)
}

pub fn write_corpus_file(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(corpus.len() + corpus.n_documents());
    for (i, doc) in corpus.documents().enumerate() {
        if doc.contains(&TokenId::from(b'\n')) {
            return Err(Error::Config(format!(
                "document {i} of {} contains a newline and cannot be stored one-per-line",
                corpus.language()
            )));
        }
        out.extend(doc.iter().map(|&t| t as u8));
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `[languages]` table: code → list of corpus files, relative to the
/// manifest's directory unless absolute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub languages: BTreeMap<LanguageId, Vec<PathBuf>>,
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load every corpus listed in a manifest. Multiple files for one language
/// are concatenated in listed order.
pub fn load_manifest(path: &Path) -> Result<BTreeMap<LanguageId, Corpus>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CorpusManifest =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (language, files) in manifest.languages {
        let mut docs: Vec<Vec<TokenId>> = Vec::new();
        for f in files {
            let full = if f.is_absolute() { f } else { base.join(f) };
            let c = read_corpus_file(&full, language.clone())?;
            docs.extend(c.documents().map(<[TokenId]>::to_vec));
        }
        out.insert(language.clone(), Corpus::from_documents(language, docs)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;

    #[test]
    fn file_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::from_documents(lang("L0"), [vec![65u16, 66], vec![67]]).unwrap();
        write_corpus_file(&c, &dir.path().join("l0.txt")).unwrap();
        let mut m = CorpusManifest::default();
        m.languages.insert(lang("L0"), vec![PathBuf::from("l0.txt")]);
        write_manifest(&m, &dir.path().join("manifest.toml")).unwrap();
        let loaded = load_manifest(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(loaded[&lang("L0")], c);
    }

    #[test]
    fn newline_in_document_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::from_documents(lang("L0"), [vec![65u16, 10, 66]]).unwrap();
        assert!(write_corpus_file(&c, &dir.path().join("x.txt")).is_err());
    }
}
