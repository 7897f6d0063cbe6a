//! Report formatters against published per-layer and per-language counts.

use std::path::PathBuf;

use lape::analysis::LayerHistogram;
use lape::corpus::LanguageId;
use lape::report::Table;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn layers(name: &str) -> (String, LayerHistogram) {
    let text = fixture(name);
    let h = LayerHistogram::from_layer_table(&Table::from_csv(&text).unwrap()).unwrap();
    (text, h)
}

#[test]
fn per_layer_tables_reproduce_fixtures() {
    for (name, n_layers, n_langs) in [
        ("layers_bloom_7b.csv", 30, 6),
        ("layers_llama2_7b.csv", 32, 7),
        ("layers_llama2_13b.csv", 40, 7),
        ("layers_llama2_70b.csv", 80, 7),
    ] {
        let (text, h) = layers(name);
        assert_eq!(h.n_layers, n_layers, "{name}");
        assert_eq!(h.languages.len(), n_langs, "{name}");
        assert_eq!(h.layer_table().to_csv(None).unwrap(), text, "{name}");
    }
}

#[test]
fn reference_rows() {
    let (_, h) = layers("layers_llama2_70b.csv");
    let row2: Vec<usize> = h.languages.iter().map(|l| h.count(l, 2).unwrap()).collect();
    assert_eq!(row2, vec![117, 886, 1056, 1155, 1589, 897, 1184]);
    let (_, b) = layers("layers_bloom_7b.csv");
    let row30: Vec<usize> = b.languages.iter().map(|l| b.count(l, 30).unwrap()).collect();
    assert_eq!(row30, vec![153, 259, 213, 284, 165, 763]);
}

#[test]
fn language_summary_reproduces_fixture() {
    let (_, h) = layers("layers_llama2_70b.csv");
    let text = fixture("counts_llama2_70b.csv");
    assert_eq!(h.totals_table().to_csv(None).unwrap(), text);
    let t = Table::from_csv(&text).unwrap();
    let header: Vec<LanguageId> = t.header.iter().map(|c| LanguageId::new(c.as_str()).unwrap()).collect();
    assert_eq!(header, h.languages);
    assert_eq!(t.rows[0][0], "836");
}
