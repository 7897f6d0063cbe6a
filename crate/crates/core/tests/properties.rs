//! Invariants of the selection math, the corpus generator, the forward pass
//! and the embedding analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use lape::analysis::map_to_language;
use lape::corpus::{disjoint_suite, generate_synthetic_language, lang, LanguageId, TokenId, BOS, VOCAB_SIZE};
use lape::eval::LanguageClassifier;
use lape::identify::{nearest_rank, select_by_entropy, Method, NeuronSelection, ScoreTable, SelectionConfig};
use lape::model::{FfnKind, Model, ModelConfig, NeuronId};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

const WIDTH: usize = 12;
const LAYERS: usize = 2;

fn langs(n: usize) -> Vec<LanguageId> {
    (0..n).map(|i| lang(&format!("x{i}"))).collect()
}

/// `LAYERS · WIDTH` rows of probabilities, some entries and some rows zero.
fn table(n_langs: usize) -> impl Strategy<Value = Array2<f64>> {
    let cell = prop_oneof![1 => Just(0.0), 4 => 0.0f64..1.0];
    proptest::collection::vec(cell, LAYERS * WIDTH * n_langs)
        .prop_map(move |v| Array2::from_shape_vec((LAYERS * WIDTH, n_langs), v).unwrap())
}

fn scores(values: Array2<f64>) -> ScoreTable {
    let n = values.ncols();
    ScoreTable::from_values(langs(n), LAYERS, WIDTH, values).unwrap()
}

fn config(fraction: f64, percentile: f64) -> SelectionConfig {
    SelectionConfig {
        bottom_fraction: fraction,
        threshold_percentile: percentile,
        seed: 0,
    }
}

fn select(s: &ScoreTable, cfg: &SelectionConfig) -> NeuronSelection {
    select_by_entropy(s, cfg, Method::Lape).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_rescaling_changes_nothing(values in table(3), exp in -6i32..6, c in 0.01f64..50.0) {
        let cfg = config(0.3, 90.0);
        let base = scores(values.clone());
        let sel = select(&base, &cfg);

        // a power of two scales without rounding
        let pow = scores(&values * 2f64.powi(exp));
        prop_assert_eq!(&pow.profiles, &base.profiles);
        prop_assert_eq!(&pow.entropy, &base.entropy);
        prop_assert_eq!(&select(&pow, &cfg).sets, &sel.sets);

        let any = scores(&values * c);
        for (a, b) in any.profiles.iter().zip(base.profiles.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in any.entropy.iter().zip(&base.entropy) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "definedness changed"),
            }
        }
    }

    #[test]
    fn per_neuron_rescaling_keeps_profiles(values in table(4), factors in proptest::collection::vec(0.1f64..10.0, LAYERS * WIDTH)) {
        let base = scores(values.clone());
        let mut scaled = values.clone();
        for (mut row, f) in scaled.rows_mut().into_iter().zip(&factors) {
            row *= *f;
        }
        let s = ScoreTable::from_values(langs(4), LAYERS, WIDTH, scaled).unwrap();
        for (a, b) in s.entropy.iter().zip(&base.entropy) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "definedness changed"),
            }
        }
    }

    #[test]
    fn relabelling_languages_relabels_sets(values in table(4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let cfg = config(0.4, 85.0);
        let names = langs(4);
        let base = select(&scores(values.clone()), &cfg);
        // column j of the permuted table is column perm[j] of the original
        let permuted = Array2::from_shape_fn(values.raw_dim(), |(r, j)| values[[r, perm[j]]]);
        let renamed: Vec<LanguageId> = perm.iter().map(|&k| names[k].clone()).collect();
        let s = ScoreTable::from_values(renamed, LAYERS, WIDTH, permuted).unwrap();
        let sel = select(&s, &cfg);
        for l in &names {
            prop_assert_eq!(sel.set(l).unwrap(), base.set(l).unwrap());
        }
    }

    #[test]
    fn higher_threshold_never_grows_a_set(values in table(3), p1 in 1.0f64..99.0, p2 in 1.0f64..99.0) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let s = scores(values);
        let a = select(&s, &config(0.5, lo));
        let b = select(&s, &config(0.5, hi));
        for l in &a.languages {
            prop_assert!(b.set(l).unwrap().is_subset(a.set(l).unwrap()));
        }
    }

    #[test]
    fn larger_fraction_nests_sets(values in table(3), f1 in 0.01f64..1.0, f2 in 0.01f64..1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let s = scores(values);
        let a = select(&s, &config(lo, 80.0));
        let b = select(&s, &config(hi, 80.0));
        for l in &a.languages {
            prop_assert!(a.set(l).unwrap().is_subset(b.set(l).unwrap()));
        }
    }

    #[test]
    fn entropy_within_bounds(values in table(5)) {
        let s = scores(values);
        let max = 5f64.ln();
        for h in s.entropy.iter().flatten() {
            prop_assert!((0.0..=max + 1e-15).contains(h), "entropy {h}");
        }
        for row in s.profiles.rows() {
            let total: f64 = row.sum();
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_neurons_make_sizes_exceed_union(values in table(3)) {
        let sel = select(&scores(values), &config(1.0, 50.0));
        let sum: usize = sel.counts().values().sum();
        let union = sel.union().len();
        let multi = sel.records.iter().any(|r| r.languages.len() > 1);
        prop_assert!(sum >= union);
        prop_assert_eq!(sum == union, !multi);
    }

    #[test]
    fn mapping_cancels_global_shifts(
        h in proptest::collection::vec(-5.0f64..5.0, 8),
        a in proptest::collection::vec(-5.0f64..5.0, 8),
        b in proptest::collection::vec(-5.0f64..5.0, 8),
        t in proptest::collection::vec(-5.0f64..5.0, 8),
        shift in proptest::collection::vec(-50.0f64..50.0, 8),
    ) {
        let (h, a, b, t, shift) = (Array1::from(h), Array1::from(a), Array1::from(b), Array1::from(t), Array1::from(shift));
        let before = map_to_language(&h, &a, &b) - &t;
        let after = map_to_language(&(&h + &shift), &(&a + &shift), &(&b + &shift)) - (&t + &shift);
        for (x, y) in before.iter().zip(after.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(map_to_language(&h, &a, &a), h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn later_tokens_do_not_change_earlier_logits(
        tokens in proptest::collection::vec(0..VOCAB_SIZE as TokenId, 2..16),
        replacement in 0..VOCAB_SIZE as TokenId,
        gated in any::<bool>(),
    ) {
        let kind = if gated { FfnKind::Gated } else { FfnKind::Standard };
        let model = Model::init(ModelConfig::tiny(8, 2, kind), 1).unwrap();
        let mut input = vec![BOS];
        input.extend(&tokens);
        let t = input.len() - 1;
        let mut other = input.clone();
        other[t] = replacement;
        let a = model.forward(&input, None, false).unwrap().logits;
        let b = model.forward(&other, None, false).unwrap().logits;
        for r in 0..t {
            prop_assert_eq!(a.row(r), b.row(r));
        }
    }
}

/// Every step of the selection, written out longhand for a 10-neuron,
/// 3-language table.
#[test]
fn selection_matches_brute_force() {
    let probs = [
        [0.90, 0.01, 0.02],
        [0.30, 0.31, 0.29],
        [0.00, 0.00, 0.00],
        [0.05, 0.80, 0.05],
        [0.60, 0.58, 0.01],
        [0.02, 0.03, 0.70],
        [0.40, 0.40, 0.40],
        [0.10, 0.00, 0.00],
        [0.20, 0.25, 0.90],
        [0.50, 0.02, 0.51],
    ];
    let values = Array2::from_shape_fn((10, 3), |(j, k)| probs[j][k]);
    let names = langs(3);
    let s = ScoreTable::from_values(names.clone(), 2, 5, values).unwrap();
    let cfg = config(0.5, 80.0);
    let sel = select_by_entropy(&s, &cfg, Method::Lape).unwrap();

    let mut entropies: Vec<(f64, usize)> = Vec::new();
    for (j, row) in probs.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for p in row {
            if *p > 0.0 {
                h -= p / total * (p / total).ln();
            }
        }
        entropies.push((h, j));
    }
    entropies.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let keep = (0.5 * entropies.len() as f64).ceil() as usize;
    let mut pooled: Vec<f64> = probs.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tau = pooled[(0.8 * 30.0f64).ceil() as usize - 1];
    assert_eq!(nearest_rank(&pooled, 80.0).unwrap(), tau);

    let mut expect: BTreeMap<LanguageId, BTreeSet<NeuronId>> = names.iter().map(|l| (l.clone(), BTreeSet::new())).collect();
    for &(_, j) in &entropies[..keep] {
        for (k, l) in names.iter().enumerate() {
            if probs[j][k] > tau {
                expect.get_mut(l).unwrap().insert(NeuronId::from_flat(j, 5));
            }
        }
    }
    assert_eq!(sel.sets, expect);
    assert_eq!(sel.provenance.threshold, Some(tau));
    assert_eq!(sel.provenance.candidates, keep);
}

#[test]
fn word_frequencies_follow_the_zipf_law() {
    let spec = disjoint_suite().remove(0);
    assert_eq!(spec.zipf_exponent, 1.1);
    let corpus = generate_synthetic_language(&spec, 200_000, 3).unwrap();
    let (sep, term) = (spec.separator() as TokenId, spec.terminator() as TokenId);
    let mut freq: HashMap<&[TokenId], usize> = HashMap::new();
    for doc in corpus.documents() {
        for w in doc.split(|&t| t == sep || t == term).filter(|w| !w.is_empty()) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut counts: Vec<usize> = freq.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    // least-squares fit of ln(count) on ln(rank) over well-sampled ranks
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .take_while(|(_, &c)| c >= 20)
        .map(|(r, &c)| (((r + 1) as f64).ln(), (c as f64).ln()))
        .collect();
    assert!(pts.len() >= 30, "only {} ranks", pts.len());
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope + 1.1).abs() <= 0.15, "slope {slope}");
}

#[test]
fn disjoint_languages_are_perfectly_separable() {
    let suite = disjoint_suite();
    let mut train = BTreeMap::new();
    let mut held = Vec::new();
    for s in &suite[..2] {
        let c = generate_synthetic_language(s, 60_000, 8).unwrap();
        let (a, b) = c.split_tail(40);
        train.insert(s.code.clone(), a);
        held.push(b);
    }
    let clf = LanguageClassifier::fit(&train).unwrap();
    let mut seen = 0;
    for c in &held {
        for doc in c.documents().filter(|d| d.len() >= 32) {
            assert_eq!(clf.classify_tokens(doc).label(), Some(c.language()));
            seen += 1;
        }
    }
    assert!(seen >= 60);
}
