use std::collections::{BTreeSet, HashMap};
use std::fs;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Zipf};

use topickg::corpus::{load_corpus, CleaningRules, Corpus, DocFormat, Document, LoadOptions};
use topickg::numerics::seeded_rng;
use topickg::taxonomy::{build_tree, parse_tree, write_tree, GraphMatrices, TaxonomyError};

/// Zipf-distributed newsgroup-like text over a 5000-word pool.
fn zipf_texts(docs: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(seed);
    let zipf = Zipf::new(5000.0, 1.1).unwrap();
    (0..docs)
        .map(|_| {
            let len = rng.random_range(50..400);
            (0..len)
                .map(|_| format!("tok{}", zipf.sample(&mut rng) as usize))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[test]
fn min_count_vocabulary_matches_a_recount() {
    let dir = tempfile::tempdir().unwrap();
    let texts = zipf_texts(100, 7);
    let path = dir.path().join("docs.txt");
    fs::write(&path, texts.join("\n")).unwrap();
    let corpus = load_corpus(&path, &LoadOptions::default()).unwrap();

    let mut recount: HashMap<&str, u64> = HashMap::new();
    for t in &texts {
        for tok in t.split_whitespace() {
            *recount.entry(tok).or_default() += 1;
        }
    }
    let expected: BTreeSet<&str> = recount.iter().filter(|(_, &c)| c >= 20).map(|(t, _)| *t).collect();
    let got: BTreeSet<&str> = corpus.vocab().iter().map(String::as_str).collect();
    assert_eq!(got, expected);
    assert!(corpus.vocab_size() <= 2000, "{}", corpus.vocab_size());
    assert!(corpus.vocab().iter().all(|t| recount[t.as_str()] >= 20));

    // per-document totals equal the cleaned token counts
    let kept: Vec<&String> = texts
        .iter()
        .filter(|t| t.split_whitespace().any(|tok| expected.contains(tok)))
        .collect();
    assert_eq!(kept.len(), corpus.len());
    for (t, d) in kept.iter().zip(corpus.docs()) {
        let cleaned = t.split_whitespace().filter(|tok| expected.contains(tok)).count() as u64;
        assert_eq!(d.total(), cleaned);
    }
}

#[test]
fn stopwords_and_max_vocab_are_applied() {
    let texts = zipf_texts(60, 3);
    let mut rules = CleaningRules {
        max_vocab: Some(50),
        ..CleaningRules::default()
    };
    rules.stopwords.insert("tok1".into());
    let corpus = Corpus::from_texts(&texts, None, &rules, None).unwrap();
    assert_eq!(corpus.vocab_size(), 50);
    assert!(corpus.word_id("tok1").is_none());
    assert!(corpus.word_id("tok2").is_some());
}

#[test]
fn labels_follow_dropped_documents() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("vocab.txt"), "a\nb\n").unwrap();
    fs::write(dir.path().join("docs.txt"), "a b\nzzz\nb b\n").unwrap();
    fs::write(dir.path().join("labels.txt"), "0\n1\n2\n").unwrap();
    let corpus = load_corpus(
        &dir.path().join("docs.txt"),
        &LoadOptions {
            format: DocFormat::Text,
            vocab_path: Some(dir.path().join("vocab.txt")),
            labels_path: Some(dir.path().join("labels.txt")),
            rules: CleaningRules::default(),
        },
    )
    .unwrap();
    assert_eq!(corpus.labels(), Some(&[0, 2][..]));
    assert_eq!(corpus.dropped(), &[1]);
    assert_eq!(corpus.dense(&[1]).data(), &[0.0, 2.0]);
}

fn random_corpus() -> impl Strategy<Value = Corpus> {
    (1usize..15, 1usize..25, any::<u64>(), any::<bool>()).prop_map(|(v, n, seed, labelled)| {
        let mut rng = seeded_rng(seed);
        let docs = (0..n)
            .map(|_| {
                Document::from_counts(
                    (0..rng.random_range(1..8)).map(|_| (rng.random_range(0..v) as u32, rng.random_range(1..50))),
                )
            })
            .collect();
        let labels = labelled.then(|| (0..n).map(|_| rng.random_range(0..4)).collect());
        Corpus::new((0..v).map(|i| format!("w{i}")).collect(), docs, labels).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saved_corpora_reload_identically(corpus in random_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        let back = Corpus::load_dir(dir.path()).unwrap();
        prop_assert_eq!(back.vocab(), corpus.vocab());
        prop_assert_eq!(back.docs(), corpus.docs());
        prop_assert_eq!(back.labels(), corpus.labels());
    }

    #[test]
    fn an_epoch_partitions_the_training_split(
        corpus in random_corpus(),
        batch in 1usize..10,
        frac in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let corpus = corpus.with_split(frac, 5).unwrap();
        let mut seen = Vec::new();
        for b in corpus.batches(batch, seed) {
            prop_assert!(b.doc_ids.len() <= batch);
            prop_assert_eq!(b.counts.rows(), b.doc_ids.len());
            prop_assert_eq!(&b.counts, &corpus.dense(&b.doc_ids));
            seen.extend(b.doc_ids);
        }
        let again: Vec<usize> = corpus.batches(batch, seed).flat_map(|b| b.doc_ids).collect();
        prop_assert_eq!(&again, &seen);
        seen.sort_unstable();
        prop_assert_eq!(seen, corpus.train_ids());
    }
}

/// Random hypernym forest over `t` terms; term `i` may only point at a
/// lower-numbered term, so the lexicon is acyclic.
fn random_lexicon() -> impl Strategy<Value = (Vec<String>, Vec<(String, String)>, usize)> {
    (2usize..30, any::<u64>(), 1usize..5).prop_map(|(t, seed, layers)| {
        let mut rng = seeded_rng(seed);
        let name = |i: usize| format!("t{i}");
        let mut pairs = Vec::new();
        for i in 1..t {
            if rng.random::<f64>() < 0.9 {
                pairs.push((name(i), name(rng.random_range(0..i))));
            }
        }
        let mut vocab: Vec<String> = (0..t).filter(|_| rng.random::<f64>() < 0.6).map(name).collect();
        vocab.push("outsider".into());
        (vocab, pairs, layers)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn built_trees_have_one_root_and_round_trip(input in random_lexicon()) {
        let (vocab, pairs, layers) = input;
        let known = vocab.iter().any(|w| pairs.iter().any(|(c, p)| c == w || p == w));
        let built = build_tree(&vocab, &pairs, layers, &HashMap::new());
        if !known {
            prop_assert!(matches!(built, Err(TaxonomyError::EmptyIntersection)));
            return Ok(());
        }
        let (tree, report) = built.unwrap();
        prop_assert_eq!(tree.depth(), layers);
        prop_assert_eq!(tree.layer_size(layers), 1);
        prop_assert_eq!(tree.vocab(), vocab.clone());
        prop_assert!(report.excluded_words.contains(&"outsider".to_string()));
        prop_assert_eq!(&report.layer_sizes, &tree.layer_sizes());
        // every non-root topic has exactly one parent
        for l in 1..layers {
            for id in tree.layer_range(l) {
                prop_assert_eq!(tree.parents(id).len(), 1);
            }
        }
        let back = parse_tree(&write_tree(&tree)).unwrap();
        prop_assert_eq!(GraphMatrices::from_tree(&back), GraphMatrices::from_tree(&tree));
        prop_assert_eq!(back, tree);
    }
}

#[test]
fn cyclic_lexicon_names_the_cycle() {
    let pairs = vec![
        ("a".to_string(), "b".to_string()),
        ("b".to_string(), "c".to_string()),
        ("c".to_string(), "a".to_string()),
    ];
    match build_tree(&["a".to_string()], &pairs, 2, &HashMap::new()) {
        Err(TaxonomyError::Cycle(c)) => {
            assert_eq!(c.first(), c.last());
            assert_eq!(c.len(), 4);
        }
        other => panic!("{other:?}"),
    }
}
