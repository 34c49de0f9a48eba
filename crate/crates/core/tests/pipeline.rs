use std::path::{Path, PathBuf};

use convsearch::corpus::{
    build_index, read_corpus, AnalysisConfig, DocStore, InvertedIndex, PassageDoc, Stemmer,
};
use convsearch::embed::{
    EmbeddingKey, EmbeddingProvider, EmbeddingVector, SyntheticMode, SyntheticProvider,
};
use convsearch::eval::{recall_at_k, write_run_to, Qrels};
use convsearch::pipeline::{Pipeline, PipelineConfig, QueryMethod};
use convsearch::rerank::{rerank_turn, ConversationState, HeadKind, HeadParams};
use convsearch::retrieval::{search, RankedList, RetrievalConfig};
use convsearch::rewrite::{read_coref, read_topics, Conversation, EchoRewriter, Turn};
use convsearch::Result;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo")
}

struct Demo {
    index: InvertedIndex,
    docs: DocStore,
    topics: Vec<Conversation>,
    qrels: Qrels,
}

fn load_demo() -> Demo {
    let passages = read_corpus(&demo().join("corpus.jsonl")).unwrap();
    let docs = DocStore::from_docs(&passages);
    let index = build_index(passages, &AnalysisConfig::english()).unwrap();
    Demo {
        index,
        docs,
        topics: read_topics(&demo().join("topics.json")).unwrap(),
        qrels: Qrels::read(&demo().join("qrels.txt")).unwrap(),
    }
}

fn plain() -> AnalysisConfig {
    AnalysisConfig::new(Stemmer::None, Vec::<String>::new(), true).unwrap()
}

/// Vector fixed by the passage's first word.
struct ByTopic(Vec<(&'static str, Vec<f32>)>);

impl EmbeddingProvider for ByTopic {
    fn dim(&self) -> usize {
        self.0[0].1.len()
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        keys.iter()
            .map(|k| {
                let first = k.passage.split_whitespace().next().unwrap_or("");
                let v = self
                    .0
                    .iter()
                    .find(|(t, _)| *t == first)
                    .map(|(_, v)| v.clone())
                    .unwrap();
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

fn same_values(kind: HeadKind, from: &HeadParams) -> HeadParams {
    let mut p = HeadParams::zeros(kind, from.input_dim, 0);
    p.values.clone_from(&from.values);
    p
}

#[test]
fn raw_without_head_is_pure_retrieval() {
    let d = load_demo();
    let cfg = PipelineConfig::default();
    let out = Pipeline::new(&cfg, &d.index, &d.docs)
        .run_benchmark(&d.topics, Some(&d.qrels))
        .unwrap();
    let mut i = 0;
    for topic in &d.topics {
        for turn in &topic.turns {
            let want = search(
                &d.index,
                &turn.raw_query,
                &cfg.retrieval,
                &AnalysisConfig::english(),
            )
            .unwrap()
            .with_key(topic.turn_key(turn.index));
            assert_eq!(out.run[i], want);
            assert_eq!(out.retrieval_run[i], want);
            i += 1;
        }
    }
    assert_eq!(out.run.len(), i);
}

#[test]
fn single_turn_memnet_matches_linear() {
    let d = load_demo();
    let cfg = PipelineConfig::default();
    let embedder = SyntheticProvider::new(16, 3).unwrap();
    let memnet = HeadParams::init(HeadKind::MemNet, 16, 0, 11).unwrap();
    let linear = same_values(HeadKind::Linear, &memnet);
    let one_turn = Conversation::new("solo", vec![d.topics[0].turns[0].clone()]).unwrap();
    let a = Pipeline::new(&cfg, &d.index, &d.docs)
        .with_head(&memnet, &embedder)
        .run_conversation(&one_turn);
    let b = Pipeline::new(&cfg, &d.index, &d.docs)
        .with_head(&linear, &embedder)
        .run_conversation(&one_turn);
    assert!(a.is_complete() && b.is_complete());
    assert!(!a.turns[0].ranked.is_empty());
    assert_eq!(a.turns[0].ranked, b.turns[0].ranked);
}

#[test]
fn memnet_context_flips_an_order() {
    let docs = vec![
        PassageDoc::new("a", "alpha red").unwrap(),
        PassageDoc::new("b", "beta red blue").unwrap(),
        PassageDoc::new("g", "gamma green").unwrap(),
    ];
    let store = DocStore::from_docs(&docs);
    let index = build_index(docs, &plain()).unwrap();
    let embedder = ByTopic(vec![
        ("alpha", vec![1.0, 0.0, 0.0, 0.0]),
        ("beta", vec![0.0, 1.0, 0.0, 0.0]),
        ("gamma", vec![0.0, 0.0, 1.0, 0.0]),
    ]);
    // relevant-class weights (0, -0.1, 1, 0): linear prefers alpha over beta,
    // memnet's context (alpha attends to the alpha memory) prefers beta
    let mut memnet = HeadParams::zeros(HeadKind::MemNet, 4, 0);
    memnet.values[4 + 1] = -0.1;
    memnet.values[4 + 2] = 1.0;
    let linear = same_values(HeadKind::Linear, &memnet);
    let conv = Conversation::from_queries("flip", &["alpha", "green", "red"]).unwrap();
    let cfg = PipelineConfig {
        retrieval: RetrievalConfig {
            k: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let run = |head: &HeadParams| {
        let r = Pipeline::new(&cfg, &index, &store)
            .with_head(head, &embedder)
            .run_conversation(&conv);
        assert!(r.is_complete(), "{:?}", r.error);
        r
    };
    let lin = run(&linear);
    let mem = run(&memnet);
    assert_eq!(lin.turns[0].ranked.doc_ids(), vec!["a"]);
    assert_eq!(mem.turns[1].ranked.doc_ids(), vec!["g"]);
    assert_eq!(lin.turns[2].ranked.doc_ids(), vec!["a", "b"]);
    assert_eq!(mem.turns[2].ranked.doc_ids(), vec!["b", "a"]);
    let att = mem.turns[2].log.attention.clone().unwrap();
    // the new top-1 ("beta") attends uniformly to the two orthogonal memories
    assert!(
        (att[0] - 0.5).abs() < 1e-12 && (att[1] - 0.5).abs() < 1e-12,
        "{att:?}"
    );
}

#[test]
fn three_topic_run_matches_hand_assembled() {
    let docs = vec![
        PassageDoc::new("p1", "solar panels convert light").unwrap(),
        PassageDoc::new("p2", "wind turbines convert wind").unwrap(),
        PassageDoc::new("p3", "solar wind solar storms").unwrap(),
        PassageDoc::new("p4", "bread needs yeast").unwrap(),
        PassageDoc::new("p5", "yeast ferments sugar").unwrap(),
    ];
    let store = DocStore::from_docs(&docs);
    let index = build_index(docs, &plain()).unwrap();
    let topics = vec![
        Conversation::from_queries("10", &["solar", "wind"]).unwrap(),
        Conversation::from_queries("20", &["yeast"]).unwrap(),
        Conversation::from_queries("30", &["convert", "sugar bread", "nothing"]).unwrap(),
    ];
    let cfg = PipelineConfig {
        retrieval: RetrievalConfig {
            k: 3,
            ..Default::default()
        },
        tag: "t".into(),
        ..Default::default()
    };
    let out = Pipeline::new(&cfg, &index, &store)
        .run_benchmark(&topics, None)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path(), "t").unwrap();

    // LMD, mu = 1000, |C| = 18, p(solar) = 3/18, p(wind) = 3/18, ...; ties go to the lower id
    let lmd = |tf: f64, cf: f64, len: f64| ((tf + 1000.0 * cf / 18.0) / (len + 1000.0)).ln();
    let expected = [
        (
            "10_1",
            vec![("p3", lmd(2.0, 3.0, 4.0)), ("p1", lmd(1.0, 3.0, 4.0))],
        ),
        (
            "10_2",
            vec![("p2", lmd(2.0, 3.0, 4.0)), ("p3", lmd(1.0, 3.0, 4.0))],
        ),
        (
            "20_1",
            vec![("p4", lmd(1.0, 2.0, 3.0)), ("p5", lmd(1.0, 2.0, 3.0))],
        ),
        (
            "30_1",
            vec![("p1", lmd(1.0, 2.0, 4.0)), ("p2", lmd(1.0, 2.0, 4.0))],
        ),
        (
            "30_2",
            vec![
                ("p4", lmd(1.0, 1.0, 3.0) + lmd(0.0, 1.0, 3.0)),
                ("p5", lmd(0.0, 1.0, 3.0) + lmd(1.0, 1.0, 3.0)),
            ],
        ),
        ("30_3", vec![]),
    ];
    let mut text = String::new();
    for (key, entries) in &expected {
        for (rank, (doc, score)) in entries.iter().enumerate() {
            text.push_str(&format!("{key} Q0 {doc} {} {score} t\n", rank + 1));
        }
    }
    let written = std::fs::read_to_string(dir.path().join("run.txt")).unwrap();
    let lines: Vec<Vec<&str>> = written.lines().map(|l| l.split(' ').collect()).collect();
    let want: Vec<Vec<&str>> = text.lines().map(|l| l.split(' ').collect()).collect();
    assert_eq!(lines.len(), want.len(), "{written}");
    for (g, w) in lines.iter().zip(&want) {
        assert_eq!(g[..4], w[..4], "{written}");
        let (gs, ws): (f64, f64) = (g[4].parse().unwrap(), w[4].parse().unwrap());
        assert!((gs - ws).abs() < 1e-12, "{gs} vs {ws}");
        assert_eq!(g[5], "t");
    }
    // an empty final turn still appears in the run vector, in topic order
    let keys: Vec<&str> = out.run.iter().map(|l| l.turn_key.as_str()).collect();
    assert_eq!(keys, vec!["10_1", "10_2", "20_1", "30_1", "30_2", "30_3"]);
    assert!(out.failures.is_empty());
}

#[test]
fn empty_topic_set() {
    let d = load_demo();
    let cfg = PipelineConfig::default();
    let out = Pipeline::new(&cfg, &d.index, &d.docs)
        .run_benchmark(&[], Some(&d.qrels))
        .unwrap();
    assert!(out.run.is_empty() && out.failures.is_empty());
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path(), "x").unwrap();
    assert_eq!(
        std::fs::read_to_string(dir.path().join("run.txt")).unwrap(),
        ""
    );
}

#[test]
fn reruns_are_byte_identical() {
    let d = load_demo();
    let coref = read_coref(&demo().join("coref.json")).unwrap();
    let embedder =
        SyntheticProvider::with_mode(24, 5, SyntheticMode::Topical { epsilon: 0.5 }).unwrap();
    let head = HeadParams::init(HeadKind::BiLstm, 24, 6, 2).unwrap();
    for method in QueryMethod::ALL {
        let cfg = PipelineConfig {
            query_method: method,
            rerank_depth: 7,
            ..Default::default()
        };
        let mut files = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            Pipeline::new(&cfg, &d.index, &d.docs)
                .with_head(&head, &embedder)
                .with_rewriter(&EchoRewriter)
                .with_coref(&coref)
                .run_benchmark(&d.topics, Some(&d.qrels))
                .unwrap()
                .write(dir.path(), "det")
                .unwrap();
            files.push(
                ["run.txt", "retrieval.txt", "turns.jsonl", "metrics.json"]
                    .map(|f| std::fs::read(dir.path().join(f)).unwrap()),
            );
        }
        assert_eq!(files[0], files[1], "{}", method.name());
    }
}

#[test]
fn reranking_keeps_recall() {
    let d = load_demo();
    let coref = read_coref(&demo().join("coref.json")).unwrap();
    let embedder = SyntheticProvider::new(16, 8).unwrap();
    for kind in HeadKind::ALL {
        let head = HeadParams::init(kind, 16, 4, 1).unwrap();
        for method in QueryMethod::ALL {
            let cfg = PipelineConfig {
                query_method: method,
                ..Default::default()
            };
            let out = Pipeline::new(&cfg, &d.index, &d.docs)
                .with_head(&head, &embedder)
                .with_rewriter(&EchoRewriter)
                .with_coref(&coref)
                .run_benchmark(&d.topics, Some(&d.qrels))
                .unwrap();
            if method == QueryMethod::Auto {
                assert!(out
                    .failures
                    .iter()
                    .all(|f| f.error.contains("no auto query")));
                continue;
            }
            assert!(out.failures.is_empty(), "{method:?}: {:?}", out.failures);
            for (r, base) in out.run.iter().zip(&out.retrieval_run) {
                let Some(j) = d.qrels.get(&r.turn_key) else {
                    continue;
                };
                // re-ranking permutes the whole candidate list, so recall at the
                // retrieval cutoff cannot move
                let k = cfg.retrieval.k;
                assert_eq!(
                    recall_at_k(&r.doc_ids(), j, k, 1),
                    recall_at_k(&base.doc_ids(), j, k, 1),
                    "{kind} {method:?} {}",
                    r.turn_key
                );
                let mut a = r.doc_ids();
                let mut b = base.doc_ids();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn linear_head_has_no_conversation_order() {
    let d = load_demo();
    let embedder = SyntheticProvider::new(16, 4).unwrap();
    let head = HeadParams::init(HeadKind::Linear, 16, 0, 9).unwrap();
    let cfg = PipelineConfig {
        query_method: QueryMethod::Manual,
        ..Default::default()
    };
    let pipeline = Pipeline::new(&cfg, &d.index, &d.docs).with_head(&head, &embedder);
    for topic in &d.topics {
        let full = pipeline.run_conversation(topic);
        // each turn on its own, as the first turn of a one-turn conversation
        for (t, out) in topic.turns.iter().zip(&full.turns) {
            let mut turn = t.clone();
            turn.index = 1;
            let alone = Conversation::new(topic.topic_id.clone(), vec![turn]).unwrap();
            let solo = pipeline.run_conversation(&alone);
            assert_eq!(solo.turns[0].ranked.doc_ids(), out.ranked.doc_ids());
            let scores: Vec<f64> = solo.turns[0]
                .ranked
                .entries
                .iter()
                .map(|e| e.score)
                .collect();
            let want: Vec<f64> = out.ranked.entries.iter().map(|e| e.score).collect();
            assert_eq!(scores, want);
        }
        // and reversed turn order gives the same per-query lists
        let reversed: Vec<Turn> = topic
            .turns
            .iter()
            .rev()
            .enumerate()
            .map(|(i, t)| Turn {
                index: i + 1,
                ..t.clone()
            })
            .collect();
        let back = pipeline
            .run_conversation(&Conversation::new(topic.topic_id.clone(), reversed).unwrap());
        for (a, b) in full.turns.iter().zip(back.turns.iter().rev()) {
            assert_eq!(a.ranked.doc_ids(), b.ranked.doc_ids());
        }
    }
    // rerank_turn with the linear kind ignores whatever state it is given
    let list = search(
        &d.index,
        "assistant",
        &RetrievalConfig::default(),
        &AnalysisConfig::english(),
    )
    .unwrap();
    let embs: Vec<Vec<f64>> = (0..list.len())
        .map(|i| vec![i as f64 * 0.1 - 0.3; 16])
        .collect();
    let fresh = ConversationState::new(&head);
    let stale = ConversationState {
        memories: vec![vec![1.0; 16]],
        ..fresh.clone()
    };
    let a = rerank_turn(&list, &embs, &fresh, &head).unwrap().list;
    let b = rerank_turn(&list, &embs, &stale, &head).unwrap().list;
    assert_eq!(a, b);
}

#[test]
fn failing_topic_leaves_others_alone() {
    let d = load_demo();
    let embedder = SyntheticProvider::new(16, 4).unwrap();
    let head = HeadParams::init(HeadKind::Gru, 16, 4, 9).unwrap();
    let cfg = PipelineConfig {
        query_method: QueryMethod::Manual,
        ..Default::default()
    };
    let pipeline = Pipeline::new(&cfg, &d.index, &d.docs).with_head(&head, &embedder);
    let alone = pipeline.run_benchmark(&d.topics, None).unwrap();
    assert!(alone.failures.is_empty());

    // no manual rewrite for turn 2: the topic fails there
    let mut broken =
        Conversation::from_queries("broken", &["what is a physician assistant", "and them"])
            .unwrap();
    broken.turns[0].manual_query = Some("what is a physician assistant".into());
    let mut mixed = d.topics.clone();
    mixed.insert(1, broken);
    let out = pipeline.run_benchmark(&mixed, None).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].topic_id, "broken");
    assert_eq!(out.failures[0].turn, 2);
    // the completed first turn of the failing topic is kept
    let kept: Vec<&RankedList> = out
        .run
        .iter()
        .filter(|l| l.turn_key.starts_with("broken_"))
        .collect();
    assert_eq!(kept.len(), 1);
    let others: Vec<RankedList> = out
        .run
        .iter()
        .filter(|l| !l.turn_key.starts_with("broken_"))
        .cloned()
        .collect();
    assert_eq!(others, alone.run);
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_run_to(&mut a, &others, "x").unwrap();
    write_run_to(&mut b, &alone.run, "x").unwrap();
    assert_eq!(a, b);
}
