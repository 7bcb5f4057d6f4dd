use pacs_core::io::checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
use pacs_core::io::container::{
    read_container, write_container, ContainerEntry, EmbeddingContainer, Role,
};
use pacs_core::io::{embedding_store, feature_store, StoreSources};
use pacs_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(role: Role, ids: &[String], dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingContainer {
    let entries = ids
        .iter()
        .map(|id| {
            ContainerEntry::new(
                id.clone(),
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    EmbeddingContainer::new(role, dim, "", entries).unwrap()
}

#[test]
fn train_checkpoint_score() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 24;
    let vids: Vec<String> = (0..2 * n).map(|i| format!("img{i}")).collect();
    let tids: Vec<String> = (0..2 * n).map(|i| format!("cap{i}")).collect();
    let vpath = dir.path().join("v.pacs");
    let tpath = dir.path().join("t.pacs");
    write_container(&features(Role::VisualFeature, &vids, 6, &mut rng), &vpath).unwrap();
    write_container(&features(Role::TextFeature, &tids, 5, &mut rng), &tpath).unwrap();

    let visual = read_container(&vpath).unwrap();
    let text = read_container(&tpath).unwrap();
    let store = feature_store(&visual, &text).unwrap();
    let tuples: Vec<AugmentedTuple> = (0..n)
        .map(|i| AugmentedTuple::new(&vids[i], &tids[i], &vids[n + i], &tids[n + i]))
        .collect();
    let splits = TrainSplits::random(tuples, 0.25, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        patience_iters: 50,
        max_iters: 60,
        ..TrainConfig::default()
    };
    let loss = LossConfig::default();
    let out = train(
        &splits,
        &store,
        &HeadInit::Random { joint_dim: 4 },
        &cfg,
        &loss,
    )
    .unwrap();
    assert!(out.best_val_loss <= out.history.validation[0].1);

    let ckpt = Checkpoint {
        heads: out.heads.clone(),
        meta: Some(CheckpointMeta {
            loss,
            train: cfg,
            iteration: out.best_iteration,
            best_val_loss: out.best_val_loss,
            tau: out.tau,
        }),
    };
    let cpath = dir.path().join("ckpt.pacs");
    write_checkpoint(&ckpt, &cpath).unwrap();
    let back = read_checkpoint(&cpath).unwrap();
    assert_eq!(back.meta, ckpt.meta);

    let sources = StoreSources {
        visual: Some(visual),
        text: Some(text),
        ..StoreSources::default()
    };
    let emb = embedding_store(&sources, Some(&back.heads)).unwrap();
    let records: Vec<ScoreRecord> = (0..n)
        .map(|i| ScoreRecord {
            id: format!("r{i:02}"),
            candidate: tids[i].clone(),
            media: vids[i].clone(),
            refs: vec![tids[n + i].clone()],
        })
        .collect();
    let cfg = ScoreConfig::default();
    let free = batch_score(&records, &emb, Mode::Image, Variant::Free, &cfg).unwrap();
    let refd = batch_score(&records, &emb, Mode::Image, Variant::Ref, &cfg).unwrap();
    assert_eq!(free.items.len(), n);
    for (f, r) in free.items.iter().zip(&refd.items) {
        assert!((0.0..=2.0).contains(&f.score));
        assert!((0.0..=2.0).contains(&r.score));
    }
    // f32 storage of the weights changes scores only at f32 precision
    let exact = embedding_store(&sources, Some(&out.heads)).unwrap();
    let direct = batch_score(&records, &exact, Mode::Image, Variant::Free, &cfg).unwrap();
    for (a, b) in free.items.iter().zip(&direct.items) {
        assert!((a.score - b.score).abs() < 1e-5);
    }
}

#[test]
fn dangling_ids_rejected_before_scoring() {
    let mut store = EmbeddingStore::new();
    store.insert_visual("img", EmbeddingVector::axis(2, 0).unwrap());
    store.insert_text("cap", EmbeddingVector::axis(2, 1).unwrap());
    let records = vec![
        ScoreRecord {
            id: "1".into(),
            candidate: "cap".into(),
            media: "img".into(),
            refs: vec![],
        },
        ScoreRecord {
            id: "2".into(),
            candidate: "ghost".into(),
            media: "nowhere".into(),
            refs: vec![],
        },
    ];
    match batch_score(
        &records,
        &store,
        Mode::Image,
        Variant::Free,
        &ScoreConfig::default(),
    ) {
        Err(Error::DanglingIds(ids)) => assert_eq!(ids, vec!["ghost", "nowhere"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn video_manifest_scores() {
    let d = 3;
    let frames = EmbeddingContainer::new(
        Role::FrameSequence,
        d,
        "",
        vec![ContainerEntry::new(
            "clip",
            vec![1.0, 0.0, 0.0, 0.9, 0.1, 0.0],
        )],
    )
    .unwrap();
    let text = EmbeddingContainer::new(
        Role::TextFeature,
        d,
        "",
        vec![
            ContainerEntry::new("good", vec![1.0, 0.05, 0.0]),
            ContainerEntry::new("bad", vec![0.0, 0.0, 1.0]),
        ],
    )
    .unwrap();
    let tokens = EmbeddingContainer::new(
        Role::TextTokenSequence,
        d,
        "",
        vec![
            ContainerEntry::with_labels(
                "good",
                vec![1.0, 0.0, 0.0, 0.8, 0.2, 0.0],
                vec!["dog".into(), "runs".into()],
            ),
            ContainerEntry::with_labels("bad", vec![0.0, 0.1, 1.0], vec!["piano".into()]),
        ],
    )
    .unwrap();
    let sources = StoreSources {
        frames: Some(frames),
        text: Some(text),
        tokens: Some(tokens),
        ..StoreSources::default()
    };
    let store = embedding_store(&sources, None).unwrap();
    let records = vec![
        ScoreRecord {
            id: "g".into(),
            candidate: "good".into(),
            media: "clip".into(),
            refs: vec![],
        },
        ScoreRecord {
            id: "b".into(),
            candidate: "bad".into(),
            media: "clip".into(),
            refs: vec![],
        },
    ];
    let rep = batch_score(
        &records,
        &store,
        Mode::Video,
        Variant::Free,
        &ScoreConfig::default(),
    )
    .unwrap();
    let score = |id: &str| rep.items.iter().find(|i| i.id == id).unwrap().score;
    assert!(score("g") > 0.9);
    assert!(score("b") < 0.1);
}
