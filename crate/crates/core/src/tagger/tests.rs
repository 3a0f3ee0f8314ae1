use super::*;
use crate::corpus::{Split, Token};
use crate::embed::{train_embeddings, EmbeddingConfig};

/// Each word carries exactly one tag, so the corpus is separable.
fn separable(n: usize, seed: u64) -> Corpus {
    let lex: [(Upos, &str); 4] = [(Upos::Det, "da"), (Upos::Noun, "nu"), (Upos::Verb, "vo"), (Upos::Adj, "aj")];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|_| {
            let len = rng.random_range(3..7);
            let tokens = (0..len)
                .map(|_| {
                    let (tag, stem) = lex[rng.random_range(0..lex.len())];
                    let lid = if rng.random_bool(0.5) { Lid::Lang1 } else { Lid::Lang2 };
                    let form = format!("{stem}{}", rng.random_range(0..5));
                    Token::new(form, tag, lid).unwrap()
                })
                .collect();
            Sentence::new(tokens).unwrap()
        })
        .collect();
    Corpus::new("toy", Split::Train, sentences)
}

/// Like `separable`, but the language label is a function of the form.
fn lid_separable(n: usize, seed: u64) -> Corpus {
    let mut c = separable(n, seed);
    for s in &mut c.sentences {
        let tokens = s
            .tokens()
            .iter()
            .map(|t| {
                let digit: u32 = t.form()[2..].parse().unwrap();
                let lid = if digit % 2 == 0 { Lid::Lang1 } else { Lid::Lang2 };
                Token::new(t.form(), t.pos, lid).unwrap()
            })
            .collect();
        *s = Sentence::new(tokens).unwrap();
    }
    c
}

fn small_arch(kind: ArchKind) -> TaggerArch {
    TaggerArch {
        kind,
        embedding_dim: 8,
        hidden: 8,
        dropout: 0.0,
        ..TaggerArch::default()
    }
}

fn sched(max_epochs: usize, patience: usize) -> TrainSchedule {
    TrainSchedule {
        max_epochs,
        patience,
        lr: 0.02,
        ..TrainSchedule::default()
    }
}

fn accuracy(gold: &Corpus, out: &TaggedOutput) -> f64 {
    token_accuracy(
        gold.tokens().map(|t| t.pos),
        out.sentences.iter().flat_map(|s| s.pos.iter().copied()),
    )
}

#[test]
fn fits_a_small_separable_corpus() {
    let train = separable(20, 1);
    let run = train_bilstm_crf(&train, &train, &small_arch(ArchKind::BilstmCrf), &sched(10, 3), None).unwrap();
    assert_eq!(accuracy(&train, &run.model.tag(&train.sentences)), 1.0);
}

#[test]
fn zero_learning_rate_with_patience_one_stops_after_two_epochs() {
    let train = separable(10, 2);
    let s = TrainSchedule {
        lr: 0.0,
        ..sched(10, 1)
    };
    let run = train_bilstm_crf(&train, &train, &small_arch(ArchKind::BilstmCrf), &s, None).unwrap();
    assert_eq!(run.log.epochs.len(), 2);
    assert_eq!(run.best_epoch, 1);
}

#[test]
fn training_is_deterministic() {
    let train = separable(15, 3);
    let dev = separable(5, 4);
    let mut arch = small_arch(ArchKind::BilstmCrf);
    arch.dropout = 0.2;
    let a = train_bilstm_crf(&train, &dev, &arch, &sched(4, 2), None).unwrap();
    let b = train_bilstm_crf(&train, &dev, &arch, &sched(4, 2), None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
}

#[test]
fn best_checkpoint_dominates_later_epochs() {
    let train = separable(15, 5);
    let dev = separable(8, 6);
    let run = train_bilstm_crf(&train, &dev, &small_arch(ArchKind::BilstmCrf), &sched(6, 2), None).unwrap();
    let best = run.log.epochs[run.best_epoch - 1].dev_acc;
    assert!(run.log.epochs[run.best_epoch..].iter().all(|e| e.dev_acc <= best));
    assert!(run.log.epochs.iter().all(|e| e.train_loss.is_finite()));
    let tsv = run.log.to_tsv();
    assert!(tsv.starts_with("epoch\ttrain_loss\tdev_acc\n"));
    assert_eq!(tsv.lines().count(), run.log.epochs.len() + 1);
}

#[test]
fn tagging_is_pure_and_handles_empty_input() {
    let train = separable(10, 7);
    let run = train_bilstm_crf(&train, &train, &small_arch(ArchKind::BilstmCrf), &sched(2, 1), None).unwrap();
    assert!(run.model.tag(&[]).is_empty());
    let test = separable(5, 8);
    assert_eq!(run.model.tag(&test.sentences), run.model.tag(&test.sentences));
}

#[test]
fn joint_model_emits_both_sequences() {
    let train = lid_separable(30, 9);
    let run = train_mtl_pos_lid(&train, &train, &small_arch(ArchKind::MtlPosLid), &sched(8, 3), None).unwrap();
    let out = run.model.tag(&train.sentences);
    for (s, o) in train.sentences.iter().zip(&out.sentences) {
        assert_eq!(o.pos.len(), s.len());
        assert_eq!(o.lid.as_ref().unwrap().len(), s.len());
    }
    assert!(run.log.epochs.iter().all(|e| e.dev_lid_acc.is_some()));
}

#[test]
fn second_pos_head_uses_its_own_inventory() {
    let a = separable(15, 10);
    let mut b = separable(15, 11);
    // pair B never uses ADJ
    b.sentences.retain(|s| s.pos_tags().iter().all(|&t| t != Upos::Adj));
    assert!(!b.is_empty());
    let run = train_mtl_pos(&a, &b, &a, Some(&b), &small_arch(ArchKind::MtlPos), &sched(3, 2), None).unwrap();
    let out = run.model.tag_pair_b(&a.sentences).unwrap();
    assert!(out.sentences.iter().flat_map(|s| &s.pos).all(|&t| t != Upos::Adj));
    assert!(run.log.epochs.iter().all(|e| e.dev_b_acc.is_some()));
}

#[test]
fn heads_are_independent_given_the_encoder() {
    let a = separable(10, 12);
    let b = separable(10, 13);
    let run = train_mtl_pos(&a, &b, &a, None, &small_arch(ArchKind::MtlPos), &sched(2, 1), None).unwrap();
    let before = run.model.tag(&a.sentences);
    let mut zeroed = run.model.clone();
    let head = &mut zeroed.network.heads[1];
    head.linear.w.value.fill(0.0);
    head.linear.b.value.fill(0.0);
    head.crf.transitions.value.fill(0.0);
    assert_eq!(zeroed.tag(&a.sentences), before);
}

#[test]
fn configuration_errors() {
    let train = separable(5, 14);
    let empty = Corpus::new("empty", Split::Train, vec![]);
    let arch = small_arch(ArchKind::BilstmCrf);
    assert!(matches!(
        train_bilstm_crf(&empty, &train, &arch, &sched(3, 1), None),
        Err(TaggerError::Usage(_))
    ));
    assert!(matches!(
        train_bilstm_crf(&train, &train, &small_arch(ArchKind::MtlPos), &sched(3, 1), None),
        Err(TaggerError::Config(_))
    ));
    assert!(matches!(
        train_bilstm_crf(&train, &train, &arch, &sched(3, 3), None),
        Err(TaggerError::Config(_))
    ));
    let pretrained = TaggerArch {
        init: EmbeddingInit::Pretrained,
        ..arch.clone()
    };
    assert!(matches!(
        train_bilstm_crf(&train, &train, &pretrained, &sched(3, 1), None),
        Err(TaggerError::Config(_))
    ));
    let table = train_embeddings(
        &train,
        &EmbeddingConfig {
            dim: 4,
            bucket_count: 50,
            epochs: 1,
            ..EmbeddingConfig::default()
        },
    )
    .unwrap();
    assert!(matches!(
        train_bilstm_crf(&train, &train, &pretrained, &sched(3, 1), Some(&table)),
        Err(TaggerError::Config(_))
    ));
    assert!(matches!(
        train_mtl_pos(&train, &empty, &train, None, &small_arch(ArchKind::MtlPos), &sched(3, 1), None),
        Err(TaggerError::Config(_))
    ));
    let mut no_lid = train.clone();
    for s in &mut no_lid.sentences {
        let tokens = s.tokens().iter().map(|t| Token::new(t.form(), t.pos, Lid::Other).unwrap()).collect();
        *s = Sentence::new(tokens).unwrap();
    }
    assert!(matches!(
        train_mtl_pos_lid(&no_lid, &no_lid, &small_arch(ArchKind::MtlPosLid), &sched(3, 1), None),
        Err(TaggerError::Config(_))
    ));
}

#[test]
fn pretrained_rows_come_from_the_table() {
    let train = separable(10, 15);
    let table = train_embeddings(
        &train,
        &EmbeddingConfig {
            dim: 8,
            bucket_count: 50,
            epochs: 1,
            ..EmbeddingConfig::default()
        },
    )
    .unwrap();
    let arch = TaggerArch {
        init: EmbeddingInit::Pretrained,
        fine_tune: false,
        ..small_arch(ArchKind::BilstmCrf)
    };
    let run = train_bilstm_crf(&train, &train, &arch, &sched(2, 1), Some(&table)).unwrap();
    let m = &run.model;
    let std = table.standardized();
    assert_eq!(m.backoff.as_ref(), Some(&std));
    for i in 2..m.vocab.len() {
        let want: Vec<f64> = std.lookup(m.vocab.word(i)).into_iter().map(f64::from).collect();
        assert_eq!(m.network.embedding.value.row(i), want.as_slice());
    }
    // unknown words go through the table rather than UNK
    let unseen = Sentence::new(vec![Token::new("zzz", Upos::X, Lid::Lang1).unwrap()]).unwrap();
    assert!(matches!(m.inputs(&unseen)[0], TokenInput::Vector(_)));
}

#[test]
fn checkpoint_round_trip_reproduces_tags() {
    let train = lid_separable(12, 16);
    let table = train_embeddings(
        &train,
        &EmbeddingConfig {
            dim: 8,
            bucket_count: 40,
            epochs: 1,
            ..EmbeddingConfig::default()
        },
    )
    .unwrap();
    let arch = TaggerArch {
        init: EmbeddingInit::Pretrained,
        ..small_arch(ArchKind::MtlPosLid)
    };
    let run = train_mtl_pos_lid(&train, &train, &arch, &sched(2, 1), Some(&table)).unwrap();
    let mut buf = Vec::new();
    run.model.write_binary(&mut buf).unwrap();
    assert!(buf.starts_with(CHECKPOINT_MAGIC));
    let back = TaggerModel::read_binary(&buf[..]).unwrap();
    assert_eq!(back, run.model);
    let test = lid_separable(6, 17);
    assert_eq!(back.tag(&test.sentences), run.model.tag(&test.sentences));
    assert!(TaggerModel::read_binary(&buf[..buf.len() / 2]).is_err());
}
