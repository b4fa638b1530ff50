//! Reference recommenders against hand-computed fixtures.

use hdbn::dataset::{EmotionVocab, Interaction, ListenedIndex, SplitDataset};
use hdbn::evaluation::baselines::{
    similarity, train_mf_bpr, InteractionIndex, ItemKnn, MfBpr, PopScorer, RandomScorer, Similarity, UserKnn,
};
use hdbn::evaluation::Scorer;
use hdbn::numerics::{cosine, Rng};
use hdbn::par::Execution;
use hdbn::recommender::{HyperParams, Tuple};
use proptest::prelude::*;

const SEQ: Execution = Execution::Sequential;

fn rec(user: usize, emotion: usize, music: usize) -> Interaction {
    Interaction { user, emotion, music }
}

fn vocab(tags: usize) -> EmotionVocab {
    EmotionVocab::new((0..tags).map(|t| format!("t{t}")).collect(), 16, 3)
}

/// u0 {0,1}, u1 {0,1,2}, u2 {2,3}, u3 {4}, all under tag 0.
fn toy() -> Vec<Interaction> {
    [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 2), (2, 3), (3, 4)]
        .into_iter()
        .map(|(u, v)| rec(u, 0, v))
        .collect()
}

fn scores(s: &dyn Scorer, user: usize, emotion: usize, n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; n];
    s.score(user, emotion, &mut out).unwrap();
    out
}

fn assert_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
    }
}

fn user_knn(train: &[Interaction], users: usize, music: usize, kind: Similarity, m: usize) -> UserKnn {
    let v = vocab(3);
    let index = InteractionIndex::build(train, users, music, &v).unwrap();
    UserKnn::new(index, v, kind, m, SEQ).unwrap()
}

fn item_knn(train: &[Interaction], users: usize, music: usize, kind: Similarity, m: usize) -> ItemKnn {
    let v = vocab(3);
    let index = InteractionIndex::build(train, users, music, &v).unwrap();
    ItemKnn::new(index, v, kind, m, SEQ).unwrap()
}

#[test]
fn ucf_toy_matrix() {
    let r6 = 6f64.sqrt();
    let ucf = user_knn(&toy(), 4, 5, Similarity::Binary, 50);
    assert_close(&scores(&ucf, 0, 0, 5), &[2.0 / r6, 2.0 / r6, 2.0 / r6, 0.0, 0.0]);
    assert_close(&scores(&ucf, 1, 0, 5), &[2.0 / r6, 2.0 / r6, 1.0 / r6, 1.0 / r6, 0.0]);
    assert_close(&scores(&ucf, 3, 0, 5), &[0.0; 5]);

    let one = user_knn(&toy(), 4, 5, Similarity::Binary, 1);
    assert_eq!(one.neighbors(1), &[(0, 2.0 / r6)]);
    assert_close(&scores(&one, 1, 0, 5), &[2.0 / r6, 2.0 / r6, 0.0, 0.0, 0.0]);
}

#[test]
fn icf_toy_matrix() {
    let icf = item_knn(&toy(), 4, 5, Similarity::Binary, 50);
    assert_close(&scores(&icf, 0, 0, 5), &[1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_close(&scores(&icf, 2, 0, 5), &[0.5, 0.5, 1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0]);
    // With one neighbor, track 2 keeps only track 3 and drops u0's history.
    let one = item_knn(&toy(), 4, 5, Similarity::Binary, 1);
    assert_close(&scores(&one, 0, 0, 5), &[1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn identical_and_orthogonal_users() {
    let train = vec![rec(0, 0, 0), rec(0, 1, 1), rec(1, 0, 0), rec(1, 1, 1), rec(2, 0, 2)];
    let v = vocab(3);
    let index = InteractionIndex::build(&train, 3, 3, &v).unwrap();
    let rows: Vec<Vec<(usize, Vec<f64>)>> = (0..3).map(|u| index.user_history(u).to_vec()).collect();
    let profiles = vec![vec![0.0; 2]; 3];
    assert!((similarity(&rows, &profiles, Similarity::Binary, 0, 1) - 1.0).abs() < 1e-15);
    assert_eq!(similarity(&rows, &profiles, Similarity::Binary, 0, 2), 0.0);
    assert!((similarity(&rows, &profiles, Similarity::Emotion, 0, 1) - 1.0).abs() < 1e-12);
    assert_eq!(similarity(&rows, &profiles, Similarity::Emotion, 0, 2), 0.0);
}

/// UCFE by its defining sums, without neighbor truncation.
fn ucfe_oracle(train: &[Interaction], v: &EmotionVocab, users: usize, music: usize, user: usize, emotion: usize) -> Vec<f64> {
    // e[u][v]: mean tag vector, None when u never played v.
    let mut e = vec![vec![None::<(Vec<f64>, f64)>; music]; users];
    for r in train {
        let slot = e[r.user][r.music].get_or_insert((vec![0.0; v.dim()], 0.0));
        for (a, b) in slot.0.iter_mut().zip(v.row(r.emotion)) {
            *a += b;
        }
        slot.1 += 1.0;
    }
    let e: Vec<Vec<Option<Vec<f64>>>> = e
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.map(|(s, n)| s.iter().map(|x| x / n).collect())).collect())
        .collect();
    let count = |u: usize| e[u].iter().filter(|x| x.is_some()).count() as f64;
    let sim = |a: usize, b: usize| {
        let mut s = 0.0;
        for w in 0..music {
            if let (Some(x), Some(y)) = (&e[a][w], &e[b][w]) {
                s += cosine(x, y);
            }
        }
        s / (count(a) * count(b)).sqrt()
    };
    let s = v.row(emotion);
    (0..music)
        .map(|w| {
            (0..users)
                .filter(|&n| n != user)
                .filter_map(|n| e[n][w].as_ref().map(|x| sim(user, n) * cosine(s, x)))
                .sum()
        })
        .collect()
}

#[test]
fn ucfe_three_user_fixture() {
    // u0 plays track 0 twice under different tags, so e_{0,0} is their mean.
    let train = vec![
        rec(0, 0, 0),
        rec(0, 1, 0),
        rec(0, 1, 1),
        rec(1, 0, 0),
        rec(1, 0, 2),
        rec(2, 1, 1),
        rec(2, 0, 2),
        rec(2, 1, 3),
    ];
    let v = vocab(3);
    let ucfe = user_knn(&train, 3, 4, Similarity::Emotion, 50);
    for u in 0..3 {
        for t in 0..2 {
            assert_close(&scores(&ucfe, u, t, 4), &ucfe_oracle(&train, &v, 3, 4, u, t));
        }
    }
}

#[test]
fn icfe_mirrors_ucfe_on_the_transposed_matrix() {
    // With a single user the item side reduces to one listener per track:
    // sim(v1, v2) = cos(e_{u,v1}, e_{u,v2}) / 1.
    let train = vec![rec(0, 0, 0), rec(0, 1, 1), rec(0, 0, 2)];
    let v = vocab(3);
    let icfe = item_knn(&train, 1, 4, Similarity::Emotion, 50);
    let s0 = v.row(0);
    let s1 = v.row(1);
    let c01 = cosine(s0, s1);
    let out = scores(&icfe, 0, 0, 4);
    // Track 0: neighbors 1 (c01) and 2 (1); history cosines with query tag 0 are c01 and 1.
    assert!((out[0] - (c01 * c01 + 1.0)).abs() < 1e-12, "{out:?}");
    assert!((out[1] - (c01 * 1.0 + c01 * 1.0)).abs() < 1e-12, "{out:?}");
    assert_eq!(out[3], 0.0);
}

#[test]
fn blend_extremes() {
    let train = vec![rec(0, 0, 0), rec(0, 1, 1), rec(1, 0, 0), rec(1, 0, 2), rec(2, 1, 3), rec(3, 1, 1), rec(3, 0, 3)];
    for u in 0..4 {
        let plain = scores(&user_knn(&train, 4, 4, Similarity::Binary, 50), u, 0, 4);
        let w0 = scores(&user_knn(&train, 4, 4, Similarity::Blend(0.0), 50), u, 0, 4);
        assert_eq!(plain, w0);
        let plain = scores(&item_knn(&train, 4, 4, Similarity::Binary, 50), u, 0, 4);
        let w0 = scores(&item_knn(&train, 4, 4, Similarity::Blend(0.0), 50), u, 0, 4);
        assert_eq!(plain, w0);
    }
    // At w = 1 only tag-frequency profiles matter: u0 and u3 both used tags
    // 0 and 1 once, u2 only tag 1.
    let knn = user_knn(&train, 4, 4, Similarity::Blend(1.0), 50);
    let n: Vec<(usize, f64)> = knn.neighbors(0).to_vec();
    assert_eq!(n[0].0, 3);
    assert!((n[0].1 - 1.0).abs() < 1e-12);
    let u2 = n.iter().find(|(b, _)| *b == 2).unwrap().1;
    assert!((u2 - 1.0 / 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn bad_blend_weight_is_rejected() {
    let v = vocab(3);
    let index = InteractionIndex::build(&toy(), 4, 5, &v).unwrap();
    assert!(UserKnn::new(index.clone(), v.clone(), Similarity::Blend(1.5), 5, SEQ).is_err());
    assert!(UserKnn::new(index, v, Similarity::Binary, 0, SEQ).is_err());
}

#[test]
fn pop_counts_and_random_reproducibility() {
    let pop = PopScorer::new(&toy(), 5);
    assert_eq!(pop.counts(), &[2.0, 2.0, 2.0, 1.0, 1.0]);
    let r = RandomScorer::new(4);
    let a = scores(&r, 1, 0, 50);
    assert_eq!(a, scores(&r, 1, 0, 50));
    assert_ne!(a, scores(&r, 2, 0, 50));
    assert!(a.iter().all(|x| (0.0..1.0).contains(x)));
}

fn split_of(train: Vec<Interaction>, users: usize) -> SplitDataset {
    SplitDataset {
        listened: ListenedIndex::build(&train, users),
        train,
        validation: Vec::new(),
        test: Vec::new(),
        cold: Vec::new(),
    }
}

#[test]
fn mf_bpr_zero_embeddings_give_ln2() {
    let hp = HyperParams {
        emb_init: 0.0,
        ..HyperParams::emomusiclj_small()
    };
    let m = MfBpr::init(2, 3, &hp, 1);
    let batch = [Tuple { user: 0, emotion: 0, pos: 0, neg: 1 }, Tuple { user: 1, emotion: 0, pos: 2, neg: 0 }];
    let (loss, ..) = m.batch_loss(&batch);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn mf_bpr_separates_a_single_positive() {
    let hp = HyperParams {
        epochs: 100,
        neg_k: 1,
        batch_size: 1,
        ..HyperParams::emomusiclj_small()
    };
    let split = split_of(vec![rec(0, 0, 0)], 1);
    let (m, log) = train_mf_bpr(&split, 1, 2, &hp, 9, SEQ).unwrap();
    assert_eq!(log.len(), 100);
    let s = scores(&m, 0, 0, 2);
    assert!(s[0] > s[1], "{s:?}");
    assert!(log.last().unwrap().rec < log[0].rec);
}

fn arb_train() -> impl Strategy<Value = Vec<Interaction>> {
    prop::collection::vec((0..6usize, 0..3usize, 0..8usize), 1..40)
        .prop_map(|v| v.into_iter().map(|(u, e, m)| rec(u, e, m)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn similarities_are_symmetric(train in arb_train(), w in 0.0..=1.0f64) {
        let v = EmotionVocab::new((0..3).map(|t| format!("t{t}")).collect(), 16, 3);
        let index = InteractionIndex::build(&train, 6, 8, &v).unwrap();
        let (user_rows, user_profiles) = (index.user_rows(), index.user_profiles());
        let (item_rows, item_profiles) = (index.music_rows(), index.music_profiles());
        for kind in [Similarity::Binary, Similarity::Emotion, Similarity::Blend(w)] {
            for a in 0..6 {
                for b in 0..6 {
                    prop_assert_eq!(
                        similarity(user_rows, user_profiles, kind, a, b),
                        similarity(user_rows, user_profiles, kind, b, a)
                    );
                }
            }
            for a in 0..8 {
                for b in 0..8 {
                    prop_assert_eq!(
                        similarity(item_rows, item_profiles, kind, a, b),
                        similarity(item_rows, item_profiles, kind, b, a)
                    );
                }
            }
        }
    }

    #[test]
    fn neighborhood_scores_are_finite(train in arb_train(), seed in 0..1000u64) {
        let mut rng = Rng::new(seed);
        let u = rng.below(6);
        for kind in [Similarity::Binary, Similarity::Emotion, Similarity::Blend(0.5)] {
            let a = scores(&user_knn(&train, 6, 8, kind, 3), u, 1, 8);
            let b = scores(&item_knn(&train, 6, 8, kind, 3), u, 1, 8);
            prop_assert!(a.iter().chain(&b).all(|x| x.is_finite()));
        }
    }
}
