use proptest::prelude::*;

use super::*;
use crate::diffcore::grad_check;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{}", i + 1)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn kb_from(rows: &[&[f64]]) -> KnowledgeBase {
    let w = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    KnowledgeBase::from_rows(ids(rows.len()), Tensor::matrix(rows.len(), w, data).unwrap()).unwrap()
}

/// Generator whose output is `tanh(t_pk)` regardless of `v_e`.
fn template_passthrough(emb: usize, e: usize) -> PosteriorGenerator {
    let h = 2 * e;
    let mut m = TwoLayerMlp::zeros(emb + e, h, e);
    for j in 0..e {
        m.w1.data_mut()[(emb + j) * h + j] = 1.0;
        m.w2.data_mut()[j * e + j] = 1.0;
    }
    PosteriorGenerator(m)
}

#[test]
fn zero_generator_gives_zero_posterior() {
    let gen = PosteriorGenerator(TwoLayerMlp::zeros(5, 6, 3));
    let t = PosteriorTemplate::init(3, 1);
    let k = posterior_knowledge(&[0.3, -1.0], &t, &gen).unwrap();
    assert_eq!(k, vec![0.0; 3]);
}

#[test]
fn passthrough_generator_matches_hand_evaluation() {
    let gen = template_passthrough(4, 3);
    let t = PosteriorTemplate {
        t_pk: Tensor::vector(vec![0.5, -1.5, 2.0]),
    };
    for v in [[0.0; 4], [9.0, -3.0, 0.2, 1.0]] {
        let k = posterior_knowledge(&v, &t, &gen).unwrap();
        // tanh on the hidden layer, identity output layer.
        let want = [0.5f64.tanh(), (-1.5f64).tanh(), 2.0f64.tanh()];
        for (a, b) in k.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn posterior_rejects_wrong_width() {
    let gen = PosteriorGenerator(TwoLayerMlp::init(7, 8, 3, 0));
    let t = PosteriorTemplate::init(3, 1);
    assert_eq!(posterior_knowledge(&[0.0; 4], &t, &gen).unwrap().len(), 3);
    assert!(matches!(
        posterior_knowledge(&[0.0; 5], &t, &gen),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn equal_cosines_give_uniform_weights() {
    let kb = kb_from(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
    for tau in [0.01, 0.1, 1.0, 50.0] {
        let w = RelevanceWeights::compute(&[2.0, 2.0, 2.0], &kb, tau).unwrap();
        for o in &w.omegas {
            assert!((o - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn two_row_softmax_values() {
    let w = RelevanceWeights::from_sims(vec![1.0, 0.0], 1.0).unwrap();
    let e = std::f64::consts::E;
    assert!((w.omegas[0] - e / (e + 1.0)).abs() < 1e-12);
    assert!((w.omegas[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    assert!((w.omegas[0] - 0.7311).abs() < 1e-4);

    let hot = RelevanceWeights::from_sims(vec![1.0, 0.0], 1000.0).unwrap();
    assert!((hot.omegas[0] - 0.5).abs() < 1e-3);
    assert!((hot.omegas[1] - 0.5).abs() < 1e-3);
}

#[test]
fn relevance_rejects_degenerate_inputs() {
    let kb = kb_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    assert!(matches!(
        RelevanceWeights::compute(&[0.0, 0.0], &kb, 0.1),
        Err(Error::DegenerateVector { .. })
    ));
    let zero_row = kb_from(&[&[1.0, 0.0], &[0.0, 0.0]]);
    assert!(matches!(
        RelevanceWeights::compute(&[1.0, 1.0], &zero_row, 0.1),
        Err(Error::DegenerateVector { .. })
    ));
    assert!(matches!(
        RelevanceWeights::compute(&[1.0, 1.0], &kb, 0.0),
        Err(Error::InvalidConfig(_))
    ));
    assert!(RelevanceWeights::compute(&[1.0, 1.0], &kb, -1.0).is_err());
}

#[test]
fn one_hot_and_even_aggregation() {
    let kb = kb_from(&[&[1.0, 2.0, 3.0], &[-4.0, 0.5, 6.0]]);
    assert_eq!(aggregate_prior(&[0.0, 1.0], &kb).unwrap(), kb.row(1));
    let mid = aggregate_prior(&[0.5, 0.5], &kb).unwrap();
    for (j, m) in mid.iter().enumerate() {
        assert!((m - (kb.row(0)[j] + kb.row(1)[j]) / 2.0).abs() < 1e-15);
    }
    assert!(matches!(
        aggregate_prior(&[0.2, 0.3, 0.5], &kb),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn aggregation_matches_weighted_sum_oracle() {
    let kb = KnowledgeBase::init_raw(ids(3), 6, 11).unwrap();
    let mut g = rng::seeded(12);
    let raw: Vec<f64> = (0..3).map(|_| g.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let got = aggregate_prior(&w, &kb).unwrap();
    for (j, g) in got.iter().enumerate() {
        let want: f64 = w.iter().enumerate().map(|(i, wi)| wi * kb.row(i)[j]).sum();
        assert!((g - want).abs() < 1e-12);
    }
}

#[test]
fn task_similarity_loss_examples() {
    let b = [1.0, -2.0, 0.5];
    assert!(task_similarity_loss(&b, &b).unwrap().abs() < 1e-15);
    assert!((task_similarity_loss(&[2.0, 1.0, 0.0], &[-1.0, 2.0, 7.0]).unwrap() - 1.0).abs() < 1e-15);
    let neg: Vec<f64> = b.iter().map(|x| -x).collect();
    assert!((task_similarity_loss(&neg, &b).unwrap() - 4.0).abs() < 1e-12);
    assert!(matches!(
        task_similarity_loss(&[0.0; 3], &b),
        Err(Error::DegenerateVector { .. })
    ));
}

#[test]
fn orthogonality_loss_examples() {
    let kb = KnowledgeBase::init(ids(4), 6, 3).unwrap();
    assert!(orthogonality_loss(&kb).unwrap() < 1e-20);
    assert_eq!(orthogonality_loss(&kb_from(&[&[3.0, 4.0]])).unwrap(), 0.0);
    let same = kb_from(&[&[0.6, 0.8], &[0.6, 0.8]]);
    assert!((orthogonality_loss(&same).unwrap() - 2.0).abs() < 1e-12);
    assert!(matches!(
        orthogonality_loss(&kb_from(&[&[1.0, 0.0], &[0.0, 0.0]])),
        Err(Error::DegenerateVector { .. })
    ));
}

#[test]
fn zero_fusion_gives_zero() {
    let f = FusionBlock(TwoLayerMlp::zeros(6, 4, 3));
    assert_eq!(fuse(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &f).unwrap(), vec![0.0; 3]);
    assert!(matches!(
        fuse(&[1.0, 2.0], &[4.0, 5.0, 6.0], &f),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn averaging_fusion_matches_hand_evaluation() {
    let e = 3;
    let h = 2 * e;
    let mut m = TwoLayerMlp::zeros(2 * e, h, e);
    for j in 0..e {
        m.w1.data_mut()[j * h + j] = 0.5;
        m.w1.data_mut()[(e + j) * h + j] = 0.5;
        m.w2.data_mut()[j * e + j] = 1.0;
    }
    let f = FusionBlock(m);
    let kp = [0.2, -1.0, 3.0];
    let ka = [1.0, 0.4, -0.5];
    let got = fuse(&kp, &ka, &f).unwrap();
    for j in 0..e {
        assert!((got[j] - ((kp[j] + ka[j]) / 2.0).tanh()).abs() < 1e-15);
    }
}

#[test]
fn fusion_gradient_reaches_both_inputs() {
    let f = TwoLayerMlp::init(8, 8, 4, 5);
    let mut g = rng::seeded(6);
    let kp = Tensor::randn(&[2, 4], 1.0, &mut g);
    let ka = Tensor::randn(&[2, 4], 1.0, &mut g);
    let mut tape = Tape::new();
    let p = tape.param(&kp);
    let a = tape.param(&ka);
    let vars = f.bind(&mut tape, false);
    let out = graph::fuse(&mut tape, p, a, &vars).unwrap();
    let sq = tape.square(out);
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert!(tape.grad(p).unwrap().iter().any(|x| x.abs() > 1e-8));
    assert!(tape.grad(a).unwrap().iter().any(|x| x.abs() > 1e-8));

    let err = grad_check(
        |tape, v| {
            let vars = f.bind(tape, false);
            let out = graph::fuse(tape, v[0], v[1], &vars)?;
            let sq = tape.square(out);
            Ok(tape.sum(sq))
        },
        &[kp, ka],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn rat_composite_passes_grad_check() {
    let (emb, e, n, t) = (5, 4, 3, 3);
    let gen = TwoLayerMlp::init(emb + e, 2 * e, e, 1);
    let fus = TwoLayerMlp::init(2 * e, 2 * e, e, 2);
    let mut g = rng::seeded(3);
    let mut params = vec![
        Tensor::randn(&[n, emb], 1.0, &mut g),
        Tensor::randn(&[e], 1.0, &mut g),
        KnowledgeBase::init_raw(ids(t), e, 4).unwrap().matrix().clone(),
    ];
    params.extend(gen.tensors().into_iter().cloned());
    params.extend(fus.tensors().into_iter().cloned());
    let err = grad_check(
        |tape, v| {
            let gv = MlpVars { w1: v[3], b1: v[4], w2: v[5], b2: v[6] };
            let fv = MlpVars { w1: v[7], b1: v[8], w2: v[9], b2: v[10] };
            let kp = graph::posterior_knowledge(tape, v[0], v[1], &gv)?;
            let (_, w) = graph::relevance_weights(tape, kp, v[2], 0.5)?;
            let ka = graph::aggregate_prior(tape, w, v[2])?;
            let ts = graph::task_similarity_loss(tape, ka, v[2], 1)?;
            let orth = graph::orthogonality_loss(tape, v[2])?;
            let fused = graph::fuse(tape, kp, ka, &fv)?;
            let sq = tape.mean_squared_terms(fused);
            let a = tape.add(ts, orth)?;
            tape.add(a, sq)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn init_rows_are_orthonormal() {
    let kb = KnowledgeBase::init(ids(5), 8, 9).unwrap();
    for i in 0..5 {
        assert!((norm(kb.row(i)) - 1.0).abs() < 1e-12);
        for j in 0..i {
            assert!(dot(kb.row(i), kb.row(j)).abs() < 1e-12);
        }
    }
    assert!(kb.gram_offdiag_mean() < 1e-12);
    let raw = KnowledgeBase::init_raw(ids(5), 8, 9).unwrap();
    assert!(raw.gram_offdiag_mean() > 0.05);
    assert!(matches!(
        KnowledgeBase::init(ids(9), 8, 0),
        Err(Error::KbAtCapacity { tasks: 9, width: 8 })
    ));
}

#[test]
fn append_to_empty_is_unit_random() {
    let mut kb = KnowledgeBase::empty(6);
    kb.append_task("A", 7).unwrap();
    assert_eq!(kb.len(), 1);
    assert!((norm(kb.row(0)) - 1.0).abs() < 1e-12);
    let mut again = KnowledgeBase::empty(6);
    again.append_task("A", 7).unwrap();
    assert_eq!(kb, again);
}

#[test]
fn append_keeps_rows_and_is_orthogonal() {
    let mut kb = KnowledgeBase::init_raw(ids(3), 6, 21).unwrap();
    let before = kb.clone();
    kb.append_task("NEW", 4).unwrap();
    assert_eq!(kb.len(), 4);
    assert_eq!(kb.task_ids()[3], "NEW");
    for i in 0..3 {
        assert_eq!(kb.row(i).to_vec(), before.row(i).to_vec());
        assert!(cos(kb.row(3), kb.row(i)).abs() <= 1e-10);
    }
    let mean_norm = (0..3).map(|i| norm(before.row(i))).sum::<f64>() / 3.0;
    assert!((norm(kb.row(3)) - mean_norm).abs() < 1e-12);
}

#[test]
fn append_errors() {
    let mut kb = KnowledgeBase::init(ids(2), 3, 0).unwrap();
    assert!(matches!(kb.append_task("T1", 0), Err(Error::DuplicateTask(_))));
    kb.append_task("T3", 0).unwrap();
    let err = kb.append_task("T4", 0).unwrap_err();
    assert!(err.to_string().contains("knowledge base at capacity"));
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n).prop_filter("nonzero", |v| norm(v) > 1e-3)
}

proptest! {
    #[test]
    fn weights_sum_to_one_and_follow_argmax(
        k in vec_strategy(4),
        seed in 0u64..1000,
        tau in 0.05f64..5.0,
    ) {
        let kb = KnowledgeBase::init_raw(ids(3), 4, seed).unwrap();
        let w = RelevanceWeights::compute(&k, &kb, tau).unwrap();
        prop_assert!((w.omegas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (&o, &s) in w.omegas.iter().zip(&w.sims) {
            prop_assert!(o > 0.0 && o < 1.0);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        }
        let am = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        prop_assert_eq!(am(&w.omegas), am(&w.sims));
    }

    #[test]
    fn weights_are_scale_invariant(k in vec_strategy(4), c in 0.01f64..100.0, seed in 0u64..1000) {
        let kb = KnowledgeBase::init_raw(ids(3), 4, seed).unwrap();
        let a = RelevanceWeights::compute(&k, &kb, 0.1).unwrap();
        let scaled: Vec<f64> = k.iter().map(|x| c * x).collect();
        let b = RelevanceWeights::compute(&scaled, &kb, 0.1).unwrap();
        for (x, y) in a.omegas.iter().zip(&b.omegas) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregation_is_linear(
        w1 in prop::collection::vec(0.0f64..1.0, 3),
        w2 in prop::collection::vec(0.0f64..1.0, 3),
        alpha in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let kb = KnowledgeBase::init_raw(ids(3), 5, seed).unwrap();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let lhs = aggregate_prior(&mix, &kb).unwrap();
        let a1 = aggregate_prior(&w1, &kb).unwrap();
        let a2 = aggregate_prior(&w2, &kb).unwrap();
        for j in 0..5 {
            prop_assert!((lhs[j] - (alpha * a1[j] + (1.0 - alpha) * a2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn task_similarity_loss_in_range(a in vec_strategy(3), b in vec_strategy(3)) {
        let l = task_similarity_loss(&a, &b).unwrap();
        prop_assert!((0.0..=4.0 + 1e-12).contains(&l));
        let c = cos(&a, &b);
        prop_assert!((l - (1.0 - c).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn orthogonality_loss_ignores_row_scale(seed in 0u64..1000, row in 0usize..3, c in 0.01f64..100.0) {
        let kb = KnowledgeBase::init_raw(ids(3), 4, seed).unwrap();
        let mut scaled = kb.clone();
        scaled.matrix_mut().row_mut(row).iter_mut().for_each(|x| *x *= c);
        let a = orthogonality_loss(&kb).unwrap();
        let b = orthogonality_loss(&scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }
}
