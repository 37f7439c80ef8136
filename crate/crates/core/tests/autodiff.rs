mod common;

use std::time::Instant;

use common::{worst_error, GRAD_TOL, OPS};
use fewshot_qa::autodiff::{AdamState, Graph, Tensor};
use fewshot_qa::model::{ModelConfig, Seq2SeqModel};
use fewshot_qa::prompting::{compute_seq2seq_loss, compute_span_loss, PromptPair, ObjectiveKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for (name, case) in OPS {
        let worst = worst_error(*case, 24);
        if worst > GRAD_TOL {
            failures.push(format!("{name}: {worst:.3e}"));
        }
    }
    assert!(failures.is_empty(), "ops over tolerance: {failures:?}");
    assert!(t0.elapsed().as_secs() < 60, "suite took {:?}", t0.elapsed());
}

#[test]
fn square_at_three() {
    let x = Tensor::parameter(vec![1], vec![3.0f64]).unwrap();
    let mut g = Graph::new();
    let v = g.leaf(&x);
    let y = g.mul(v, v).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(v), vec![6.0]);
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let a = Tensor::parameter(vec![2], vec![1.0f64, 2.0]).unwrap();
    let b = Tensor::parameter(vec![3], vec![4.0f64, 5.0, 6.0]).unwrap();
    let mut g = Graph::new();
    let va = g.leaf(&a);
    let vb = g.leaf(&b);
    let s = g.sum(va);
    g.backward(s).unwrap();
    assert_eq!(g.grad(vb), vec![0.0; 3]);
}

#[test]
fn adam_first_step_is_signed_learning_rate() {
    let mut p = vec![Tensor::parameter(vec![3], vec![0.5f64, -1.0, 2.0]).unwrap()];
    p[0].accumulate_grad(&[0.3, -7.0, 1e-3]).unwrap();
    let mut opt = AdamState::new(&p, 0.01);
    opt.step(&mut p).unwrap();
    let want = [0.5 - 0.01, -1.0 + 0.01, 2.0 - 0.01];
    for (got, want) in p[0].values().iter().zip(want) {
        // eps in the denominator shifts the step by at most lr·eps/|g|.
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }
}

fn small_config(span_head: bool) -> ModelConfig {
    ModelConfig {
        n_encoder_layers: 2,
        n_decoder_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 20,
        max_positions: 16,
        dropout_rate: 0.0,
        span_head,
        init_std: 0.3,
    }
}

/// Central differences on sampled scalar parameters of the full model.
fn spot_check(pair: &PromptPair, span_head: bool) -> usize {
    let mut model = Seq2SeqModel::<f64>::new(small_config(span_head), 5).unwrap();
    let loss_of = |m: &Seq2SeqModel<f64>| {
        let t = if span_head {
            compute_span_loss(m, pair).unwrap()
        } else {
            compute_seq2seq_loss(m, pair).unwrap()
        };
        t.values()[0]
    };
    model
        .accumulate_gradients(|g, m, b| {
            fewshot_qa::prompting::batch_loss(g, m, b, &[pair], &mut fewshot_qa::model::Dropout::off())
        })
        .unwrap();
    let analytic: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.grad().unwrap().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    let mut checked = 0;
    for _ in 0..40 {
        let pi = rng.random_range(0..model.parameters().len());
        let ei = rng.random_range(0..model.parameters()[pi].len());
        let orig = model.parameters()[pi].values()[ei];
        model.parameters_mut()[pi].values_mut()[ei] = orig + h;
        let plus = loss_of(&model);
        model.parameters_mut()[pi].values_mut()[ei] = orig - h;
        let minus = loss_of(&model);
        model.parameters_mut()[pi].values_mut()[ei] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[pi][ei];
        let scale = a.abs().max(numeric.abs());
        assert!(
            (a - numeric).abs() <= 1e-4 * scale + 1e-8,
            "{}[{ei}]: analytic {a} numeric {numeric}",
            model.parameter_names()[pi]
        );
        checked += 1;
    }
    checked
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let pair = PromptPair {
        objective: ObjectiveKind::QuestionThenAnswer,
        input_ids: vec![7, 9, 11, 3, 13, 8, 15],
        target_ids: Some(vec![7, 9, 12, 2]),
        gold_span: None,
        context_start: 4,
        example_id: "g".into(),
    };
    assert!(spot_check(&pair, false) >= 10);
    let span = PromptPair {
        objective: ObjectiveKind::SpanSelection,
        target_ids: None,
        gold_span: Some((5, 6)),
        ..pair
    };
    assert!(spot_check(&span, true) >= 10);
}
