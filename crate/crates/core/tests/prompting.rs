use fewshot_qa::autodiff::AdamState;
use fewshot_qa::decoding::predict_span;
use fewshot_qa::model::{Dropout, ModelConfig, Seq2SeqModel};
use fewshot_qa::prompting::{
    batch_loss, build_input, build_pair, build_target, compute_span_loss, ObjectiveKind, PromptPair, Target,
};
use fewshot_qa::tokenizer::{Vocab, EOS_ID};

const Q: &str = "who is x";
const C: &str = "x is y.";

fn vocab() -> Vocab {
    Vocab::build(&["Question: Answer: Context: who is x y river north tower city"], 400).unwrap()
}

#[test]
fn input_templates() {
    assert_eq!(
        build_input(Q, C, ObjectiveKind::QuestionThenAnswer),
        "Question: who is x Answer: <mask>. Context: x is y."
    );
    assert_eq!(build_input(Q, C, ObjectiveKind::SpanSelection), "Question: who is x [S] Context: x is y.");
    assert_eq!(build_input(Q, C, ObjectiveKind::AnswerOnlyGeneration), "Question: who is x Context: x is y.");
}

#[test]
fn target_templates() {
    let v = vocab();
    let t = |o| build_target(&v, Q, "y", C, o).unwrap();
    assert_eq!(t(ObjectiveKind::QuestionThenAnswer), Target::Text("Question: who is x Answer: y.".into()));
    assert_eq!(t(ObjectiveKind::SentinelAnswer), Target::Text("<extra_id_0> Answer: y.".into()));
    // The span points at the first "y" inside the context segment.
    let Target::Span(s, e) = t(ObjectiveKind::SpanSelection) else {
        panic!("span selection yields a span")
    };
    let ids = v.encode(&build_input(Q, C, ObjectiveKind::SpanSelection)).unwrap();
    assert_eq!((s, e), (ids.len() - 2, ids.len() - 2));
    assert_eq!(v.decode(&ids[s..=e]).unwrap(), "y");
}

fn tiny() -> ModelConfig {
    ModelConfig {
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        vocab_size: 400,
        max_positions: 64,
        dropout_rate: 0.0,
        span_head: false,
        init_std: 0.125,
    }
}

fn train_step(model: &mut Seq2SeqModel<f64>, opt: &mut AdamState<f64>, pair: &PromptPair) -> f64 {
    model.zero_grads();
    let loss = model
        .accumulate_gradients(|g, m, b| batch_loss(g, m, b, &[pair], &mut Dropout::off()))
        .unwrap();
    opt.step(model.parameters_mut()).unwrap();
    loss
}

#[test]
fn overfitting_one_pair_lowers_loss_every_step() {
    let v = vocab();
    let answers = vec!["y".to_string()];
    let pair = build_pair(&v, "p", Q, &answers, C, ObjectiveKind::QuestionThenAnswer, 64).unwrap();
    assert_eq!(pair.target_ids.as_ref().unwrap().last(), Some(&EOS_ID));
    let mut model = Seq2SeqModel::<f64>::new(tiny(), 1).unwrap();
    let mut opt = AdamState::new(model.parameters(), 1e-3);
    let losses: Vec<f64> = (0..51).map(|_| train_step(&mut model, &mut opt, &pair)).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss rose: {losses:?}");
    }
}

#[test]
fn overfit_span_head_finds_gold_span() {
    let v = vocab();
    let answers = vec!["north tower".to_string()];
    let context = "x is by the river north tower city.";
    let pair = build_pair(&v, "s", Q, &answers, context, ObjectiveKind::SpanSelection, 64).unwrap();
    let gold = pair.gold_span.unwrap();
    let mut model = Seq2SeqModel::<f64>::new(ModelConfig { span_head: true, ..tiny() }, 2).unwrap();
    let before = compute_span_loss(&model, &pair).unwrap().values()[0];
    let mut opt = AdamState::new(model.parameters(), 1e-3);
    for _ in 0..100 {
        train_step(&mut model, &mut opt, &pair);
    }
    assert!(compute_span_loss(&model, &pair).unwrap().values()[0] < before);
    let (start, end) = model.span_head_forward(&pair.input_ids).unwrap();
    assert_eq!(predict_span(&start, &end, pair.context_start..pair.input_ids.len(), None), Some(gold));
    assert_eq!(v.decode(&pair.input_ids[gold.0..=gold.1]).unwrap(), "north tower");
}

#[test]
fn long_contexts_are_truncated_to_the_bound() {
    let v = vocab();
    let context = "river north tower city ".repeat(30);
    let answers = vec!["river".to_string()];
    for o in ObjectiveKind::ALL {
        let p = build_pair(&v, "t", Q, &answers, &context, o, 20).unwrap();
        assert_eq!(p.input_ids.len(), 20, "{o}");
        assert!(p.context_start < 20);
    }
    // An answer cut off by truncation cannot be selected.
    let far = vec!["x".to_string()];
    let late = format!("{context} x");
    assert!(build_pair(&v, "t", Q, &far, &late, ObjectiveKind::SpanSelection, 20).is_err());
}
