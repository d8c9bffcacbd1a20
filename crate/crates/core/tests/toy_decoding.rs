//! End-to-end behaviour of the toy recognizer under the decoding pipeline.

use m2r_core::knn::build_token_datastore;
use m2r_core::metrics::{build_report, Scoring};
use m2r_core::model::AsrModel;
use m2r_core::pipeline::run_batch;
use m2r_core::sentence::build_sentence_datastore;
use m2r_core::synth::{benchmark_model_config, generate, CorpusSpec};
use m2r_core::{AudioSegment, DecodeConfig, FailurePolicy, Mode, ToyModel, ToyModelConfig};

fn spec(n_train: usize, n_test: usize) -> CorpusSpec {
    CorpusSpec {
        seed: 19,
        n_train,
        n_test,
        ..CorpusSpec::default()
    }
}

#[test]
fn substitution_rate_tracks_confusion_mass() {
    // No events and no prompts: every error is a sampled substitution.
    let model = ToyModel::new(ToyModelConfig::new(64, 32, 19).with_confusable_pairs(0.15)).unwrap();
    let bench = generate(&spec(10, 200), model).unwrap();
    let config = DecodeConfig::default()
        .with_mode(Mode::Baseline)
        .bounded_by(&bench.test);
    let out = run_batch(&bench.model, bench.test.utterances(), None, &bench.train, None, &config).unwrap();
    let report = build_report(&out.results, &bench.test, &Scoring::Tokens).unwrap();
    let c = report.aggregate_counts;
    assert_eq!((c.deletions, c.insertions), (0, 0));
    let rate = 100.0 * c.substitutions as f64 / c.ref_len as f64;
    assert!((rate - 15.0).abs() <= 2.0, "substitution CER {rate:.2}%");
}

#[test]
fn noiseless_model_is_exact_in_every_mode() {
    let model = ToyModel::new(ToyModelConfig::new(64, 32, 4)).unwrap();
    let bench = generate(&spec(120, 40), model).unwrap();
    let train = bench.train.utterances();
    let sentences = build_sentence_datastore(&bench.model, train, FailurePolicy::Abort)
        .unwrap()
        .store;
    let tokens = build_token_datastore(&bench.model, train, FailurePolicy::Abort)
        .unwrap()
        .store;
    for mode in Mode::ALL {
        let config = DecodeConfig::default().with_mode(mode).bounded_by(&bench.test);
        let out = run_batch(
            &bench.model,
            bench.test.utterances(),
            Some(&sentences),
            &bench.train,
            Some(&tokens),
            &config,
        )
        .unwrap();
        for (res, utt) in out.results.iter().zip(bench.test.utterances()) {
            assert_eq!(res.hypothesis, utt.transcript.tokens, "{mode} on {}", utt.id());
        }
    }
}

#[test]
fn batch_is_deterministic_and_order_preserving() {
    let model = ToyModel::new(benchmark_model_config(2)).unwrap();
    let bench = generate(&spec(200, 100), model).unwrap();
    let train = bench.train.utterances();
    let sentences = build_sentence_datastore(&bench.model, train, FailurePolicy::Abort)
        .unwrap()
        .store;
    let tokens = build_token_datastore(&bench.model, train, FailurePolicy::Abort)
        .unwrap()
        .store;
    let run = |mode: Mode, parallel: bool| {
        let config = DecodeConfig {
            parallel,
            ..DecodeConfig::default().with_mode(mode).bounded_by(&bench.test)
        };
        run_batch(
            &bench.model,
            bench.test.utterances(),
            Some(&sentences),
            &bench.train,
            Some(&tokens),
            &config,
        )
        .unwrap()
        .results
    };
    let hyps = |r: &[m2r_core::DecodeResult]| {
        r.iter()
            .map(|x| (x.utterance_id.clone(), x.hypothesis.clone(), x.n_prompts_used))
            .collect::<Vec<_>>()
    };
    for mode in Mode::ALL {
        let a = run(mode, false);
        assert_eq!(hyps(&a), hyps(&run(mode, false)));
        assert_eq!(hyps(&a), hyps(&run(mode, true)));
        let ids: Vec<&str> = a.iter().map(|r| r.utterance_id.as_str()).collect();
        let expected: Vec<&str> = bench.test.utterances().iter().map(|u| u.id()).collect();
        assert_eq!(ids, expected);
    }
}

#[test]
fn prompted_results_respect_budget_and_exclude_prefix() {
    let model = ToyModel::new(benchmark_model_config(5)).unwrap();
    let bench = generate(&spec(300, 50), model).unwrap();
    let sentences = build_sentence_datastore(&bench.model, bench.train.utterances(), FailurePolicy::Abort)
        .unwrap()
        .store;
    let config = DecodeConfig::default().with_mode(Mode::IclOnly).bounded_by(&bench.test);
    let out = run_batch(
        &bench.model,
        bench.test.utterances(),
        Some(&sentences),
        &bench.train,
        None,
        &config,
    )
    .unwrap();
    assert!(out.results.iter().any(|r| r.n_prompts_used > 0));
    for r in &out.results {
        assert!(r.n_prompts_used <= 10);
        assert!(r.audio_duration_s + r.prompt_audio_s <= 30.0 + 1e-9);
        assert!(r.wall_time_s > 0.0);
        assert!(!r.hypothesis.contains(&bench.model.start_token()));
        assert!(r.hypothesis.len() <= config.max_decode_len);
    }
}

#[test]
fn encoder_is_frame_local() {
    let model = ToyModel::new(benchmark_model_config(8)).unwrap();
    let bench = generate(&spec(10, 2), model).unwrap();
    let [a, b] = [&bench.test.utterances()[0].audio, &bench.test.utterances()[1].audio];
    let ab = AudioSegment::concat("ab", &[a, b]).unwrap();
    let ea = bench.model.encode(a).unwrap();
    let eb = bench.model.encode(b).unwrap();
    let eab = bench.model.encode(&ab).unwrap();
    assert_eq!(eab.valid_frame_count, a.num_frames() + b.num_frames());
    let joined: Vec<f32> = ea
        .frame_embeddings
        .iter()
        .chain(&eb.frame_embeddings)
        .copied()
        .collect();
    assert_eq!(eab.frame_embeddings, joined);
}
