//! Runs all four decoding modes on the default synthetic benchmark and
//! prints corpus-level error counts.
//!
//! ```text
//! cargo run --release -p m2r-core --example benchmark [seed]
//! ```

use m2r_core::knn::build_token_datastore;
use m2r_core::metrics::{build_report, Scoring};
use m2r_core::pipeline::run_batch;
use m2r_core::sentence::build_sentence_datastore;
use m2r_core::synth::{benchmark_model_config, generate, CorpusSpec};
use m2r_core::{DecodeConfig, FailurePolicy, Mode, ToyModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let spec = CorpusSpec {
        seed,
        ..CorpusSpec::default()
    };
    let model = ToyModel::new(benchmark_model_config(seed))?;
    let bench = generate(&spec, model)?;
    let train = bench.train.utterances();
    let sentences = build_sentence_datastore(&bench.model, train, FailurePolicy::Abort)?.store;
    let tokens = build_token_datastore(&bench.model, train, FailurePolicy::Abort)?.store;

    println!("mode       cer      S     D     I    rtf");
    for mode in Mode::ALL {
        let config = DecodeConfig {
            parallel: true,
            ..DecodeConfig::default().with_mode(mode).bounded_by(&bench.test)
        };
        let out = run_batch(
            &bench.model,
            bench.test.utterances(),
            Some(&sentences),
            &bench.train,
            Some(&tokens),
            &config,
        )?;
        let report = build_report(&out.results, &bench.test, &Scoring::Tokens)?;
        let c = report.aggregate_counts;
        println!(
            "{:<9} {:6.2} {:5} {:5} {:5}  {:.5}",
            mode.as_str(),
            report.aggregate_cer,
            c.substitutions,
            c.deletions,
            c.insertions,
            report.rtf
        );
    }

    println!("\nn_max sweep");
    for mode in [Mode::IclOnly, Mode::M2r] {
        for n_max in [0, 2, 4, 6, 8, 10] {
            let config = DecodeConfig {
                n_max,
                ..DecodeConfig::default().with_mode(mode).bounded_by(&bench.test)
            };
            let out = run_batch(
                &bench.model,
                bench.test.utterances(),
                Some(&sentences),
                &bench.train,
                Some(&tokens),
                &config,
            )?;
            let report = build_report(&out.results, &bench.test, &Scoring::Tokens)?;
            println!(
                "{:<9} {:2} {:6.2} {:.6}",
                mode.as_str(),
                n_max,
                report.aggregate_cer,
                report.rtf
            );
        }
    }
    Ok(())
}
