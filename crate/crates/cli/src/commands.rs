use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use m2r_core::knn::build_token_datastore;
use m2r_core::metrics::{build_report, relative_reduction, EvalReport, MappingTable, Normalizer, Scoring, Vocabulary};
use m2r_core::model::AsrModel;
use m2r_core::pipeline::{run_batch, BatchOutput};
use m2r_core::sentence::{build_sentence_datastore, Built};
use m2r_core::storage::{import_exports, load_sentence_store, load_token_store, save_sentence_store, save_token_store};
use m2r_core::synth::{generate, toy_vocabulary, Benchmark};
use m2r_core::{DecodeConfig, Mode, SentenceDatastore, TokenDatastore, ToyModel};

use crate::config::{check_sweep_values, Axis, RunConfig, ScoringUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    Sentence,
    Token,
}

/// Synthetic benchmark plus whichever datastores the requested modes need.
struct Session {
    bench: Benchmark,
    sentences: Option<SentenceDatastore>,
    tokens: Option<TokenDatastore>,
}

fn benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    let model = ToyModel::new(cfg.model_config())?;
    Ok(generate(&cfg.corpus_spec(), model)?)
}

fn report_skipped(what: &str, skipped: &[(String, String)]) {
    for (id, why) in skipped {
        eprintln!("warning: {what}: skipped {id}: {why}");
    }
}

impl Session {
    fn open(cfg: &RunConfig, modes: &[Mode]) -> Result<Self> {
        let bench = benchmark(cfg)?;
        let policy = cfg.decode_config(Mode::M2r).on_error;
        let train = bench.train.utterances();

        let sentences = if modes.iter().any(|m| m.uses_icl()) {
            Some(match &cfg.stores.sentence {
                Some(path) => load_sentence_store(path).with_context(|| format!("loading {}", path.display()))?,
                None => {
                    let Built { store, skipped } = build_sentence_datastore(&bench.model, train, policy)?;
                    report_skipped("sentence store", &skipped);
                    store
                }
            })
        } else {
            None
        };
        let tokens = if modes.iter().any(|m| m.uses_knn()) {
            Some(match &cfg.stores.token {
                Some(path) => load_token_store(path).with_context(|| format!("loading {}", path.display()))?,
                None => {
                    let Built { store, skipped } = build_token_datastore(&bench.model, train, policy)?;
                    report_skipped("token store", &skipped);
                    store
                }
            })
        } else {
            None
        };

        if let Some(s) = &sentences {
            ensure!(
                s.dim() == bench.model.encoder_dim(),
                "sentence store has dimension {}, model encoder has {}",
                s.dim(),
                bench.model.encoder_dim()
            );
        }
        if let Some(t) = &tokens {
            ensure!(
                t.dim() == bench.model.tap_dim() && t.vocab_size() == bench.model.vocab_size(),
                "token store ({} dims, vocab {}) does not match the model ({} dims, vocab {})",
                t.dim(),
                t.vocab_size(),
                bench.model.tap_dim(),
                bench.model.vocab_size()
            );
        }
        Ok(Self {
            bench,
            sentences,
            tokens,
        })
    }

    fn decode(&self, cfg: &RunConfig, config: DecodeConfig) -> Result<BatchOutput> {
        let config = if cfg.decode.max_decode_len.is_none() {
            config.bounded_by(self.bench.test.utterances())
        } else {
            config
        };
        let out = run_batch(
            &self.bench.model,
            self.bench.test.utterances(),
            self.sentences.as_ref(),
            &self.bench.train,
            self.tokens.as_ref(),
            &config,
        )
        .with_context(|| format!("decoding in mode {}", config.mode))?;
        report_skipped(config.mode.as_str(), &out.failures);
        Ok(out)
    }

    fn evaluate(&self, cfg: &RunConfig, scoring: &Scoring, config: DecodeConfig) -> Result<(EvalReport, BatchOutput)> {
        let out = self.decode(cfg, config)?;
        let report = build_report(&out.results, &self.bench.test, scoring)?;
        Ok((report, out))
    }
}

fn scoring(cfg: &RunConfig) -> Result<Scoring> {
    Ok(match cfg.scoring.unit {
        ScoringUnit::Tokens => Scoring::Tokens,
        ScoringUnit::Characters => {
            let vocab = match &cfg.scoring.vocab {
                Some(path) => {
                    Vocabulary::parse(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
                }
                None => toy_vocabulary(64),
            };
            let mut normalizer = Normalizer::new();
            for path in &cfg.scoring.tables {
                normalizer = normalizer.with_table(MappingTable::load(path)?);
            }
            Scoring::Characters { vocab, normalizer }
        }
    })
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn failures_text(out: &BatchOutput) -> String {
    out.failures.iter().map(|(id, why)| format!("{id}\t{why}\n")).collect()
}

// ---------------------------------------------------------------------------

/// Builds one datastore from the synthetic training split or from an export
/// stream and writes it to `out`.
pub fn build(cfg: &RunConfig, kind: StoreKind, exports: Option<&Path>, out: &Path) -> Result<String> {
    let policy = cfg.decode_config(Mode::M2r).on_error;
    let mut summary = String::new();
    match exports {
        Some(path) => {
            let imported = import_exports(path).with_context(|| format!("importing {}", path.display()))?;
            let utts = imported.corpus.utterances();
            build_into(&imported.model, utts, kind, policy, out, &mut summary)?;
        }
        None => {
            let bench = benchmark(cfg)?;
            build_into(&bench.model, bench.train.utterances(), kind, policy, out, &mut summary)?;
        }
    }
    Ok(summary)
}

fn build_into<M: AsrModel>(
    model: &M,
    utts: &[m2r_core::Utterance],
    kind: StoreKind,
    policy: m2r_core::FailurePolicy,
    out: &Path,
    summary: &mut String,
) -> Result<()> {
    match kind {
        StoreKind::Sentence => {
            let Built { store, skipped } = build_sentence_datastore(model, utts, policy)?;
            report_skipped("sentence store", &skipped);
            save_sentence_store(&store, out)?;
            // Smoke check: the first entry must retrieve itself.
            let reloaded = load_sentence_store(out)?;
            let top = reloaded.retrieve_by_key(reloaded.index().key(0), 1, None)?;
            let self_hit =
                top.first().map(|e| e.utterance_id.as_str()) == Some(reloaded.entries()[0].utterance_id.as_str());
            ensure!(self_hit, "self-retrieval smoke check failed on {}", out.display());
            let _ = writeln!(summary, "kind=sentence");
            let _ = writeln!(summary, "entries={}", store.len());
            let _ = writeln!(summary, "dim={}", store.dim());
            let _ = writeln!(summary, "skipped={}", skipped.len());
            let _ = writeln!(summary, "self_retrieval=ok");
        }
        StoreKind::Token => {
            let Built { store, skipped } = build_token_datastore(model, utts, policy)?;
            report_skipped("token store", &skipped);
            save_token_store(&store, out)?;
            let _ = writeln!(summary, "kind=token");
            let _ = writeln!(summary, "entries={}", store.len());
            let _ = writeln!(summary, "dim={}", store.dim());
            let _ = writeln!(summary, "vocab_size={}", store.vocab_size());
            let _ = writeln!(summary, "skipped={}", skipped.len());
        }
    }
    let _ = writeln!(summary, "path={}", out.display());
    Ok(())
}

/// Decodes the test split in the configured mode and writes hypotheses as
/// `utterance_id<TAB>prompts<TAB>tokens`.
pub fn decode(cfg: &RunConfig) -> Result<PathBuf> {
    let mode = cfg.decode.mode;
    let session = Session::open(cfg, &[mode])?;
    let out = session.decode(cfg, cfg.decode_config(mode))?;
    let mut text = String::from("utterance_id\tprompts\thypothesis\n");
    for r in &out.results {
        let hyp: Vec<String> = r.hypothesis.iter().map(u32::to_string).collect();
        let _ = writeln!(text, "{}\t{}\t{}", r.utterance_id, r.n_prompts_used, hyp.join(" "));
    }
    let dir = out_dir(cfg)?;
    let path = dir.join(format!("decode_{mode}.tsv"));
    write(&path, text.as_bytes())?;
    if !out.failures.is_empty() {
        write(
            &dir.join(format!("failures_{mode}.tsv")),
            failures_text(&out).as_bytes(),
        )?;
    }
    Ok(path)
}

fn fmt_rtf(report: &EvalReport, timing: bool) -> String {
    if timing {
        format!("{:.6}", report.rtf)
    } else {
        "NA".to_owned()
    }
}

/// Evaluates every configured mode and writes per-mode CSVs and summaries
/// plus a comparison table with relative reduction against the baseline.
pub fn eval(cfg: &RunConfig) -> Result<String> {
    let session = Session::open(cfg, &cfg.modes)?;
    let scoring = scoring(cfg)?;
    let dir = out_dir(cfg)?.to_path_buf();

    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let (report, out) = session.evaluate(cfg, &scoring, cfg.decode_config(mode))?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv, cfg.timing)?;
        write(&dir.join(format!("eval_{mode}.csv")), &csv)?;
        let mut summary = format!("mode={mode}\n");
        summary.push_str(&report.summary(cfg.timing));
        let _ = writeln!(summary, "failures={}", out.failures.len());
        write(&dir.join(format!("eval_{mode}.summary")), summary.as_bytes())?;
        if !out.failures.is_empty() {
            write(
                &dir.join(format!("failures_{mode}.tsv")),
                failures_text(&out).as_bytes(),
            )?;
        }
        rows.push((mode, report));
    }

    let baseline = rows
        .iter()
        .find(|(m, _)| *m == Mode::Baseline)
        .map(|(_, r)| r.aggregate_cer);
    let mut table = String::from("mode,cer,rr_vs_baseline,substitutions,deletions,insertions,ref_len,rtf\n");
    for (mode, report) in &rows {
        let rr = match baseline {
            Some(base) => relative_reduction(base, report.aggregate_cer)
                .map(|rr| format!("{rr:.2}"))
                .unwrap_or_else(|_| "NA".into()),
            None => "NA".into(),
        };
        let c = report.aggregate_counts;
        let _ = writeln!(
            table,
            "{mode},{:.4},{rr},{},{},{},{},{}",
            report.aggregate_cer,
            c.substitutions,
            c.deletions,
            c.insertions,
            c.ref_len,
            fmt_rtf(report, cfg.timing)
        );
    }
    write(&dir.join("comparison.csv"), table.as_bytes())?;
    Ok(table)
}

/// One evaluation per axis value; writes `(value, cer, rtf, S, D, I)` rows.
pub fn sweep(cfg: &RunConfig) -> Result<String> {
    let Some(axis) = cfg.sweep.axis else {
        bail!("no sweep axis given (use --axis or [sweep] axis)");
    };
    let values = &cfg.sweep.values;
    check_sweep_values(axis, values)?;

    let mode = cfg.decode.mode;
    let session = Session::open(cfg, &[mode])?;
    let scoring = scoring(cfg)?;
    let dir = out_dir(cfg)?.to_path_buf();

    let mut table = format!("{axis},cer,rtf,substitutions,deletions,insertions,ref_len\n");
    for &value in values {
        let mut config = cfg.decode_config(mode);
        match axis {
            Axis::NMax => config.n_max = value as usize,
            Axis::Lambda => config.knn.lambda = value,
            Axis::Tau => config.knn.tau = value,
        }
        let (report, _) = session.evaluate(cfg, &scoring, config)?;
        let c = report.aggregate_counts;
        let _ = writeln!(
            table,
            "{value},{:.4},{},{},{},{},{}",
            report.aggregate_cer,
            fmt_rtf(&report, cfg.timing),
            c.substitutions,
            c.deletions,
            c.insertions,
            c.ref_len
        );
    }
    write(&dir.join(format!("sweep_{axis}.csv")), table.as_bytes())?;
    Ok(table)
}
