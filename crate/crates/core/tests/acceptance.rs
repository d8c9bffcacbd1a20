//! End-to-end acceptance suite.
//!
//! Runs as a plain binary (`harness = false`) so criteria execute one after
//! another: several of them compare wall-clock measurements, which must not
//! compete with each other for cores. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use m2r_core::corpus::Transcript;
use m2r_core::index::FlatIndex;
use m2r_core::knn::{aggregate_neighbors, build_token_datastore, knn_distribution, KnnParams, TokenDatastore};
use m2r_core::metrics::{build_report, levenshtein_align, relative_reduction, EvalReport, Scoring};
use m2r_core::pipeline::run_batch;
use m2r_core::sentence::{build_sentence_datastore, pack_prompts, SentenceDatastore, SentenceEntry};
use m2r_core::storage::{decode_datastore, encode_sentence_store, encode_token_store, Datastore};
use m2r_core::synth::{benchmark_model_config, generate, Benchmark, CorpusSpec};
use m2r_core::{DecodeConfig, DecodeResult, FailurePolicy, Mode, ToyModel};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------

/// Baseline CER and `(new CER, reported reduction)` pairs per column.
type RrColumn<'a> = (&'a str, f64, &'a [(f64, f64)]);

fn rr_arithmetic() -> Check {
    let start = Instant::now();
    let columns: [RrColumn; 2] = [
        (
            "Ji-Lu",
            31.31,
            &[(28.61, 8.62), (26.75, 14.56), (27.77, 11.30), (24.11, 22.99)],
        ),
        ("Southwestern", 31.57, &[(28.59, 9.44), (24.00, 23.98), (21.43, 32.12)]),
    ];
    let mut worst = 0.0f64;
    for (name, base, rows) in columns {
        for &(cer, expected) in rows {
            let rr = relative_reduction(base, cer).map_err(|e| e.to_string())?;
            worst = worst.max((rr - expected).abs());
            ensure((rr - expected).abs() <= 0.01, || {
                format!("{name}: RR({base} -> {cer}) = {rr:.4}, expected {expected}")
            })?;
        }
    }
    within_time(start.elapsed(), 1.0)?;
    Ok(format!("7 values, max |error| {worst:.4} points"))
}

// ---------------------------------------------------------------------------

fn decode_all(
    bench: &Benchmark,
    sentences: &SentenceDatastore,
    tokens: &TokenDatastore,
    config: &DecodeConfig,
) -> Result<Vec<DecodeResult>, String> {
    run_batch(
        &bench.model,
        bench.test.utterances(),
        Some(sentences),
        &bench.train,
        Some(tokens),
        config,
    )
    .map(|out| out.results)
    .map_err(|e| e.to_string())
}

fn same_hypotheses(a: &[DecodeResult], b: &[DecodeResult]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.utterance_id == y.utterance_id && x.hypothesis == y.hypothesis)
}

fn mode_lattice() -> Check {
    let start = Instant::now();
    let spec = CorpusSpec {
        seed: 11,
        n_train: 600,
        n_test: 200,
        ..CorpusSpec::default()
    };
    let model = ToyModel::new(benchmark_model_config(spec.seed)).map_err(|e| e.to_string())?;
    let bench = generate(&spec, model).map_err(|e| e.to_string())?;
    let train = bench.train.utterances();
    let sentences = build_sentence_datastore(&bench.model, train, FailurePolicy::Abort)
        .map_err(|e| e.to_string())?
        .store;
    let tokens = build_token_datastore(&bench.model, train, FailurePolicy::Abort)
        .map_err(|e| e.to_string())?
        .store;

    let base = DecodeConfig::default().bounded_by(&bench.test);
    let cfg = |mode: Mode, lambda: f64, n_max: usize| DecodeConfig {
        mode,
        n_max,
        knn: KnnParams { lambda, ..base.knn },
        ..base.clone()
    };
    let run = |c: DecodeConfig| decode_all(&bench, &sentences, &tokens, &c);

    let baseline = run(cfg(Mode::Baseline, 0.3, 10))?;
    let knn_only = run(cfg(Mode::KnnOnly, 0.3, 10))?;
    let icl_only = run(cfg(Mode::IclOnly, 0.3, 10))?;
    ensure(same_hypotheses(&baseline, &run(cfg(Mode::M2r, 0.0, 0))?), || {
        "baseline differs from m2r(lambda=0, n_max=0)".into()
    })?;
    ensure(same_hypotheses(&knn_only, &run(cfg(Mode::M2r, 0.3, 0))?), || {
        "knn_only differs from m2r(n_max=0)".into()
    })?;
    ensure(same_hypotheses(&icl_only, &run(cfg(Mode::M2r, 0.0, 10))?), || {
        "icl_only differs from m2r(lambda=0)".into()
    })?;
    // The identities would hold vacuously if no mode changed anything.
    ensure(
        !same_hypotheses(&baseline, &knn_only) && !same_hypotheses(&baseline, &icl_only),
        || "augmented modes never changed a hypothesis".into(),
    )?;
    within_time(start.elapsed(), 30.0)?;
    Ok(format!(
        "200 utterances, 3 identities token-identical, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn knn_math() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = 64;
    let mut store = TokenDatastore::new(8, vocab).map_err(|e| e.to_string())?;
    let keys: Vec<Vec<f32>> = (0..2000)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let values: Vec<u32> = (0..2000).map(|_| rng.random_range(0..vocab as u32)).collect();
    store.extend(&keys, &values).map_err(|e| e.to_string())?;

    let mut worst_norm = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..500 {
        let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.5f32..1.5)).collect();
        let params = KnnParams {
            k: rng.random_range(1..=32),
            tau: rng.random_range(0.05..5.0),
            lambda: 0.3,
        };
        let p = knn_distribution(&store, &q, &params).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((p.probs().iter().sum::<f64>() - 1.0).abs());

        let labelled: Vec<(u32, f64)> = (0..params.k)
            .map(|_| (rng.random_range(0..vocab as u32), rng.random_range(0.0..10.0)))
            .collect();
        let shift = rng.random_range(-50.0..50.0);
        let shifted: Vec<(u32, f64)> = labelled.iter().map(|&(t, d)| (t, d + shift)).collect();
        let a = aggregate_neighbors(&labelled, vocab, params.tau).map_err(|e| e.to_string())?;
        let b = aggregate_neighbors(&shifted, vocab, params.tau).map_err(|e| e.to_string())?;
        for (x, y) in a.probs().iter().zip(b.probs()) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    ensure(worst_norm <= 1e-9, || format!("normalization error {worst_norm:e}"))?;
    ensure(worst_shift <= 1e-9, || {
        format!("shift-invariance error {worst_shift:e}")
    })?;

    let two = aggregate_neighbors(&[(3, 0.0), (5, 1.0)], 8, 1.0).map_err(|e| e.to_string())?;
    let expected = 1.0 / (1.0 + (-1.0f64).exp());
    let err = (two.probs()[3] - expected)
        .abs()
        .max((two.probs()[5] - (1.0 - expected)).abs());
    ensure(err <= 1e-12, || format!("two-neighbour case off by {err:e}"))?;
    Ok(format!(
        "normalization {worst_norm:.1e}, shift {worst_shift:.1e}, two-neighbour {err:.1e}"
    ))
}

// ---------------------------------------------------------------------------

fn index_correctness() -> Check {
    let start = Instant::now();
    let (n, dim, queries, k) = (100_000, 32, 1000, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let index = FlatIndex::from_raw(dim, data).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for q in 0..queries {
        // Every tenth query is a stored key, exercising exact-zero distances.
        let query: Vec<f32> = if q % 10 == 0 {
            index.key(rng.random_range(0..n)).to_vec()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        let fast = index.query_topk(&query, k).map_err(|e| e.to_string())?;
        let oracle = index.query_topk_oracle(&query, k).map_err(|e| e.to_string())?;
        let ids = |v: &[m2r_core::Neighbor]| v.iter().map(|x| x.id).collect::<Vec<_>>();
        if ids(&fast) != ids(&oracle) || fast.len() != k {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || {
        format!("{mismatches} of {queries} queries differ from the oracle")
    })?;
    within_time(start.elapsed(), 60.0)?;
    Ok(format!(
        "{n} x {dim} keys, {queries} queries, k={k}, 0 mismatches, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

/// Plain edit distance, two rows.
fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            cur[j] = (prev[j - 1] + usize::from(a[i - 1] != b[j - 1]))
                .min(prev[j] + 1)
                .min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Second backtrace: each cell records its preferred predecessor while the
/// table is filled (diagonal, then deletion, then insertion), and the
/// counts are read off by following the pointers.
fn backpointer_counts(r: &[u8], h: &[u8]) -> (usize, usize, usize) {
    #[derive(Clone, Copy)]
    enum Ptr {
        Diag,
        Up,
        Left,
    }
    let (n, m) = (r.len(), h.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    let mut ptr = vec![vec![Ptr::Diag; m + 1]; n + 1];
    for i in 1..=n {
        cost[i][0] = i;
        ptr[i][0] = Ptr::Up;
    }
    for j in 1..=m {
        cost[0][j] = j;
        ptr[0][j] = Ptr::Left;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let up = cost[i - 1][j] + 1;
            let left = cost[i][j - 1] + 1;
            let best = diag.min(up).min(left);
            cost[i][j] = best;
            ptr[i][j] = if diag == best {
                Ptr::Diag
            } else if up == best {
                Ptr::Up
            } else {
                Ptr::Left
            };
        }
    }
    let (mut i, mut j, mut s, mut d, mut ins) = (n, m, 0, 0, 0);
    while i > 0 || j > 0 {
        match ptr[i][j] {
            Ptr::Diag => {
                s += usize::from(r[i - 1] != h[j - 1]);
                i -= 1;
                j -= 1;
            }
            Ptr::Up => {
                d += 1;
                i -= 1;
            }
            Ptr::Left => {
                ins += 1;
                j -= 1;
            }
        }
    }
    (s, d, ins)
}

fn alignment_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let pairs = 10_000;
    let (mut total_mismatch, mut tie_mismatch) = (0, 0);
    for _ in 0..pairs {
        // A small alphabet makes equal-cost alternatives common.
        let alphabet = rng.random_range(2..=6u8);
        let r: Vec<u8> = (0..rng.random_range(1..=30))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        let h: Vec<u8> = (0..rng.random_range(0..=30))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        let c = levenshtein_align(&r, &h).map_err(|e| e.to_string())?;
        if c.errors() != edit_distance(&r, &h) {
            total_mismatch += 1;
        }
        if (c.substitutions, c.deletions, c.insertions) != backpointer_counts(&r, &h) {
            tie_mismatch += 1;
        }
    }
    ensure(total_mismatch == 0, || {
        format!("{total_mismatch} pairs disagree with the edit-distance DP")
    })?;
    ensure(tie_mismatch == 0, || {
        format!("{tie_mismatch} pairs disagree with the backpointer backtrace")
    })?;
    Ok(format!("{pairs} pairs, 0 total mismatches, 0 S/D/I mismatches"))
}

// ---------------------------------------------------------------------------

struct Synthetic {
    bench: Benchmark,
    sentences: SentenceDatastore,
    tokens: TokenDatastore,
}

fn evaluate(syn: &Synthetic, config: &DecodeConfig) -> Result<EvalReport, String> {
    let results = decode_all(&syn.bench, &syn.sentences, &syn.tokens, config)?;
    build_report(&results, &syn.bench.test, &Scoring::Tokens).map_err(|e| e.to_string())
}

fn table_three(slot: &mut Option<Synthetic>) -> Check {
    let start = Instant::now();
    let spec = CorpusSpec::default();
    let model = ToyModel::new(benchmark_model_config(spec.seed)).map_err(|e| e.to_string())?;
    let bench = generate(&spec, model).map_err(|e| e.to_string())?;
    let train = bench.train.utterances();
    let sentences = build_sentence_datastore(&bench.model, train, FailurePolicy::Abort)
        .map_err(|e| e.to_string())?
        .store;
    let tokens = build_token_datastore(&bench.model, train, FailurePolicy::Abort)
        .map_err(|e| e.to_string())?
        .store;
    let syn = slot.insert(Synthetic {
        bench,
        sentences,
        tokens,
    });

    println!("    {:<9} {:>7} {:>6} {:>6} {:>6}", "mode", "CER", "S", "D", "I");
    let mut reports = Vec::new();
    for mode in Mode::ALL {
        let config = DecodeConfig::default().with_mode(mode).bounded_by(&syn.bench.test);
        let rep = evaluate(syn, &config)?;
        let c = rep.aggregate_counts;
        println!(
            "    {:<9} {:>7.2} {:>6} {:>6} {:>6}",
            mode.as_str(),
            rep.aggregate_cer,
            c.substitutions,
            c.deletions,
            c.insertions
        );
        reports.push(rep);
    }
    let [base, knn, icl, m2r] = [&reports[0], &reports[1], &reports[2], &reports[3]];
    let s_red = 1.0 - knn.aggregate_counts.substitutions as f64 / base.aggregate_counts.substitutions as f64;
    let di = |r: &EvalReport| (r.aggregate_counts.deletions + r.aggregate_counts.insertions) as f64;
    let di_red = 1.0 - di(icl) / di(base);
    ensure(s_red >= 0.30, || {
        format!("knn_only cuts substitutions by {:.1}% (< 30%)", 100.0 * s_red)
    })?;
    ensure(di_red >= 0.30, || {
        format!("icl_only cuts D+I by {:.1}% (< 30%)", 100.0 * di_red)
    })?;
    ensure(m2r.aggregate_cer <= knn.aggregate_cer.min(icl.aggregate_cer), || {
        format!(
            "m2r CER {:.2} above min(knn_only {:.2}, icl_only {:.2})",
            m2r.aggregate_cer, knn.aggregate_cer, icl.aggregate_cer
        )
    })?;
    ensure(m2r.aggregate_cer < base.aggregate_cer, || {
        "m2r not below baseline".into()
    })?;
    within_time(start.elapsed(), 120.0)?;
    Ok(format!(
        "S -{:.1}%, D+I -{:.1}%, m2r {:.2} <= min({:.2}, {:.2}) < {:.2}, {:.1} s",
        100.0 * s_red,
        100.0 * di_red,
        m2r.aggregate_cer,
        knn.aggregate_cer,
        icl.aggregate_cer,
        base.aggregate_cer,
        start.elapsed().as_secs_f64()
    ))
}

fn fig_three(slot: &Option<Synthetic>) -> Check {
    let syn = slot.as_ref().ok_or("synthetic benchmark was not built")?;
    println!("    {:>5} {:>7} {:>10}", "n_max", "CER", "RTF");
    let mut rows = Vec::new();
    for n_max in [0, 2, 4, 6, 8, 10] {
        let config = DecodeConfig {
            n_max,
            ..DecodeConfig::default().bounded_by(&syn.bench.test)
        };
        let rep = evaluate(syn, &config)?;
        println!("    {:>5} {:>7.2} {:>10.6}", n_max, rep.aggregate_cer, rep.rtf);
        rows.push((rep.aggregate_cer, rep.rtf));
    }
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    ensure(last.0 < first.0, || {
        format!("CER {:.2} at n_max=10 not below {:.2} at 0", last.0, first.0)
    })?;
    ensure(last.1 > first.1, || {
        format!("RTF {:.6} at n_max=10 not above {:.6} at 0", last.1, first.1)
    })?;
    Ok(format!(
        "m2r: CER {:.2} -> {:.2}, RTF {:.6} -> {:.6}",
        first.0, last.0, first.1, last.1
    ))
}

// ---------------------------------------------------------------------------

fn packing_safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let instances = 10_000;
    let mut packed = 0;
    let mut max_seen = 0;
    for i in 0..instances {
        let candidates: Vec<SentenceEntry> = (0..rng.random_range(0..40))
            .map(|j| {
                let dur = if rng.random_bool(0.1) {
                    rng.random_range(10.0..40.0)
                } else {
                    rng.random_range(0.05..6.0)
                };
                SentenceEntry::new(format!("c{i}-{j}"), Transcript::new(vec![2], "x"), dur).expect("positive duration")
            })
            .collect();
        let test_s = rng.random_range(0.05..30.0);
        let n_max = rng.random_range(0..=10);
        let plan = pack_prompts(&candidates, test_s, 30.0, n_max).map_err(|e| e.to_string())?;
        max_seen = max_seen.max(plan.len());
        let total: f64 = plan.prompts.iter().map(|p| p.duration_s).sum::<f64>() + test_s;
        ensure(plan.len() <= 10 && plan.len() <= n_max, || {
            format!("instance {i}: {} prompts with n_max {n_max}", plan.len())
        })?;
        ensure(total <= 30.0, || {
            format!("instance {i}: {total:.4} s exceeds the budget")
        })?;
        packed += plan.len();
    }
    Ok(format!(
        "{instances} instances, {packed} prompts packed, max {max_seen} per plan"
    ))
}

// ---------------------------------------------------------------------------

fn persistence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for size in [0usize, 1, 10_000] {
        let dim = 16;
        let keys: Vec<Vec<f32>> = (0..size)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0f32..3.0)).collect())
            .collect();

        let mut tok = TokenDatastore::new(dim, 64).map_err(|e| e.to_string())?;
        let values: Vec<u32> = (0..size).map(|_| rng.random_range(0..64)).collect();
        tok.extend(&keys, &values).map_err(|e| e.to_string())?;
        let bytes = encode_token_store(&tok);
        let loaded = match decode_datastore(&bytes).map_err(|e| e.to_string())? {
            Datastore::Token(t) => t,
            other => return Err(format!("token file decoded as {}", other.kind())),
        };
        ensure(
            loaded
                .index()
                .raw()
                .iter()
                .map(|x| x.to_bits())
                .eq(tok.index().raw().iter().map(|x| x.to_bits())),
            || format!("token keys differ at size {size}"),
        )?;
        ensure(loaded == tok, || format!("token store differs at size {size}"))?;
        ensure(encode_token_store(&loaded) == bytes, || {
            format!("token re-serialization differs at size {size}")
        })?;

        let mut sent = SentenceDatastore::new(dim).map_err(|e| e.to_string())?;
        for (i, key) in keys.iter().enumerate() {
            let len = rng.random_range(1..12);
            let toks: Vec<u32> = (0..len).map(|_| rng.random_range(2..64)).collect();
            let entry = SentenceEntry::new(
                format!("utt-{i:05}"),
                Transcript::new(toks, format!("句子{i}")),
                rng.random_range(0.1..20.0),
            )
            .map_err(|e| e.to_string())?;
            sent.push(&key.clone().into(), entry).map_err(|e| e.to_string())?;
        }
        let bytes = encode_sentence_store(&sent);
        let loaded = match decode_datastore(&bytes).map_err(|e| e.to_string())? {
            Datastore::Sentence(s) => s,
            other => return Err(format!("sentence file decoded as {}", other.kind())),
        };
        ensure(loaded == sent, || format!("sentence store differs at size {size}"))?;
        ensure(encode_sentence_store(&loaded) == bytes, || {
            format!("sentence re-serialization differs at size {size}")
        })?;
    }
    Ok("token and sentence stores at sizes 0, 1, 10000: bit-identical, canonical bytes".into())
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let mut synthetic = None;
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        println!("-- {name}");
        let outcome = f();
        match &outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => println!("FAIL {name}: {why}"),
        }
        results.push((name, outcome));
    };
    run("rr-arithmetic", &mut rr_arithmetic);
    run("mode-lattice", &mut mode_lattice);
    run("knn-math", &mut knn_math);
    run("index-vs-oracle", &mut index_correctness);
    run("alignment-vs-dp", &mut alignment_correctness);
    run("synthetic-sdi-table", &mut || table_three(&mut synthetic));
    run("synthetic-prompt-sweep", &mut || fig_three(&synthetic));
    run("packing-safety", &mut packing_safety);
    run("persistence-round-trip", &mut persistence);

    let failed: Vec<&str> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    println!();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
