//! Browser bindings for three self-contained pieces of the decoder:
//! mixing a kNN distribution into a model distribution, packing retrieved
//! prompts into an audio budget, and aligning a hypothesis against a
//! reference.
//!
//! Every exported function takes plain numbers or JSON strings and returns a
//! JSON string, so the page needs no generated type definitions. The
//! `*_json` functions are ordinary Rust and are what the tests exercise.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use m2r_core::knn::{aggregate_neighbors, interpolate, Distribution};
use m2r_core::metrics::{alignment, levenshtein_align, EditOp};
use m2r_core::sentence::pack_prompts;
use m2r_core::{SentenceEntry, Transcript};

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

fn parse<'a, T: Deserialize<'a>>(what: &str, text: &'a str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("{what}: {e}"))
}

fn argmax(p: &[f64]) -> usize {
    Distribution::new(p.to_vec()).map(|d| d.argmax() as usize).unwrap_or(0)
}

/// `model_probs`: JSON array of non-negative weights (normalized here).
/// `neighbors`: JSON array of `[label, distance]` pairs.
pub fn knn_mix_json(model_probs: &str, neighbors: &str, tau: f64, lambda: f64) -> Result<Value, String> {
    let weights: Vec<f64> = parse("model distribution", model_probs)?;
    let labelled: Vec<(u32, f64)> = parse("neighbours", neighbors)?;
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
        return Err("model distribution needs non-negative weights with positive sum".into());
    }
    let model = Distribution::new(weights.iter().map(|w| w / total).collect()).map_err(|e| e.to_string())?;
    let knn = aggregate_neighbors(&labelled, model.len(), tau).map_err(|e| e.to_string())?;
    let mixed = interpolate(&model, &knn, lambda).map_err(|e| e.to_string())?;
    Ok(json!({
        "model": model.probs(),
        "knn": knn.probs(),
        "mixed": mixed.probs(),
        "argmax_model": argmax(model.probs()),
        "argmax_knn": argmax(knn.probs()),
        "argmax_mixed": argmax(mixed.probs()),
    }))
}

#[derive(Deserialize)]
struct Candidate {
    id: String,
    duration_s: f64,
}

/// `candidates`: JSON array of `{ "id", "duration_s" }` in retrieval order.
/// Each candidate comes back with a status: `chosen`, `skipped` (would
/// overflow the budget at its turn) or `unused` (the prompt limit was
/// already reached).
pub fn pack_json(candidates: &str, test_s: f64, budget_s: f64, n_max: usize) -> Result<Value, String> {
    let cands: Vec<Candidate> = parse("candidates", candidates)?;
    let entries = cands
        .iter()
        .map(|c| SentenceEntry::new(c.id.clone(), Transcript::new(vec![2], ""), c.duration_s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let plan = pack_prompts(&entries, test_s, budget_s, n_max).map_err(|e| e.to_string())?;

    let mut chosen = plan.prompts.iter().map(|p| p.utterance_id.as_str()).peekable();
    let mut taken = 0;
    let rows: Vec<Value> = cands
        .iter()
        .map(|c| {
            let status = if taken == n_max {
                "unused"
            } else if chosen.peek() == Some(&c.id.as_str()) {
                chosen.next();
                taken += 1;
                "chosen"
            } else {
                "skipped"
            };
            json!({ "id": c.id, "duration_s": c.duration_s, "status": status })
        })
        .collect();
    Ok(json!({
        "candidates": rows,
        "n_prompts": plan.len(),
        "prompt_s": plan.total_prompt_duration_s,
        "total_s": plan.total_prompt_duration_s + test_s,
        "budget_s": budget_s,
    }))
}

/// Character-level alignment. Returns the edit script as
/// `{ op, ref, hyp }` columns plus the error counts and CER in percent.
pub fn align_json(reference: &str, hypothesis: &str) -> Result<Value, String> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let counts = levenshtein_align(&r, &h).map_err(|e| e.to_string())?;
    let (mut i, mut j) = (0, 0);
    let columns: Vec<Value> = alignment(&r, &h)
        .into_iter()
        .map(|op| {
            let (name, rc, hc) = match op {
                EditOp::Match | EditOp::Substitution => {
                    let col = (r[i].to_string(), h[j].to_string());
                    i += 1;
                    j += 1;
                    (if op == EditOp::Match { "match" } else { "sub" }, col.0, col.1)
                }
                EditOp::Deletion => {
                    i += 1;
                    ("del", r[i - 1].to_string(), String::new())
                }
                EditOp::Insertion => {
                    j += 1;
                    ("ins", String::new(), h[j - 1].to_string())
                }
            };
            json!({ "op": name, "ref": rc, "hyp": hc })
        })
        .collect();
    Ok(json!({
        "columns": columns,
        "substitutions": counts.substitutions,
        "deletions": counts.deletions,
        "insertions": counts.insertions,
        "ref_len": counts.ref_len,
        "cer": counts.cer(),
    }))
}

#[wasm_bindgen]
pub fn knn_mix(model_probs: &str, neighbors: &str, tau: f64, lambda: f64) -> Result<String, JsValue> {
    to_js(knn_mix_json(model_probs, neighbors, tau, lambda))
}

#[wasm_bindgen]
pub fn pack(candidates: &str, test_s: f64, budget_s: f64, n_max: usize) -> Result<String, JsValue> {
    to_js(pack_json(candidates, test_s, budget_s, n_max))
}

#[wasm_bindgen]
pub fn align(reference: &str, hypothesis: &str) -> Result<String, JsValue> {
    to_js(align_json(reference, hypothesis))
}
