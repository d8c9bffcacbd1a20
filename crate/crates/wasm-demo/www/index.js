import init, { knn_mix, pack, align } from "./pkg/m2r_wasm_demo.js";

const $ = (id) => document.getElementById(id);

function escape(s) {
  return String(s).replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function showError(el, err) {
  el.innerHTML = `<p class="error">${escape(err)}</p>`;
}

function renderMix() {
  const tau = Number($("mix-tau").value);
  const lambda = Number($("mix-lambda").value);
  $("mix-tau-v").textContent = tau.toFixed(2);
  $("mix-lambda-v").textContent = lambda.toFixed(2);
  const out = $("mix-out");
  let r;
  try {
    r = JSON.parse(knn_mix($("mix-model").value, $("mix-neigh").value, tau, lambda));
  } catch (e) {
    return showError(out, e);
  }
  const bar = (p, cls, win) =>
    `<div title="${p.toFixed(4)}"><div class="bar ${cls}" style="width:${(p * 100).toFixed(1)}%"></div>` +
    `<span class="${win ? "win" : ""}">${p.toFixed(3)}</span></div>`;
  let html = `<div class="bars"><b>token</b><b>model</b><b>kNN</b><b>mixed</b>`;
  r.model.forEach((_, t) => {
    html += `<span>${t}</span>` +
      bar(r.model[t], "", t === r.argmax_model) +
      bar(r.knn[t], "knn", t === r.argmax_knn) +
      bar(r.mixed[t], "mixed", t === r.argmax_mixed);
  });
  html += `</div><p>Greedy pick: model <b>${r.argmax_model}</b>, mixed <b>${r.argmax_mixed}</b>` +
    (r.argmax_model !== r.argmax_mixed ? " — retrieval changed the decision." : ".") + "</p>";
  out.innerHTML = html;
}

function renderPack() {
  const out = $("pack-out");
  const cands = $("pack-cands").value
    .split("\n")
    .map((l) => l.trim())
    .filter(Boolean)
    .map((l) => {
      const [id, d] = l.split(":");
      return { id: id.trim(), duration_s: Number(d) };
    });
  let r;
  try {
    r = JSON.parse(pack(JSON.stringify(cands), Number($("pack-test").value),
      Number($("pack-budget").value), Math.max(0, Math.floor(Number($("pack-nmax").value)))));
  } catch (e) {
    return showError(out, e);
  }
  let html = "<table><tr><th>#</th><th>id</th><th>seconds</th><th>status</th></tr>";
  r.candidates.forEach((c, i) => {
    html += `<tr class="${c.status}"><td>${i + 1}</td><td>${escape(c.id)}</td>` +
      `<td>${c.duration_s}</td><td>${c.status}</td></tr>`;
  });
  html += `</table><p>${r.n_prompts} prompt(s), ${r.prompt_s.toFixed(1)} s of prompt audio; ` +
    `${r.total_s.toFixed(1)} s of ${r.budget_s} s used with the test audio.</p>`;
  out.innerHTML = html;
}

function renderAlign() {
  const out = $("al-out");
  let r;
  try {
    r = JSON.parse(align($("al-ref").value, $("al-hyp").value));
  } catch (e) {
    return showError(out, e);
  }
  const mark = { match: "", sub: "S", del: "D", ins: "I" };
  let html = '<div class="align">';
  for (const c of r.columns) {
    html += `<div class="col ${c.op}"><span>${escape(c.ref) || "·"}</span>` +
      `<span>${escape(c.hyp) || "·"}</span><span class="op">${mark[c.op]}</span></div>`;
  }
  html += `</div><p>S = ${r.substitutions}, D = ${r.deletions}, I = ${r.insertions}, ` +
    `reference length ${r.ref_len}, CER ${r.cer.toFixed(2)}%</p>`;
  out.innerHTML = html;
}

await init();
for (const id of ["mix-model", "mix-neigh", "mix-tau", "mix-lambda"]) $(id).addEventListener("input", renderMix);
for (const id of ["pack-cands", "pack-test", "pack-budget", "pack-nmax"]) $(id).addEventListener("input", renderPack);
for (const id of ["al-ref", "al-hyp"]) $(id).addEventListener("input", renderAlign);
renderMix();
renderPack();
renderAlign();
