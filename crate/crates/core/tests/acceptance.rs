//! Acceptance gate. Each check prints one PASS or FAIL line; the process
//! exits non-zero if any check fails. Run with
//! `cargo test -p dialparse --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dialparse::ablation::{
    ablate_correction_triangle, ablate_qap, perturb_random, second_pass_narration, strip_structure,
};
use dialparse::backend::{parse_output, NoisyOracleBackend, OracleBackend, RejectReason};
use dialparse::corpus::{
    corpus_stats, dialogue_stats, load_corpus, read_canonical, write_corpus, Cdu, Corpus, CorpusFormat, Dialogue,
    Endpoint, LoadOptions, RawDialogue, RawRelation, Split,
};
use dialparse::engine::{build_sample, run_corpus, run_dialogue, ContextMode, EngineConfig, Sample};
use dialparse::metrics::{distance_breakdown, evaluate, link_f1, link_rel_f1, EvalOptions, Graphs};
use dialparse::predictions::{from_run, graphs, read_predictions, write_predictions, write_step_log};
use dialparse::preprocess::{
    compress_eeu_sequences, flatten_cdus, preprocess_dialogue, preprocess_pipeline, prune_isolated_eeus,
    write_remaps, PipelineOptions, Profile, Remap,
};
use dialparse::report::render_report;
use dialparse::synth::{random_dialogue, random_raw_dialogue, synthetic_corpus, SynthParams};
use dialparse::{DiscourseGraph, ElementaryUnit, Label, RelationInstance, Taxonomy, UnitKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("metric oracle equivalence", metric_oracle),
        ("oracle end to end", oracle_end_to_end),
        ("noisy oracle calibration", noisy_calibration),
        ("window invariants", window_invariants),
        ("output parser fuzzing", parser_fuzzing),
        ("preprocessing correctness", preprocessing),
        ("ablation invariants", ablation_invariants),
        ("corpus statistics (informative)", corpus_statistics),
        ("determinism", determinism),
    ];
    let quiet_panics = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        eprintln!("panic: {info}");
        let _ = &quiet_panics;
    }));
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name} ({secs:.2}s): {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.2}s): {detail}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent < limit, || format!("{what} took {spent:?}, limit {limit:?}"))
}

fn label(code: &str) -> Label {
    Label::new(code).unwrap()
}

fn rel(code: &str, i: usize, j: usize) -> RelationInstance {
    RelationInstance::new(label(code), i, j).unwrap()
}

fn flat(corpus: &Corpus) -> Vec<Dialogue> {
    corpus.flat_dialogues().unwrap()
}

fn gold_of(dialogues: &[Dialogue]) -> Graphs {
    dialogues.iter().map(|d| (d.id().to_string(), d.graph.clone())).collect()
}

// ---------------------------------------------------------------------------
// 1. Metrics against a pairwise brute-force count.

type Triple = (String, usize, usize);

fn triples(g: &DiscourseGraph) -> Vec<Triple> {
    g.iter().map(|r| (r.label.as_str().to_string(), r.source, r.target)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn tally(&mut self, in_gold: bool, in_pred: bool) {
        match (in_gold, in_pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn prf(&self) -> (f64, f64, f64) {
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

struct BruteForce {
    link: Counts,
    per_type: BTreeMap<String, Counts>,
}

/// Enumerates every unit pair (and every label) of every dialogue and asks
/// the raw relation lists whether it is present.
fn brute_force(pool: &[(usize, Vec<Triple>, Vec<Triple>)], codes: &[&str], cutoff: Option<usize>) -> BruteForce {
    let mut link = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (n, gold, pred) in pool {
        for i in 0..*n {
            for j in i + 1..*n {
                if cutoff.is_some_and(|c| j - i > c) {
                    continue;
                }
                let g = gold.iter().any(|t| t.1 == i && t.2 == j);
                let p = pred.iter().any(|t| t.1 == i && t.2 == j);
                link.tally(g, p);
                for code in codes {
                    let g = gold.iter().any(|t| t.0 == *code && t.1 == i && t.2 == j);
                    let p = pred.iter().any(|t| t.0 == *code && t.1 == i && t.2 == j);
                    if g || p {
                        per_type.entry(code.to_string()).or_default().tally(g, p);
                    }
                }
            }
        }
    }
    BruteForce { link, per_type }
}

fn random_graph(rng: &mut ChaCha8Rng, id: &str, n: usize, codes: &[&str], max_rels: usize) -> DiscourseGraph {
    let mut g = DiscourseGraph::new(id, n);
    for _ in 0..rng.gen_range(0..=max_rels) {
        let i = rng.gen_range(0..n - 1);
        let j = rng.gen_range(i + 1..n);
        let _ = g.insert(rel(codes.choose(rng).unwrap(), i, j));
    }
    g
}

/// A prediction sharing some of gold: copies, relabels and spurious pairs.
fn perturbed(rng: &mut ChaCha8Rng, gold: &DiscourseGraph, codes: &[&str], max_rels: usize) -> DiscourseGraph {
    let n = gold.unit_count();
    let mut p = DiscourseGraph::new(gold.dialogue_id(), n);
    for r in gold {
        match rng.gen_range(0..10) {
            0..=4 => {
                let _ = p.insert(r.clone());
            }
            5..=6 => {
                let _ = p.insert(rel(codes.choose(rng).unwrap(), r.source, r.target));
            }
            _ => {}
        }
    }
    while p.len() < max_rels && rng.gen_bool(0.6) {
        let i = rng.gen_range(0..n - 1);
        let j = rng.gen_range(i + 1..n);
        let _ = p.insert(rel(codes.choose(rng).unwrap(), i, j));
    }
    p
}

fn metric_oracle() -> Result<String, String> {
    let start = Instant::now();
    let tax = Taxonomy::msdc();
    let codes = ["RES", "ACK", "QAP", "NARR", "CORR"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut pairs = 0;
    let narr = label("NARR");
    for case in 0..300 {
        let dialogues = if case < 200 { 1 } else { rng.gen_range(2..=4) };
        let mut gold = Graphs::new();
        let mut pred = Graphs::new();
        let mut pool = Vec::new();
        for d in 0..dialogues {
            let id = format!("d{d}");
            let n = rng.gen_range(2..=30);
            let g = random_graph(&mut rng, &id, n, &codes, 25);
            let p = perturbed(&mut rng, &g, &codes, 25);
            pool.push((n, triples(&g), triples(&p)));
            gold.insert(id.clone(), g);
            pred.insert(id, p);
            pairs += 1;
        }
        let cutoff = [None, Some(10), Some(3), Some(1)][case % 4];
        let expected = brute_force(&pool, &codes, cutoff);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;

        let link = link_f1(&gold, &pred, cutoff).map_err(|e| e.to_string())?;
        let (p, r, f) = expected.link.prf();
        ensure(
            (link.tp, link.fp, link.fn_) == (expected.link.tp, expected.link.fp, expected.link.fn_)
                && close(link.precision, p)
                && close(link.recall, r)
                && close(link.f1, f),
            || format!("case {case}: link {link:?} vs oracle {:?}", expected.link),
        )?;

        let lr = link_rel_f1(&gold, &pred, cutoff).map_err(|e| e.to_string())?;
        let mut pooled = Counts::default();
        let (mut weighted, mut support) = (0.0, 0usize);
        for (code, c) in &expected.per_type {
            pooled.tp += c.tp;
            pooled.fp += c.fp;
            pooled.fn_ += c.fn_;
            weighted += (c.tp + c.fn_) as f64 * c.prf().2;
            support += c.tp + c.fn_;
            let got = lr.per_type.get(&label(code)).ok_or_else(|| format!("case {case}: no row for {code}"))?;
            ensure(
                (got.score.tp, got.score.fp, got.score.fn_) == (c.tp, c.fp, c.fn_) && close(got.score.f1, c.prf().2),
                || format!("case {case}: {code} {got:?} vs oracle {c:?}"),
            )?;
        }
        ensure(lr.per_type.len() == expected.per_type.len(), || format!("case {case}: per-type rows differ"))?;
        let weighted = if support == 0 { 0.0 } else { weighted / support as f64 };
        let (p, r, micro) = pooled.prf();
        ensure(
            close(lr.score.precision, p) && close(lr.score.recall, r) && close(lr.score.f1, weighted) && close(lr.micro_f1, micro),
            || format!("case {case}: link+rel {:?} vs oracle p={p} r={r} weighted={weighted} micro={micro}", lr.score),
        )?;

        // Per-distance table, no cutoff.
        let table = distance_breakdown(&gold, &pred, &narr, 15, &tax).map_err(|e| e.to_string())?;
        for bucket in &table.buckets {
            let d = bucket.distance;
            let mut c = Counts::default();
            for (n, g, p) in &pool {
                for i in 0..n.saturating_sub(d) {
                    let has = |v: &Vec<Triple>| v.iter().any(|t| t.0 == "NARR" && t.1 == i && t.2 == i + d);
                    c.tally(has(g), has(p));
                }
            }
            let want = (c.tp + c.fp + c.fn_ > 0).then(|| c.prf().2);
            ensure(
                bucket.f1.map(|x| (x * 1e9).round()) == want.map(|x| (x * 1e9).round()),
                || format!("case {case}: NARR distance {d}: {:?} vs {want:?}", bucket.f1),
            )?;
        }
    }
    within(start, Duration::from_secs(10), "metric oracle")?;
    Ok(format!("{pairs} gold/pred graph pairs in 300 pools match the pairwise oracle"))
}

// ---------------------------------------------------------------------------
// 2. Gold replay through the engine scores perfectly.

fn oracle_end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let params = SynthParams::default();
    let corpus = synthetic_corpus(0x5eed_0002, 50, &params);
    let dialogues = flat(&corpus);
    let gold = gold_of(&dialogues);
    let max_distance = gold.values().flat_map(|g| g.iter().map(RelationInstance::distance)).max().unwrap_or(0);
    ensure(max_distance <= 15, || format!("synthetic relation at distance {max_distance}"))?;
    let backend = OracleBackend::new(gold.clone());
    let relations: usize = gold.values().map(DiscourseGraph::len).sum();
    for mode in [ContextMode::Gold, ContextMode::Predicted] {
        let cfg = EngineConfig::new(mode, corpus.taxonomy.clone());
        let run = run_corpus(&dialogues, &backend, &cfg, 4, None).map_err(|e| e.to_string())?;
        let report = evaluate(&gold, &run.graphs(), &corpus.taxonomy, &EvalOptions::default()).map_err(|e| e.to_string())?;
        ensure(report.link.f1 == 1.0 && report.link_rel.f1 == 1.0 && report.link_rel_micro_f1 == 1.0, || {
            format!("{mode} mode: link {} link+rel {}", report.link.f1, report.link_rel.f1)
        })?;
        ensure(run.graphs() == gold, || format!("{mode} mode: replayed graphs differ from gold"))?;
    }
    within(start, Duration::from_secs(30), "oracle end to end")?;
    Ok(format!("50 dialogues, {relations} relations, both modes at F1 1.0"))
}

// ---------------------------------------------------------------------------
// 3. Noise rates land inside exact binomial intervals.

/// Equal-tailed interval `[lo, hi]` with `P(X < lo) < a/2` and
/// `P(X > hi) <= a/2` for `X ~ Binomial(n, p)`, by summing the mass function.
fn binomial_interval(n: usize, p: f64, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0;
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = Vec::with_capacity(n + 1);
    log_pmf.push(n as f64 * lq);
    for k in 0..n {
        let next = log_pmf[k] + ((n - k) as f64).ln() - ((k + 1) as f64).ln() + lp - lq;
        log_pmf.push(next);
    }
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (k, l) in log_pmf.iter().enumerate() {
        cdf += l.exp();
        if lo.is_none() && cdf >= tail {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= 1.0 - tail {
            hi = Some(k);
        }
    }
    (lo.unwrap_or(0), hi.unwrap_or(n))
}

fn noisy_calibration() -> Result<String, String> {
    let params = SynthParams::default();
    let corpus = synthetic_corpus(0x5eed_0003, 80, &params);
    let dialogues = flat(&corpus);
    let gold = gold_of(&dialogues);
    let n: usize = gold.values().map(DiscourseGraph::len).sum();
    ensure(n >= 1000, || format!("only {n} gold relations"))?;
    let cfg = EngineConfig::new(ContextMode::Gold, corpus.taxonomy.clone());
    let score = |p_drop, p_relabel| -> Result<_, String> {
        let backend = NoisyOracleBackend::new(gold.clone(), &corpus.taxonomy, p_drop, p_relabel, 20_240_601)
            .map_err(|e| e.to_string())?;
        let run = run_corpus(&dialogues, &backend, &cfg, 4, None).map_err(|e| e.to_string())?;
        evaluate(&gold, &run.graphs(), &corpus.taxonomy, &EvalOptions::default()).map_err(|e| e.to_string())
    };

    let drop = score(0.2, 0.0)?;
    let (lo, hi) = binomial_interval(n, 0.8, 0.99);
    ensure(drop.link.precision == 1.0 && drop.link_rel.precision == 1.0, || {
        format!("p_drop=0.2: precision {} / {}", drop.link.precision, drop.link_rel.precision)
    })?;
    ensure((lo..=hi).contains(&drop.link.tp), || {
        format!("p_drop=0.2: {} of {n} kept, 99% interval [{lo}, {hi}]", drop.link.tp)
    })?;

    let relabel = score(0.0, 0.3)?;
    let (lo2, hi2) = binomial_interval(n, 0.7, 0.99);
    ensure(relabel.link.f1 == 1.0, || format!("p_relabel=0.3: link F1 {}", relabel.link.f1))?;
    ensure((lo2..=hi2).contains(&relabel.link_rel.tp), || {
        format!("p_relabel=0.3: {} of {n} correctly labeled, 99% interval [{lo2}, {hi2}]", relabel.link_rel.tp)
    })?;
    Ok(format!(
        "n={n}; drop recall {:.4} in [{:.4}, {:.4}]; relabel recall {:.4} in [{:.4}, {:.4}]",
        drop.link.recall,
        lo as f64 / n as f64,
        hi as f64 / n as f64,
        relabel.link_rel.recall,
        lo2 as f64 / n as f64,
        hi2 as f64 / n as f64
    ))
}

// ---------------------------------------------------------------------------
// 4. Window bounds and causality over many samples.

/// Recomputes a sample from first principles.
fn expected_sample(d: &Dialogue, turn: usize, source: &DiscourseGraph, k: usize) -> (usize, usize, usize, Vec<RelationInstance>) {
    let members: Vec<usize> = d.units.iter().filter(|u| u.turn_id == turn).map(|u| u.index).collect();
    let m = *members.iter().max().unwrap();
    let l = m.saturating_sub(k);
    let turn_start = (*members.iter().min().unwrap()).max(l);
    let mut context: Vec<RelationInstance> =
        source.iter().filter(|r| r.source >= l && r.target < turn_start).cloned().collect();
    context.sort();
    (l, m, turn_start, context)
}

fn check_sample(s: &Sample, d: &Dialogue, source: &DiscourseGraph, k: usize) -> Result<(), String> {
    let (l, m, turn_start, context) = expected_sample(d, s.turn_id, source, k);
    let mut got = s.context.clone();
    got.sort();
    ensure(s.window_start() == l && s.window_end() == m && s.turn_start == turn_start, || {
        format!("{} turn {}: window {}..={} start {}, expected {l}..={m} start {turn_start}", s.dialogue_id, s.turn_id, s.window_start(), s.window_end(), s.turn_start)
    })?;
    ensure(m - l <= k, || format!("span {} > {k}", m - l))?;
    ensure(got == context, || format!("{} turn {}: context differs", s.dialogue_id, s.turn_id))?;
    ensure(got.iter().all(|r| l <= r.source && r.source < r.target && r.target <= m && r.target < turn_start), || {
        format!("{} turn {}: context leaves the window", s.dialogue_id, s.turn_id)
    })?;
    s.check(k).map_err(|e| format!("{} turn {}: {e}", s.dialogue_id, s.turn_id))
}

fn window_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let tax = Taxonomy::msdc();
    let mut samples = 0;
    let mut predicted = 0;
    let mut d_index = 0;
    while samples < 10_000 {
        let k = *[15, 15, 15, 1, 2, 5, 8].choose(&mut rng).unwrap();
        let params = SynthParams {
            max_turn_len: rng.gen_range(1..=20),
            window: rng.gen_range(1..=20),
            max_units: 60,
            ..SynthParams::default()
        };
        let id = format!("w{d_index}");
        d_index += 1;
        let (units, graph) = random_dialogue(&mut rng, &id, &params);
        let d = Dialogue { units, graph };

        let gold_cfg = EngineConfig { window: k, ..EngineConfig::new(ContextMode::Gold, tax.clone()) };
        let empty = DiscourseGraph::new(id.clone(), d.len());
        for (turn, _) in d.turns() {
            let s = build_sample(&d, turn, &empty, &gold_cfg).map_err(|e| e.to_string())?;
            check_sample(&s, &d, &d.graph, k)?;
            samples += 1;
        }

        let pred_cfg = EngineConfig { window: k, ..EngineConfig::new(ContextMode::Predicted, tax.clone()) };
        let backend = NoisyOracleBackend::new([(id.clone(), d.graph.clone())], &tax, 0.3, 0.3, d_index as u64)
            .map_err(|e| e.to_string())?;
        let run = run_dialogue(&d, &backend, &pred_cfg, None);
        ensure(run.failure.is_none(), || format!("{id}: {:?}", run.failure))?;
        let mut accepted_before = DiscourseGraph::new(id.clone(), d.len());
        for step in &run.steps {
            check_sample(&step.sample, &d, &accepted_before, k)?;
            for r in &step.sample.context {
                ensure(accepted_before.contains(r), || format!("{id} step {}: {r} not yet accepted", step.step))?;
            }
            for r in &step.accepted {
                ensure(step.sample.turn_range().contains(&r.target), || format!("{id}: accepted {r} outside turn"))?;
                accepted_before.insert(r.clone()).map_err(|e| e.to_string())?;
            }
            samples += 1;
            predicted += 1;
        }
        ensure(accepted_before == run.graph, || format!("{id}: step log disagrees with the final graph"))?;
    }
    Ok(format!("{samples} samples ({predicted} in predicted mode) over {d_index} dialogues, zero violations"))
}

// ---------------------------------------------------------------------------
// 5. parse_output on hostile input.

/// Substrings shaped like `word(...)` on one line, found left to right
/// without overlap.
fn scan_candidates(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut floor = 0;
    for p in 0..b.len() {
        if b[p] != b'(' || p < floor {
            continue;
        }
        let mut s = p;
        while s > floor && (b[s - 1].is_ascii_alphabetic() || b[s - 1] == b'-') {
            s -= 1;
        }
        while s < p && b[s] == b'-' {
            s += 1;
        }
        if s == p {
            continue;
        }
        let mut e = p + 1;
        while e < b.len() && !matches!(b[e], b'(' | b')' | b'\n') {
            e += 1;
        }
        if e < b.len() && b[e] == b')' {
            out.push(&text[s..=e]);
            floor = e + 1;
        }
    }
    out
}

/// `CODE(i,j)` with an upper-case code and plain decimal indices.
fn strict_token(token: &str) -> Option<(String, usize, usize)> {
    let open = token.find('(')?;
    let code = &token[..open];
    let upper = code.bytes().next()?.is_ascii_uppercase() && code.bytes().all(|c| c.is_ascii_uppercase() || c == b'-');
    let inner = token[open + 1..].strip_suffix(')')?;
    let (i, j) = inner.split_once(',')?;
    let number = |s: &str| -> Option<usize> {
        if s.is_empty() || !s.bytes().all(|c| c.is_ascii_digit()) {
            return None;
        }
        s.parse().ok()
    };
    upper.then_some(())?;
    Some((code.to_string(), number(i)?, number(j)?))
}

type Classified = (Vec<Triple>, Vec<(String, RejectReason)>);

fn classify(text: &str, s: &Sample, tax: &Taxonomy) -> Classified {
    let (l, m, start) = (s.window_start(), s.window_end(), s.turn_start);
    let mut accepted: Vec<Triple> = Vec::new();
    let mut rejected = Vec::new();
    for token in scan_candidates(text) {
        let reason = match strict_token(token) {
            None => Some(RejectReason::BadSyntax),
            Some((code, i, j)) => {
                if !tax.codes().any(|c| c.as_str() == code) {
                    Some(RejectReason::UnknownLabel)
                } else if i >= j {
                    Some(RejectReason::BadOrder)
                } else if i < l || j > m {
                    Some(RejectReason::OutOfWindow)
                } else if j < start {
                    Some(RejectReason::TargetNotInTurn)
                } else if accepted.iter().any(|t| t.0 == code && t.1 == i && t.2 == j) {
                    Some(RejectReason::Duplicate)
                } else {
                    accepted.push((code, i, j));
                    None
                }
            }
        };
        if let Some(r) = reason {
            rejected.push((token.to_string(), r));
        }
    }
    (accepted, rejected)
}

const ALPHABET: &[u8] = b"RESACKQPNRCOLF-()(),,0123456789 \n\tresx;:[]{}";

fn mutate(rng: &mut ChaCha8Rng, mut bytes: Vec<u8>) -> Vec<u8> {
    for _ in 0..rng.gen_range(1..=4) {
        let pos = if bytes.is_empty() { 0 } else { rng.gen_range(0..bytes.len()) };
        match rng.gen_range(0..5) {
            0 => bytes.insert(pos, *ALPHABET.choose(rng).unwrap()),
            1 if !bytes.is_empty() => {
                bytes.remove(pos);
            }
            2 if !bytes.is_empty() => bytes[pos] = rng.gen(),
            3 if !bytes.is_empty() => {
                let end = rng.gen_range(pos..bytes.len()) + 1;
                let chunk = bytes[pos..end].to_vec();
                bytes.splice(pos..pos, chunk);
            }
            _ => bytes.insert(pos, rng.gen_range(b'0'..=b'9')),
        }
    }
    bytes
}

fn parser_fuzzing() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let tax = Taxonomy::msdc();
    let codes: Vec<&str> = tax.codes().map(Label::as_str).collect();
    let mut pool = Vec::new();
    for n in 0..20 {
        let (units, graph) = random_dialogue(&mut rng, &format!("f{n}"), &SynthParams { max_units: 60, ..SynthParams::default() });
        let d = Dialogue { units, graph };
        let cfg = EngineConfig::new(ContextMode::Gold, tax.clone());
        for (turn, _) in d.turns() {
            pool.push(build_sample(&d, turn, &DiscourseGraph::new(d.id(), d.len()), &cfg).unwrap());
        }
    }

    let (mut tokens, mut accepted, mut panics) = (0usize, 0usize, 0usize);
    for case in 0..100_000 {
        let s = pool.choose(&mut rng).unwrap();
        let bytes: Vec<u8> = if case % 2 == 0 {
            let len = rng.gen_range(0..160);
            if rng.gen_bool(0.5) {
                (0..len).map(|_| rng.gen()).collect()
            } else {
                (0..len).map(|_| *ALPHABET.choose(&mut rng).unwrap()).collect()
            }
        } else {
            let (l, start, m) = (s.window_start(), s.turn_start, s.window_end());
            let mut text = String::new();
            for _ in 0..rng.gen_range(1..=6) {
                let j = rng.gen_range(start..=m);
                let i = if j > l { rng.gen_range(l..j) } else { 0 };
                text.push_str(&format!("{}({i},{j})", codes.choose(&mut rng).unwrap()));
                text.push_str([" ", "\n", ", ", "; ", " and "].choose(&mut rng).unwrap());
            }
            mutate(&mut rng, text.into_bytes())
        };
        let text = String::from_utf8_lossy(&bytes);
        let Ok(out) = catch_unwind(AssertUnwindSafe(|| parse_output(&text, s, &tax))) else {
            panics += 1;
            continue;
        };
        let (want_acc, want_rej) = classify(&text, s, &tax);
        let got_acc = triples(&DiscourseGraph::from_unchecked(s.dialogue_id.as_str(), s.window_end() + 1, out.accepted.clone()));
        let got_rej: Vec<(String, RejectReason)> = out.rejected.iter().map(|r| (r.token.clone(), r.reason)).collect();
        ensure(got_acc == want_acc && got_rej == want_rej, || {
            format!("input {text:?}: accepted {got_acc:?} rejected {got_rej:?}, expected {want_acc:?} {want_rej:?}")
        })?;
        tokens += want_acc.len() + want_rej.len();
        accepted += want_acc.len();
    }
    ensure(panics == 0, || format!("{panics} inputs panicked"))?;
    Ok(format!("100000 inputs, {tokens} candidate tokens ({accepted} accepted), all classified as the grammar predicts"))
}

// ---------------------------------------------------------------------------
// 6. Preprocessing stages against independent recomputation.

fn is_acyclic(g: &DiscourseGraph) -> bool {
    let n = g.unit_count();
    let mut indegree = vec![0usize; n];
    for r in g {
        indegree[r.target] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&u| indegree[u] == 0).collect();
    let mut seen = 0;
    while let Some(u) = ready.pop() {
        seen += 1;
        for r in g.iter().filter(|r| r.source == u) {
            indegree[r.target] -= 1;
            if indegree[r.target] == 0 {
                ready.push(r.target);
            }
        }
    }
    seen == n
}

fn rel_set(g: &DiscourseGraph) -> BTreeSet<Triple> {
    triples(g).into_iter().collect()
}

/// Heads by fixpoint: repeatedly take the minimum over members whose head is
/// already known.
fn cdu_heads(raw: &RawDialogue) -> BTreeMap<String, usize> {
    let mut heads: BTreeMap<String, usize> = BTreeMap::new();
    loop {
        let mut changed = false;
        for c in &raw.cdus {
            let resolved: Vec<Option<usize>> = c
                .members
                .iter()
                .map(|m| match m {
                    Endpoint::Unit(i) => Some(*i),
                    Endpoint::Cdu(id) => heads.get(id).copied(),
                })
                .collect();
            if resolved.iter().all(Option::is_some) {
                let h = resolved.into_iter().flatten().min().unwrap();
                if heads.insert(c.id.clone(), h) != Some(h) {
                    changed = true;
                }
            }
        }
        if !changed {
            return heads;
        }
    }
}

fn expected_flat(raw: &RawDialogue) -> BTreeSet<Triple> {
    let heads = cdu_heads(raw);
    let end = |e: &Endpoint| match e {
        Endpoint::Unit(i) => *i,
        Endpoint::Cdu(id) => heads[id],
    };
    raw.relations
        .iter()
        .map(|r| (r.label.as_str().to_string(), end(&r.src), end(&r.tgt)))
        .filter(|t| t.1 < t.2)
        .collect()
}

fn expected_compress(d: &Dialogue) -> Vec<usize> {
    let mut map = Vec::with_capacity(d.len());
    let mut next = 0;
    for (i, u) in d.units.iter().enumerate() {
        let joins = i > 0 && {
            let p = &d.units[i - 1];
            u.is_eeu() && p.is_eeu() && p.speaker == u.speaker && p.turn_id == u.turn_id
        };
        if !joins && i > 0 {
            next += 1;
        }
        map.push(next);
    }
    map
}

fn expected_prune(d: &Dialogue) -> Vec<bool> {
    let mut reach: Vec<bool> = d.units.iter().map(|u| !u.is_eeu()).collect();
    loop {
        let mut changed = false;
        for r in &d.graph {
            if reach[r.source] != reach[r.target] {
                reach[r.source] = true;
                reach[r.target] = true;
                changed = true;
            }
        }
        if !changed {
            return reach;
        }
    }
}

fn image(g: &DiscourseGraph, map: &[Option<usize>]) -> BTreeSet<Triple> {
    g.iter()
        .filter_map(|r| Some((r.label.as_str().to_string(), map[r.source]?, map[r.target]?)))
        .filter(|t| t.1 != t.2)
        .collect()
}

fn check_remap(remap: &Remap, out_len: usize, what: &str) -> Result<(), String> {
    let kept: Vec<usize> = remap.as_slice().iter().flatten().copied().collect();
    ensure(kept.windows(2).all(|w| w[0] <= w[1]), || format!("{what}: remap not monotone"))?;
    let image: BTreeSet<usize> = kept.iter().copied().collect();
    ensure(image == (0..out_len).collect(), || format!("{what}: remap not onto 0..{out_len}"))?;
    ensure(remap.new_len() == out_len, || format!("{what}: remap length {} vs {out_len}", remap.new_len()))
}

fn check_stage_outputs(raw: &RawDialogue) -> Result<(), String> {
    let id = &raw.id;
    let (d, discards) = flatten_cdus(raw).map_err(|e| format!("{id}: {e}"))?;
    ensure(d.to_raw().cdus.is_empty(), || format!("{id}: CDUs survived"))?;
    ensure(rel_set(&d.graph) == expected_flat(raw), || format!("{id}: flattened relations differ"))?;
    ensure(d.graph.len() + discards.len() == raw.relations.len(), || {
        format!("{id}: {} in, {} out, {} discards", raw.relations.len(), d.graph.len(), discards.len())
    })?;
    ensure(d.graph.validate(&Taxonomy::msdc()).is_well_formed() && is_acyclic(&d.graph), || format!("{id}: bad flat graph"))?;

    let c = compress_eeu_sequences(&d);
    let want: Vec<Option<usize>> = expected_compress(&d).into_iter().map(Some).collect();
    ensure(c.remap.as_slice() == want.as_slice(), || format!("{id}: compress remap differs"))?;
    check_remap(&c.remap, c.dialogue.len(), "compress")?;
    ensure(rel_set(&c.dialogue.graph) == image(&d.graph, &want), || format!("{id}: compressed relations differ"))?;
    for (new, u) in c.dialogue.units.iter().enumerate() {
        let members: Vec<&ElementaryUnit> = (0..d.len()).filter(|&i| want[i] == Some(new)).map(|i| &d.units[i]).collect();
        let text = members.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("; ");
        ensure(u.index == new && u.text == text && u.kind == members[0].kind, || format!("{id}: merged unit {new} wrong"))?;
    }

    let p = prune_isolated_eeus(&d);
    let keep = expected_prune(&d);
    let mut next = 0;
    let want: Vec<Option<usize>> = keep
        .iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    ensure(p.remap.as_slice() == want.as_slice(), || format!("{id}: prune remap differs"))?;
    check_remap(&p.remap, p.dialogue.len(), "prune")?;
    ensure(rel_set(&p.dialogue.graph) == image(&d.graph, &want), || format!("{id}: pruned relations differ"))?;

    for (profile, prune_first) in [(Profile::Msdc, false), (Profile::StacSit, false), (Profile::StacSit, true), (Profile::StacL, false)] {
        let options = PipelineOptions { profile, prune_before_compress: prune_first };
        let (out, remap, _) = preprocess_dialogue(raw, &options).map_err(|e| format!("{id}: {e}"))?;
        let mut composed: Vec<Option<usize>> = (0..d.len()).map(Some).collect();
        for (_, stage) in &remap.stages {
            composed = composed.iter().map(|x| x.and_then(|i| stage.get(i))).collect();
        }
        ensure(remap.total.as_slice() == composed.as_slice(), || format!("{id} {profile}: composition differs from total"))?;
        check_remap(&remap.total, out.len(), "pipeline")?;
        ensure(rel_set(&out.graph) == image(&d.graph, &composed), || format!("{id} {profile}: pipeline relations differ"))?;
        ensure(out.graph.validate(&Taxonomy::msdc()).is_well_formed() && is_acyclic(&out.graph), || format!("{id} {profile}: bad graph"))?;
    }
    Ok(())
}

fn eu(i: usize, kind: UnitKind, speaker: &str, text: &str, turn: usize) -> ElementaryUnit {
    ElementaryUnit::new(i, kind, speaker, text, turn)
}

fn raw_rel(code: &str, src: Endpoint, tgt: Endpoint) -> RawRelation {
    RawRelation { label: label(code), src, tgt }
}

fn edus(n: usize) -> Vec<ElementaryUnit> {
    (0..n).map(|i| eu(i, UnitKind::Edu, if i % 2 == 0 { "A" } else { "B" }, &format!("u{i}"), i)).collect()
}

fn raw(units: Vec<ElementaryUnit>, relations: Vec<RawRelation>, cdus: Vec<Cdu>) -> RawDialogue {
    RawDialogue { id: "fixture".into(), units, relations, cdus }
}

fn fixtures() -> Result<usize, String> {
    use Endpoint::{Cdu as C, Unit as U};
    let cdu = |id: &str, members: Vec<Endpoint>| Cdu { id: id.into(), members };
    let set = |rels: &[(&str, usize, usize)]| -> BTreeSet<Triple> {
        rels.iter().map(|(c, i, j)| (c.to_string(), *i, *j)).collect()
    };
    let mut n = 0;

    // CDU head is its lowest member.
    let d = raw(edus(5), vec![raw_rel("ELAB", U(2), C("c1".into()))], vec![cdu("c1", vec![U(3), U(4)])]);
    ensure(rel_set(&flatten_cdus(&d).unwrap().0.graph) == set(&[("ELAB", 2, 3)]), || "ELAB(2,c1)".into())?;
    n += 1;
    // Nested CDUs resolve recursively.
    let d = raw(
        edus(7),
        vec![raw_rel("RES", C("c2".into()), U(6))],
        vec![cdu("c1", vec![U(3), U(4)]), cdu("c2", vec![C("c1".into()), U(5)])],
    );
    ensure(rel_set(&flatten_cdus(&d).unwrap().0.graph) == set(&[("RES", 3, 6)]), || "RES(c2,6)".into())?;
    n += 1;
    // No CDUs: identity.
    let d = raw(edus(3), vec![raw_rel("ACK", U(0), U(2))], vec![]);
    let (f, _) = flatten_cdus(&d).unwrap();
    ensure(f.to_raw() == d, || "flatten identity".into())?;
    n += 1;

    // A run of two moves merges; later indices shift down by one.
    let units = vec![
        eu(0, UnitKind::Edu, "Architect", "place blue", 0),
        eu(1, UnitKind::Eeu, "Builder", "place blue", 1),
        eu(2, UnitKind::Eeu, "Builder", "place blue", 1),
        eu(3, UnitKind::Edu, "Architect", "good", 2),
    ];
    let d = Dialogue { units, graph: DiscourseGraph::from_relations("fixture", 4, vec![rel("RES", 0, 1), rel("CORR", 2, 3)]).unwrap() };
    let c = compress_eeu_sequences(&d);
    ensure(c.dialogue.len() == 3 && c.dialogue.units[1].text == "place blue; place blue", || "merged text".into())?;
    ensure(rel_set(&c.dialogue.graph) == set(&[("RES", 0, 1), ("CORR", 1, 2)]), || "compress rewiring".into())?;
    ensure(c.remap.as_slice() == [Some(0), Some(1), Some(1), Some(2)], || "compress remap".into())?;
    n += 1;
    // Two relations landing on one run deduplicate with a logged discard.
    let d = Dialogue {
        units: vec![
            eu(0, UnitKind::Edu, "Architect", "go", 0),
            eu(1, UnitKind::Eeu, "Builder", "a", 1),
            eu(2, UnitKind::Eeu, "Builder", "b", 1),
        ],
        graph: DiscourseGraph::from_relations("fixture", 3, vec![rel("RES", 0, 1), rel("RES", 0, 2)]).unwrap(),
    };
    let c = compress_eeu_sequences(&d);
    ensure(rel_set(&c.dialogue.graph) == set(&[("RES", 0, 1)]) && c.discards.len() == 1, || "compress dedup".into())?;
    n += 1;
    // Nothing adjacent: identity remap.
    let d = Dialogue { units: edus(4), graph: DiscourseGraph::from_relations("fixture", 4, vec![rel("ACK", 0, 3)]).unwrap() };
    let c = compress_eeu_sequences(&d);
    ensure(c.remap.is_identity() && c.dialogue == d, || "compress identity".into())?;
    n += 1;

    // Lone EEU and an EEU pair that never reaches an EDU are pruned; an EEU
    // attached to an EDU stays.
    let units = vec![
        eu(0, UnitKind::Edu, "A", "hi", 0),
        eu(1, UnitKind::Eeu, "B", "lone", 1),
        eu(2, UnitKind::Eeu, "C", "x", 2),
        eu(3, UnitKind::Eeu, "D", "y", 3),
        eu(4, UnitKind::Eeu, "E", "kept", 4),
    ];
    let d = Dialogue { units, graph: DiscourseGraph::from_relations("fixture", 5, vec![rel("RES", 2, 3), rel("RES", 0, 4)]).unwrap() };
    let p = prune_isolated_eeus(&d);
    ensure(p.remap.as_slice() == [Some(0), None, None, None, Some(1)], || "prune remap".into())?;
    ensure(rel_set(&p.dialogue.graph) == set(&[("RES", 0, 1)]), || "prune relations".into())?;
    n += 1;

    // msdc profile: one CDU plus one run, counted by hand.
    let units = vec![
        eu(0, UnitKind::Edu, "Architect", "put two", 0),
        eu(1, UnitKind::Edu, "Architect", "red blocks", 0),
        eu(2, UnitKind::Eeu, "Builder", "place red", 1),
        eu(3, UnitKind::Eeu, "Builder", "place red", 1),
        eu(4, UnitKind::Edu, "Architect", "yes", 2),
    ];
    let d = raw(
        units,
        vec![
            raw_rel("RES", C("c1".into()), U(2)),
            raw_rel("RES", U(1), U(3)),
            raw_rel("ACK", U(3), U(4)),
        ],
        vec![cdu("c1", vec![U(0), U(1)])],
    );
    let (out, remap, _) = preprocess_dialogue(&d, &PipelineOptions::new(Profile::Msdc)).unwrap();
    ensure(rel_set(&out.graph) == set(&[("RES", 0, 2), ("RES", 1, 2), ("ACK", 2, 3)]), || "msdc pipeline relations".into())?;
    ensure(remap.total.as_slice() == [Some(0), Some(1), Some(2), Some(2), Some(3)], || "msdc pipeline remap".into())?;
    let stats = dialogue_stats(&out.to_raw()).unwrap();
    ensure((stats.edu_count, stats.eeu_count, stats.mpdu_count) == (3, 1, 1), || format!("msdc pipeline stats {stats:?}"))?;
    n += 1;

    // stac_sit: an isolated EEU chain disappears.
    let units = vec![
        eu(0, UnitKind::Edu, "A", "trade?", 0),
        eu(1, UnitKind::Edu, "B", "no", 1),
        eu(2, UnitKind::Eeu, "Server", "rolled", 2),
        eu(3, UnitKind::Eeu, "Server2", "got", 3),
        eu(4, UnitKind::Eeu, "Server3", "built", 4),
    ];
    let d = raw(units, vec![raw_rel("QAP", U(0), U(1)), raw_rel("RES", U(2), U(3)), raw_rel("RES", U(3), U(4))], vec![]);
    let (out, _, _) = preprocess_dialogue(&d, &PipelineOptions::new(Profile::StacSit)).unwrap();
    ensure(out.len() == 2 && rel_set(&out.graph) == set(&[("QAP", 0, 1)]), || "stac_sit chain".into())?;
    n += 1;

    // Molweni profile leaves a dialogue untouched.
    let d = raw(edus(4), vec![raw_rel("QAP", U(0), U(1)), raw_rel("ACK", U(1), U(3))], vec![]);
    let (out, remap, _) = preprocess_dialogue(&d, &PipelineOptions::new(Profile::Molweni)).unwrap();
    ensure(out.to_raw() == d && remap.total.is_identity(), || "molweni identity".into())?;
    n += 1;

    // Multi-parent count by brute force.
    let d = raw(
        vec![eu(0, UnitKind::Edu, "A", "a", 0), eu(1, UnitKind::Edu, "B", "b", 1), eu(2, UnitKind::Eeu, "C", "c", 2)],
        vec![raw_rel("RES", U(0), U(2)), raw_rel("ACK", U(1), U(2))],
        vec![],
    );
    let s = dialogue_stats(&d).unwrap();
    ensure(
        (s.edu_count, s.eeu_count, s.mpdu_count, s.mpdu3_count) == (2, 1, 1, 0),
        || format!("stats fixture {s:?}"),
    )?;
    n += 1;
    Ok(n)
}

fn preprocessing() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let params = SynthParams { eeu_prob: 0.45, ..SynthParams::default() };
    let mut cdus = 0;
    for n in 0..500 {
        let raw = random_raw_dialogue(&mut rng, &format!("p{n}"), &params);
        cdus += raw.cdus.len();
        check_stage_outputs(&raw)?;
    }
    let fixtures = fixtures()?;
    Ok(format!("500 random dialogues ({cdus} CDUs) and {fixtures} hand-built fixtures"))
}

// ---------------------------------------------------------------------------
// 7. Ablation edits.

const TRIANGLE_CODES: [&str; 10] = ["CORR", "CORR", "RES", "RES", "QAP", "ACK", "CLARIFQ", "QELAB", "CONFQ", "NARR"];

/// Synthetic dialogues relabeled over a small label set so question,
/// correction and narration patterns are frequent.
fn relabeled_dialogues(rng: &mut ChaCha8Rng, count: usize) -> Vec<Dialogue> {
    (0..count)
        .map(|n| {
            let (units, graph) = random_dialogue(rng, &format!("a{n}"), &SynthParams { extra_parent_prob: 0.6, ..SynthParams::default() });
            let rels: Vec<_> = graph.iter().map(|r| rel(TRIANGLE_CODES.choose(rng).unwrap(), r.source, r.target)).collect();
            let graph = DiscourseGraph::from_relations(graph.dialogue_id(), graph.unit_count(), rels).unwrap();
            Dialogue { units, graph }
        })
        .collect()
}

fn ablation_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let tax = Taxonomy::msdc();
    let dialogues = relabeled_dialogues(&mut rng, 300);
    let gold = gold_of(&dialogues);
    let backend = NoisyOracleBackend::new(gold.clone(), &tax, 0.15, 0.0, 7).map_err(|e| e.to_string())?;
    let cfg = EngineConfig::new(ContextMode::Gold, tax.clone());
    let run = run_corpus(&dialogues, &backend, &cfg, 4, None).map_err(|e| e.to_string())?;
    let pred = run.graphs();
    let samples: Vec<Sample> = run.steps().map(|s| s.sample.clone()).collect();

    // Random structure: count and containment over 10,000 trials.
    let mut trials = 0;
    while trials < 10_000 {
        for s in &samples {
            let seed = rng.gen();
            let r = perturb_random(s, &tax, seed);
            ensure(r.context.len() == s.context.len(), || format!("{} turn {}: count changed", s.dialogue_id, s.turn_id))?;
            let l = s.window_start();
            ensure(r.context.iter().all(|x| l <= x.source && x.source < x.target && x.target < s.turn_start && tax.contains(&x.label)), || {
                format!("{} turn {}: perturbed relation outside the window", s.dialogue_id, s.turn_id)
            })?;
            ensure(r.window_units == s.window_units && r == perturb_random(s, &tax, seed), || "perturbation not pure".into())?;
            trials += 1;
            if trials == 10_000 {
                break;
            }
        }
    }

    for s in &samples {
        let n = strip_structure(s);
        ensure(n.context.is_empty() && n.window_units == s.window_units && n.turn_start == s.turn_start, || "strip_structure".into())?;
    }

    // Question relations only, and only on turns with a correct QAP.
    let questions = ["CLARIFQ", "CONFQ", "QELAB"];
    let qap = ablate_qap(&samples, &pred, &gold).map_err(|e| e.to_string())?;
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| {
            pred[&s.dialogue_id]
                .iter()
                .any(|r| r.label.as_str() == "QAP" && s.turn_range().contains(&r.target) && gold[&s.dialogue_id].contains(r))
        })
        .collect();
    ensure(qap.len() == selected.len() && !qap.is_empty(), || format!("qap selected {} of {} expected", qap.len(), selected.len()))?;
    for (before, after) in selected.iter().zip(&qap) {
        let kept: Vec<&RelationInstance> = before.context.iter().filter(|r| !questions.contains(&r.label.as_str())).collect();
        ensure(after.context.iter().collect::<Vec<_>>() == kept, || format!("{} turn {}: qap edit", before.dialogue_id, before.turn_id))?;
        ensure(after.window_units == before.window_units, || "qap touched units".into())?;
    }

    // Exactly one relabel per selected sample.
    let corr = ablate_correction_triangle(&samples, &pred, &gold).map_err(|e| e.to_string())?;
    let mut expected = 0;
    let mut outputs = corr.iter();
    for s in &samples {
        let g = &gold[&s.dialogue_id];
        let p = &pred[&s.dialogue_id];
        let mut best: Option<(usize, usize, usize)> = None;
        for opening in s.context.iter().filter(|r| r.label.as_str() == "CORR") {
            let (x, y) = opening.pair();
            for z in s.turn_range() {
                let closing = rel("CORR", x, z);
                if p.contains(&closing) && g.contains(&closing) && g.contains(&rel("RES", y, z)) {
                    best = best.max(Some((y, x, z)));
                }
            }
        }
        let Some((y, x, _)) = best else { continue };
        expected += 1;
        let after = outputs.next().ok_or("fewer triangle samples than expected")?;
        let diffs: Vec<(usize, &RelationInstance)> =
            after.context.iter().enumerate().filter(|(i, r)| s.context[*i] != **r).collect();
        ensure(after.context.len() == s.context.len() && diffs.len() == 1, || format!("{} turn {}: {} labels changed", s.dialogue_id, s.turn_id, diffs.len()))?;
        let (i, changed) = diffs[0];
        ensure(s.context[i] == rel("CORR", x, y) && *changed == rel("ACK", x, y), || format!("{} turn {}: wrong edit", s.dialogue_id, s.turn_id))?;
    }
    ensure(outputs.next().is_none() && expected > 0, || format!("triangle samples: {} produced, {expected} expected", corr.len()))?;

    // Second pass: only adds, and a second application adds nothing.
    let mut added = 0;
    for d in &dialogues {
        let once = second_pass_narration(&pred[d.id()], &d.units);
        ensure(pred[d.id()].iter().all(|r| once.graph.contains(r)), || format!("{}: second pass removed a relation", d.id()))?;
        ensure(once.graph.len() == pred[d.id()].len() + once.added.len(), || format!("{}: added count", d.id()))?;
        let twice = second_pass_narration(&once.graph, &d.units);
        ensure(twice.graph == once.graph && twice.added.is_empty(), || format!("{}: second pass not idempotent", d.id()))?;
        added += once.added.len();
    }
    Ok(format!(
        "10000 random perturbations; {} samples stripped; {} qap and {} triangle edits; {added} second-pass edges",
        samples.len(),
        qap.len(),
        corr.len()
    ))
}

// ---------------------------------------------------------------------------
// 8. Published corpus counts, only when the corpus is available.

fn corpus_statistics() -> Result<String, String> {
    let reference = dialparse::report::corpus_reference("msdc").ok_or("no bundled reference")?;
    let mut lines = Vec::new();
    for (split, var) in [("train", "DIALPARSE_MSDC_TRAIN"), ("test", "DIALPARSE_MSDC_TEST")] {
        let Some(path) = std::env::var_os(var) else {
            lines.push(format!("{split}: skipped, {var} not set"));
            continue;
        };
        let options = LoadOptions { name: Some("msdc".into()), split: split.parse().unwrap(), taxonomy: None };
        let loaded = match load_corpus(Path::new(&path), CorpusFormat::Msdc, &options) {
            Ok(l) => l,
            Err(e) => {
                lines.push(format!("{split}: cannot load: {e}"));
                continue;
            }
        };
        let out = preprocess_pipeline(&loaded.corpus, &PipelineOptions::new(Profile::Msdc)).map_err(|e| e.to_string())?;
        let got = corpus_stats(&out.corpus).map_err(|e| e.to_string())?;
        let want = reference.stats[split];
        if got == want {
            lines.push(format!("{split}: matches published counts"));
        } else {
            lines.push(format!("{split}: got {got:?}, published {want:?}; per-dialogue counts follow"));
            for d in &out.corpus.dialogues {
                let s = dialogue_stats(d).map_err(|e| e.to_string())?;
                eprintln!("  {split} {}: EDU {} EEU {} MPDU {} MPDU=3 {} MPDU>3 {}", d.id, s.edu_count, s.eeu_count, s.mpdu_count, s.mpdu3_count, s.mpdu_gt3_count);
            }
        }
    }
    Ok(format!("reported only, not gated; {}", lines.join("; ")))
}

// ---------------------------------------------------------------------------
// 9. Whole pipeline twice, byte for byte.

fn pipeline_outputs(dir: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let tax = Taxonomy::msdc();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    let mut corpus = Corpus::new("determinism", Split::Test, tax.clone());
    for n in 0..40 {
        corpus.dialogues.push(random_raw_dialogue(&mut rng, &format!("r{n:02}"), &SynthParams::default()));
    }
    let raw_path = dir.join("raw.jsonl");
    write_corpus(&corpus, &raw_path).map_err(|x| e(&x))?;

    let read = read_canonical(&raw_path).map_err(|x| e(&x))?;
    let out = preprocess_pipeline(&read, &PipelineOptions::new(Profile::StacSit)).map_err(|x| e(&x))?;
    let pre_path = dir.join("pre.jsonl");
    write_corpus(&out.corpus, &pre_path).map_err(|x| e(&x))?;
    write_remaps(&dir.join("remap.jsonl"), &out.remaps).map_err(|x| e(&x))?;

    let pre = read_canonical(&pre_path).map_err(|x| e(&x))?;
    let dialogues = flat(&pre);
    let gold = gold_of(&dialogues);
    let backend = NoisyOracleBackend::new(gold.clone(), &tax, 0.25, 0.25, 99).map_err(|x| e(&x))?;
    let cfg = EngineConfig::new(ContextMode::Predicted, tax.clone());
    let run = run_corpus(&dialogues, &backend, &cfg, threads, None).map_err(|x| e(&x))?;
    write_predictions(&dir.join("pred.jsonl"), &from_run(&run)).map_err(|x| e(&x))?;
    write_step_log(&dir.join("steps.jsonl"), run.steps()).map_err(|x| e(&x))?;

    let pred = graphs(&read_predictions(&dir.join("pred.jsonl")).map_err(|x| e(&x))?);
    let options = EvalOptions { cutoff: Some(10), breakdowns: vec![(label("NARR"), 15)] };
    let report = evaluate(&gold, &pred, &tax, &options).map_err(|x| e(&x))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).unwrap()).map_err(|x| e(&x))?;
    std::fs::write(dir.join("report.txt"), render_report(&report, &tax, None)).map_err(|x| e(&x))?;

    ["raw.jsonl", "pre.jsonl", "remap.jsonl", "pred.jsonl", "steps.jsonl", "report.json", "report.txt"]
        .iter()
        .map(|name| Ok((name.to_string(), std::fs::read(dir.join(name)).map_err(|x| e(&x))?)))
        .collect()
}

fn determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_outputs(a.path(), 1)?;
    let second = pipeline_outputs(b.path(), 8)?;
    let mut bytes = 0;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
        bytes += x.len();
    }
    Ok(format!("{} files, {bytes} bytes identical across runs with 1 and 8 threads", first.len()))
}
