use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use dialparse::ablation;
use dialparse::backend::{Backend, NoisyOracleBackend, OracleBackend, RemoteBackend, RemoteConfig};
use dialparse::corpus::{
    corpus_stats, load_corpus, read_canonical, summarize_discards, write_corpus, Corpus, CorpusStats, Discard,
    LoadOptions,
};
use dialparse::engine::{self, EngineConfig, Sample, DEFAULT_WINDOW};
use dialparse::metrics::{evaluate, EvalOptions, EvalReport};
use dialparse::predictions::{self, PredictedDialogue, Predictions};
use dialparse::preprocess::{preprocess_pipeline, write_remaps, PipelineOptions};
use dialparse::report;
use dialparse::taxonomy::{Label, Taxonomy};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{BackendSection, FileConfig};
use crate::error::{config, input, CliError};
use crate::manifest::Recorder;
use crate::{AblateArgs, AblationKind, BackendFlags, BackendKind, ContextAblation, EngineFlags, EvalArgs};
use crate::{ParseArgs, PreprocessArgs, ReportArgs, StatsArgs};

const DEFAULT_CUTOFF: usize = 10;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    // A closed pipe is not an error worth reporting.
    let _ = out.write_all(text.as_bytes());
}

fn reference_for(key: Option<&str>) -> Result<Option<&'static report::CorpusReference>, CliError> {
    key.map(|k| report::corpus_reference(k).ok_or_else(|| config(format!("no reference data for corpus {k:?}"))))
        .transpose()
}

pub fn preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let taxonomy = args.taxonomy.as_deref().map(Taxonomy::by_id).transpose()?;
    let options = LoadOptions {
        name: args.name.clone(),
        split: args.split,
        taxonomy,
    };
    let settings = json!({
        "format": format!("{:?}", args.format),
        "profile": args.profile.to_string(),
        "prune_first": args.prune_first,
        "split": args.split.to_string(),
        "name": args.name,
        "taxonomy": args.taxonomy,
    });
    let mut rec = Recorder::start("preprocess", settings, None);
    if args.input.is_file() {
        rec.input(&args.input);
    }

    let loaded = load_corpus(&args.input, args.format, &options)?;
    let mut pipeline = PipelineOptions::new(args.profile);
    pipeline.prune_before_compress = args.prune_first;
    let out = preprocess_pipeline(&loaded.corpus, &pipeline)?;
    let mut discards: Vec<Discard> = loaded.discards;
    discards.extend(out.discards);

    write_corpus(&out.corpus, &args.out)?;
    let mut outputs = vec![args.out.as_path()];
    if let Some(path) = &args.remap {
        write_remaps(path, &out.remaps).map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
        outputs.push(path);
    }
    if let Some(path) = &args.discards {
        let mut text = String::new();
        for d in &discards {
            text.push_str(&serde_json::to_string(d).expect("serializable"));
            text.push('\n');
        }
        write_text(path, &text)?;
        outputs.push(path);
    }
    for (reason, n) in summarize_discards(&discards) {
        tracing::info!(?reason, count = n, "discarded");
    }
    rec.finish(&args.out, &outputs)
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsColumn {
    name: String,
    #[serde(flatten)]
    stats: CorpusStats,
}

fn stats_columns(corpora: &[(String, Corpus)]) -> Result<Vec<(String, CorpusStats)>, CliError> {
    corpora
        .iter()
        .map(|(name, c)| Ok((name.clone(), corpus_stats(c)?)))
        .collect()
}

pub fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let reference = reference_for(args.reference.as_deref())?;
    let mut rec = Recorder::start("stats", json!({ "reference": args.reference }), None);
    let mut corpora = Vec::new();
    for path in &args.inputs {
        rec.input(path);
        let corpus = read_canonical(path)?;
        corpora.push((corpus.split.to_string(), corpus));
    }
    let columns = stats_columns(&corpora)?;
    print(&report::render_stats(&columns, reference));
    if let Some(out) = &args.out {
        let json: Vec<StatsColumn> = columns
            .into_iter()
            .map(|(name, stats)| StatsColumn { name, stats })
            .collect();
        write_json(out, &json)?;
        rec.finish(out, &[out])?;
    }
    Ok(())
}

/// Backend selection after merging flags over the config file.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BackendSettings {
    Oracle,
    Noisy { p_drop: f64, p_relabel: f64 },
    Remote(RemoteConfig),
}

fn resolve_backend(flags: &BackendFlags, file: &BackendSection) -> Result<BackendSettings, CliError> {
    let kind = match (flags.backend, file.kind.as_deref()) {
        (Some(k), _) => k,
        (None, Some("oracle")) => BackendKind::Oracle,
        (None, Some("noisy")) => BackendKind::Noisy,
        (None, Some("remote")) => BackendKind::Remote,
        (None, Some(other)) => return Err(config(format!("unknown backend kind {other:?}"))),
        (None, None) => return Err(config("no backend selected; pass --backend or set backend.kind")),
    };
    Ok(match kind {
        BackendKind::Oracle => BackendSettings::Oracle,
        BackendKind::Noisy => BackendSettings::Noisy {
            p_drop: flags.p_drop.or(file.p_drop).unwrap_or(0.0),
            p_relabel: flags.p_relabel.or(file.p_relabel).unwrap_or(0.0),
        },
        BackendKind::Remote => {
            let url = file.url.clone().ok_or_else(|| config("backend.url is required for the remote backend"))?;
            let model = file.model.clone().ok_or_else(|| config("backend.model is required for the remote backend"))?;
            let mut rc = RemoteConfig::new(url, model);
            rc.auth_env = file.auth_env.clone();
            rc.timeout_ms = file.timeout_ms.unwrap_or(rc.timeout_ms);
            rc.max_attempts = file.max_attempts.unwrap_or(rc.max_attempts);
            rc.concurrency = file.concurrency.unwrap_or(rc.concurrency);
            rc.backoff_base_ms = file.backoff_base_ms.unwrap_or(rc.backoff_base_ms);
            rc.backoff_max_ms = file.backoff_max_ms.unwrap_or(rc.backoff_max_ms);
            rc.api = file.api.unwrap_or(rc.api);
            BackendSettings::Remote(rc)
        }
    })
}

fn build_backend(
    settings: &BackendSettings,
    gold: Option<&Corpus>,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<Box<dyn Backend>, CliError> {
    let gold_graphs = || -> Result<_, CliError> {
        let corpus = gold.ok_or_else(|| config("oracle backends need gold structure; pass --gold"))?;
        Ok(corpus.gold_graphs()?)
    };
    Ok(match settings {
        BackendSettings::Oracle => Box::new(OracleBackend::new(gold_graphs()?)),
        BackendSettings::Noisy { p_drop, p_relabel } => Box::new(NoisyOracleBackend::new(
            gold_graphs()?,
            taxonomy,
            *p_drop,
            *p_relabel,
            seed,
        )?),
        BackendSettings::Remote(rc) => Box::new(RemoteBackend::new(rc.clone())?),
    })
}

fn engine_config(flags: &EngineFlags, mode: Option<engine::ContextMode>, file: &FileConfig, taxonomy: &Taxonomy) -> EngineConfig {
    let e = &file.engine;
    let mut cfg = EngineConfig::new(mode.or(e.mode).unwrap_or_default(), taxonomy.clone());
    cfg.window = flags.window.or(e.window).unwrap_or(DEFAULT_WINDOW);
    cfg.max_new_tokens = flags.max_new_tokens.or(e.max_new_tokens).unwrap_or(cfg.max_new_tokens);
    cfg.temperature = flags.temperature.or(e.temperature).unwrap_or(cfg.temperature);
    cfg.stop = e.stop.clone().unwrap_or_default();
    cfg
}

fn engine_json(cfg: &EngineConfig, parallelism: usize) -> serde_json::Value {
    json!({
        "mode": cfg.mode,
        "window": cfg.window,
        "max_new_tokens": cfg.max_new_tokens,
        "temperature": cfg.temperature,
        "stop": cfg.stop,
        "parallelism": parallelism,
    })
}

fn parallelism(flags: &EngineFlags, file: &FileConfig) -> usize {
    flags
        .parallelism
        .or(file.engine.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .max(1)
}

pub fn parse(args: &ParseArgs, file: &FileConfig) -> Result<(), CliError> {
    let corpus = read_canonical(&args.input)?;
    let dialogues = corpus.flat_dialogues()?;
    let taxonomy = corpus.taxonomy.clone();
    let cfg = engine_config(&args.engine, args.mode, file, &taxonomy);
    let threads = parallelism(&args.engine, file);
    let seed = args.backend.seed.or(file.seed).unwrap_or(0);
    let settings = resolve_backend(&args.backend, &file.backend)?;

    let mut rec = Recorder::start(
        "parse",
        json!({
            "taxonomy": taxonomy.id(),
            "engine": engine_json(&cfg, threads),
            "backend": settings,
            "ablation": args.ablation,
        }),
        Some(seed),
    );
    rec.input(&args.input);

    let backend = build_backend(&settings, Some(&corpus), &taxonomy, seed)?;
    let rand = |s: Sample| ablation::perturb_random(&s, &taxonomy, seed);
    let null = |s: Sample| ablation::strip_structure(&s);
    let hook: Option<engine::SampleHook<'_>> = match args.ablation {
        Some(ContextAblation::Rand) => Some(&rand),
        Some(ContextAblation::Null) => Some(&null),
        None => None,
    };
    let run = engine::run_corpus(&dialogues, backend.as_ref(), &cfg, threads, hook)?;

    predictions::write_predictions(&args.out, &predictions::from_run(&run))?;
    let mut outputs = vec![args.out.as_path()];
    if let Some(log) = &args.log {
        predictions::write_step_log(log, run.steps())?;
        outputs.push(log);
    }
    rec.finish(&args.out, &outputs)?;

    let failures = run.failures();
    if let Some((id, why)) = failures.first() {
        return Err(CliError::Backend(format!(
            "{} of {} dialogues failed; first {id:?}: {why}",
            failures.len(),
            run.runs.len()
        )));
    }
    Ok(())
}

fn parse_breakdown(entry: &str, taxonomy: &Taxonomy) -> Result<(Label, usize), CliError> {
    let (name, max) = entry
        .rsplit_once(':')
        .ok_or_else(|| config(format!("breakdown {entry:?} is not label:max_distance")))?;
    let max: usize = max.parse().map_err(|_| config(format!("breakdown {entry:?}: bad distance")))?;
    Ok((taxonomy.resolve(name)?.code.clone(), max))
}

pub fn eval(args: &EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let reference = reference_for(args.reference.as_deref())?;
    let gold_corpus = read_canonical(&args.gold)?;
    let taxonomy = gold_corpus.taxonomy.clone();
    let cutoff = match args.cutoff {
        Some(c) => c.0,
        None => Some(file.eval.cutoff.unwrap_or(DEFAULT_CUTOFF)),
    };
    let specs: Vec<String> = if args.breakdown.is_empty() {
        file.eval.breakdown.clone().unwrap_or_default()
    } else {
        args.breakdown.clone()
    };
    let breakdowns = specs
        .iter()
        .map(|s| parse_breakdown(s, &taxonomy))
        .collect::<Result<Vec<_>, _>>()?;
    let options = EvalOptions { cutoff, breakdowns };

    let mut rec = Recorder::start("eval", json!({ "taxonomy": taxonomy.id(), "options": options }), None);
    rec.input(&args.gold);
    rec.input(&args.pred);

    let gold = gold_corpus.gold_graphs()?;
    let pred = predictions::read_predictions(&args.pred)?;
    for (id, p) in &pred {
        if let (Some(failure), Some(_)) = (&p.failure, gold.get(id)) {
            tracing::warn!(dialogue = %id, %failure, "scoring a partial parse");
        }
        if let Some(g) = gold.get(id) {
            if g.unit_count() != p.graph.unit_count() {
                return Err(input(format!(
                    "dialogue {id:?} has {} units in gold but {} in predictions",
                    g.unit_count(),
                    p.graph.unit_count()
                )));
            }
        }
    }
    let report = evaluate(&gold, &predictions::graphs(&pred), &taxonomy, &options)?;
    print(&report::render_report(&report, &taxonomy, reference));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        rec.finish(out, &[out])?;
    }
    Ok(())
}

fn required<'a, T>(value: &'a Option<T>, flag: &str, kind: AblationKind) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| {
        let kind = serde_json::to_value(kind).expect("serializable");
        config(format!("--{flag} is required for --kind {}", kind.as_str().unwrap_or_default()))
    })
}

pub fn ablate(args: &AblateArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = args.backend.seed.or(file.seed).unwrap_or(0);
    let gold_corpus = args.gold.as_deref().map(read_canonical).transpose()?;
    let taxonomy = match (&gold_corpus, &args.taxonomy) {
        (Some(c), _) => c.taxonomy.clone(),
        (None, Some(id)) => Taxonomy::by_id(id)?,
        (None, None) => Taxonomy::msdc(),
    };
    let mut settings = json!({ "kind": args.kind, "taxonomy": taxonomy.id() });
    let mut rec = Recorder::start("ablate", settings.clone(), Some(seed));
    for path in [&args.samples, &args.pred, &args.gold].into_iter().flatten() {
        rec.input(path);
    }

    if args.kind == AblationKind::NarrPass2 {
        let gold = gold_corpus.as_ref().ok_or_else(|| config("--gold is required for --kind narr-pass2"))?;
        let pred = predictions::read_predictions(required(&args.pred, "pred", args.kind)?)?;
        let units: BTreeMap<String, _> = gold
            .flat_dialogues()?
            .into_iter()
            .map(|d| (d.id().to_string(), d.units))
            .collect();
        let mut out = Predictions::new();
        for (id, p) in pred {
            let u = units.get(&id).ok_or_else(|| input(format!("dialogue {id:?} is not in the gold corpus")))?;
            let pass = ablation::second_pass_narration(&p.graph, u);
            let mut second_pass = p.second_pass;
            second_pass.extend(pass.added);
            out.insert(
                id,
                PredictedDialogue {
                    graph: pass.graph,
                    second_pass,
                    failure: p.failure,
                },
            );
        }
        predictions::write_predictions(&args.out, &out)?;
        return rec.finish(&args.out, &[&args.out]);
    }

    let samples = predictions::read_samples(required(&args.samples, "samples", args.kind)?)?;
    let edited = match args.kind {
        AblationKind::Rand => samples.iter().map(|s| ablation::perturb_random(s, &taxonomy, seed)).collect(),
        AblationKind::Null => samples.iter().map(ablation::strip_structure).collect(),
        AblationKind::Qap | AblationKind::CorrTriangle => {
            let pred = predictions::graphs(&predictions::read_predictions(required(&args.pred, "pred", args.kind)?)?);
            let gold = gold_corpus
                .as_ref()
                .ok_or_else(|| config("--gold is required for this ablation"))?
                .gold_graphs()?;
            if args.kind == AblationKind::Qap {
                ablation::ablate_qap(&samples, &pred, &gold)?
            } else {
                ablation::ablate_correction_triangle(&samples, &pred, &gold)?
            }
        }
        AblationKind::NarrPass2 => unreachable!("handled above"),
    };
    tracing::info!(read = samples.len(), written = edited.len(), "ablation");
    predictions::write_samples(&args.out, &edited)?;
    let mut outputs = vec![args.out.as_path()];

    if let Some(log) = &args.rerun {
        let backend_settings = resolve_backend(&args.backend, &file.backend)?;
        let cfg = engine_config(&args.engine, None, file, &taxonomy);
        cfg.validate()?;
        settings["rerun"] = json!({ "backend": backend_settings, "engine": engine_json(&cfg, 1) });
        rec = Recorder::start("ablate", settings, Some(seed));
        for path in [&args.samples, &args.pred, &args.gold].into_iter().flatten() {
            rec.input(path);
        }
        let backend = build_backend(&backend_settings, gold_corpus.as_ref(), &taxonomy, seed)?;
        let steps = edited
            .into_iter()
            .enumerate()
            .map(|(i, s)| engine::run_step(i, s, backend.as_ref(), &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        predictions::write_step_log(log, &steps)?;
        outputs.push(log);
    }
    rec.finish(&args.out, &outputs)
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    if args.eval.is_none() && args.stats.is_none() {
        return Err(config("nothing to render; pass --eval and/or --stats"));
    }
    let reference = reference_for(args.reference.as_deref())?;
    let mut text = String::new();
    if let Some(path) = &args.stats {
        let columns: Vec<StatsColumn> = read_json(path)?;
        let columns: Vec<(String, CorpusStats)> = columns.into_iter().map(|c| (c.name, c.stats)).collect();
        text.push_str(&report::render_stats(&columns, reference));
    }
    if let Some(path) = &args.eval {
        let r: EvalReport = read_json(path)?;
        let taxonomy = Taxonomy::by_id(&r.taxonomy).map_err(|e| input(format!("{}: {e}", path.display())))?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&report::render_report(&r, &taxonomy, reference));
    }
    print(&text);
    Ok(())
}
