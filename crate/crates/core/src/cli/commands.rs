use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{Layout, RunConfig};
use crate::analysis::{layer_distribution, ParallelEmbeddings};
use crate::corpus::{
    generate_synthetic_language, load_manifest, make_parallel_set, sample_tokens, write_corpus_file, write_manifest,
    Corpus, CorpusManifest, LanguageId,
};
use crate::error::{Error, Result};
use crate::eval::{
    cross_steering_eval, param_ppl_change_matrix, ppl_change_matrix, prompts_from_corpus, ratio_sweep, steering_eval,
    LanguageClassifier,
};
use crate::identify::{
    lape_scores, lave_scores, pv_scores, pv_select, read_selection, select_lap, select_lape, select_lave,
    select_random_matched, stats_digest, write_selection, Method, NeuronSelection, ParamSelection,
};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::probe::{accumulate_sharded, export_trace, import_trace, ActivationStats};
use crate::report::Table;
use crate::trainer::{finetune_monolingual, train, RunManifest};

/// Experiments `cmd_experiment` can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExperimentKind {
    PerturbMatrix,
    RatioSweep,
    Steer,
    Analyze,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PerturbMatrix => "perturb-matrix",
            ExperimentKind::RatioSweep => "ratio-sweep",
            ExperimentKind::Steer => "steer",
            ExperimentKind::Analyze => "analyze",
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_table(path: &Path, table: &Table, hash: &str) -> Result<PathBuf> {
    write(path, table.to_csv(Some(hash))?)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} {} not found; run the earlier stage first", path.display())))
    }
}

fn load_model(path: &Path) -> Result<Model> {
    require(path, "checkpoint")?;
    load_checkpoint(path)
}

fn train_corpora(layout: &Layout) -> Result<BTreeMap<LanguageId, Corpus>> {
    require(&layout.train_manifest(), "corpus manifest")?;
    load_manifest(&layout.train_manifest())
}

fn heldout_corpora(layout: &Layout) -> Result<BTreeMap<LanguageId, Corpus>> {
    require(&layout.heldout_manifest(), "corpus manifest")?;
    load_manifest(&layout.heldout_manifest())
}

/// Checkpoint and config must describe the same model.
fn check_geometry(cfg: &RunConfig, model: &Model, checkpoint: &Path) -> Result<()> {
    let (a, b) = (&cfg.model, &model.config);
    let fields = [
        ("d_model", a.d_model, b.d_model),
        ("n_layers", a.n_layers, b.n_layers),
        ("n_heads", a.n_heads, b.n_heads),
        ("ffn_width", a.ffn_width, b.ffn_width),
        ("vocab_size", a.vocab_size, b.vocab_size),
        ("max_seq_len", a.max_seq_len, b.max_seq_len),
    ];
    let bad: Vec<String> = fields
        .iter()
        .filter(|(_, x, y)| x != y)
        .map(|(n, x, y)| format!("model.{n} = {x} but {} has {y}", checkpoint.display()))
        .collect();
    let kinds = a.ffn_kind == b.ffn_kind && a.act_kind == b.act_kind;
    if bad.is_empty() && kinds {
        return Ok(());
    }
    let mut msg = bad.join("; ");
    if !kinds {
        msg.push_str(&format!("{}FFN/activation kind differs from {}", if msg.is_empty() { "" } else { "; " }, checkpoint.display()));
    }
    Err(Error::Geometry(msg))
}

/// Write train/held-out corpora plus one manifest each. Synthetic languages
/// come from `corpus.languages`; with `paths.corpus_manifest` the external
/// corpora are split instead.
pub fn cmd_gen_corpus(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let full: BTreeMap<LanguageId, Corpus> = match &cfg.paths.corpus_manifest {
            Some(m) => load_manifest(m)?,
            None => cfg
                .corpus
                .languages
                .iter()
                .map(|s| {
                    let seed = cfg.stage_seed(&format!("corpus/{}", s.code));
                    Ok((s.code.clone(), generate_synthetic_language(s, cfg.corpus.tokens_per_language, seed)?))
                })
                .collect::<Result<_>>()?,
        };
        let mut train_m = CorpusManifest::default();
        let mut held_m = CorpusManifest::default();
        let mut out = Vec::new();
        for (l, c) in &full {
            let (tr, te) = c.split_tail(cfg.corpus.heldout_documents);
            if tr.is_empty() {
                return Err(Error::Config(format!("{l}: nothing left to train on after holding out documents")));
            }
            let (p_tr, p_te) = (layout.train_corpus(l), layout.heldout_corpus(l));
            write_corpus_file(&tr, &p_tr)?;
            write_corpus_file(&te, &p_te)?;
            train_m.languages.insert(l.clone(), vec![PathBuf::from(format!("train/{l}.txt"))]);
            held_m.languages.insert(l.clone(), vec![PathBuf::from(format!("heldout/{l}.txt"))]);
            log::info!("{l}: {} train tokens, {} held-out tokens", tr.len(), te.len());
            out.extend([p_tr, p_te]);
        }
        write_manifest(&train_m, &layout.train_manifest())?;
        write_manifest(&held_m, &layout.heldout_manifest())?;
        out.extend([layout.train_manifest(), layout.heldout_manifest()]);
        Ok(out)
    };
    run().map_err(|e| e.in_stage("gen-corpus"))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let corpora = train_corpora(&layout)?;
        let langs: Vec<LanguageId> = corpora.keys().cloned().collect();
        let tc = cfg.train.to_train_config(&langs, cfg.stage_seed("train"))?;
        let t = Instant::now();
        let (model, report) = train(cfg.model.clone(), &corpora, &tc)?;
        log::info!("trained {} steps in {:.1}s", report.steps, t.elapsed().as_secs_f64());
        let ckpt = layout.checkpoint();
        create_dir(ckpt.parent().expect("checkpoint has a parent"))?;
        save_checkpoint(&model, &ckpt)?;
        let manifest = ckpt.with_extension("json");
        RunManifest {
            kind: "train".into(),
            model: model.config.clone(),
            train: tc,
            base_checkpoint: None,
            report,
        }
        .write(&manifest)?;
        Ok(vec![ckpt, manifest])
    };
    run().map_err(|e| e.in_stage("train"))
}

/// Monolingual fine-tunes of the base checkpoint, for every language or
/// only `languages`.
pub fn cmd_finetune(cfg: &RunConfig, languages: Option<&[LanguageId]>) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let base_path = layout.checkpoint();
        let base = load_model(&base_path)?;
        check_geometry(cfg, &base, &base_path)?;
        let corpora = train_corpora(&layout)?;
        let todo: Vec<LanguageId> = match languages {
            Some(ls) => ls.to_vec(),
            None => corpora.keys().cloned().collect(),
        };
        let mut out = Vec::new();
        for l in &todo {
            let corpus = corpora
                .get(l)
                .ok_or_else(|| Error::Argument(format!("no training corpus for {l}")))?;
            let tc = cfg.finetune.to_train_config(l, cfg.stage_seed(&format!("finetune/{l}")))?;
            let (model, report) = finetune_monolingual(&base, l, corpus, &tc)?;
            let p = layout.finetuned(l);
            save_checkpoint(&model, &p)?;
            let manifest = p.with_extension("json");
            RunManifest {
                kind: "finetune".into(),
                model: model.config.clone(),
                train: tc,
                base_checkpoint: Some(base_path.display().to_string()),
                report,
            }
            .write(&manifest)?;
            out.extend([p, manifest]);
        }
        Ok(out)
    };
    run().map_err(|e| e.in_stage("finetune"))
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let ckpt = layout.checkpoint();
        let model = load_model(&ckpt)?;
        check_geometry(cfg, &model, &ckpt)?;
        let corpora = train_corpora(&layout)?;
        let mut stats = ActivationStats::for_model(&model.config, corpora.keys().cloned().collect())?;
        for (l, c) in &corpora {
            let c = match cfg.probe.tokens_per_language {
                Some(n) => sample_tokens(c, n, cfg.stage_seed(&format!("probe/{l}")))?,
                None => c.clone(),
            };
            let t = Instant::now();
            accumulate_sharded(&model, &c, &mut stats, cfg.probe.shards)?;
            let secs = t.elapsed().as_secs_f64();
            log::info!("probed {l}: {} tokens, {:.0} tokens/s", c.len(), c.len() as f64 / secs.max(1e-9));
        }
        let p = layout.trace();
        export_trace(&stats, &p)?;
        Ok(vec![p])
    };
    run().map_err(|e| e.in_stage("probe"))
}

fn load_stats(layout: &Layout) -> Result<ActivationStats> {
    require(&layout.trace(), "trace")?;
    import_trace(&layout.trace())
}

/// Recompute LAPE from the trace (used when random selection needs a size
/// reference that has not been written yet).
fn lape_selection(cfg: &RunConfig, stats: &ActivationStats) -> Result<NeuronSelection> {
    let mut sel = select_lape(&lape_scores(stats)?, stats, &cfg.selection)?;
    sel.provenance.stats_digest = Some(stats_digest(stats)?);
    Ok(sel)
}

/// Run one identification method and write its selection plus summary
/// tables: language counts and neurons per layer.
pub fn cmd_identify(cfg: &RunConfig, method: Method) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let hash = cfg.hash();
        let path = layout.selection(method);
        create_dir(path.parent().expect("selection has a parent"))?;
        let dir = path.parent().expect("selection has a parent").to_path_buf();
        if method == Method::Pv {
            let sel = pv_selection(cfg, &layout)?;
            let text = serde_json::to_string(&sel)?;
            let mut counts = Table::new(sel.languages.iter().map(|l| l.to_string()));
            counts.push(sel.languages.iter().map(|l| sel.sets[l].len().to_string()));
            return Ok(vec![
                write(&path, text)?,
                write_table(&dir.join("pv_counts.csv"), &counts, &hash)?,
            ]);
        }
        let stats = load_stats(&layout)?;
        let mut sel = match method {
            Method::Lape => lape_selection(cfg, &stats)?,
            Method::Lave => select_lave(&lave_scores(&stats, cfg.experiment.mean_mode)?, &stats, &cfg.selection)?,
            Method::Lap => select_lap(&stats, cfg.experiment.lap_cutoff)?,
            Method::Random => {
                let lp = layout.selection(Method::Lape);
                let reference = if lp.exists() { read_selection(&lp)? } else { lape_selection(cfg, &stats)? };
                select_random_matched(&reference, cfg.stage_seed("random"))?
            }
            Method::Pv => unreachable!("handled above"),
        };
        if sel.provenance.stats_digest.is_none() {
            sel.provenance.stats_digest = Some(stats_digest(&stats)?);
        }
        write_selection(&sel, &path)?;
        let hist = layer_distribution(&sel);
        log::info!("{} selection: {:?}", method.name(), sel.counts());
        Ok(vec![
            path,
            write_table(&dir.join(format!("{}_counts.csv", method.name())), &hist.totals_table(), &hash)?,
            write_table(&dir.join(format!("{}_layers.csv", method.name())), &hist.layer_table(), &hash)?,
        ])
    };
    run().map_err(|e| e.in_stage("identify"))
}

fn pv_selection(cfg: &RunConfig, layout: &Layout) -> Result<ParamSelection> {
    let base_path = layout.checkpoint();
    let base = load_model(&base_path)?;
    check_geometry(cfg, &base, &base_path)?;
    let langs: Vec<LanguageId> = train_corpora(layout)?.keys().cloned().collect();
    let mut ft = BTreeMap::new();
    for l in &langs {
        ft.insert(l.clone(), load_model(&layout.finetuned(l))?);
    }
    pv_select(&pv_scores(&base, &ft)?, &cfg.selection)
}

fn read_pv(path: &Path) -> Result<ParamSelection> {
    require(path, "selection")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_neurons(layout: &Layout, method: Method) -> Result<NeuronSelection> {
    let p = layout.selection(method);
    require(&p, "selection")?;
    read_selection(&p)
}

#[derive(Serialize)]
struct ExperimentManifest<'a> {
    kind: &'a str,
    method: &'a str,
    config_hash: String,
    seed: u64,
    files: Vec<String>,
}

/// Run one experiment; every output lands in `reports/<kind>/` together
/// with `manifest.json`.
pub fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind) -> Result<Vec<PathBuf>> {
    let run = || -> Result<Vec<PathBuf>> {
        let layout = cfg.layout();
        let dir = layout.reports(kind.name());
        create_dir(&dir)?;
        let ckpt = layout.checkpoint();
        let model = load_model(&ckpt)?;
        check_geometry(cfg, &model, &ckpt)?;
        let mut files = match kind {
            ExperimentKind::PerturbMatrix => perturb_matrix(cfg, &layout, &model, &dir)?,
            ExperimentKind::RatioSweep => sweep(cfg, &layout, &model, &dir)?,
            ExperimentKind::Steer => steer(cfg, &layout, &model, &dir)?,
            ExperimentKind::Analyze => analyze(cfg, &layout, &model, &dir)?,
        };
        let manifest = ExperimentManifest {
            kind: kind.name(),
            method: cfg.experiment.method.name(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            files: files
                .iter()
                .map(|f| f.file_name().expect("file").to_string_lossy().into_owned())
                .collect(),
        };
        files.push(write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?);
        Ok(files)
    };
    run().map_err(|e| e.in_stage("experiment"))
}

fn perturb_matrix(cfg: &RunConfig, layout: &Layout, model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let held = heldout_corpora(layout)?;
    let method = cfg.experiment.method;
    let grid = if method == Method::Pv {
        param_ppl_change_matrix(model, &read_pv(&layout.selection(Method::Pv))?, &held)?
    } else {
        ppl_change_matrix(model, &read_neurons(layout, method)?, &held)?
    };
    let name = method.name();
    let mut out = vec![
        write_table(&dir.join(format!("{name}_matrix.csv")), &grid.to_table(), &hash)?,
        write_table(&dir.join(format!("{name}_delta_grid.csv")), &grid.delta_grid(), &hash)?,
        write(&dir.join(format!("{name}_delta.svg")), grid.heatmap(&format!("PPL change ({name})")))?,
    ];
    let mut summary = Table::new(["language", "diagonal_delta", "dominant", "contrast"]);
    for (((l, d), dom), c) in grid
        .languages
        .iter()
        .zip(grid.diagonal_delta())
        .zip(grid.diagonal_dominance())
        .zip(grid.diagonal_contrast())
    {
        summary.push([l.to_string(), d.to_string(), dom.to_string(), c.to_string()]);
    }
    out.push(write_table(&dir.join(format!("{name}_summary.csv")), &summary, &hash)?);
    if cfg.experiment.random_baseline && method != Method::Pv {
        let reference = read_neurons(layout, method)?;
        let rs = select_random_matched(&reference, cfg.stage_seed("random"))?;
        let m = ppl_change_matrix(model, &rs, &held)?;
        out.push(write_table(&dir.join("random_matrix.csv"), &m.to_table(), &hash)?);
        out.push(write_table(&dir.join("random_delta_grid.csv"), &m.delta_grid(), &hash)?);
    }
    Ok(out)
}

fn sweep(cfg: &RunConfig, layout: &Layout, model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let held = heldout_corpora(layout)?;
    let stats = load_stats(layout)?;
    let langs = match &cfg.experiment.sweep_languages {
        Some(ls) => ls.clone(),
        None => stats.languages().to_vec(),
    };
    let mut out = Vec::new();
    for l in &langs {
        let (sw, _) = ratio_sweep(model, &stats, &held, &cfg.experiment.sweep_fractions, l, &cfg.selection)?;
        out.push(write_table(&dir.join(format!("sweep_{l}.csv")), &sw.to_table(), &hash)?);
        out.push(write(&dir.join(format!("sweep_{l}.svg")), sw.plot())?);
    }
    Ok(out)
}

fn steer(cfg: &RunConfig, layout: &Layout, model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let ex = &cfg.experiment;
    let train = train_corpora(layout)?;
    let held = heldout_corpora(layout)?;
    let stats = load_stats(layout)?;
    let sel = read_neurons(layout, ex.method)?;
    let classifier = LanguageClassifier::fit(&train)?;
    let prompts: BTreeMap<LanguageId, Vec<_>> = held
        .iter()
        .map(|(l, c)| (l.clone(), prompts_from_corpus(c, ex.steering_prompts, ex.prompt_len)))
        .collect();
    let scfg = ex.steering();
    let report = steering_eval(model, &prompts, &sel, &stats, &classifier, &scfg)?;
    let mut out = vec![
        write_table(&dir.join("steering.csv"), &report.to_table(), &hash)?,
        write(&dir.join("steering_transcripts.json"), serde_json::to_string_pretty(&report)?)?,
    ];
    let langs: Vec<&LanguageId> = prompts.keys().collect();
    let mut cross = Table::new(["source", "target", "prompts", "normal_target", "flipped", "flip_rate"]);
    let mut transcripts = Vec::new();
    for (i, src) in langs.iter().enumerate() {
        let tgt = langs[(i + 1) % langs.len()];
        let x = cross_steering_eval(model, &prompts[*src], src, tgt, &sel, &stats, &classifier, &scfg)?;
        cross.push([
            src.to_string(),
            tgt.to_string(),
            x.prompts.to_string(),
            x.normal_target.to_string(),
            x.flipped.to_string(),
            x.flip_rate().to_string(),
        ]);
        transcripts.push(x);
    }
    out.push(write_table(&dir.join("cross_steering.csv"), &cross, &hash)?);
    out.push(write(&dir.join("cross_transcripts.json"), serde_json::to_string_pretty(&transcripts)?)?);
    Ok(out)
}

fn analyze(cfg: &RunConfig, layout: &Layout, model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let sel = read_neurons(layout, cfg.experiment.method)?;
    let hist = layer_distribution(&sel);
    let mut out = vec![
        write_table(&dir.join("layers.csv"), &hist.layer_table(), &hash)?,
        write(&dir.join("layers.svg"), hist.plot())?,
    ];
    for (l, counts) in hist.languages.iter().zip(&hist.counts) {
        let mut t = Table::new(["layer", "neurons"]);
        for (i, c) in counts.iter().enumerate() {
            t.push([(i + 1).to_string(), c.to_string()]);
        }
        out.push(write_table(&dir.join(format!("layers_{l}.csv")), &t, &hash)?);
    }
    if cfg.paths.corpus_manifest.is_some() {
        log::warn!("no synthetic specs for external corpora; similarity curves skipped");
        return Ok(out);
    }
    let set = make_parallel_set(&cfg.corpus.languages, cfg.experiment.parallel_groups, cfg.stage_seed("parallel"))?;
    let emb = ParallelEmbeddings::compute(model, &set)?;
    let ses = emb.ses_curve()?;
    out.push(write_table(&dir.join("ses.csv"), &ses.to_table(), &hash)?);
    out.push(write(&dir.join("ses.svg"), ses.plot("Sentence embedding similarity"))?);
    let mut scores = Table::new(["target", "mean_dominance"]);
    for l in &set.languages {
        let d = emb.dominance_curve(l)?;
        scores.push([l.to_string(), d.score().to_string()]);
        out.push(write_table(&dir.join(format!("dominance_{l}.csv")), &d.to_table(), &hash)?);
        out.push(write(&dir.join(format!("dominance_{l}.svg")), d.plot(&format!("Mapped into {l}")))?);
    }
    out.push(write_table(&dir.join("dominance_scores.csv"), &scores, &hash)?);
    Ok(out)
}

/// Render every report CSV as a fixed-width table into `reports/summary.txt`.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let run = || -> Result<PathBuf> {
        let root = cfg.layout().root.join("reports");
        require(&root, "reports directory")?;
        let mut files = Vec::new();
        for kind in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
            let kind = kind.map_err(|e| Error::io(&root, e))?.path();
            if kind.is_dir() {
                for f in fs::read_dir(&kind).map_err(|e| Error::io(&kind, e))? {
                    let f = f.map_err(|e| Error::io(&kind, e))?.path();
                    if f.extension().is_some_and(|x| x == "csv") {
                        files.push(f);
                    }
                }
            }
        }
        files.sort();
        let mut text = format!("config_hash: {}\n", cfg.hash());
        for f in &files {
            let t = Table::from_csv(&fs::read_to_string(f).map_err(|e| Error::io(f, e))?)?;
            let name = f.strip_prefix(&root).unwrap_or(f).display().to_string();
            text.push_str(&format!("\n== {name}\n{}", t.to_text()));
        }
        write(&root.join("summary.txt"), text)
    };
    run().map_err(|e| e.in_stage("report"))
}
