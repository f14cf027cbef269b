use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use conscal::calibrator::{fit_pipeline, CalibratorModel, FeatureSource, FitOptions};
use conscal::consistency::{build_target, subsample_targets, ConsistencyTarget};
use conscal::evaluation::{self, EvalDataset, Method, Report};
use conscal::records::{self, LabelSet, SampleSet};
use conscal::{seed, synth, Error};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write_text(path, &text)
}

fn write_config(dir: &Path, cfg: &RunConfig, command: &str) -> CliResult<()> {
    write_json(&dir.join("config.json"), &cfg.echo(command))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

struct Data {
    sets: Vec<SampleSet>,
    labels: Option<LabelSet>,
    truth: Option<HashMap<String, f64>>,
}

fn load_sets(cfg: &RunConfig) -> CliResult<Vec<SampleSet>> {
    let queries = records::load_queries(cfg.data.queries()?)?;
    let loaded = records::load_generations(cfg.data.generations()?, &queries)?;
    warn_all(&loaded.warnings);
    Ok(loaded.value)
}

fn load_data(cfg: &RunConfig) -> CliResult<Data> {
    let sets = load_sets(cfg)?;
    let labels = cfg
        .data
        .labels()
        .map(|p| records::load_labels(p, &sets))
        .transpose()?;
    let truth = cfg.data.truth().map(synth::load_truth).transpose()?;
    Ok(Data { sets, labels, truth })
}

fn eval_dataset(cfg: &RunConfig) -> CliResult<EvalDataset> {
    let data = load_data(cfg)?;
    let ds = EvalDataset::build(data.sets, data.labels.as_ref(), data.truth.as_ref())?;
    warn_all(&ds.warnings);
    Ok(ds)
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let data = synth::generate(&cfg.synth)?;
    let dir = cfg.out_dir("synth")?;
    data.write_to(&dir)?;
    write_config(&dir, cfg, "synth")?;
    let (mean_pi, acc) = data.summary();
    println!(
        "n={} k={} mean_pi={mean_pi:.4} accuracy={acc:.4} -> {}",
        data.queries.len(),
        cfg.synth.k,
        dir.display()
    );
    Ok(())
}

/// Prints every diagnostic; data problems exit 1, unreadable files exit 2.
pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    let report = |label: &str, e: Error| -> CliError {
        if let Error::Invalid { diagnostics } = &e {
            for d in diagnostics {
                println!("{label}: {d}");
            }
            CliError::Data(format!("{label}: {} diagnostic(s)", diagnostics.len()))
        } else {
            CliError::Core(e)
        }
    };
    let qpath = cfg.data.queries()?;
    let queries = records::load_queries(&qpath).map_err(|e| report("queries", e))?;
    let gpath = cfg.data.generations()?;
    let loaded = records::load_generations(&gpath, &queries).map_err(|e| report("generations", e))?;
    warn_all(&loaded.warnings);
    let sets = loaded.value;
    let n_gen: usize = sets.iter().map(SampleSet::k).sum();
    let mut line = format!("ok: {} queries, {} generations", sets.len(), n_gen);
    if let Some(lpath) = cfg.data.labels() {
        let labels = records::load_labels(&lpath, &sets).map_err(|e| report("labels", e))?;
        line.push_str(&format!(
            ", {} labels (coverage {:.4})",
            labels.labels.len(),
            labels.coverage
        ));
    }
    println!("{line}, {} warning(s)", loaded.warnings.len());
    Ok(())
}

/// One target per query; queries without an extractable answer are skipped.
fn compute_targets(sets: &[SampleSet], k: Option<usize>, master: u64) -> CliResult<(Vec<ConsistencyTarget>, Vec<String>)> {
    let mut targets = Vec::with_capacity(sets.len());
    let mut warnings = Vec::new();
    for set in sets {
        let t = match k {
            Some(k) if k > set.k() => {
                return Err(CliError::Data(format!(
                    "--k {k} exceeds the {} samples of query \"{}\"",
                    set.k(),
                    set.query_id()
                )))
            }
            Some(k) => subsample_targets(set, k, seed::for_key(master, set.query_id())),
            None => build_target(set),
        };
        match t {
            Ok(t) => targets.push(t),
            Err(Error::NoExtractableAnswer(q)) => {
                warnings.push(format!("query \"{q}\" has no extractable answer; skipped"))
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((targets, warnings))
}

pub fn targets(cfg: &RunConfig) -> CliResult<()> {
    let sets = load_sets(cfg)?;
    let (targets, warnings) = compute_targets(&sets, cfg.eval.k_subsample, cfg.eval.master_seed)?;
    warn_all(&warnings);
    let dir = cfg.out_dir("targets")?;
    records::write_jsonl(dir.join("targets.jsonl"), &targets)?;
    write_config(&dir, cfg, "targets")?;
    println!("wrote {} targets, {} warning(s) -> {}", targets.len(), warnings.len(), dir.display());
    Ok(())
}

fn read_targets(path: &Path) -> CliResult<Vec<ConsistencyTarget>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn feature(set: &SampleSet, sample_index: u64, source: FeatureSource) -> CliResult<Vec<f64>> {
    let missing = |what: &str| {
        CliError::Data(format!("query \"{}\" sample {sample_index} has no {what}", set.query_id()))
    };
    let sample = set.sample(sample_index).ok_or_else(|| missing("such sample"))?;
    match source {
        FeatureSource::ResponseEmbedding => Ok(sample.embedding.clone()),
        FeatureSource::QuestionEmbedding => set
            .query
            .question_embedding
            .clone()
            .ok_or_else(|| missing("question_embedding")),
        FeatureSource::ExternalEmbedding => sample
            .external_embedding
            .clone()
            .ok_or_else(|| missing("external_embedding")),
    }
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let sets = load_sets(cfg)?;
    let targets = match &cfg.data.targets {
        Some(p) => read_targets(p)?,
        None => {
            let (t, w) = compute_targets(&sets, cfg.eval.k_subsample, cfg.eval.master_seed)?;
            warn_all(&w);
            t
        }
    };
    let by_id: HashMap<&str, &SampleSet> = sets.iter().map(|s| (s.query_id(), s)).collect();
    let source = cfg.eval.feature_source;
    let mut xs = Vec::with_capacity(targets.len());
    let mut ys = Vec::with_capacity(targets.len());
    for t in &targets {
        let set = by_id
            .get(t.query_id.as_str())
            .ok_or_else(|| CliError::Data(format!("target for unknown query \"{}\"", t.query_id)))?;
        xs.push(feature(set, t.selected_sample_index, source)?);
        ys.push(t.s);
    }
    let opts = FitOptions {
        split_frac: cfg.eval.split_frac,
        alpha: cfg.eval.alpha,
        seed: cfg.eval.master_seed,
        feature_source: source,
    };
    let model = fit_pipeline(&xs, &ys, &opts)?;
    let dir = cfg.out_dir("train")?;
    model.save(dir.join("model.json"))?;
    write_config(&dir, cfg, "train")?;
    println!("trained on {} targets -> {}", targets.len(), dir.join("model.json").display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    query_id: &'a str,
    sample_index: u64,
    confidence: f64,
}

/// Scores every generation line in file order.
pub fn score(cfg: &RunConfig) -> CliResult<()> {
    let mpath = cfg
        .data
        .model
        .clone()
        .ok_or_else(|| CliError::Usage("missing --model".into()))?;
    let model = CalibratorModel::load(&mpath)?;
    let gpath = cfg.data.generations()?;
    let file = File::open(&gpath).map_err(|e| CliError::io(&gpath, e))?;
    let lines = records::read_generation_lines(BufReader::new(file))?;
    let questions: HashMap<String, Vec<f64>> = if model.feature_source == FeatureSource::QuestionEmbedding {
        records::load_queries(cfg.data.queries()?)?
            .into_iter()
            .filter_map(|q| q.question_embedding.map(|e| (q.query_id, e)))
            .collect()
    } else {
        HashMap::new()
    };
    let mut out = String::new();
    for (line, g) in &lines {
        let missing = |what: &str| {
            CliError::Data(format!("line {line}: query \"{}\" has no {what}", g.query_id))
        };
        let f: &[f64] = match model.feature_source {
            FeatureSource::ResponseEmbedding => &g.embedding,
            FeatureSource::QuestionEmbedding => questions
                .get(&g.query_id)
                .ok_or_else(|| missing("question_embedding"))?,
            FeatureSource::ExternalEmbedding => g
                .external_embedding
                .as_deref()
                .ok_or_else(|| missing("external_embedding"))?,
        };
        let confidence = model.predict(f).map_err(|e| {
            CliError::Data(format!(
                "line {line}: query \"{}\" sample {}: {e}",
                g.query_id, g.sample_index
            ))
        })?;
        let row = ScoreRow {
            query_id: &g.query_id,
            sample_index: g.sample_index,
            confidence,
        };
        out.push_str(&serde_json::to_string(&row).map_err(Error::from)?);
        out.push('\n');
    }
    let dir = cfg.out_dir("score")?;
    write_text(&dir.join("scores.jsonl"), &out)?;
    write_config(&dir, cfg, "score")?;
    println!("scored {} generations -> {}", lines.len(), dir.join("scores.jsonl").display());
    Ok(())
}

fn print_summary(report: &Report) {
    println!("{:<14}{:>9}{:>9}{:>9}{:>9}{:>9}", "method", "ECE1", "ECE2", "MCE", "Brier", "AUROC");
    for m in &report.methods {
        let auroc = m.auroc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14}{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>9}",
            m.method.name(),
            m.ece1,
            m.ece2,
            m.mce,
            m.brier,
            auroc
        );
    }
}

#[derive(Serialize)]
struct Reliability<'a> {
    method: Method,
    bins: &'a [conscal::metrics::BinStat],
    histogram: &'a [usize],
}

fn write_report(dir: &Path, report: &Report) -> CliResult<()> {
    write_json(&dir.join("report.json"), report)?;
    write_text(&dir.join("trials.csv"), &report.trial_table())?;
    let rel: Vec<Reliability> = report
        .methods
        .iter()
        .map(|m| Reliability {
            method: m.method,
            bins: &m.reliability,
            histogram: &m.histogram,
        })
        .collect();
    write_json(&dir.join("reliability.json"), &rel)
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let ds = eval_dataset(cfg)?;
    let mut report = evaluation::run_trials(&ds, &cfg.eval)?;
    report.config = cfg.echo("eval");
    let dir = cfg.out_dir("eval")?;
    write_report(&dir, &report)?;
    write_config(&dir, cfg, "eval")?;
    print_summary(&report);
    Ok(())
}

pub fn selective(cfg: &RunConfig) -> CliResult<()> {
    let ds = eval_dataset(cfg)?;
    let mut report = evaluation::run_selective(&ds, &cfg.eval, &cfg.selective.rates)?;
    report.config = cfg.echo("selective");
    let dir = cfg.out_dir("selective")?;
    write_report(&dir, &report)?;
    write_json(&dir.join("selective.json"), &report.selective)?;
    write_config(&dir, cfg, "selective")?;
    let mut stdout = std::io::stdout().lock();
    for c in report.selective.iter().flatten() {
        let gains: Vec<String> = c
            .curve
            .points
            .iter()
            .map(|p| p.accuracy_gain.map(|g| format!("{g:.4}")).unwrap_or_else(|| "-".into()))
            .collect();
        let _ = writeln!(stdout, "{:<14}{}", c.method.name(), gains.join(" "));
    }
    Ok(())
}

pub fn shift(cfg: &RunConfig) -> CliResult<()> {
    let train: BTreeSet<String> = cfg.shift.train_groups.iter().cloned().collect();
    let test: BTreeSet<String> = cfg.shift.test_groups.iter().cloned().collect();
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Usage("shift needs --train-groups and --test-groups".into()));
    }
    let ds = eval_dataset(cfg)?;
    let mut report = evaluation::shift_eval(&train, &test, &ds, &cfg.eval)?;
    report.config = cfg.echo("shift");
    let dir = cfg.out_dir("shift")?;
    write_report(&dir, &report)?;
    write_config(&dir, cfg, "shift")?;
    print_summary(&report);
    Ok(())
}
