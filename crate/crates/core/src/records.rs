//! Line-delimited record files for queries, sampled generations and
//! correctness labels.
//!
//! Each file holds one JSON object per line. Loading is all-or-nothing: every
//! malformed line is reported as a [`Diagnostic`] and no partial dataset is
//! returned. Keys outside the schema are kept in `extra` and written back
//! unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::consistency::{extract_boxed, normalize_answer};
use crate::error::{Diagnostic, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_embedding: Option<Vec<f64>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub query_id: String,
    pub sample_index: u64,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_token_logprobs: Option<Vec<f64>>,
    pub embedding: Vec<f64>,
    /// Response to a separate confidence-elicitation prompt, expected to end in `\boxed{p}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbal_response: Option<String>,
    /// Embedding from a model other than the generator (black-box setting).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_meta: Option<Value>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GenerationRecord {
    /// The raw answer: the pre-extracted field when present, otherwise the last boxed group.
    pub fn raw_answer(&self) -> Option<String> {
        self.answer
            .clone()
            .or_else(|| extract_boxed(&self.response_text))
    }

    /// Normalized answer, or `None` when nothing can be extracted.
    pub fn canonical_answer(&self) -> Option<String> {
        self.raw_answer().map(|a| normalize_answer(&a))
    }
}

/// The k sampled generations for one query, ordered by `sample_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub query: QueryRecord,
    pub samples: Vec<GenerationRecord>,
}

impl SampleSet {
    /// Builds a set, sorting samples by index. Checks the type invariants.
    pub fn new(query: QueryRecord, mut samples: Vec<GenerationRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        samples.sort_by_key(|s| s.sample_index);
        let dim = samples[0].embedding.len();
        for s in &samples {
            if s.query_id != query.query_id {
                return Err(Error::InvalidArgument(format!(
                    "sample for {} placed in set for {}",
                    s.query_id, query.query_id
                )));
            }
            if s.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.embedding.len(),
                });
            }
        }
        Ok(Self { query, samples })
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn query_id(&self) -> &str {
        &self.query.query_id
    }

    pub fn sample(&self, sample_index: u64) -> Option<&GenerationRecord> {
        self.samples
            .binary_search_by_key(&sample_index, |s| s.sample_index)
            .ok()
            .map(|i| &self.samples[i])
    }
}

/// Result of a load that succeeded but noticed something worth reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Validated labels plus the fraction of generations they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<CorrectnessLabel>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessLabel {
    pub query_id: String,
    pub sample_index: u64,
    pub z: u8,
}

impl LabelSet {
    /// Map from `(query_id, sample_index)` to the label.
    pub fn index(&self) -> HashMap<(&str, u64), u8> {
        self.labels
            .iter()
            .map(|l| ((l.query_id.as_str(), l.sample_index), l.z))
            .collect()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines<R: BufRead>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn check_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    read_queries(open(path)?).map_err(|e| relabel_io(e, path))
}

fn relabel_io(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn read_queries<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>> {
    let mut diags = Vec::new();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for (line, text) in lines(reader)? {
        let q: QueryRecord = match serde_json::from_str(&text) {
            Ok(q) => q,
            Err(e) => {
                diags.push(Diagnostic::new(line, format!("malformed query record: {e}")));
                continue;
            }
        };
        if q.query_id.is_empty() {
            diags.push(Diagnostic::new(line, "empty query_id"));
        } else if !seen.insert(q.query_id.clone()) {
            diags.push(Diagnostic::new(
                line,
                format!("duplicate query_id \"{}\"", q.query_id),
            ));
        }
        if let Some(gold) = &q.gold_answers {
            if gold.is_empty() {
                diags.push(Diagnostic::new(line, "gold_answers present but empty"));
            }
        }
        if let Some(emb) = &q.question_embedding {
            if !check_finite(emb) {
                diags.push(Diagnostic::new(line, "question_embedding has a non-finite entry"));
            }
            match dim {
                None => dim = Some(emb.len()),
                Some(d) if d != emb.len() => diags.push(Diagnostic::new(
                    line,
                    format!("question_embedding dimension {} differs from {d}", emb.len()),
                )),
                _ => {}
            }
        }
        out.push(q);
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid { diagnostics: diags })
    }
}

pub fn load_generations(
    path: impl AsRef<Path>,
    queries: &[QueryRecord],
) -> Result<Loaded<Vec<SampleSet>>> {
    let path = path.as_ref();
    read_generations(open(path)?, queries).map_err(|e| relabel_io(e, path))
}

/// Parses and validates generation lines without grouping them by query.
pub fn read_generation_lines<R: BufRead>(
    reader: R,
) -> Result<Vec<(usize, GenerationRecord)>> {
    let mut diags = Vec::new();
    let mut out = Vec::new();
    for (line, text) in lines(reader)? {
        match serde_json::from_str::<GenerationRecord>(&text) {
            Ok(g) => {
                diags.extend(validate_generation(&g).into_iter().map(|m| Diagnostic::new(line, m)));
                out.push((line, g));
            }
            Err(e) => diags.push(Diagnostic::new(
                line,
                format!("malformed generation record: {e}"),
            )),
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid { diagnostics: diags })
    }
}

fn validate_generation(g: &GenerationRecord) -> Vec<String> {
    let mut msgs = Vec::new();
    if g.token_logprobs.is_empty() {
        msgs.push("token_logprobs is empty".to_string());
    }
    if !g.token_logprobs.iter().all(|&v| v.is_finite() && v <= 0.0) {
        msgs.push("token_logprobs must be finite and <= 0".to_string());
    }
    if let Some(a) = &g.answer_token_logprobs {
        if a.is_empty() {
            msgs.push("answer_token_logprobs present but empty".to_string());
        }
        if !a.iter().all(|&v| v.is_finite() && v <= 0.0) {
            msgs.push("answer_token_logprobs must be finite and <= 0".to_string());
        }
    }
    if !check_finite(&g.embedding) {
        msgs.push("embedding has a non-finite entry".to_string());
    }
    if let Some(e) = &g.external_embedding {
        if !check_finite(e) {
            msgs.push("external_embedding has a non-finite entry".to_string());
        }
    }
    if let Some(meta) = &g.sampling_meta {
        if !meta.is_object() {
            msgs.push("sampling_meta must be an object".to_string());
        }
    }
    msgs
}

pub fn read_generations<R: BufRead>(
    reader: R,
    queries: &[QueryRecord],
) -> Result<Loaded<Vec<SampleSet>>> {
    let parsed = read_generation_lines(reader)?;
    let known: HashMap<&str, usize> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.query_id.as_str(), i))
        .collect();

    let mut diags = Vec::new();
    let mut warnings = Vec::new();
    let mut keys = HashSet::new();
    let mut dim: Option<usize> = None;
    let mut ext_dim: Option<usize> = None;
    let mut grouped: BTreeMap<usize, Vec<GenerationRecord>> = BTreeMap::new();

    for (line, g) in parsed {
        let Some(&qi) = known.get(g.query_id.as_str()) else {
            diags.push(Diagnostic::new(
                line,
                format!("orphan generation: query_id \"{}\" not in queries", g.query_id),
            ));
            continue;
        };
        if !keys.insert((g.query_id.clone(), g.sample_index)) {
            diags.push(Diagnostic::new(
                line,
                format!(
                    "duplicate generation key ({}, {})",
                    g.query_id, g.sample_index
                ),
            ));
            continue;
        }
        match dim {
            None => dim = Some(g.embedding.len()),
            Some(d) if d != g.embedding.len() => {
                diags.push(Diagnostic::new(
                    line,
                    format!("embedding dimension {} differs from {d}", g.embedding.len()),
                ));
                continue;
            }
            _ => {}
        }
        if let Some(e) = &g.external_embedding {
            match ext_dim {
                None => ext_dim = Some(e.len()),
                Some(d) if d != e.len() => {
                    diags.push(Diagnostic::new(
                        line,
                        format!("external_embedding dimension {} differs from {d}", e.len()),
                    ));
                    continue;
                }
                _ => {}
            }
        }
        if let (Some(given), Some(boxed)) = (&g.answer, extract_boxed(&g.response_text)) {
            if normalize_answer(given) != normalize_answer(&boxed) {
                warnings.push(format!(
                    "line {line}: answer \"{given}\" disagrees with boxed \"{boxed}\" in ({}, {}); using answer field",
                    g.query_id, g.sample_index
                ));
            }
        }
        grouped.entry(qi).or_default().push(g);
    }
    if !diags.is_empty() {
        return Err(Error::Invalid { diagnostics: diags });
    }

    let mut sets = Vec::with_capacity(grouped.len());
    for (qi, q) in queries.iter().enumerate() {
        match grouped.remove(&qi) {
            Some(samples) => sets.push(SampleSet::new(q.clone(), samples)?),
            None => warnings.push(format!(
                "query \"{}\" has no generations; dropped",
                q.query_id
            )),
        }
    }
    Ok(Loaded {
        value: sets,
        warnings,
    })
}

#[derive(Deserialize)]
struct RawLabel {
    query_id: String,
    sample_index: u64,
    z: i64,
}

pub fn load_labels(path: impl AsRef<Path>, sets: &[SampleSet]) -> Result<LabelSet> {
    let path = path.as_ref();
    read_labels(open(path)?, sets).map_err(|e| relabel_io(e, path))
}

pub fn read_labels<R: BufRead>(reader: R, sets: &[SampleSet]) -> Result<LabelSet> {
    let index: HashMap<&str, &SampleSet> = sets.iter().map(|s| (s.query_id(), s)).collect();
    let total: usize = sets.iter().map(SampleSet::k).sum();
    let mut diags = Vec::new();
    let mut seen = HashSet::new();
    let mut labels = Vec::new();
    for (line, text) in lines(reader)? {
        let raw: RawLabel = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                diags.push(Diagnostic::new(line, format!("malformed label record: {e}")));
                continue;
            }
        };
        if raw.z != 0 && raw.z != 1 {
            diags.push(Diagnostic::new(line, format!("z = {} is not 0 or 1", raw.z)));
            continue;
        }
        let exists = index
            .get(raw.query_id.as_str())
            .is_some_and(|s| s.sample(raw.sample_index).is_some());
        if !exists {
            diags.push(Diagnostic::new(
                line,
                format!(
                    "dangling label: no generation ({}, {})",
                    raw.query_id, raw.sample_index
                ),
            ));
            continue;
        }
        if !seen.insert((raw.query_id.clone(), raw.sample_index)) {
            diags.push(Diagnostic::new(
                line,
                format!("duplicate label ({}, {})", raw.query_id, raw.sample_index),
            ));
            continue;
        }
        labels.push(CorrectnessLabel {
            query_id: raw.query_id,
            sample_index: raw.sample_index,
            z: raw.z as u8,
        });
    }
    if !diags.is_empty() {
        return Err(Error::Invalid { diagnostics: diags });
    }
    let coverage = if total == 0 {
        0.0
    } else {
        labels.len() as f64 / total as f64
    };
    Ok(LabelSet { labels, coverage })
}

/// Writes one JSON object per line.
pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str) -> String {
        format!(r#"{{"query_id":"{id}","text":"t","group":"g"}}"#)
    }

    fn g(id: &str, idx: u64, emb: &str) -> String {
        format!(
            r#"{{"query_id":"{id}","sample_index":{idx},"response_text":"x \\boxed{{a}}","token_logprobs":[-0.1],"embedding":{emb}}}"#
        )
    }

    fn queries(ids: &[&str]) -> Vec<QueryRecord> {
        let text: Vec<String> = ids.iter().map(|i| q(i)).collect();
        read_queries(text.join("\n").as_bytes()).unwrap()
    }

    #[test]
    fn three_queries_in_order() {
        let qs = queries(&["b", "a", "c"]);
        let ids: Vec<_> = qs.iter().map(|q| q.query_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn duplicate_query_id_is_named() {
        let text = format!("{}\n{}", q("q1"), q("q1"));
        let err = read_queries(text.as_bytes()).unwrap_err();
        let Error::Invalid { diagnostics } = err else { panic!() };
        assert_eq!(diagnostics.len(), 1);
        assert_eq!(diagnostics[0].line, 2);
        assert!(diagnostics[0].message.contains("\"q1\""));
    }

    #[test]
    fn non_finite_question_embedding_reports_line() {
        let text = format!(
            "{}\n{}",
            q("q1"),
            r#"{"query_id":"q2","text":"t","group":"g","question_embedding":[1.0,1e999]}"#
        );
        let Error::Invalid { diagnostics } = read_queries(text.as_bytes()).unwrap_err() else {
            panic!()
        };
        assert_eq!(diagnostics[0].line, 2);
    }

    #[test]
    fn empty_gold_answers_rejected() {
        let text = r#"{"query_id":"q","text":"t","group":"g","gold_answers":[]}"#;
        assert!(read_queries(text.as_bytes()).is_err());
    }

    #[test]
    fn unknown_keys_round_trip() {
        let text = r#"{"query_id":"q","text":"t","group":"g","source":"gsm8k","n":3}"#;
        let qs = read_queries(text.as_bytes()).unwrap();
        assert_eq!(qs[0].extra["source"], "gsm8k");
        let back = serde_json::to_string(&qs[0]).unwrap();
        let again: QueryRecord = serde_json::from_str(&back).unwrap();
        assert_eq!(again, qs[0]);
    }

    #[test]
    fn grouping_and_sorting() {
        let qs = queries(&["q1", "q2"]);
        let lines = [
            g("q2", 2, "[0.0]"),
            g("q1", 1, "[0.0]"),
            g("q1", 0, "[0.0]"),
            g("q2", 0, "[0.0]"),
            g("q1", 2, "[0.0]"),
            g("q2", 1, "[0.0]"),
        ]
        .join("\n");
        let loaded = read_generations(lines.as_bytes(), &qs).unwrap();
        assert_eq!(loaded.value.len(), 2);
        for set in &loaded.value {
            assert_eq!(set.k(), 3);
            let idx: Vec<u64> = set.samples.iter().map(|s| s.sample_index).collect();
            assert_eq!(idx, [0, 1, 2]);
        }
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn orphan_generation_is_named() {
        let qs = queries(&["q1"]);
        let Error::Invalid { diagnostics } =
            read_generations(g("ghost", 0, "[0.0]").as_bytes(), &qs).unwrap_err()
        else {
            panic!()
        };
        assert!(diagnostics[0].message.contains("ghost"));
    }

    #[test]
    fn duplicate_generation_key() {
        let qs = queries(&["q1"]);
        let lines = format!("{}\n{}", g("q1", 0, "[0.0]"), g("q1", 0, "[0.0]"));
        let Error::Invalid { diagnostics } = read_generations(lines.as_bytes(), &qs).unwrap_err()
        else {
            panic!()
        };
        assert!(diagnostics[0].message.contains("(q1, 0)"));
    }

    #[test]
    fn embedding_dimension_mismatch() {
        let qs = queries(&["q1", "q2"]);
        let lines = format!("{}\n{}", g("q1", 0, "[0.0]"), g("q2", 0, "[0.0, 1.0]"));
        assert!(read_generations(lines.as_bytes(), &qs).is_err());
    }

    #[test]
    fn query_without_generations_dropped_with_warning() {
        let qs = queries(&["q1", "q2"]);
        let loaded = read_generations(g("q1", 0, "[0.0]").as_bytes(), &qs).unwrap();
        assert_eq!(loaded.value.len(), 1);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("q2"));
    }

    #[test]
    fn positive_logprob_rejected() {
        let qs = queries(&["q1"]);
        let line = r#"{"query_id":"q1","sample_index":0,"response_text":"","token_logprobs":[0.5],"embedding":[]}"#;
        assert!(read_generations(line.as_bytes(), &qs).is_err());
    }

    #[test]
    fn answer_mismatch_warns() {
        let qs = queries(&["q1"]);
        let line = r#"{"query_id":"q1","sample_index":0,"response_text":"\\boxed{4}","answer":"5","token_logprobs":[-1],"embedding":[]}"#;
        let loaded = read_generations(line.as_bytes(), &qs).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.value[0].samples[0].canonical_answer().unwrap(), "5");
    }

    fn sets() -> Vec<SampleSet> {
        let qs = queries(&["q1"]);
        let lines = format!("{}\n{}", g("q1", 0, "[0.0]"), g("q1", 1, "[0.0]"));
        read_generations(lines.as_bytes(), &qs).unwrap().value
    }

    #[test]
    fn full_label_coverage() {
        let text = r#"{"query_id":"q1","sample_index":0,"z":1}
{"query_id":"q1","sample_index":1,"z":0}"#;
        let labels = read_labels(text.as_bytes(), &sets()).unwrap();
        assert_eq!(labels.coverage, 1.0);
        assert_eq!(labels.index()[&("q1", 1)], 0);
    }

    #[test]
    fn label_z_out_of_range() {
        let text = r#"{"query_id":"q1","sample_index":0,"z":2}"#;
        assert!(read_labels(text.as_bytes(), &sets()).is_err());
    }

    #[test]
    fn dangling_label() {
        let text = r#"{"query_id":"q1","sample_index":99,"z":1}"#;
        let Error::Invalid { diagnostics } = read_labels(text.as_bytes(), &sets()).unwrap_err()
        else {
            panic!()
        };
        assert!(diagnostics[0].message.contains("dangling"));
    }

    #[test]
    fn all_bad_lines_reported() {
        let text = "not json\n{}\n";
        let Error::Invalid { diagnostics } = read_queries(text.as_bytes()).unwrap_err() else {
            panic!()
        };
        let lines: Vec<usize> = diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, [1, 2]);
    }
}
