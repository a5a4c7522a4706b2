//! Dataset parsing: raw OHSUMED (MEDLINE-tagged documents and queries,
//! graded judgments) and LETOR-style feature files, plus the fixed five-fold
//! query partition.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::ranker::{make_pairs, Grade, Triple};
use crate::{Error, Result};

pub type QueryId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Judgment {
    pub query_id: QueryId,
    pub doc_id: String,
    pub grade: Grade,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DocContent {
    Text(String),
    Features(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub content: DocContent,
    pub grade: Grade,
}

impl Document {
    pub fn features(&self) -> Option<&[f64]> {
        match &self.content {
            DocContent::Features(f) => Some(f),
            DocContent::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.content {
            DocContent::Text(t) => Some(t),
            DocContent::Features(_) => None,
        }
    }
}

/// One query and its judged candidate documents.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroup {
    pub query_id: QueryId,
    /// Present for raw-text groups, absent in feature mode.
    pub query_text: Option<String>,
    pub docs: Vec<Document>,
}

impl QueryGroup {
    pub fn grades(&self) -> Vec<Grade> {
        self.docs.iter().map(|d| d.grade).collect()
    }

    /// Preference pairs of this group, tagged with `index` as the query reference.
    pub fn pairs(&self, index: usize) -> Vec<Triple> {
        make_pairs(index, &self.grades())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// A tagged record: `(tag, content)` in file order.
struct Record {
    start_line: usize,
    fields: Vec<(String, String)>,
}

impl Record {
    fn field(&self, tag: &str) -> Option<&str> {
        self.fields.iter().rev().find(|(t, _)| t == tag).map(|(_, v)| v.as_str())
    }
}

/// Splits MEDLINE-style text into `.I`-delimited records. Tag content may sit
/// on the tag line itself (`.I 17`) or on the following line(s) up to the
/// next tag.
fn parse_tagged(text: &str) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    let mut open_tag: Option<(usize, String, Vec<String>)> = None;

    fn close(records: &mut [Record], open: &mut Option<(usize, String, Vec<String>)>) -> Result<()> {
        if let Some((line, tag, content)) = open.take() {
            if content.is_empty() {
                return Err(Error::format(
                    line,
                    format!("tag .{tag} has no content (truncated record?)"),
                ));
            }
            let rec = records.last_mut().expect("open tag without a record");
            rec.fields.push((tag, content.join(" ")));
        }
        Ok(())
    }

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if let Some(tag_line) = line.strip_prefix('.').filter(|l| {
            l.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && l.split_whitespace().next().is_some_and(|t| t.len() <= 2)
        }) {
            close(&mut records, &mut open_tag)?;
            let mut parts = tag_line.splitn(2, char::is_whitespace);
            let tag = parts.next().unwrap_or_default().to_ascii_uppercase();
            let inline = parts.next().map(str::trim).filter(|s| !s.is_empty());
            if tag == "I" {
                records.push(Record {
                    start_line: lineno,
                    fields: Vec::new(),
                });
            } else if records.is_empty() {
                return Err(Error::format(lineno, format!("tag .{tag} before the first .I record")));
            }
            open_tag = Some((lineno, tag, inline.map(str::to_string).into_iter().collect()));
        } else if !line.trim().is_empty() {
            match open_tag.as_mut() {
                Some((_, _, content)) => content.push(line.trim().to_string()),
                None => return Err(Error::format(lineno, "text outside any tagged record")),
            }
        }
    }
    close(&mut records, &mut open_tag)?;
    Ok(records)
}

/// Parsed document collection with the anomalies met on the way.
#[derive(Clone, Debug, Default)]
pub struct DocCollection {
    pub docs: HashMap<String, String>,
    pub missing_id: usize,
    pub duplicates: usize,
}

/// Reads MEDLINE-tagged records (`.I`, `.U`, `.T`, `.W`, ...). The text of a
/// document is its title and abstract joined by a space; records without a
/// `.U` identifier are skipped, and a repeated identifier keeps the last record.
pub fn parse_ohsumed_docs(path: impl AsRef<Path>) -> Result<DocCollection> {
    parse_ohsumed_docs_str(&read(path.as_ref())?)
}

pub fn parse_ohsumed_docs_str(text: &str) -> Result<DocCollection> {
    let mut out = DocCollection::default();
    for rec in parse_tagged(text)? {
        let Some(id) = rec.field("U") else {
            warn!("record starting at line {} has no .U identifier; skipped", rec.start_line);
            out.missing_id += 1;
            continue;
        };
        let body = [rec.field("T"), rec.field("W")]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" ");
        if out.docs.insert(id.to_string(), body).is_some() {
            warn!("duplicate document id {id} at line {}; keeping the later record", rec.start_line);
            out.duplicates += 1;
        }
    }
    Ok(out)
}

/// Reads OHSUMED queries in the tagged format: `.I` carries the query number
/// and `.W` the information request (falling back to `.B` when `.W` is absent).
pub fn parse_ohsumed_queries(path: impl AsRef<Path>) -> Result<BTreeMap<QueryId, String>> {
    parse_ohsumed_queries_str(&read(path.as_ref())?)
}

pub fn parse_ohsumed_queries_str(text: &str) -> Result<BTreeMap<QueryId, String>> {
    let mut out = BTreeMap::new();
    for rec in parse_tagged(text)? {
        let id_field = rec
            .field("I")
            .ok_or_else(|| Error::format(rec.start_line, "query record without a number"))?;
        let id = parse_query_id(id_field)
            .ok_or_else(|| Error::format(rec.start_line, format!("bad query id {id_field:?}")))?;
        let text = rec.field("W").or_else(|| rec.field("B")).unwrap_or_default();
        out.insert(id, text.to_string());
    }
    Ok(out)
}

fn parse_query_id(token: &str) -> Option<QueryId> {
    let digits: String = token
        .trim()
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

/// Reads judgment lines `query_id doc_id grade [grade ...]`, one grade token
/// per assessor. Repeated `(query, doc)` pairs, on one line or several,
/// collapse to the highest grade. Output follows first appearance.
pub fn parse_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    parse_judgments_str(&read(path.as_ref())?)
}

pub fn parse_judgments_str(text: &str) -> Result<Vec<Judgment>> {
    let mut out: Vec<Judgment> = Vec::new();
    let mut index: HashMap<(QueryId, String), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(q) = parts.next() else {
            continue;
        };
        let query_id = parse_query_id(q).ok_or_else(|| Error::format(lineno, format!("bad query id {q:?}")))?;
        let doc_id = parts
            .next()
            .ok_or_else(|| Error::format(lineno, "missing document id"))?
            .to_string();
        let mut grade = None;
        for token in parts {
            let g = Grade::from_token(token).map_err(|_| Error::format(lineno, format!("unknown grade token {token:?}")))?;
            grade = grade.max(Some(g));
        }
        let grade = grade.ok_or_else(|| Error::format(lineno, "missing grade"))?;
        match index.get(&(query_id, doc_id.clone())) {
            Some(&k) => out[k].grade = out[k].grade.max(grade),
            None => {
                index.insert((query_id, doc_id.clone()), out.len());
                out.push(Judgment {
                    query_id,
                    doc_id,
                    grade,
                });
            }
        }
    }
    Ok(out)
}

/// Assembles raw-text groups from judged documents only. Judgments whose
/// document or query text is unavailable are dropped with a warning; groups
/// come out in ascending query id order.
pub fn assemble_text_groups(
    queries: &BTreeMap<QueryId, String>,
    docs: &DocCollection,
    judgments: &[Judgment],
) -> Vec<QueryGroup> {
    let mut groups: BTreeMap<QueryId, QueryGroup> = BTreeMap::new();
    let mut missing_docs = 0usize;
    for j in judgments {
        let Some(qtext) = queries.get(&j.query_id) else {
            warn!("judgment for unknown query {}", j.query_id);
            continue;
        };
        let Some(text) = docs.docs.get(&j.doc_id) else {
            missing_docs += 1;
            continue;
        };
        let group = groups.entry(j.query_id).or_insert_with(|| QueryGroup {
            query_id: j.query_id,
            query_text: Some(qtext.clone()),
            docs: Vec::new(),
        });
        group.docs.push(Document {
            doc_id: j.doc_id.clone(),
            content: DocContent::Text(text.clone()),
            grade: j.grade,
        });
    }
    if missing_docs > 0 {
        warn!("{missing_docs} judged documents are missing from the collection");
    }
    groups.into_values().collect()
}

/// Reads LETOR lines `rel qid:Q k:v ... #comment`. Feature indices are
/// 1-based and strictly increasing within a line; every vector is padded to
/// the largest index in the file. Groups are keyed by qid in order of first
/// appearance, and documents keep file order.
pub fn parse_letor(path: impl AsRef<Path>) -> Result<Vec<QueryGroup>> {
    parse_letor_str(&read(path.as_ref())?)
}

pub fn parse_letor_str(text: &str) -> Result<Vec<QueryGroup>> {
    // (qid, doc id, grade, sparse features)
    type Row = (QueryId, String, Grade, Vec<(usize, f64)>);
    let mut rows: Vec<Row> = Vec::new();
    let mut max_index = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let (body, comment) = match raw.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (raw, None),
        };
        let mut parts = body.split_whitespace();
        let Some(rel) = parts.next() else {
            continue;
        };
        let grade = rel
            .parse::<u8>()
            .ok()
            .and_then(|g| Grade::new(g).ok())
            .ok_or_else(|| Error::format(lineno, format!("relevance {rel:?} not in {{0, 1, 2}}")))?;
        let qid_tok = parts.next().ok_or_else(|| Error::format(lineno, "missing qid"))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .and_then(|q| q.parse::<QueryId>().ok())
            .ok_or_else(|| Error::format(lineno, format!("bad qid field {qid_tok:?}")))?;
        let mut feats = Vec::new();
        let mut last = 0usize;
        for tok in parts {
            let (k, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::format(lineno, format!("bad feature {tok:?}")))?;
            let k: usize = k
                .parse()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::format(lineno, format!("bad feature index {k:?}")))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::format(lineno, format!("bad feature value {v:?}")))?;
            if k <= last {
                return Err(Error::format(lineno, format!("feature index {k} after {last}")));
            }
            last = k;
            feats.push((k, v));
        }
        max_index = max_index.max(last);
        let doc_id = comment.and_then(doc_id_from_comment).unwrap_or_else(|| format!("line{lineno}"));
        rows.push((qid, doc_id, grade, feats));
    }

    let mut order: Vec<QueryId> = Vec::new();
    let mut groups: HashMap<QueryId, QueryGroup> = HashMap::new();
    let mut seen: HashSet<(QueryId, String)> = HashSet::new();
    for (qid, doc_id, grade, feats) in rows {
        if !seen.insert((qid, doc_id.clone())) {
            return Err(Error::format(0, format!("document {doc_id} appears twice under qid {qid}")));
        }
        let mut dense = vec![0.0; max_index];
        for (k, v) in feats {
            dense[k - 1] = v;
        }
        groups
            .entry(qid)
            .or_insert_with(|| {
                order.push(qid);
                QueryGroup {
                    query_id: qid,
                    query_text: None,
                    docs: Vec::new(),
                }
            })
            .docs
            .push(Document {
                doc_id,
                content: DocContent::Features(dense),
                grade,
            });
    }
    Ok(order.into_iter().filter_map(|q| groups.remove(&q)).collect())
}

/// Pulls a document id out of comments such as `docid = 40626 inc = 1` or `doc=A`.
fn doc_id_from_comment(comment: &str) -> Option<String> {
    let tokens: Vec<&str> = comment.split_whitespace().collect();
    for (i, tok) in tokens.iter().enumerate() {
        for key in ["docid", "doc"] {
            if let Some(rest) = tok.strip_prefix(key) {
                if let Some(v) = rest.strip_prefix('=') {
                    if !v.is_empty() {
                        return Some(v.to_string());
                    }
                    return tokens.get(i + 1).map(|s| s.to_string());
                }
                if rest.is_empty() && tokens.get(i + 1) == Some(&"=") {
                    return tokens.get(i + 2).map(|s| s.to_string());
                }
            }
        }
    }
    None
}

/// Writes feature-mode groups back in LETOR syntax (dense, with `#docid` comments).
pub fn write_letor(groups: &[QueryGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for d in &g.docs {
            let _ = write!(out, "{} qid:{}", d.grade, g.query_id);
            if let Some(f) = d.features() {
                for (k, v) in f.iter().enumerate() {
                    let _ = write!(out, " {}:{}", k + 1, v);
                }
            }
            let _ = writeln!(out, " #docid = {}", d.doc_id);
        }
    }
    out
}

/// Five inclusive query-id ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: [(QueryId, QueryId); 5],
}

impl FoldPlan {
    /// OHSUMED partition: 1-21, 22-42, 43-63, 64-84, 85-106.
    pub fn ohsumed() -> Self {
        FoldPlan {
            folds: [(1, 21), (22, 42), (43, 63), (64, 84), (85, 106)],
        }
    }

    /// Fold (1-based) containing `qid`.
    pub fn fold_of(&self, qid: QueryId) -> Option<usize> {
        self.folds
            .iter()
            .position(|&(lo, hi)| (lo..=hi).contains(&qid))
            .map(|i| i + 1)
    }
}

/// Query-disjoint train/validation/test views for one fold.
#[derive(Clone, Debug)]
pub struct FoldSplit<'a> {
    pub fold: usize,
    pub train: Vec<&'a QueryGroup>,
    pub validation: Vec<&'a QueryGroup>,
    pub test: Vec<&'a QueryGroup>,
}

/// Test = fold `k`, validation = the next fold cyclically, train = the other three.
pub fn make_folds<'a>(groups: &'a [QueryGroup], plan: &FoldPlan, fold_k: usize) -> Result<FoldSplit<'a>> {
    if !(1..=5).contains(&fold_k) {
        return Err(Error::Config(format!("fold {fold_k} outside 1..=5")));
    }
    let validation_k = fold_k % 5 + 1;
    let mut split = FoldSplit {
        fold: fold_k,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for g in groups {
        let f = plan.fold_of(g.query_id).ok_or(Error::Assignment(g.query_id))?;
        if f == fold_k {
            split.test.push(g);
        } else if f == validation_k {
            split.validation.push(g);
        } else {
            split.train.push(g);
        }
    }
    Ok(split)
}

/// Per-query, per-feature min-max scaling to `[0, 1]`; a feature constant
/// within a query becomes 0. Text groups pass through unchanged.
pub fn min_max_normalize(groups: &[QueryGroup]) -> Vec<QueryGroup> {
    groups.iter().map(normalize_group).collect()
}

fn normalize_group(g: &QueryGroup) -> QueryGroup {
    let feats: Vec<&[f64]> = g.docs.iter().filter_map(Document::features).collect();
    if feats.len() != g.docs.len() || feats.is_empty() {
        return g.clone();
    }
    let dim = feats[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for f in &feats {
        for (k, &v) in f.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let docs = g
        .docs
        .iter()
        .map(|d| {
            let f = d.features().unwrap_or_default();
            let scaled = f
                .iter()
                .enumerate()
                .map(|(k, &v)| if hi[k] > lo[k] { (v - lo[k]) / (hi[k] - lo[k]) } else { 0.0 })
                .collect();
            Document {
                content: DocContent::Features(scaled),
                ..d.clone()
            }
        })
        .collect();
    QueryGroup { docs, ..g.clone() }
}
