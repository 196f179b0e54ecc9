//! Triplet corpus: loading, label binarization, training-set extension and
//! mini-batching.
//!
//! The on-disk format is JSON Lines, one triple per line:
//!
//! ```text
//! {"id": "Q1_R1_C1", "group": "Q1",
//!  "q_new_subject": "Visa help?", "q_new_body": "I need a visa.",
//!  "q_rel_subject": null, "q_rel_body": "How long does a visa take?",
//!  "c_rel": "About two weeks.", "google_rank": 1,
//!  "label_A": "good", "label_B": "relevant", "label_C": "good"}
//! ```
//!
//! An optional `"q_rel_id"` key names the related question; when absent the
//! related question is identified by its text.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::Task;

/// Relevance of a comment (tasks A and C).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommentLabel {
    Good,
    PotentiallyUseful,
    Bad,
}

/// Relevance of a related question (task B).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuestionLabel {
    PerfectMatch,
    Relevant,
    Irrelevant,
}

impl CommentLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CommentLabel::Good => "good",
            CommentLabel::PotentiallyUseful => "potentially_useful",
            CommentLabel::Bad => "bad",
        }
    }

    pub fn is_positive(self) -> bool {
        self == CommentLabel::Good
    }
}

impl QuestionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionLabel::PerfectMatch => "perfect_match",
            QuestionLabel::Relevant => "relevant",
            QuestionLabel::Irrelevant => "irrelevant",
        }
    }

    pub fn is_positive(self) -> bool {
        self != QuestionLabel::Irrelevant
    }
}

impl FromStr for CommentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "good" => Ok(CommentLabel::Good),
            "potentially_useful" => Ok(CommentLabel::PotentiallyUseful),
            "bad" => Ok(CommentLabel::Bad),
            other => Err(format!(
                "unknown label `{other}` (expected good, potentially_useful or bad)"
            )),
        }
    }
}

impl FromStr for QuestionLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "perfect_match" => Ok(QuestionLabel::PerfectMatch),
            "relevant" => Ok(QuestionLabel::Relevant),
            "irrelevant" => Ok(QuestionLabel::Irrelevant),
            other => Err(format!(
                "unknown label `{other}` (expected perfect_match, relevant or irrelevant)"
            )),
        }
    }
}

impl fmt::Display for CommentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for QuestionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Question {
    pub subject: Option<String>,
    pub body: String,
}

impl Question {
    pub fn new(subject: Option<&str>, body: &str) -> Self {
        Question {
            subject: subject.map(str::to_string),
            body: body.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub id: String,
    /// Identifier of the new question; the ranking query for tasks B and C.
    pub group: String,
    pub q_new: Question,
    pub q_rel: Question,
    pub q_rel_id: Option<String>,
    pub c_rel: String,
    pub google_rank: u32,
    pub label_a: CommentLabel,
    pub label_b: QuestionLabel,
    pub label_c: CommentLabel,
}

impl Triple {
    /// Identity of the related question: its explicit id, else its text.
    pub fn q_rel_key(&self) -> String {
        match &self.q_rel_id {
            Some(id) => id.clone(),
            None => format!(
                "{}\u{1f}{}",
                self.q_rel.subject.as_deref().unwrap_or(""),
                self.q_rel.body
            ),
        }
    }

    /// Ranking query this triple belongs to for `task`.
    pub fn group_key(&self, task: Task) -> String {
        match task {
            Task::A => self.q_rel_key(),
            Task::B | Task::C => self.group.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinaryLabels {
    pub a: u8,
    pub b: u8,
    pub c: u8,
}

impl BinaryLabels {
    pub fn get(&self, task: Task) -> u8 {
        match task {
            Task::A => self.a,
            Task::B => self.b,
            Task::C => self.c,
        }
    }
}

/// Good comments and relevant/perfect-match questions are positives;
/// potentially useful comments count as negatives.
pub fn binarize(t: &Triple) -> BinaryLabels {
    BinaryLabels {
        a: u8::from(t.label_a.is_positive()),
        b: u8::from(t.label_b.is_positive()),
        c: u8::from(t.label_c.is_positive()),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::parse(line, name, "missing required key"))
}

fn string_field(obj: &Map<String, Value>, line: usize, name: &str) -> Result<String> {
    match field(obj, line, name)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(Error::parse(line, name, format!("expected string, got {other}"))),
    }
}

fn nullable_string(obj: &Map<String, Value>, line: usize, name: &str) -> Result<Option<String>> {
    match field(obj, line, name)? {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        other => Err(Error::parse(
            line,
            name,
            format!("expected string or null, got {other}"),
        )),
    }
}

fn label_field<L: FromStr<Err = String>>(
    obj: &Map<String, Value>,
    line: usize,
    name: &str,
    required: bool,
    fallback: L,
) -> Result<L> {
    match obj.get(name) {
        None if !required => Ok(fallback),
        _ => string_field(obj, line, name)?
            .parse()
            .map_err(|e| Error::parse(line, name, e)),
    }
}

fn parse_record(text: &str, line: usize, labels_required: bool) -> Result<Triple> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(line, "<record>", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::parse(line, "<record>", "expected a JSON object"));
    };
    let google_rank = match field(&obj, line, "google_rank")? {
        Value::Number(n) => n
            .as_u64()
            .filter(|&r| r >= 1 && r <= u64::from(u32::MAX))
            .ok_or_else(|| Error::parse(line, "google_rank", "must be an integer >= 1"))?,
        other => {
            return Err(Error::parse(
                line,
                "google_rank",
                format!("expected integer, got {other}"),
            ))
        }
    } as u32;
    let q_rel_id = match obj.get("q_rel_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(Error::parse(
                line,
                "q_rel_id",
                format!("expected string, got {other}"),
            ))
        }
    };
    Ok(Triple {
        id: string_field(&obj, line, "id")?,
        group: string_field(&obj, line, "group")?,
        q_new: Question {
            subject: nullable_string(&obj, line, "q_new_subject")?,
            body: string_field(&obj, line, "q_new_body")?,
        },
        q_rel: Question {
            subject: nullable_string(&obj, line, "q_rel_subject")?,
            body: string_field(&obj, line, "q_rel_body")?,
        },
        q_rel_id,
        c_rel: string_field(&obj, line, "c_rel")?,
        google_rank,
        label_a: label_field(&obj, line, "label_A", labels_required, CommentLabel::Bad)?,
        label_b: label_field(&obj, line, "label_B", labels_required, QuestionLabel::Irrelevant)?,
        label_c: label_field(&obj, line, "label_C", labels_required, CommentLabel::Bad)?,
    })
}

fn read_corpus(reader: impl BufRead, labels_required: bool) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, "<record>", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let triple = parse_record(&line, lineno, labels_required)?;
        if let Some(first) = seen.insert(triple.id.clone(), lineno) {
            return Err(Error::parse(
                lineno,
                "id",
                format!("duplicate id `{}` (first seen on line {first})", triple.id),
            ));
        }
        out.push(triple);
    }
    Ok(out)
}

/// Reads a labeled corpus, preserving file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), true)
}

/// Like [`load_corpus`], but label keys may be omitted.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), false)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Triple>> {
    read_corpus(text.as_bytes(), true)
}

pub fn triple_to_json(t: &Triple) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), t.id.clone().into());
    obj.insert("group".into(), t.group.clone().into());
    obj.insert("q_new_subject".into(), t.q_new.subject.clone().into());
    obj.insert("q_new_body".into(), t.q_new.body.clone().into());
    obj.insert("q_rel_subject".into(), t.q_rel.subject.clone().into());
    obj.insert("q_rel_body".into(), t.q_rel.body.clone().into());
    if let Some(id) = &t.q_rel_id {
        obj.insert("q_rel_id".into(), id.clone().into());
    }
    obj.insert("c_rel".into(), t.c_rel.clone().into());
    obj.insert("google_rank".into(), t.google_rank.into());
    obj.insert("label_A".into(), t.label_a.as_str().into());
    obj.insert("label_B".into(), t.label_b.as_str().into());
    obj.insert("label_C".into(), t.label_c.as_str().into());
    Value::Object(obj)
}

pub fn write_corpus(mut out: impl Write, triples: &[Triple]) -> std::io::Result<()> {
    for t in triples {
        serde_json::to_writer(&mut out, &triple_to_json(t))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadComment {
    pub id: String,
    pub text: String,
    pub label: CommentLabel,
}

/// A related question together with its labeled comments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Thread {
    pub id: String,
    pub question: Question,
    pub comments: Vec<ThreadComment>,
}

/// Regroups triples into question threads, in order of first appearance.
/// A comment repeated under the same related question is kept once.
pub fn threads_from_triples(triples: &[Triple]) -> Vec<Thread> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut threads: Vec<Thread> = Vec::new();
    for t in triples {
        let key = t.q_rel_key();
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            threads.push(Thread {
                id: t.q_rel_id.clone().unwrap_or_else(|| format!("{}/{}", t.group, t.id)),
                question: t.q_rel.clone(),
                comments: Vec::new(),
            });
            threads.len() - 1
        });
        let thread = &mut threads[slot];
        if thread.comments.iter().all(|c| c.text != t.c_rel) {
            thread.comments.push(ThreadComment {
                id: t.id.clone(),
                text: t.c_rel.clone(),
                label: t.label_a,
            });
        }
    }
    threads
}

/// Builds one `(q_rel, q_rel, c_rel)` triple per thread comment: the question
/// is a perfect match for itself and the task-C label copies the task-A label.
pub fn extend_dataset(threads: &[Thread]) -> Vec<Triple> {
    threads
        .iter()
        .flat_map(|th| {
            th.comments.iter().map(move |c| Triple {
                id: format!("ed:{}", c.id),
                group: th.id.clone(),
                q_new: th.question.clone(),
                q_rel: th.question.clone(),
                q_rel_id: Some(th.id.clone()),
                c_rel: c.text.clone(),
                google_rank: 1,
                label_a: c.label,
                label_b: QuestionLabel::PerfectMatch,
                label_c: c.label,
            })
        })
        .collect()
}

/// Shuffles `data` with a seeded generator and cuts it into consecutive
/// chunks of `batch_size` (the last one may be short).
pub fn make_batches<T: Clone>(data: &[T], batch_size: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut items = data.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    Ok(items.chunks(batch_size).map(<[T]>::to_vec).collect())
}

/// Percentage of positive labels for tasks A, B and C.
pub fn positive_rates(data: &[Triple]) -> Result<[f64; 3]> {
    if data.is_empty() {
        return Err(Error::Empty("positive rates of an empty corpus".into()));
    }
    let mut counts = [0usize; 3];
    for t in data {
        let y = binarize(t);
        counts[0] += usize::from(y.a);
        counts[1] += usize::from(y.b);
        counts[2] += usize::from(y.c);
    }
    Ok(counts.map(|c| 100.0 * c as f64 / data.len() as f64))
}
