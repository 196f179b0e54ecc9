//! Reranking evaluation: MAP and MRR over per-query candidate lists, and the
//! weighted combination of model scores with search-engine ranks.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{Example, Network, TaskScores};
use crate::nn::Real;
use crate::Task;

/// Step of the α grid searched by [`tune_alpha`].
pub const ALPHA_STEPS: u32 = 100;

/// Mean over relevant positions `k` of `(relevant in top k) / k`.
pub fn average_precision(relevances: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevances.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::InvalidArgument(
            "average precision is undefined without relevant items".into(),
        ));
    }
    Ok(sum / hits as f64)
}

/// `1 / (position of the first relevant item)`.
pub fn reciprocal_rank(relevances: &[bool]) -> Result<f64> {
    relevances
        .iter()
        .position(|&r| r)
        .map(|i| 1.0 / (i + 1) as f64)
        .ok_or_else(|| {
            Error::InvalidArgument("reciprocal rank is undefined without relevant items".into())
        })
}

/// `alpha * score + (1 - alpha) / google_rank`.
pub fn weighted_combine(model_score: f64, google_rank: u32, alpha: f64) -> f64 {
    alpha * model_score + (1.0 - alpha) / f64::from(google_rank.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedItem {
    pub doc_id: String,
    pub score: f64,
    pub google_rank: u32,
    pub relevant: bool,
}

/// Candidates of one query sorted by descending score, ties broken by
/// ascending google rank and then doc id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub group_key: String,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn new(group_key: impl Into<String>, mut items: Vec<RankedItem>) -> Result<Self> {
        let group_key = group_key.into();
        if let Some(bad) = items.iter().find(|i| !i.score.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score of `{}` in query `{group_key}` is {}",
                bad.doc_id, bad.score
            )));
        }
        items.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.google_rank.cmp(&b.google_rank))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        Ok(RankedList { group_key, items })
    }

    pub fn relevances(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.relevant).collect()
    }

    pub fn has_relevant(&self) -> bool {
        self.items.iter().any(|i| i.relevant)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean average precision, in percent.
    pub map: f64,
    /// Mean reciprocal rank, in percent.
    pub mrr: f64,
    pub per_query: Vec<(String, f64)>,
    pub queries: usize,
    /// Queries without any relevant candidate; excluded from both means.
    pub skipped: usize,
}

/// MAP/MRR over ranked lists. Lists without relevant items are skipped.
pub fn evaluate_lists(lists: &[RankedList]) -> Result<EvalResult> {
    if lists.is_empty() {
        return Err(Error::Empty("no queries to evaluate".into()));
    }
    let mut per_query = Vec::new();
    let mut rr_sum = 0.0;
    let mut skipped = 0;
    for list in lists {
        if !list.has_relevant() {
            skipped += 1;
            continue;
        }
        let rels = list.relevances();
        per_query.push((list.group_key.clone(), average_precision(&rels)?));
        rr_sum += reciprocal_rank(&rels)?;
    }
    let queries = per_query.len();
    let (map, mrr) = if queries == 0 {
        (0.0, 0.0)
    } else {
        let ap_sum: f64 = per_query.iter().map(|(_, ap)| ap).sum();
        (100.0 * ap_sum / queries as f64, 100.0 * rr_sum / queries as f64)
    };
    Ok(EvalResult {
        map,
        mrr,
        per_query,
        queries,
        skipped,
    })
}

/// One rankable document for a task, before grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub group_key: String,
    pub item: RankedItem,
}

/// Turns per-example scores into task candidates.
///
/// Tasks A and C rank comments, one candidate per example. Task B ranks
/// related questions: examples sharing a related question collapse into one
/// candidate whose score is the mean of their scores.
pub fn candidates<T: Real>(examples: &[Example], scores: &[TaskScores<T>], task: Task) -> Result<Vec<Candidate>> {
    if examples.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} examples but {} score rows",
            examples.len(),
            scores.len()
        )));
    }
    let score_of = |s: &TaskScores<T>| -> Result<f64> {
        s[task.index()]
            .map(Real::as_f64)
            .ok_or_else(|| Error::InvalidArgument(format!("model does not score task {task}")))
    };
    match task {
        Task::A | Task::C => examples
            .iter()
            .zip(scores)
            .map(|(ex, s)| {
                Ok(Candidate {
                    group_key: ex.group_key(task).to_string(),
                    item: RankedItem {
                        doc_id: ex.id.clone(),
                        score: score_of(s)?,
                        google_rank: ex.google_rank,
                        relevant: ex.labels.get(task) == 1,
                    },
                })
            })
            .collect(),
        Task::B => {
            let mut index: HashMap<(&str, &str), usize> = HashMap::new();
            let mut out: Vec<(Candidate, usize)> = Vec::new();
            for (ex, s) in examples.iter().zip(scores) {
                let score = score_of(s)?;
                let key = (ex.group.as_str(), ex.q_rel_key.as_str());
                match index.get(&key) {
                    Some(&slot) => {
                        out[slot].0.item.score += score;
                        out[slot].1 += 1;
                    }
                    None => {
                        index.insert(key, out.len());
                        out.push((
                            Candidate {
                                group_key: ex.group.clone(),
                                item: RankedItem {
                                    doc_id: ex.q_rel_key.clone(),
                                    score,
                                    google_rank: ex.google_rank,
                                    relevant: ex.labels.b == 1,
                                },
                            },
                            1,
                        ));
                    }
                }
            }
            Ok(out
                .into_iter()
                .map(|(mut c, n)| {
                    c.item.score /= n as f64;
                    c
                })
                .collect())
        }
    }
}

/// Groups candidates into ranked lists (in order of first appearance),
/// optionally replacing scores by [`weighted_combine`] with `alpha`.
pub fn rank_candidates(cands: &[Candidate], alpha: Option<f64>) -> Result<Vec<RankedList>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(&str, Vec<RankedItem>)> = Vec::new();
    for c in cands {
        let mut item = c.item.clone();
        if let Some(a) = alpha {
            item.score = weighted_combine(item.score, item.google_rank, a);
        }
        let slot = *index.entry(c.group_key.as_str()).or_insert_with(|| {
            groups.push((c.group_key.as_str(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(item);
    }
    groups
        .into_iter()
        .map(|(g, items)| RankedList::new(g, items))
        .collect()
}

pub fn score_examples<T: Real, N: Network<T>>(model: &N, examples: &[Example]) -> Result<Vec<TaskScores<T>>> {
    examples.iter().map(|ex| model.predict(ex)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub result: EvalResult,
    pub lists: Vec<RankedList>,
}

/// Scores every example with `model`, reranks per query and computes
/// MAP/MRR for `task`.
pub fn evaluate<T: Real, N: Network<T>>(
    model: &N,
    data: &[Example],
    task: Task,
    alpha: Option<f64>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data".into()));
    }
    let scores = score_examples(model, data)?;
    let cands = candidates(data, &scores, task)?;
    let lists = rank_candidates(&cands, alpha)?;
    Ok(Evaluation {
        result: evaluate_lists(&lists)?,
        lists,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// MAP (percent) reached with `alpha`.
    pub map: f64,
}

/// Grid search over α in {0, 0.01, ..., 1} for the highest MAP; the
/// smallest α wins ties.
pub fn tune_alpha_candidates(cands: &[Candidate]) -> Result<AlphaChoice> {
    let mut best: Option<AlphaChoice> = None;
    for step in 0..=ALPHA_STEPS {
        let alpha = f64::from(step) / f64::from(ALPHA_STEPS);
        let map = evaluate_lists(&rank_candidates(cands, Some(alpha))?)?.map;
        if best.is_none_or(|b| map > b.map) {
            best = Some(AlphaChoice { alpha, map });
        }
    }
    best.ok_or_else(|| Error::Empty("alpha grid".into()))
}

pub fn tune_alpha<T: Real, N: Network<T>>(model: &N, dev: &[Example], task: Task) -> Result<AlphaChoice> {
    if dev.is_empty() {
        return Err(Error::Empty("development data".into()));
    }
    let scores = score_examples(model, dev)?;
    tune_alpha_candidates(&candidates(dev, &scores, task)?)
}

/// Tab-separated `group, doc, final rank, score[, label]`, one line per
/// candidate.
pub fn write_predictions(mut out: impl Write, lists: &[RankedList], with_labels: bool) -> std::io::Result<()> {
    for list in lists {
        for (pos, item) in list.items.iter().enumerate() {
            write!(
                out,
                "{}\t{}\t{}\t{}",
                list.group_key,
                item.doc_id,
                pos + 1,
                item.score
            )?;
            if with_labels {
                write!(out, "\t{}", u8::from(item.relevant))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
