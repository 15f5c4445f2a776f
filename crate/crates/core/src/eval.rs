//! Accuracy metrics, majority voting, topic matching and topic listings.
//!
//! Ties are broken toward the lowest index everywhere.

use std::collections::HashMap;

use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::data_io::{Corpus, GroupTruth};
use crate::encoders::{EncoderParams, Item};
use crate::error::{Error, Result};
use crate::math;
use crate::mean_field::{item_logits, HyperParams};
use crate::scalar::Scalar;
use crate::training::predict_group;

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(
            "accuracy needs two equally long, non-empty label lists",
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Most frequent label; the lowest label wins ties.
pub fn majority_vote(predictions: &[usize]) -> Result<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for p in predictions {
        *counts.entry(*p).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(lb.cmp(la)))
        .map(|(label, _)| label)
        .ok_or_else(|| Error::contract("majority vote over no predictions"))
}

/// `k × k` counts, rows indexed by the true class, columns by the prediction.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::contract("prediction and truth lengths differ"));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (p, t) in pred.iter().zip(truth) {
        if *p >= k || *t >= k {
            return Err(Error::contract(format!("label out of range for K = {k}")));
        }
        m[*t][*p] += 1;
    }
    Ok(m)
}

/// Optimal one-to-one alignment of predicted topics to true classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicMatching {
    /// `assignment[t]` is the predicted topic matched to true class `t`.
    pub assignment: Vec<usize>,
    /// Matched counts divided by the total count.
    pub accuracy: f64,
}

impl TopicMatching {
    /// Inverse map: the true class matched to each predicted topic.
    pub fn predicted_to_true(&self) -> Vec<usize> {
        let mut inv = vec![0; self.assignment.len()];
        for (t, p) in self.assignment.iter().enumerate() {
            inv[*p] = t;
        }
        inv
    }
}

/// Maximizes the matched trace of a square confusion matrix (Hungarian method).
pub fn match_topics(confusion: &[Vec<u64>]) -> Result<TopicMatching> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|r| r.len() != k) {
        return Err(Error::contract("topic matching needs a non-empty square matrix"));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::contract("topic matching needs at least one count"));
    }
    let weights = Matrix::from_rows(
        confusion
            .iter()
            .map(|r| r.iter().map(|c| i64::try_from(*c).expect("count fits in i64"))),
    )
    .map_err(|e| Error::contract(e.to_string()))?;
    let (matched, assignment) = pathfinding::kuhn_munkres::kuhn_munkres(&weights);
    Ok(TopicMatching {
        assignment,
        accuracy: matched as f64 / total as f64,
    })
}

/// One entry of a topic listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopItem {
    pub group: usize,
    pub item: usize,
    pub score: f64,
    pub text: String,
}

fn item_key<T: Scalar>(item: &Item<T>) -> Vec<u64> {
    match item {
        Item::Token(t) => vec![*t as u64],
        Item::Dense(x) => x.iter().map(|v| v.as_f64().to_bits()).collect(),
    }
}

/// For each topic, the `n` distinct items with the highest inferred belief
/// `p̂_dn[k]`. Repeated items count once, at their best score; equal scores
/// keep corpus order.
pub fn top_items_per_topic<T: Scalar>(
    corpus: &Corpus<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
    n: usize,
) -> Result<Vec<Vec<TopItem>>> {
    let k = hyper.num_topics();
    if n == 0 {
        return Ok(vec![Vec::new(); k]);
    }
    // per topic: key -> (score, group, item), first occurrence wins ties
    let mut best: Vec<HashMap<Vec<u64>, (f64, usize, usize)>> = vec![HashMap::new(); k];
    for (d, group) in corpus.groups.iter().enumerate() {
        let pred = predict_group(group, theta, hyper)?;
        for (i, (item, p)) in group.items.iter().zip(&pred.p_items).enumerate() {
            let key = item_key(item);
            for (topic, slot) in best.iter_mut().enumerate() {
                let score = p[topic].as_f64();
                slot.entry(key.clone())
                    .and_modify(|e| {
                        if score > e.0 {
                            *e = (score, d, i);
                        }
                    })
                    .or_insert((score, d, i));
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|slot| {
            let mut entries: Vec<_> = slot.into_values().collect();
            entries.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            entries
                .into_iter()
                .take(n)
                .map(|(score, g, i)| TopItem {
                    group: g,
                    item: i,
                    score,
                    text: corpus.describe_item(&corpus.groups[g].items[i]),
                })
                .collect()
        })
        .collect())
}

/// Summary metrics of a model on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub groups: usize,
    /// Over labeled groups, `None` when no group is labeled.
    pub group_accuracy: Option<f64>,
    /// Group accuracy when each group is labeled by the majority of its
    /// items' most probable topics.
    pub majority_vote_accuracy: Option<f64>,
    /// Rows: true label, columns: predicted label (labeled groups only).
    pub confusion: Vec<Vec<u64>>,
    /// How often each topic is the most probable one for an item.
    pub topic_usage: Vec<u64>,
    /// How often each topic has the largest encoder logit for an item.
    pub encoder_usage: Vec<u64>,
    /// Item-topic accuracy after topic matching, when ground truth is given.
    pub item_accuracy: Option<f64>,
    pub matching: Option<TopicMatching>,
}

/// Runs label-free prediction on every group and scores it.
pub fn evaluate<T: Scalar>(
    corpus: &Corpus<T>,
    theta: &EncoderParams<T>,
    hyper: &HyperParams<T>,
    truth: Option<&[GroupTruth]>,
) -> Result<EvalReport> {
    let k = hyper.num_topics();
    if corpus.k != k || theta.num_topics() != k {
        return Err(Error::contract(
            "corpus, encoder and hyperparameters disagree on K",
        ));
    }
    if truth.is_some_and(|t| t.len() != corpus.groups.len()) {
        return Err(Error::contract("one truth record per group is required"));
    }
    let mut usage = vec![0u64; k];
    let mut encoder_usage = vec![0u64; k];
    let (mut pred_labels, mut vote_labels, mut true_labels) = (Vec::new(), Vec::new(), Vec::new());
    let (mut item_pred, mut item_true) = (Vec::new(), Vec::new());
    for (d, group) in corpus.groups.iter().enumerate() {
        let pred = predict_group(group, theta, hyper)?;
        let item_topics: Vec<usize> = pred.p_items.iter().map(|p| p.argmax()).collect();
        item_topics.iter().for_each(|t| usage[*t] += 1);
        for f in item_logits(group, theta)? {
            encoder_usage[math::argmax(&f)] += 1;
        }
        if let Some(c) = group.label {
            pred_labels.push(pred.label);
            vote_labels.push(majority_vote(&item_topics)?);
            true_labels.push(c);
        }
        if let Some(t) = truth {
            if t[d].topics.len() != item_topics.len() {
                return Err(Error::contract(format!(
                    "truth for group '{}' has the wrong length",
                    group.id
                )));
            }
            item_true.extend_from_slice(&t[d].topics);
            item_pred.extend_from_slice(&item_topics);
        }
    }
    let labeled = !true_labels.is_empty();
    let matching = if truth.is_some() {
        Some(match_topics(&confusion_matrix(&item_pred, &item_true, k)?)?)
    } else {
        None
    };
    Ok(EvalReport {
        groups: corpus.groups.len(),
        group_accuracy: labeled
            .then(|| accuracy(&pred_labels, &true_labels))
            .transpose()?,
        majority_vote_accuracy: labeled
            .then(|| accuracy(&vote_labels, &true_labels))
            .transpose()?,
        confusion: confusion_matrix(&pred_labels, &true_labels, k)?,
        topic_usage: usage,
        encoder_usage,
        item_accuracy: matching.as_ref().map(|m| m.accuracy),
        matching,
    })
}
