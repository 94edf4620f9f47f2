//! Brute-force reference implementations used by the property tests and the
//! acceptance suite. They share no code with the library beyond tokenizing.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

/// Scores every document independently; returns matches sorted by score
/// descending then id ascending, cut to `k`.
pub fn bm25_oracle(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64, k: usize) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored = Vec::new();
    for (id, tokens) in docs {
        let mut score = 0.0;
        let mut matched = false;
        for term in &terms {
            let tf = tokens.iter().filter(|t| t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|(_, d)| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let len = tokens.len() as f64;
            score += idf * tf / (tf + k1 * (1.0 - b + b * len / avgdl));
        }
        if matched {
            scored.push((id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn grade(judgments: &HashMap<String, u32>, id: &str) -> f64 {
    f64::from(judgments.get(id).copied().unwrap_or(0))
}

/// nDCG with linear gain; the ideal ordering is found by repeatedly picking
/// the largest remaining grade.
pub fn ndcg_oracle(ranked: &[String], judgments: &HashMap<String, u32>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, id) in ranked.iter().enumerate() {
        if pos >= k {
            break;
        }
        let rank = (pos + 1) as f64;
        dcg += grade(judgments, id) * std::f64::consts::LN_2 / (rank + 1.0).ln();
    }
    let mut pool: Vec<u32> = judgments.values().copied().collect();
    let mut idcg = 0.0;
    for pos in 0..k {
        let Some((best_idx, &best)) = pool.iter().enumerate().max_by_key(|(_, g)| **g) else {
            break;
        };
        if best == 0 {
            break;
        }
        pool.swap_remove(best_idx);
        let rank = (pos + 1) as f64;
        idcg += f64::from(best) * std::f64::consts::LN_2 / (rank + 1.0).ln();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

pub fn recall_oracle(ranked: &[String], judgments: &HashMap<String, u32>, k: usize, capped: bool) -> f64 {
    let relevant: Vec<&String> = judgments.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d).collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let top = &ranked[..k.min(ranked.len())];
    let hits = relevant.iter().filter(|d| top.contains(d)).count() as f64;
    let denom = if capped { relevant.len().min(k) } else { relevant.len() } as f64;
    hits / denom
}

pub fn to_btree(j: &HashMap<String, u32>) -> BTreeMap<String, u32> {
    j.iter().map(|(k, v)| (k.clone(), *v)).collect()
}

/// Sorts by hidden grade descending, stable on the original order.
pub fn oracle_sort(items: &[(String, u8)]) -> Vec<String> {
    let mut v: Vec<&(String, u8)> = items.iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1));
    v.into_iter().map(|(id, _)| id.clone()).collect()
}
