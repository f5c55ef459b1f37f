//! Brute-force reference scorer, written from the textbook formulas and
//! sharing no code with the library. Texts are expected to be plain
//! whitespace-separated words; punctuation-only tokens are ignored.

#![allow(dead_code)]

pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Okapi BM25 of `query` against every document, query terms counted once,
/// idf floored at zero.
pub fn bm25_all(query: &str, docs: &[&str], k1: f64, b: f64) -> Vec<f64> {
    let docs: Vec<Vec<String>> = docs.iter().map(|d| words(d)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut terms: Vec<String> = Vec::new();
    for t in words(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    docs.iter()
        .map(|doc| {
            if doc.is_empty() {
                return 0.0;
            }
            let mut score = 0.0;
            for t in &terms {
                let f = doc.iter().filter(|w| *w == t).count() as f64;
                if f == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let dl = doc.len() as f64 / avgdl;
                score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl));
            }
            score
        })
        .collect()
}

pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut uu = 0.0f64;
    let mut vv = 0.0f64;
    for i in 0..u.len() {
        dot += u[i] as f64 * v[i] as f64;
        uu += u[i] as f64 * u[i] as f64;
        vv += v[i] as f64 * v[i] as f64;
    }
    dot / (uu.sqrt() * vv.sqrt())
}

pub fn minmax(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::MAX, f64::min);
    let hi = xs.iter().cloned().fold(f64::MIN, f64::max);
    if hi == lo {
        return xs.iter().map(|_| if hi > 0.0 { 1.0 } else { 0.0 }).collect();
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone)]
pub struct Row {
    pub id: String,
    pub d: f64,
    pub b: f64,
    pub dn: f64,
    pub bn: f64,
    pub rel: f64,
}

pub struct Doc<'a> {
    pub id: String,
    pub text: &'a str,
    pub embedding: &'a [f32],
}

/// Every candidate scored and sorted: rel desc, raw dense desc, id asc.
pub fn rank(query: &str, q: &[f32], docs: &[Doc<'_>], weight: f64, k1: f64, b: f64) -> Vec<Row> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text).collect();
    let lex = bm25_all(query, &texts, k1, b);
    let dense: Vec<f64> = docs.iter().map(|d| cosine(q, d.embedding)).collect();
    let dn = minmax(&dense);
    let bn = minmax(&lex);
    let mut rows: Vec<Row> = (0..docs.len())
        .map(|i| Row {
            id: docs[i].id.clone(),
            d: dense[i],
            b: lex[i],
            dn: dn[i],
            bn: bn[i],
            rel: weight * dn[i] + (1.0 - weight) * bn[i],
        })
        .collect();
    // Insertion sort keeps the comparison explicit.
    for i in 1..rows.len() {
        let mut j = i;
        while j > 0 && before(&rows[j], &rows[j - 1]) {
            rows.swap(j, j - 1);
            j -= 1;
        }
    }
    rows
}

fn before(a: &Row, b: &Row) -> bool {
    if a.rel != b.rel {
        return a.rel > b.rel;
    }
    if a.d != b.d {
        return a.d > b.d;
    }
    a.id < b.id
}

/// Index of the best candidate by exhaustive scan.
pub fn argmax(rows: &[Row]) -> Option<String> {
    let mut best: Option<&Row> = None;
    for r in rows {
        if best.is_none_or(|b| before(r, b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.id.clone())
}
