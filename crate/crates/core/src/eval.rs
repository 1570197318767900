//! Retrieval metrics and the benchmark runner.
//!
//! Conventions:
//! - `P@K` counts relevant items among the first K retrieved and always
//!   divides by K, so a list shorter than K is penalized.
//! - `R@K` is a hit rate: the fraction of queries with at least one
//!   relevant item in the top K.
//! - `AP@K` defaults to the standard truncated form normalized by
//!   `min(R, K)`; a query with no relevant items scores 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::search::{multimodal_search, AggregationConfig, QueryEmbeddingBundle, QueryEmbeddings, SafetyPolicy, SceneTags};
use crate::store::EmbeddingStore;

/// Query id → ranked scene ids.
pub type RankedRun = BTreeMap<String, Vec<String>>;

pub const DEFAULT_KS: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceJudgments {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub query_id: String,
    pub scene_id: String,
    pub relevant: u8,
}

/// Concept-style annotation: the concepts a scene was labelled with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConcepts {
    pub scene_id: String,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JudgmentLine {
    Pair(JudgmentRecord),
    Concepts(SceneConcepts),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<QueryEmbeddings>,
    /// Concepts this query targets; defaults to the query text itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<String>>,
}

impl QueryRecord {
    fn concept_set(&self) -> BTreeSet<String> {
        match &self.concepts {
            Some(cs) => cs.iter().map(|c| c.trim().to_lowercase()).collect(),
            None => BTreeSet::from([self.text.trim().to_lowercase()]),
        }
    }
}

impl RelevanceJudgments {
    pub fn from_records<I: IntoIterator<Item = JudgmentRecord>>(records: I) -> Result<Self> {
        let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in records {
            let set = relevant.entry(r.query_id).or_default();
            match r.relevant {
                0 => {}
                1 => {
                    set.insert(r.scene_id);
                }
                other => return Err(Error::invalid(format!("relevance must be 0 or 1, got {other}"))),
            }
        }
        Ok(Self { relevant })
    }

    /// A scene is relevant to a query when they share at least one concept
    /// (case-insensitive).
    pub fn from_concepts(scenes: &[SceneConcepts], queries: &[QueryRecord]) -> Self {
        let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for q in queries {
            let wanted = q.concept_set();
            let set = relevant.entry(q.query_id.clone()).or_default();
            for s in scenes {
                if s.concepts.iter().any(|c| wanted.contains(&c.trim().to_lowercase())) {
                    set.insert(s.scene_id.clone());
                }
            }
        }
        Self { relevant }
    }

    /// Mixed files are allowed: pair lines and concept lines are merged.
    pub fn from_lines(lines: Vec<JudgmentLine>, queries: &[QueryRecord]) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut concepts = Vec::new();
        for line in lines {
            match line {
                JudgmentLine::Pair(p) => pairs.push(p),
                JudgmentLine::Concepts(c) => concepts.push(c),
            }
        }
        let mut out = Self::from_records(pairs)?;
        if !concepts.is_empty() {
            for (q, set) in Self::from_concepts(&concepts, queries).relevant {
                out.relevant.entry(q).or_default().extend(set);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path, queries: &[QueryRecord]) -> Result<Self> {
        Self::from_lines(jsonl::read(path)?, queries)
    }

    pub fn is_relevant(&self, query: &str, scene: &str) -> bool {
        self.relevant.get(query).is_some_and(|s| s.contains(scene))
    }

    pub fn relevant_count(&self, query: &str) -> usize {
        self.relevant.get(query).map_or(0, BTreeSet::len)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }

    pub fn scenes(&self) -> impl Iterator<Item = &str> {
        self.relevant.values().flatten().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApVariant {
    #[default]
    StandardAp,
    MeanPrecision,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    Ok(())
}

fn check_run(run: &RankedRun) -> Result<()> {
    for (q, list) in run {
        let mut seen = BTreeSet::new();
        if let Some(dup) = list.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::invalid(format!("query {q}: scene {dup} ranked twice")));
        }
    }
    Ok(())
}

fn relevance_pattern(list: &[String], query: &str, judgments: &RelevanceJudgments, k: usize) -> Vec<bool> {
    list.iter().take(k).map(|s| judgments.is_relevant(query, s)).collect()
}

pub fn query_precision(list: &[String], query: &str, judgments: &RelevanceJudgments, k: usize) -> f64 {
    let hits = relevance_pattern(list, query, judgments, k).iter().filter(|r| **r).count();
    hits as f64 / k as f64
}

pub fn query_hit(list: &[String], query: &str, judgments: &RelevanceJudgments, k: usize) -> f64 {
    if relevance_pattern(list, query, judgments, k).contains(&true) {
        1.0
    } else {
        0.0
    }
}

pub fn query_average_precision(list: &[String], query: &str, judgments: &RelevanceJudgments, k: usize, variant: ApVariant) -> f64 {
    let pattern = relevance_pattern(list, query, judgments, k);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in pattern.iter().enumerate() {
        if rel {
            hits += 1;
        }
        let p_at = hits as f64 / (i + 1) as f64;
        match variant {
            ApVariant::StandardAp if rel => sum += p_at,
            ApVariant::MeanPrecision => sum += p_at,
            _ => {}
        }
    }
    match variant {
        ApVariant::StandardAp => {
            let denom = judgments.relevant_count(query).min(k);
            if denom == 0 {
                0.0
            } else {
                sum / denom as f64
            }
        }
        ApVariant::MeanPrecision => sum / k as f64,
    }
}

type QueryMetric<'a> = dyn Fn(&str, &[String]) -> f64 + 'a;

fn mean_over_queries<F: Fn(&str, &[String]) -> f64>(run: &RankedRun, f: F) -> f64 {
    if run.is_empty() {
        return 0.0;
    }
    run.iter().map(|(q, list)| f(q, list)).sum::<f64>() / run.len() as f64
}

pub fn precision_at_k(run: &RankedRun, judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    check_k(k)?;
    check_run(run)?;
    Ok(mean_over_queries(run, |q, l| query_precision(l, q, judgments, k)))
}

pub fn recall_at_k(run: &RankedRun, judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    check_k(k)?;
    check_run(run)?;
    Ok(mean_over_queries(run, |q, l| query_hit(l, q, judgments, k)))
}

pub fn map_at_k(run: &RankedRun, judgments: &RelevanceJudgments, k: usize, variant: ApVariant) -> Result<f64> {
    check_k(k)?;
    check_run(run)?;
    Ok(mean_over_queries(run, |q, l| query_average_precision(l, q, judgments, k, variant)))
}

/// Mean absolute precision difference between two systems across a K grid.
pub fn delta_avg(a: &[(usize, f64)], b: &[(usize, f64)]) -> Result<f64> {
    let ka: Vec<usize> = a.iter().map(|(k, _)| *k).collect();
    let kb: Vec<usize> = b.iter().map(|(k, _)| *k).collect();
    if ka != kb {
        return Err(Error::invalid(format!("K sets differ: {ka:?} vs {kb:?}")));
    }
    if a.is_empty() {
        return Err(Error::Empty("K set"));
    }
    Ok(a.iter().zip(b).map(|((_, pa), (_, pb))| (pa - pb).abs()).sum::<f64>() / a.len() as f64)
}

/// Mean share (percent) of each query's top-K that both runs agree on.
pub fn topk_overlap(a: &RankedRun, b: &RankedRun, k: usize) -> Result<f64> {
    check_k(k)?;
    check_run(a)?;
    check_run(b)?;
    if a.keys().ne(b.keys()) {
        return Err(Error::invalid("runs cover different query sets"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = a
        .iter()
        .map(|(q, la)| {
            let top_a: BTreeSet<&String> = la.iter().take(k).collect();
            let shared = b[q].iter().take(k).filter(|s| top_a.contains(s)).count();
            shared as f64 / k as f64
        })
        .sum();
    Ok(100.0 * (total / a.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetricRow {
    pub query_id: String,
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub queries: usize,
    pub ap_variant: ApVariant,
    pub config: AggregationConfig,
    pub metrics: Vec<MetricRow>,
    pub per_query: Vec<QueryMetricRow>,
}

impl MetricReport {
    pub fn value(&self, metric: &str, k: usize) -> Option<f64> {
        self.metrics.iter().find(|r| r.metric == metric && r.k == k).map(|r| r.value)
    }

    /// Scores `run` on every K; `config` is echoed into the report.
    pub fn compute(run: &RankedRun, judgments: &RelevanceJudgments, ks: &[usize], variant: ApVariant, config: AggregationConfig) -> Result<Self> {
        check_run(run)?;
        let mut report = MetricReport {
            ks: ks.to_vec(),
            queries: run.len(),
            ap_variant: variant,
            config,
            ..Default::default()
        };
        for &k in ks {
            check_k(k)?;
            let per: [(&str, Box<QueryMetric>); 3] = [
                ("P", Box::new(|q, l| query_precision(l, q, judgments, k))),
                ("R", Box::new(|q, l| query_hit(l, q, judgments, k))),
                ("MAP", Box::new(|q, l| query_average_precision(l, q, judgments, k, variant))),
            ];
            for (name, f) in per {
                let mut sum = 0.0;
                for (q, list) in run {
                    let v = f(q, list);
                    sum += v;
                    report.per_query.push(QueryMetricRow {
                        query_id: q.clone(),
                        metric: name.to_string(),
                        k,
                        value: v,
                    });
                }
                let value = if run.is_empty() { 0.0 } else { sum / run.len() as f64 };
                report.metrics.push(MetricRow {
                    metric: name.to_string(),
                    k,
                    value,
                });
            }
        }
        Ok(report)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "metric");
        for k in &self.ks {
            let _ = write!(out, "{:>9}", format!("@{k}"));
        }
        out.push('\n');
        for metric in ["P", "R", "MAP"] {
            let _ = write!(out, "{metric:<8}");
            for &k in &self.ks {
                let v = self.value(metric, k).unwrap_or(f64::NAN);
                let _ = write!(out, "{:>9.2}", 100.0 * v);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "queries: {}", self.queries);
        out
    }

    /// Writes `report.csv`, `per_query.csv`, `report.txt`, and `report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        w.write_record(["metric", "k", "value", "percent"])?;
        for r in &self.metrics {
            w.write_record([r.metric.clone(), r.k.to_string(), r.value.to_string(), format!("{:.2}", 100.0 * r.value)])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("report.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("per_query.csv"))?;
        w.write_record(["query_id", "metric", "k", "value"])?;
        for r in &self.per_query {
            w.write_record([r.query_id.clone(), r.metric.clone(), r.k.to_string(), r.value.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("per_query.csv"), e))?;

        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.render_table()).map_err(|e| Error::io(txt, e))?;
        jsonl::write_json(&dir.join("report.json"), self)
    }
}

/// Runs every query through [`multimodal_search`] and scores the run.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    store: &EmbeddingStore,
    tags: &SceneTags,
    config: &AggregationConfig,
    policy: &SafetyPolicy,
    queries: &[QueryRecord],
    judgments: &RelevanceJudgments,
    ks: &[usize],
    variant: ApVariant,
) -> Result<(MetricReport, RankedRun)> {
    let ids: BTreeSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    if ids.len() != queries.len() {
        return Err(Error::invalid("duplicate query_id in queries file"));
    }
    if let Some(q) = judgments.queries().find(|q| !ids.contains(q)) {
        return Err(Error::UnknownQuery(q.to_string()));
    }
    if let Some(s) = judgments.scenes().find(|s| !store.contains_scene(s)) {
        return Err(Error::UnknownScene(s.to_string()));
    }

    let mut config = config.clone();
    config.top_k = config.top_k.max(ks.iter().copied().max().unwrap_or(1));

    let mut run = RankedRun::new();
    for q in queries {
        let embeddings = q
            .embeddings
            .clone()
            .ok_or_else(|| Error::invalid(format!("missing embeddings for query {}", q.query_id)))?;
        let bundle = QueryEmbeddingBundle {
            text: q.text.clone(),
            embeddings,
        }
        .normalized()?;
        let result = multimodal_search(&bundle, store, &config, policy, tags)?;
        run.insert(q.query_id.clone(), result.hits.into_iter().map(|h| h.scene_id).collect());
    }
    let report = MetricReport::compute(&run, judgments, ks, variant, config)?;
    Ok((report, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(lists: &[(&str, &[&str])]) -> RankedRun {
        lists
            .iter()
            .map(|(q, l)| (q.to_string(), l.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn judg(pairs: &[(&str, &str)]) -> RelevanceJudgments {
        RelevanceJudgments::from_records(pairs.iter().map(|(q, s)| JudgmentRecord {
            query_id: q.to_string(),
            scene_id: s.to_string(),
            relevant: 1,
        }))
        .unwrap()
    }

    #[test]
    fn precision_example() {
        let run = run_of(&[("q", &["a", "b", "c", "d", "e"])]);
        let j = judg(&[("q", "a"), ("q", "b"), ("q", "e")]);
        assert!((precision_at_k(&run, &j, 5).unwrap() - 0.6).abs() < 1e-15);
        let all = judg(&[("q", "a"), ("q", "b"), ("q", "c"), ("q", "d"), ("q", "e")]);
        assert_eq!(precision_at_k(&run, &all, 5).unwrap(), 1.0);
        assert!(precision_at_k(&run, &j, 0).is_err());
    }

    #[test]
    fn short_list_keeps_k_denominator() {
        let run = run_of(&[("q", &["a"])]);
        let j = judg(&[("q", "a")]);
        assert_eq!(precision_at_k(&run, &j, 5).unwrap(), 0.2);
    }

    #[test]
    fn hit_rate_example() {
        let lists: Vec<Vec<String>> = [1usize, 6, 3]
            .iter()
            .map(|&rank| (1..=10).map(|i| if i == rank { "rel".to_string() } else { format!("x{i}") }).collect())
            .collect();
        let run: RankedRun = lists.into_iter().enumerate().map(|(i, l)| (format!("q{i}"), l)).collect();
        let j = judg(&[("q0", "rel"), ("q1", "rel"), ("q2", "rel")]);
        assert!((recall_at_k(&run, &j, 5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&run, &RelevanceJudgments::default(), 5).unwrap(), 0.0);
    }

    #[test]
    fn ap_examples() {
        let run = run_of(&[("q", &["a", "b", "c", "d", "e"])]);
        let j = judg(&[("q", "a"), ("q", "c")]);
        let ap = map_at_k(&run, &j, 5, ApVariant::StandardAp).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let perfect = judg(&[("q", "a"), ("q", "b"), ("q", "c"), ("q", "d"), ("q", "e")]);
        assert_eq!(map_at_k(&run, &perfect, 5, ApVariant::StandardAp).unwrap(), 1.0);
        assert_eq!(map_at_k(&run, &RelevanceJudgments::default(), 5, ApVariant::StandardAp).unwrap(), 0.0);
        // mean of P@1..P@5 for [1,0,1,0,0]: (1 + 1/2 + 2/3 + 2/4 + 2/5) / 5
        let mp = map_at_k(&run, &j, 5, ApVariant::MeanPrecision).unwrap();
        assert!((mp - (1.0 + 0.5 + 2.0 / 3.0 + 0.5 + 0.4) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        let ks = DEFAULT_KS;
        let zip = |xs: [f64; 6]| ks.iter().copied().zip(xs).collect::<Vec<_>>();
        let v = zip([85.7, 84.3, 80.5, 79.5, 77.6, 76.2]);
        let vm = zip([87.9, 86.4, 85.0, 83.6, 83.0, 82.4]);
        assert!((delta_avg(&v, &vm).unwrap() - 4.08).abs() < 0.005);
        assert_eq!(delta_avg(&v, &v).unwrap(), 0.0);
        assert!(delta_avg(&v, &vm[..5]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let a = run_of(&[("q", &["a", "b", "c", "d", "e"])]);
        let b = run_of(&[("q", &["a", "x", "y", "z", "w"])]);
        assert!((topk_overlap(&a, &b, 5).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(topk_overlap(&a, &a, 5).unwrap(), 100.0);
        let other = run_of(&[("p", &["a"])]);
        assert!(topk_overlap(&a, &other, 1).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let run = run_of(&[("q", &["a", "a"])]);
        assert!(precision_at_k(&run, &RelevanceJudgments::default(), 1).is_err());
    }

    #[test]
    fn concept_judgments() {
        let scenes = vec![
            SceneConcepts {
                scene_id: "s1".into(),
                concepts: vec!["Dog".into(), "cooking".into()],
            },
            SceneConcepts {
                scene_id: "s2".into(),
                concepts: vec!["army".into()],
            },
        ];
        let queries = vec![
            QueryRecord {
                query_id: "q1".into(),
                text: "dog".into(),
                ..Default::default()
            },
            QueryRecord {
                query_id: "q2".into(),
                text: "soldiers marching".into(),
                concepts: Some(vec!["army".into()]),
                ..Default::default()
            },
        ];
        let j = RelevanceJudgments::from_concepts(&scenes, &queries);
        assert!(j.is_relevant("q1", "s1") && !j.is_relevant("q1", "s2"));
        assert!(j.is_relevant("q2", "s2"));
        assert_eq!(j.relevant_count("q2"), 1);
    }

    #[test]
    fn judgment_lines_parse_both_styles() {
        let text = "{\"query_id\":\"q1\",\"scene_id\":\"s1\",\"relevant\":1}\n{\"scene_id\":\"s2\",\"concepts\":[\"dog\"]}\n";
        let lines: Vec<JudgmentLine> = jsonl::parse_lines(text.as_bytes(), Path::new("j")).unwrap();
        let queries = vec![QueryRecord {
            query_id: "q1".into(),
            text: "dog".into(),
            ..Default::default()
        }];
        let j = RelevanceJudgments::from_lines(lines, &queries).unwrap();
        assert_eq!(j.relevant_count("q1"), 2);
    }
}
