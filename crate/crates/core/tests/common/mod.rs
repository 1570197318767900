//! Brute-force reference implementations and random case generators shared
//! by the integration suites. Nothing here calls into the scoring code it is
//! used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use contextiq::metadata::{Emotion, SafetyTags};
use contextiq::search::{AggregationConfig, QueryEmbeddingBundle, QueryEmbeddings, SafetyPolicy, SceneTags, UntaggedPolicy};
use contextiq::store::EmbeddingRecord;
use contextiq::Modality;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Merge priority, highest first.
pub const PRIORITY: [Modality; 4] = [Modality::Metadata, Modality::Caption, Modality::Video, Modality::Audio];

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return v;
        }
    }
}

pub fn query_vector(q: &QueryEmbeddings, m: Modality) -> Option<&Vec<f64>> {
    match m {
        Modality::Video => q.vision.as_ref(),
        Modality::Audio => q.audio.as_ref(),
        Modality::Caption | Modality::Metadata => q.text.as_ref(),
    }
}

/// Raw per-modality scores: max cosine over a scene's records.
pub fn oracle_raw(records: &[EmbeddingRecord], query: &QueryEmbeddings) -> BTreeMap<Modality, BTreeMap<String, f64>> {
    let mut out: BTreeMap<Modality, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        let Some(q) = query_vector(query, r.modality) else { continue };
        let s = cosine(q, &r.vector);
        let e = out.entry(r.modality).or_default().entry(r.scene_id.clone()).or_insert(f64::NEG_INFINITY);
        if s > *e {
            *e = s;
        }
    }
    out
}

pub fn oracle_zscores(raw: &BTreeMap<String, f64>, weight: f64) -> BTreeMap<String, f64> {
    let n = raw.len() as f64;
    let mean = raw.values().sum::<f64>() / n;
    let sd = (raw.values().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    raw.iter()
        .map(|(k, x)| {
            let z = if raw.len() == 1 || sd <= 1e-12 { 0.0 } else { weight * (x - mean) / sd };
            (k.clone(), z)
        })
        .collect()
}

pub fn oracle_unsafe(tags: Option<&SafetyTags>, policy: &SafetyPolicy) -> bool {
    let blocks_anything = policy.block_hate || policy.block_profanity || !policy.blocked_emotions.is_empty();
    if !blocks_anything {
        return false;
    }
    match tags {
        None => policy.untagged == UntaggedPolicy::Strict,
        Some(t) => {
            (policy.block_hate && t.hate_flag)
                || (policy.block_profanity && t.profanity_flag)
                || t.emotions.iter().any(|e| policy.blocked_emotions.contains(e))
        }
    }
}

/// Straight-line search: score, z-normalize, gate on raw, max-merge, rank,
/// truncate, filter.
pub fn oracle_search(
    records: &[EmbeddingRecord],
    query: &QueryEmbeddings,
    config: &AggregationConfig,
    policy: &SafetyPolicy,
    tags: &SceneTags,
) -> Vec<(String, f64, Modality)> {
    let raw = oracle_raw(records, query);
    let mut merged: BTreeMap<String, (f64, Modality)> = BTreeMap::new();
    for m in PRIORITY {
        if config.modalities.as_ref().is_some_and(|s| !s.contains(&m)) {
            continue;
        }
        let Some(scores) = raw.get(&m) else { continue };
        let weight = config.weights.get(&m).copied().unwrap_or(1.0);
        let alpha = config.thresholds.get(&m).copied().unwrap_or(f64::NEG_INFINITY);
        let z = oracle_zscores(scores, weight);
        for (scene, r) in scores {
            if *r <= alpha {
                continue;
            }
            let v = z[scene];
            match merged.get(scene) {
                Some((best, _)) if *best >= v => {}
                _ => {
                    merged.insert(scene.clone(), (v, m));
                }
            }
        }
    }
    let mut ranked: Vec<(String, f64, Modality)> = merged.into_iter().map(|(s, (v, m))| (s, v, m)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let safe = |s: &String| !oracle_unsafe(tags.get(s), policy);
    if config.filter_before_truncation {
        ranked.into_iter().filter(|r| safe(&r.0)).take(config.top_k).collect()
    } else {
        ranked.into_iter().take(config.top_k).filter(|r| safe(&r.0)).collect()
    }
}

pub fn random_tags(rng: &mut ChaCha8Rng) -> SafetyTags {
    let emotions: BTreeSet<Emotion> = Emotion::ALL.into_iter().filter(|_| rng.gen_bool(0.2)).collect();
    SafetyTags {
        emotions,
        profanity_flag: rng.gen_bool(0.25),
        hate_flag: rng.gen_bool(0.25),
    }
}

pub fn random_policy(rng: &mut ChaCha8Rng) -> SafetyPolicy {
    SafetyPolicy {
        blocked_emotions: Emotion::ALL.into_iter().filter(|_| rng.gen_bool(0.2)).collect(),
        block_profanity: rng.gen_bool(0.5),
        block_hate: rng.gen_bool(0.5),
        untagged: if rng.gen_bool(0.5) { UntaggedPolicy::Strict } else { UntaggedPolicy::Lenient },
    }
}

pub struct RandomCase {
    pub records: Vec<EmbeddingRecord>,
    pub bundle: QueryEmbeddingBundle,
    pub config: AggregationConfig,
    pub policy: SafetyPolicy,
    pub tags: SceneTags,
    pub scenes: Vec<String>,
}

/// Up to 50 scenes over all four modalities; some scenes duplicate another's
/// vectors to force exact score ties.
pub fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let n = rng.gen_range(1..=50);
    let dim = rng.gen_range(2..=16);
    let scenes: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let mut records: Vec<EmbeddingRecord> = Vec::new();
    let mut by_scene: Vec<Vec<(Modality, u32, Vec<f64>)>> = Vec::new();
    for i in 0..n {
        let vecs = if i > 0 && rng.gen_bool(0.1) {
            by_scene[rng.gen_range(0..i)].clone()
        } else {
            let mut v = Vec::new();
            for m in Modality::ALL {
                if !rng.gen_bool(0.85) {
                    continue;
                }
                let segs = if m == Modality::Video { rng.gen_range(1..=4) } else { 1 };
                for s in 0..segs {
                    v.push((m, s, random_vec(rng, dim)));
                }
            }
            v
        };
        for (m, s, vec) in &vecs {
            records.push(EmbeddingRecord::new(scenes[i].clone(), *m, *s, vec.clone()));
        }
        by_scene.push(vecs);
    }
    let embeddings = QueryEmbeddings {
        vision: Some(random_vec(rng, dim)),
        audio: Some(random_vec(rng, dim)),
        text: Some(random_vec(rng, dim)),
    };
    let mut config = AggregationConfig {
        top_k: rng.gen_range(1..=60),
        filter_before_truncation: rng.gen_bool(0.3),
        ..AggregationConfig::default()
    };
    for m in Modality::ALL {
        if rng.gen_bool(0.5) {
            config.weights.insert(m, rng.gen_range(0.25..3.0));
        }
        if rng.gen_bool(0.4) {
            config.thresholds.insert(m, rng.gen_range(-0.6..0.6));
        }
    }
    if rng.gen_bool(0.2) {
        let mut ms = Modality::ALL.to_vec();
        ms.shuffle(rng);
        ms.truncate(rng.gen_range(1..=3));
        config.modalities = Some(ms.into_iter().collect());
    }
    let mut tags = SceneTags::new();
    for s in &scenes {
        if rng.gen_bool(0.9) {
            tags.insert(s.clone(), random_tags(rng));
        }
    }
    let policy = if rng.gen_bool(0.3) { SafetyPolicy::default() } else { random_policy(rng) };
    RandomCase {
        records,
        bundle: QueryEmbeddingBundle {
            text: "query".into(),
            embeddings,
        },
        config,
        policy,
        tags,
        scenes,
    }
}

pub fn oracle_precision(list: &[String], rel: &BTreeSet<String>, k: usize) -> f64 {
    list.iter().take(k).filter(|s| rel.contains(*s)).count() as f64 / k as f64
}

pub fn oracle_hit(list: &[String], rel: &BTreeSet<String>, k: usize) -> f64 {
    if list.iter().take(k).any(|s| rel.contains(s)) {
        1.0
    } else {
        0.0
    }
}

/// Truncated AP by definition: P@i summed over relevant ranks i ≤ K,
/// divided by min(R, K).
pub fn oracle_ap(list: &[String], rel: &BTreeSet<String>, k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 1..=k.min(list.len()) {
        if rel.contains(&list[i - 1]) {
            let hits = list[..i].iter().filter(|s| rel.contains(*s)).count();
            sum += hits as f64 / i as f64;
        }
    }
    sum / rel.len().min(k) as f64
}

pub fn oracle_overlap(a: &[String], b: &[String], k: usize) -> f64 {
    let ta: BTreeSet<&String> = a.iter().take(k).collect();
    let tb: BTreeSet<&String> = b.iter().take(k).collect();
    ta.intersection(&tb).count() as f64 / k as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
