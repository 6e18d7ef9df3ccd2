//! Emotion tag clusters and tag-count annotation of songs.
//!
//! Songs carry free-form social tags. Tags that belong to one of four emotion
//! clusters are counted per cluster, and a song is labeled only when one
//! cluster clearly dominates. The positive/negative variant merges Q1 with Q4
//! and Q2 with Q3 and applies a tighter rule set.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_f32, EmbeddingTable};
use crate::error::{Error, Result};

/// Exhaustive cluster search refuses pools with more subsets than this.
pub const MAX_COMBINATIONS: u128 = 10_000_000;

/// A count band: `min..=max` tags of the winning cluster with at most `max_others` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub min: u32,
    pub max: Option<u32>,
    pub max_others: u32,
}

impl Rule {
    const fn new(min: u32, max: Option<u32>, max_others: u32) -> Self {
        Rule { min, max, max_others }
    }

    pub fn admits(&self, count: u32, others: u32) -> bool {
        count >= self.min && self.max.is_none_or(|m| count <= m) && others <= self.max_others
    }
}

pub const QUADRANT_RULES: [Rule; 4] = [
    Rule::new(4, None, 0),
    Rule::new(6, Some(8), 1),
    Rule::new(9, Some(13), 2),
    Rule::new(14, None, 3),
];

/// The third band stops at 15 so that it does not overlap the fourth.
pub const BINARY_RULES: [Rule; 4] = [
    Rule::new(5, None, 0),
    Rule::new(8, Some(11), 1),
    Rule::new(12, Some(15), 2),
    Rule::new(16, None, 3),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Q1,
    Q2,
    Q3,
    Q4,
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    pub const QUADRANTS: [Label; 4] = [Label::Q1, Label::Q2, Label::Q3, Label::Q4];
    pub const POLARITIES: [Label; 2] = [Label::Positive, Label::Negative];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Q1 => "Q1",
            Label::Q2 => "Q2",
            Label::Q3 => "Q3",
            Label::Q4 => "Q4",
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    pub terms: Vec<String>,
}

/// Four disjoint clusters in quadrant order: happy, angry, sad, relaxed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterModel {
    clusters: Vec<Cluster>,
}

const REFERENCE: [(&str, [&str; 10]); 4] = [
    (
        "Q1-Happy",
        ["happy", "happiness", "bright", "joyous", "cheerful", "fun", "humorous", "merry", "exciting", "silly"],
    ),
    (
        "Q2-Angry",
        ["angry", "aggressive", "fierce", "outrageous", "rebellious", "anxious", "fiery", "tense", "anger", "hostile"],
    ),
    (
        "Q3-Sad",
        ["sad", "bittersweet", "bitter", "sadness", "depressing", "tragic", "gloomy", "miserable", "funeral", "sorrow"],
    ),
    (
        "Q4-Relaxed",
        ["relaxed", "tender", "soothing", "mellow", "gentle", "peaceful", "soft", "calm", "quiet", "delicate"],
    ),
];

fn normalize(tag: &str) -> String {
    tag.trim().to_lowercase()
}

impl ClusterModel {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        if clusters.len() != 4 {
            return Err(Error::Config(format!("a cluster model has 4 clusters, got {}", clusters.len())));
        }
        let mut seen = HashSet::new();
        let mut clusters = clusters;
        for c in &mut clusters {
            c.terms = c.terms.iter().map(|t| normalize(t)).collect();
            for t in &c.terms {
                if !seen.insert(t.clone()) {
                    return Err(Error::Config(format!("term {t:?} appears in more than one cluster or twice")));
                }
            }
        }
        Ok(ClusterModel { clusters })
    }

    /// The ten-term reference clusters.
    pub fn reference() -> Self {
        let clusters = REFERENCE
            .iter()
            .map(|(name, terms)| Cluster {
                name: name.to_string(),
                terms: terms.iter().map(|t| t.to_string()).collect(),
            })
            .collect();
        ClusterModel::new(clusters).expect("reference clusters are disjoint")
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    fn cluster_of(&self, tag: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.terms.iter().any(|t| t == tag))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagProfile {
    pub song_id: String,
    pub counts: [u32; 4],
}

impl TagProfile {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// (positive, negative) = (Q1 + Q4, Q2 + Q3).
    pub fn polarity_counts(&self) -> (u32, u32) {
        (self.counts[0] + self.counts[3], self.counts[1] + self.counts[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub song_id: String,
    pub label: Label,
    /// Share of matched tags in the labeled cluster; for unlabeled songs, in the largest cluster.
    pub purity: f64,
}

pub fn count_tags<S: AsRef<str>>(song_id: &str, tags: &[S], model: &ClusterModel) -> TagProfile {
    let mut counts = [0u32; 4];
    for tag in tags {
        if let Some(c) = model.cluster_of(&normalize(tag.as_ref())) {
            counts[c] += 1;
        }
    }
    TagProfile {
        song_id: song_id.to_string(),
        counts,
    }
}

/// Index of the single class admitted by `rules`, if exactly one is.
fn winner(counts: &[u32], rules: &[Rule]) -> Option<usize> {
    let total: u32 = counts.iter().sum();
    let mut qualified = (0..counts.len()).filter(|&i| rules.iter().any(|r| r.admits(counts[i], total - counts[i])));
    match (qualified.next(), qualified.next()) {
        (Some(i), None) => Some(i),
        _ => None,
    }
}

fn purity(counts: &[u32], winner: Option<usize>) -> f64 {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let top = winner.map_or_else(|| counts.iter().copied().max().unwrap_or(0), |i| counts[i]);
    top as f64 / total as f64
}

pub fn annotate_quadrant(profile: &TagProfile) -> AnnotationResult {
    let w = winner(&profile.counts, &QUADRANT_RULES);
    AnnotationResult {
        song_id: profile.song_id.clone(),
        label: w.map_or(Label::Unlabeled, |i| Label::QUADRANTS[i]),
        purity: purity(&profile.counts, w),
    }
}

pub fn annotate_binary(song_id: &str, positive: u32, negative: u32) -> AnnotationResult {
    let counts = [positive, negative];
    let w = winner(&counts, &BINARY_RULES);
    AnnotationResult {
        song_id: song_id.to_string(),
        label: w.map_or(Label::Unlabeled, |i| Label::POLARITIES[i]),
        purity: purity(&counts, w),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSimilarity {
    pub intra: Vec<f64>,
    pub inter: f64,
    /// Cluster terms without a vector; they are excluded from both averages.
    pub missing: Vec<String>,
}

/// Mean pairwise cosine within each cluster and across clusters.
pub fn cluster_similarity(model: &ClusterModel, table: &EmbeddingTable) -> Result<ClusterSimilarity> {
    let mut missing = Vec::new();
    let mut resolved: Vec<Vec<&[f32]>> = Vec::new();
    for c in model.clusters() {
        let mut vecs = Vec::new();
        for t in &c.terms {
            match table.vector(t) {
                Some(v) => vecs.push(v),
                None => missing.push(t.clone()),
            }
        }
        if vecs.len() < 2 {
            return Err(Error::Data(format!(
                "cluster {} has {} terms with vectors, need at least 2",
                c.name,
                vecs.len()
            )));
        }
        resolved.push(vecs);
    }
    let mut intra = Vec::new();
    for vecs in &resolved {
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                sum += cosine_f32(vecs[i], vecs[j])?;
                n += 1;
            }
        }
        intra.push(sum / n as f64);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for a in 0..resolved.len() {
        for b in a + 1..resolved.len() {
            for u in &resolved[a] {
                for v in &resolved[b] {
                    sum += cosine_f32(u, v)?;
                    n += 1;
                }
            }
        }
    }
    Ok(ClusterSimilarity {
        intra,
        inter: sum / n as f64,
        missing,
    })
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn combinations(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// The `size`-subset of `pool` (by position) with the highest mean pairwise
/// similarity; the lexicographically first subset wins ties.
pub fn best_subset(sim: &[Vec<f64>], size: usize) -> Vec<usize> {
    fn walk(sim: &[Vec<f64>], size: usize, start: usize, chosen: &mut Vec<usize>, score: f64, best: &mut (f64, Vec<usize>)) {
        if chosen.len() == size {
            if score > best.0 {
                *best = (score, chosen.clone());
            }
            return;
        }
        let need = size - chosen.len();
        for j in start..=sim.len() - need {
            let gain: f64 = chosen.iter().map(|&i| sim[i][j]).sum();
            chosen.push(j);
            walk(sim, size, j + 1, chosen, score + gain, best);
            chosen.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    walk(sim, size, 0, &mut Vec::with_capacity(size), 0.0, &mut best);
    best.1
}

/// Per cluster, the `size` candidates with the highest mean intra-cluster cosine.
pub fn select_cluster_tags(pools: &[Cluster], size: usize, table: &EmbeddingTable) -> Result<ClusterModel> {
    if size < 2 {
        return Err(Error::Config(format!("cluster size must be >= 2, got {size}")));
    }
    let mut chosen = Vec::new();
    for pool in pools {
        let terms: Vec<String> = pool.terms.iter().map(|t| normalize(t)).collect();
        if terms.len() < size {
            return Err(Error::Config(format!(
                "pool {} has {} candidates, fewer than {size}",
                pool.name,
                terms.len()
            )));
        }
        let combos = combinations(terms.len(), size);
        if combos > MAX_COMBINATIONS {
            return Err(Error::SearchTooLarge {
                combinations: combos,
                limit: MAX_COMBINATIONS,
            });
        }
        let missing: Vec<&str> = terms.iter().filter(|t| table.vector(t).is_none()).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("pool {}: no vectors for {}", pool.name, missing.join(", "))));
        }
        let vecs: Vec<&[f32]> = terms.iter().map(|t| table.vector(t).expect("checked")).collect();
        let mut sim = vec![vec![0.0; vecs.len()]; vecs.len()];
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                let s = cosine_f32(vecs[i], vecs[j])?;
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
        chosen.push(Cluster {
            name: pool.name.clone(),
            terms: best_subset(&sim, size).into_iter().map(|i| terms[i].clone()).collect(),
        });
    }
    ClusterModel::new(chosen)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    cluster: Vec<Cluster>,
}

/// Candidate pools as TOML: `[[cluster]]` tables with `name` and `terms`.
pub fn parse_pools(text: &str) -> Result<Vec<Cluster>> {
    let file: PoolFile = toml::from_str(text).map_err(|e| Error::Config(format!("pool file: {}", e.message())))?;
    Ok(file.cluster)
}

/// Uniform per-class subsample of `per_class` items for each class in `classes`.
/// Output keeps input order.
pub fn balance<T: Clone, L: Ord + fmt::Display + Copy>(
    items: &[T],
    label: impl Fn(&T) -> L,
    classes: &[L],
    per_class: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let mut by_class: BTreeMap<L, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for (i, item) in items.iter().enumerate() {
        if let Some(v) = by_class.get_mut(&label(item)) {
            v.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(per_class * classes.len());
    for (class, members) in &by_class {
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} items, fewer than the {per_class} required",
                members.len()
            )));
        }
        let picked = rand::seq::index::sample(&mut rng, members.len(), per_class);
        keep.extend(picked.into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| items[i].clone()).collect())
}

/// Parses `<song_id>\t<tag>,<tag>,...` lines. Blank lines are skipped.
pub fn parse_tag_dump(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, tags) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected <song_id>\\t<tags>".into(),
        })?;
        if id.trim().is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty song id".into(),
            });
        }
        let tags = tags.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
        out.push((id.trim().to_string(), tags));
    }
    Ok(out)
}

pub fn load_tag_dump(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tag_dump(&text)
}

/// CSV with columns `song_id,label,purity,c1,c2,c3,c4`.
pub fn write_annotations<W: io::Write>(rows: &[(AnnotationResult, TagProfile)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("writing annotations: {e}"));
    w.write_record(["song_id", "label", "purity", "c1", "c2", "c3", "c4"]).map_err(err)?;
    for (a, p) in rows {
        let c = p.counts.map(|v| v.to_string());
        w.write_record([a.song_id.as_str(), &a.label.to_string(), &a.purity.to_string(), &c[0], &c[1], &c[2], &c[3]])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing annotations: {e}")))?;
    Ok(())
}
