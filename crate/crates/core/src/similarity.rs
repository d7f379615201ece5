//! Lexical, semantic and thematic similarity, and grouping of identical
//! narrations.

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::NarrationId;
use crate::text::{strip_diacritics, words};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("self-edge for {0}")]
    SelfEdge(NarrationId),
}

fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn unigrams(ws: &[&str]) -> HashSet<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

fn bigrams(ws: &[&str]) -> HashSet<String> {
    ws.windows(2).map(|p| format!("{} {}", p[0], p[1])).collect()
}

/// Jaccard over word 2-gram sets, falling back to word sets when either
/// text has fewer than two words. Two empty texts score 1.
pub fn lexical_sim(a: &str, b: &str) -> f64 {
    let wa = words(a);
    let wb = words(b);
    if wa.len() < 2 || wb.len() < 2 {
        jaccard(&unigrams(&wa), &unigrams(&wb))
    } else {
        jaccard(&bigrams(&wa), &bigrams(&wb))
    }
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn semantic_sim(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Jaccard over tag sets. Two empty sets score 0: no evidence of a shared
/// theme.
pub fn thematic_sim<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let sb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    jaccard(&sa, &sb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub narration_id: NarrationId,
    pub vector: Vec<f64>,
    pub embedder_version: String,
}

/// Feature-hashing embedder over char trigrams of the diacritic-stripped
/// text, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

fn fnv1a(chars: &[char]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for c in chars {
        for b in (*c as u32).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

impl HashingEmbedder {
    pub const VERSION: &'static str = "hash-trigram-1";

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = strip_diacritics(text).chars().collect();
        let mut v = vec![0.0; self.dim];
        let grams: Vec<&[char]> = if chars.len() < 3 { vec![&chars[..]] } else { chars.windows(3).collect() };
        for g in grams.into_iter().filter(|g| !g.is_empty()) {
            let h = fnv1a(g);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn embedding(&self, id: &NarrationId, text: &str) -> EmbeddingVector {
        EmbeddingVector { narration_id: id.clone(), vector: self.embed(text), embedder_version: Self::VERSION.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub id_a: NarrationId,
    pub id_b: NarrationId,
    pub lexical: f64,
    pub semantic: f64,
    pub thematic: f64,
}

impl SimilarityEdge {
    /// Builds an edge with the ids in canonical order.
    pub fn new(
        a: NarrationId,
        b: NarrationId,
        lexical: f64,
        semantic: f64,
        thematic: f64,
    ) -> Result<Self, SimilarityError> {
        if a == b {
            return Err(SimilarityError::SelfEdge(a));
        }
        let (id_a, id_b) = if a < b { (a, b) } else { (b, a) };
        Ok(Self { id_a, id_b, lexical, semantic, thematic })
    }
}

/// What the similarity measures need to know about a narration.
#[derive(Debug, Clone)]
pub struct SimilarityItem {
    pub id: NarrationId,
    pub text: String,
    pub tags: Vec<String>,
    pub vector: Vec<f64>,
}

/// The `k` items most similar to `target`, by semantic then lexical score.
pub fn nearest(
    target: &SimilarityItem,
    items: &[SimilarityItem],
    k: usize,
) -> Result<Vec<SimilarityEdge>, SimilarityError> {
    let mut edges = items
        .iter()
        .filter(|o| o.id != target.id)
        .map(|o| {
            SimilarityEdge::new(
                target.id.clone(),
                o.id.clone(),
                lexical_sim(&target.text, &o.text),
                semantic_sim(&target.vector, &o.vector)?,
                thematic_sim(&target.tags, &o.tags),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    edges.sort_by(|x, y| {
        y.semantic
            .total_cmp(&x.semantic)
            .then(y.lexical.total_cmp(&x.lexical))
            .then_with(|| (&x.id_a, &x.id_b).cmp(&(&y.id_a, &y.id_b)))
    });
    edges.truncate(k);
    Ok(edges)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Group id per input item: connected components of the graph whose edges
/// join items with `lexical_sim >= threshold`, each labeled by its smallest
/// narration id.
///
/// Candidate pairs come from prefix filtering: with features ordered rarest
/// first, two sets with Jaccard at least `threshold` must share a feature
/// among their first `|A| - ceil(threshold * |A|) + 1`. Texts under two
/// words use a different feature space and are compared exhaustively.
pub fn group_identical(items: &[(NarrationId, String)], threshold: f64) -> Vec<NarrationId> {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must be in (0, 1]");
    let n = items.len();
    let word_lists: Vec<Vec<&str>> = items.iter().map(|(_, t)| words(t)).collect();
    let long: Vec<usize> = (0..n).filter(|&i| word_lists[i].len() >= 2).collect();
    let short: Vec<usize> = (0..n).filter(|&i| word_lists[i].len() < 2).collect();

    let features: Vec<HashSet<String>> =
        word_lists.iter().map(|w| if w.len() >= 2 { bigrams(w) } else { HashSet::new() }).collect();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for &i in &long {
        for f in &features[i] {
            *freq.entry(f.as_str()).or_default() += 1;
        }
    }
    let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
    for &i in &long {
        let mut ordered: Vec<&str> = features[i].iter().map(String::as_str).collect();
        ordered.sort_by(|a, b| freq[a].cmp(&freq[b]).then(a.cmp(b)));
        let size = ordered.len();
        let keep = size - ((threshold * size as f64) - 1e-9).ceil() as usize + 1;
        for f in ordered.into_iter().take(keep.min(size)) {
            postings.entry(f).or_default().push(i);
        }
    }
    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for list in postings.values() {
        for (x, &a) in list.iter().enumerate() {
            for &b in &list[x + 1..] {
                candidates.insert((a.min(b), a.max(b)));
            }
        }
    }
    for &s in &short {
        for j in 0..n {
            if j != s {
                candidates.insert((s.min(j), s.max(j)));
            }
        }
    }
    let candidates: Vec<(usize, usize)> = candidates.into_iter().collect();
    let edges: Vec<(usize, usize)> =
        candidates.into_par_iter().filter(|&(a, b)| lexical_sim(&items[a].1, &items[b].1) >= threshold).collect();

    let mut uf = UnionFind::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut label: HashMap<usize, NarrationId> = HashMap::new();
    for (i, (id, _)) in items.iter().enumerate() {
        let root = uf.find(i);
        let entry = label.entry(root).or_insert_with(|| id.clone());
        if *id < *entry {
            *entry = id.clone();
        }
    }
    (0..n).map(|i| label[&uf.find(i)].clone()).collect()
}
