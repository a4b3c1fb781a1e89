//! Exact and near deduplication.
//!
//! Near-dup detection follows the classic recipe: token k-gram shingles,
//! 256-permutation MinHash signatures, banded LSH for candidate pairs, and
//! exact Jaccard verification before anything is removed. Two files count
//! as near-duplicates when their Jaccard similarity exceeds the threshold
//! (default 0.85), strictly.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RepoRecord;
use crate::util::{self, splitmix64};

/// Signature width. Fixed by construction, not configuration.
pub const NUM_PERMUTATIONS: usize = 256;

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const DEFAULT_BANDS: usize = 32;
pub const DEFAULT_ROWS: usize = 8;
pub const DEFAULT_SHINGLE_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("signatures built with different seeds ({0:#x} vs {1:#x})")]
    SeedMismatch(u64, u64),
    #[error("invalid banding: {bands} bands x {rows} rows != {len} components")]
    Banding { bands: usize, rows: usize, len: usize },
}

/// A set of 64-bit shingle hashes. Stored sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub owner: String,
    pub shingles: Vec<u64>,
}

impl ShingleSet {
    pub fn from_hashes(owner: &str, mut hashes: Vec<u64>) -> ShingleSet {
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet { owner: owner.to_string(), shingles: hashes }
    }

    /// Hash every `k`-gram of `tokens`. Fewer than `k` tokens hash the whole
    /// token list as a single shingle so short non-empty inputs stay nonempty.
    pub fn from_tokens(owner: &str, tokens: &[&str], k: usize) -> ShingleSet {
        let mut hashes = Vec::new();
        if tokens.is_empty() {
            return ShingleSet::from_hashes(owner, hashes);
        }
        if tokens.len() < k {
            hashes.push(hash_gram(tokens));
            return ShingleSet::from_hashes(owner, hashes);
        }
        for gram in tokens.windows(k) {
            hashes.push(hash_gram(gram));
        }
        ShingleSet::from_hashes(owner, hashes)
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }
}

fn hash_gram(tokens: &[&str]) -> u64 {
    let mut buf = Vec::with_capacity(tokens.iter().map(|t| t.len() + 1).sum());
    for t in tokens {
        buf.extend_from_slice(t.as_bytes());
        buf.push(0x1f);
    }
    util::hash64(&buf)
}

/// Unigram token-set hashes (sorted, unique), for snippet-level similarity.
pub fn unigram_set(tokens: &[&str]) -> Vec<u64> {
    let mut hashes: Vec<u64> = tokens.iter().map(|t| util::hash64(t.as_bytes())).collect();
    hashes.sort_unstable();
    hashes.dedup();
    hashes
}

/// Exact Jaccard over sorted unique hash slices.
/// Both empty → 1.0; exactly one empty → 0.0.
pub fn jaccard_sorted(a: &[u64], b: &[u64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    jaccard_sorted(&a.shingles, &b.shingles)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub owner: String,
    pub values: Vec<u64>,
    pub seed: u64,
    /// Set for empty shingle sets; such signatures are sentinel maxima and
    /// are excluded from LSH indexing.
    pub empty: bool,
}

/// 256 multiply-add permutations derived from `seed`; component `i` is the
/// minimum of permutation `i` over the shingles.
pub fn minhash_signature(set: &ShingleSet, seed: u64) -> MinHashSignature {
    let mut values = vec![u64::MAX; NUM_PERMUTATIONS];
    if set.is_empty() {
        return MinHashSignature { owner: set.owner.clone(), values, seed, empty: true };
    }
    let coeffs = permutation_coefficients(seed);
    for &shingle in &set.shingles {
        for (value, &(a, b)) in values.iter_mut().zip(coeffs.iter()) {
            let h = a.wrapping_mul(shingle).wrapping_add(b);
            if h < *value {
                *value = h;
            }
        }
    }
    MinHashSignature { owner: set.owner.clone(), values, seed, empty: false }
}

fn permutation_coefficients(seed: u64) -> Vec<(u64, u64)> {
    (0..NUM_PERMUTATIONS as u64)
        .map(|i| {
            let a = splitmix64(seed ^ splitmix64(2 * i + 1)) | 1;
            let b = splitmix64(seed ^ splitmix64(2 * i + 2));
            (a, b)
        })
        .collect()
}

/// Fraction of agreeing components; an unbiased estimator of Jaccard.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.seed != b.seed {
        return Err(DedupError::SeedMismatch(a.seed, b.seed));
    }
    let agree = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.values.len() as f64)
}

/// All index pairs colliding in at least one LSH band.
/// Pairs are returned sorted, each as `(lo, hi)`.
pub fn lsh_candidate_pairs(
    signatures: &[MinHashSignature],
    bands: usize,
    rows: usize,
) -> Result<Vec<(usize, usize)>, DedupError> {
    if bands == 0 || rows == 0 || bands * rows != NUM_PERMUTATIONS {
        return Err(DedupError::Banding { bands, rows, len: NUM_PERMUTATIONS });
    }
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for band in 0..bands {
        let lo = band * rows;
        let hi = lo + rows;
        let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
        for (idx, sig) in signatures.iter().enumerate() {
            if sig.empty {
                continue;
            }
            let mut bytes = Vec::with_capacity(rows * 8 + 8);
            bytes.extend_from_slice(&(band as u64).to_le_bytes());
            for v in &sig.values[lo..hi] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            buckets.entry(util::hash64(&bytes)).or_default().push(idx);
        }
        for indices in buckets.values() {
            for i in 0..indices.len() {
                for j in (i + 1)..indices.len() {
                    let (a, b) = (indices[i].min(indices[j]), indices[i].max(indices[j]));
                    pairs.insert((a, b));
                }
            }
        }
    }
    Ok(pairs.into_iter().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DupCluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    pub retained: Vec<String>,
    pub representative: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupReason {
    Exact,
    Near,
}

/// One line of `dedup_report.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupRemoval {
    pub file_id: String,
    pub reason: DedupReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representative: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NearDedupOutcome {
    pub kept: Vec<String>,
    pub clusters: Vec<DupCluster>,
    pub removals: Vec<DedupRemoval>,
}

/// Near-deduplicate a set of shingled items.
///
/// Candidates come from LSH, every candidate pair is verified with exact
/// Jaccard, verified pairs are unioned into clusters, and each cluster is
/// reduced to a retained subset such that every original member has exact
/// Jaccard above `threshold` with a retained member (or is itself
/// retained). The retained subset is a greedy dominating set: repeatedly
/// keep the item covering the most still-uncovered members, ties by id.
pub fn near_dedup(
    items: &[ShingleSet],
    threshold: f64,
    seed: u64,
    bands: usize,
    rows: usize,
) -> Result<NearDedupOutcome, DedupError> {
    let signatures: Vec<MinHashSignature> =
        items.par_iter().map(|s| minhash_signature(s, seed)).collect();
    let candidates = lsh_candidate_pairs(&signatures, bands, rows)?;

    let verified: Vec<(usize, usize)> = candidates
        .into_par_iter()
        .filter(|&(i, j)| jaccard(&items[i], &items[j]) > threshold)
        .collect();

    // Union-find over verified pairs.
    let mut parent: Vec<usize> = (0..items.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for &(i, j) in &verified {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }

    let mut adjacency: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, j) in &verified {
        adjacency.entry(i).or_default().insert(j);
        adjacency.entry(j).or_default().insert(i);
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for idx in 0..items.len() {
        let root = find(&mut parent, idx);
        groups.entry(root).or_default().push(idx);
    }

    let mut clusters = Vec::new();
    let mut removals = Vec::new();
    let mut removed: BTreeSet<usize> = BTreeSet::new();
    let mut cluster_id = 0usize;

    for (_, mut members) in groups {
        if members.len() < 2 {
            continue;
        }
        members.sort_by(|&a, &b| items[a].owner.cmp(&items[b].owner));

        let retained = greedy_dominating_set(&members, &adjacency, |idx| &items[idx].owner);
        let retained_set: BTreeSet<usize> = retained.iter().copied().collect();

        for &m in &members {
            if retained_set.contains(&m) {
                continue;
            }
            removed.insert(m);
            let rep = adjacency
                .get(&m)
                .into_iter()
                .flatten()
                .filter(|n| retained_set.contains(n))
                .map(|&n| items[n].owner.clone())
                .min();
            removals.push(DedupRemoval {
                file_id: items[m].owner.clone(),
                reason: DedupReason::Near,
                cluster_id: Some(cluster_id),
                representative: rep,
            });
        }

        let retained_ids: Vec<String> = retained.iter().map(|&i| items[i].owner.clone()).collect();
        clusters.push(DupCluster {
            cluster_id,
            members: members.iter().map(|&i| items[i].owner.clone()).collect(),
            representative: retained_ids.iter().min().cloned().unwrap_or_default(),
            retained: retained_ids,
        });
        cluster_id += 1;
    }

    let kept = (0..items.len())
        .filter(|i| !removed.contains(i))
        .map(|i| items[i].owner.clone())
        .collect();

    Ok(NearDedupOutcome { kept, clusters, removals })
}

fn greedy_dominating_set<'a, F>(
    members: &[usize],
    adjacency: &BTreeMap<usize, BTreeSet<usize>>,
    id_of: F,
) -> Vec<usize>
where
    F: Fn(usize) -> &'a String,
{
    let member_set: BTreeSet<usize> = members.iter().copied().collect();
    let mut uncovered = member_set.clone();
    let mut retained = Vec::new();

    while !uncovered.is_empty() {
        let mut best: Option<(usize, usize)> = None; // (coverage, idx)
        for &cand in members {
            let mut coverage = usize::from(uncovered.contains(&cand));
            if let Some(neigh) = adjacency.get(&cand) {
                coverage += neigh.iter().filter(|n| uncovered.contains(n)).count();
            }
            if coverage == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((c, b)) => {
                    coverage > c || (coverage == c && id_of(cand) < id_of(b))
                }
            };
            if better {
                best = Some((coverage, cand));
            }
        }
        let Some((_, pick)) = best else { break };
        retained.push(pick);
        uncovered.remove(&pick);
        if let Some(neigh) = adjacency.get(&pick) {
            for n in neigh {
                uncovered.remove(n);
            }
        }
    }
    retained.sort_by(|&a, &b| id_of(a).cmp(id_of(b)));
    retained
}

/// Remove repositories whose full multiset of file-content hashes is
/// identical to another repository's; the lowest `repo_id` survives.
pub fn exact_dedup(records: Vec<RepoRecord>) -> (Vec<RepoRecord>, Vec<DedupRemoval>) {
    let mut by_content: BTreeMap<Vec<String>, Vec<RepoRecord>> = BTreeMap::new();
    for record in records {
        let mut key: Vec<String> = record.files.iter().map(|f| f.content_hash.clone()).collect();
        key.sort();
        by_content.entry(key).or_default().push(record);
    }

    let mut kept = Vec::new();
    let mut removals = Vec::new();
    for (_, mut group) in by_content {
        group.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
        let survivor_id = group[0].repo_id.clone();
        let mut iter = group.into_iter();
        kept.push(iter.next().unwrap());
        for dup in iter {
            removals.push(DedupRemoval {
                file_id: dup.repo_id,
                reason: DedupReason::Exact,
                cluster_id: None,
                representative: Some(survivor_id.clone()),
            });
        }
    }
    kept.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    removals.sort_by(|a, b| a.file_id.cmp(&b.file_id));
    (kept, removals)
}

/// First-occurrence-kept near-unique filter over unigram token sets:
/// item `i` is kept iff no kept earlier item has Jaccard above `threshold`
/// with it. Grouping (e.g. per completion scenario) is the caller's job.
pub fn dedup_ground_truths<T>(
    items: Vec<T>,
    threshold: f64,
    token_set: impl Fn(&T) -> Vec<u64>,
) -> Vec<T> {
    let sets: Vec<Vec<u64>> = items.iter().map(&token_set).collect();
    let mut kept_idx: Vec<usize> = Vec::new();
    for i in 0..items.len() {
        let dup = kept_idx.iter().any(|&k| jaccard_sorted(&sets[k], &sets[i]) > threshold);
        if !dup {
            kept_idx.push(i);
        }
    }
    let keep_flags: Vec<bool> = {
        let mut flags = vec![false; items.len()];
        for &k in &kept_idx {
            flags[k] = true;
        }
        flags
    };
    items
        .into_iter()
        .zip(keep_flags)
        .filter_map(|(item, keep)| keep.then_some(item))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceFile;
    use crate::lex::Language;
    use crate::util::DetRng;
    use std::collections::HashSet;

    fn set_of(owner: &str, hashes: &[u64]) -> ShingleSet {
        ShingleSet::from_hashes(owner, hashes.to_vec())
    }

    #[test]
    fn jaccard_identity_and_disjoint() {
        let a = set_of("a", &[1, 2, 3]);
        let b = set_of("b", &[2, 3, 4]);
        let c = set_of("c", &[9, 10]);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &b), 0.5);
        assert_eq!(jaccard(&a, &c), 0.0);
    }

    #[test]
    fn jaccard_empty_conventions() {
        let e = set_of("e", &[]);
        let a = set_of("a", &[1]);
        assert_eq!(jaccard(&e, &e), 1.0);
        assert_eq!(jaccard(&e, &a), 0.0);
    }

    #[test]
    fn minhash_deterministic_and_min_algebra() {
        let a = set_of("a", &[1, 5, 9, 133, 7777]);
        let b = set_of("b", &[2, 5, 1000]);
        let union = set_of("u", &[1, 2, 5, 9, 133, 1000, 7777]);
        let sa = minhash_signature(&a, 42);
        let sa2 = minhash_signature(&a, 42);
        assert_eq!(sa, sa2);
        let sb = minhash_signature(&b, 42);
        let su = minhash_signature(&union, 42);
        for i in 0..NUM_PERMUTATIONS {
            assert_eq!(su.values[i], sa.values[i].min(sb.values[i]));
        }
    }

    #[test]
    fn empty_signature_flagged() {
        let sig = minhash_signature(&set_of("e", &[]), 1);
        assert!(sig.empty);
        assert!(sig.values.iter().all(|&v| v == u64::MAX));
    }

    #[test]
    fn estimate_identical_and_seed_mismatch() {
        let a = set_of("a", &[1, 2, 3, 4]);
        let s1 = minhash_signature(&a, 42);
        let s2 = minhash_signature(&a, 42);
        assert_eq!(estimate_jaccard(&s1, &s2).unwrap(), 1.0);
        let s3 = minhash_signature(&a, 43);
        assert_eq!(estimate_jaccard(&s1, &s3), Err(DedupError::SeedMismatch(42, 43)));
    }

    #[test]
    fn estimate_half_agreement() {
        let mut a = minhash_signature(&set_of("a", &[1]), 7);
        let b = a.clone();
        for i in 0..128 {
            a.values[i] = a.values[i].wrapping_add(1);
        }
        assert_eq!(estimate_jaccard(&a, &b).unwrap(), 0.5);
    }

    /// Build a pair of random sets with an approximate target Jaccard.
    fn random_pair(rng: &mut DetRng, target_j: f64, union_size: usize) -> (ShingleSet, ShingleSet) {
        let inter = (target_j * union_size as f64).round() as usize;
        let only = (union_size - inter) / 2;
        let mut seen = HashSet::new();
        let mut fresh = |rng: &mut DetRng| loop {
            let v = rng.next_u64();
            if seen.insert(v) {
                return v;
            }
        };
        let shared: Vec<u64> = (0..inter).map(|_| fresh(rng)).collect();
        let mut a = shared.clone();
        let mut b = shared;
        for _ in 0..only {
            a.push(fresh(rng));
            b.push(fresh(rng));
        }
        (ShingleSet::from_hashes("a", a), ShingleSet::from_hashes("b", b))
    }

    /// Independent oracle: exact Jaccard via std HashSet operations.
    fn oracle_jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
        let sa: HashSet<u64> = a.shingles.iter().copied().collect();
        let sb: HashSet<u64> = b.shingles.iter().copied().collect();
        if sa.is_empty() && sb.is_empty() {
            return 1.0;
        }
        let inter = sa.intersection(&sb).count();
        inter as f64 / (sa.len() + sb.len() - inter) as f64
    }

    #[test]
    fn estimate_tracks_exact_jaccard() {
        let mut rng = DetRng::new(0xC017);
        let mut total_err = 0.0;
        let mut max_err: f64 = 0.0;
        let n = 60;
        for i in 0..n {
            let target = 0.1 + 0.85 * (i as f64 / (n - 1) as f64);
            let (a, b) = random_pair(&mut rng, target, 320);
            let exact = oracle_jaccard(&a, &b);
            assert!((jaccard(&a, &b) - exact).abs() < 1e-12);
            let est = estimate_jaccard(&minhash_signature(&a, 5), &minhash_signature(&b, 5)).unwrap();
            let err = (est - exact).abs();
            total_err += err;
            max_err = max_err.max(err);
        }
        assert!(total_err / n as f64 <= 0.05, "mean err {}", total_err / n as f64);
        assert!(max_err <= 0.08, "max err {max_err}");
    }

    #[test]
    fn estimate_is_unbiased() {
        // Signed errors should cancel: the per-component agreement
        // probability equals the true Jaccard.
        let mut rng = DetRng::new(0xBEE5);
        let mut signed = 0.0;
        let n = 120;
        for i in 0..n {
            let target = 0.2 + 0.6 * (i as f64 / (n - 1) as f64);
            let (a, b) = random_pair(&mut rng, target, 280);
            let exact = oracle_jaccard(&a, &b);
            let est =
                estimate_jaccard(&minhash_signature(&a, 11), &minhash_signature(&b, 11)).unwrap();
            signed += est - exact;
        }
        let mean_signed = signed / n as f64;
        assert!(mean_signed.abs() < 0.01, "mean signed error {mean_signed}");
    }

    #[test]
    fn lsh_identical_signatures_collide() {
        let a = set_of("a", &[1, 2, 3, 4, 5]);
        let sigs = vec![minhash_signature(&a, 9), minhash_signature(&a, 9)];
        let pairs = lsh_candidate_pairs(&sigs, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert_eq!(pairs, vec![(0, 1)]);
    }

    #[test]
    fn lsh_rejects_bad_banding() {
        let sigs = vec![minhash_signature(&set_of("a", &[1]), 9)];
        assert!(matches!(lsh_candidate_pairs(&sigs, 3, 5), Err(DedupError::Banding { .. })));
    }

    #[test]
    fn lsh_random_signatures_do_not_collide() {
        let mut rng = DetRng::new(1);
        let a: Vec<u64> = (0..200).map(|_| rng.next_u64()).collect();
        let b: Vec<u64> = (0..200).map(|_| rng.next_u64()).collect();
        let sigs = vec![
            minhash_signature(&set_of("a", &a), 9),
            minhash_signature(&set_of("b", &b), 9),
        ];
        let pairs = lsh_candidate_pairs(&sigs, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn near_dedup_identical_triple() {
        let base: Vec<u64> = (0..100).collect();
        let items = vec![set_of("f1", &base), set_of("f2", &base), set_of("f3", &base)];
        let out = near_dedup(&items, 0.85, 7, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].members.len(), 3);
        assert_eq!(out.clusters[0].retained.len(), 1);
        assert_eq!(out.kept.len(), 1);
    }

    #[test]
    fn near_dedup_chain_keeps_middle() {
        // A~B and B~C similar; A and C dissimilar. Greedy cover keeps {B}.
        let a: Vec<u64> = (0..100).collect();
        let b: Vec<u64> = (7..107).collect(); // J(a,b) = 93/107 ≈ 0.869
        let c: Vec<u64> = (14..114).collect(); // J(b,c) ≈ 0.869, J(a,c) = 86/114 ≈ 0.754
        let items = vec![set_of("A", &a), set_of("B", &b), set_of("C", &c)];
        assert!(jaccard(&items[0], &items[1]) > 0.85);
        assert!(jaccard(&items[1], &items[2]) > 0.85);
        assert!(jaccard(&items[0], &items[2]) < 0.85);
        let out = near_dedup(&items, 0.85, 7, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].retained, vec!["B".to_string()]);

        // Exhaustive check on the 3-node instance: {B} is the unique
        // minimum cover whose closed neighborhoods span all members.
        for single in ["A", "C"] {
            let covers = |x: &str, y: &str| x == y || (x == "B") || (y == "B");
            let all_covered = ["A", "B", "C"].iter().all(|m| covers(single, m));
            assert!(!all_covered);
        }
    }

    #[test]
    fn near_dedup_all_dissimilar_is_identity() {
        let mut rng = DetRng::new(5);
        let items: Vec<ShingleSet> = (0..6)
            .map(|i| {
                let h: Vec<u64> = (0..50).map(|_| rng.next_u64()).collect();
                set_of(&format!("f{i}"), &h)
            })
            .collect();
        let out = near_dedup(&items, 0.85, 7, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert!(out.clusters.is_empty());
        assert_eq!(out.kept.len(), 6);
    }

    #[test]
    fn near_dedup_above_one_threshold_is_identity() {
        let base: Vec<u64> = (0..100).collect();
        let items = vec![set_of("f1", &base), set_of("f2", &base)];
        let out = near_dedup(&items, 1.01, 7, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        assert!(out.clusters.is_empty());
        assert_eq!(out.kept.len(), 2);
    }

    #[test]
    fn near_dedup_partition_invariant() {
        let base: Vec<u64> = (0..100).collect();
        let other: Vec<u64> = (500..620).collect();
        let items = vec![set_of("f1", &base), set_of("f2", &base), set_of("f3", &other)];
        let out = near_dedup(&items, 0.85, 7, DEFAULT_BANDS, DEFAULT_ROWS).unwrap();
        let removed: Vec<String> = out.removals.iter().map(|r| r.file_id.clone()).collect();
        let mut all: Vec<String> = out.kept.iter().cloned().chain(removed.iter().cloned()).collect();
        all.sort();
        assert_eq!(all, vec!["f1", "f2", "f3"]);
        assert!(out.kept.iter().all(|k| !removed.contains(k)));
    }

    fn repo_with(id: &str, contents: &[&str]) -> RepoRecord {
        RepoRecord {
            repo_id: id.into(),
            language: Language::Python,
            license: None,
            stars: None,
            created_at: None,
            last_update: None,
            commit_frequency: None,
            has_tests: false,
            quality_score: 0.0,
            files: contents
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    SourceFile::from_content(id, &format!("f{i}.py"), Language::Python, c.to_string())
                })
                .collect(),
        }
    }

    #[test]
    fn exact_dedup_keeps_lowest_id() {
        let records = vec![
            repo_with("b-copy", &["x = 1\n", "y = 2\n"]),
            repo_with("a-orig", &["x = 1\n", "y = 2\n"]),
        ];
        let (kept, removals) = exact_dedup(records);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].repo_id, "a-orig");
        assert_eq!(removals[0].file_id, "b-copy");
        assert_eq!(removals[0].representative.as_deref(), Some("a-orig"));
    }

    #[test]
    fn exact_dedup_one_byte_difference_keeps_both() {
        let records =
            vec![repo_with("a", &["x = 1\n"]), repo_with("b", &["x = 2\n"])];
        let (kept, removals) = exact_dedup(records);
        assert_eq!(kept.len(), 2);
        assert!(removals.is_empty());
    }

    #[test]
    fn exact_dedup_single_repo_identity() {
        let (kept, removals) = exact_dedup(vec![repo_with("solo", &["x = 1\n"])]);
        assert_eq!(kept.len(), 1);
        assert!(removals.is_empty());
    }

    #[test]
    fn gt_dedup_identical_removed() {
        let items: Vec<Vec<u64>> = vec![(0..20).collect(), (0..20).collect()];
        let kept = dedup_ground_truths(items, 0.85, |v| v.clone());
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn gt_dedup_threshold_is_strict() {
        // Sets of size 37 sharing 34 elements: J = 34/40 = 0.85 exactly → both kept.
        let a: Vec<u64> = (0..37).collect();
        let mut b: Vec<u64> = (0..34).collect();
        b.extend([200, 201, 202]);
        assert_eq!(jaccard_sorted(&a, &b), 0.85);
        let kept = dedup_ground_truths(vec![a, b], 0.85, |v| v.clone());
        assert_eq!(kept.len(), 2, "J == 0.85 exactly must keep both");

        // Sharing 35 of a 39-element union: J ≈ 0.897 > 0.85 → later one removed.
        let a: Vec<u64> = (0..37).collect();
        let mut b: Vec<u64> = (0..35).collect();
        b.extend([200, 201]);
        assert!(jaccard_sorted(&a, &b) > 0.85);
        let kept = dedup_ground_truths(vec![a, b], 0.85, |v| v.clone());
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn shingles_are_set_semantics() {
        let s = ShingleSet::from_tokens("x", &["a", "b", "a", "b", "a", "b", "a"], 2);
        let mut sorted = s.shingles.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(s.shingles, sorted);
        // Only two distinct bigrams: (a,b) and (b,a).
        assert_eq!(s.shingles.len(), 2);
    }
}
