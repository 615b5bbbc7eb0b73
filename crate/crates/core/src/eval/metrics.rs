use ndarray::{ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Query and gallery indices into a list of labeled samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GallerySplit {
    pub identities: Vec<usize>,
    pub views: Vec<usize>,
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

impl GallerySplit {
    /// The lowest-index sample of each identity is its query; every other
    /// sample goes to the gallery.
    pub fn first_per_identity(identities: &[usize], views: &[usize]) -> Result<Self> {
        if identities.len() != views.len() {
            return Err(Error::invalid("identity and view labels differ in length"));
        }
        let mut seen = std::collections::BTreeSet::new();
        let (mut query, mut gallery) = (Vec::new(), Vec::new());
        for (i, &id) in identities.iter().enumerate() {
            if seen.insert(id) {
                query.push(i);
            } else {
                gallery.push(i);
            }
        }
        Ok(Self {
            identities: identities.to_vec(),
            views: views.to_vec(),
            query,
            gallery,
        })
    }

    fn eligible(&self, q: usize, g: usize) -> bool {
        !(self.identities[q] == self.identities[g] && self.views[q] == self.views[g])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub sample: usize,
    pub identity: usize,
    pub view: usize,
    /// 1-based rank of the first correct match.
    pub first_match: usize,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    /// `cmc[r - 1]` is the fraction of evaluated queries matched within rank `r`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub queries: Vec<QueryResult>,
    /// Queries with no eligible same-identity gallery sample.
    pub excluded_queries: Vec<usize>,
    /// Cosine similarity of each query (rows) to each gallery sample.
    pub similarity: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn rank(&self, r: usize) -> f64 {
        self.cmc.get(r.saturating_sub(1)).or(self.cmc.last()).copied().unwrap_or(0.0)
    }
}

pub const PROTOCOL: &str = "cosine similarity; query = lowest-index sample of each identity; \
gallery entries sharing the query's identity and view are skipped; ties ranked by gallery index";

/// Ranks the gallery for every query and scores CMC and mAP.
///
/// `embeddings` has one row per labeled sample of `split`.
pub fn evaluate<T: Scalar>(split: &GallerySplit, embeddings: ArrayView2<'_, T>) -> Result<EvalReport> {
    if embeddings.nrows() != split.identities.len() {
        return Err(Error::invalid(format!(
            "{} embeddings for {} samples",
            embeddings.nrows(),
            split.identities.len()
        )));
    }
    if split.gallery.is_empty() {
        return Err(Error::invalid("the gallery is empty"));
    }
    let mut similarity = Vec::with_capacity(split.query.len());
    let mut queries = Vec::new();
    let mut excluded = Vec::new();
    let mut hits = vec![0usize; split.gallery.len()];
    let mut longest = 0;
    for &q in &split.query {
        let sims = split
            .gallery
            .iter()
            .map(|&g| cosine_similarity(embeddings.row(q), embeddings.row(g)))
            .collect::<Result<Vec<f64>>>()?;
        let mut order: Vec<usize> = (0..split.gallery.len())
            .filter(|&j| split.eligible(q, split.gallery[j]))
            .collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        longest = longest.max(order.len());
        let mut correct = 0usize;
        let mut precision_sum = 0.0;
        let mut first = None;
        for (pos, &j) in order.iter().enumerate() {
            if split.identities[split.gallery[j]] == split.identities[q] {
                correct += 1;
                precision_sum += correct as f64 / (pos + 1) as f64;
                first.get_or_insert(pos + 1);
            }
        }
        similarity.push(sims);
        let Some(first) = first else {
            excluded.push(q);
            continue;
        };
        hits[first - 1] += 1;
        queries.push(QueryResult {
            sample: q,
            identity: split.identities[q],
            view: split.views[q],
            first_match: first,
            average_precision: precision_sum / correct as f64,
        });
    }
    if queries.is_empty() {
        return Err(Error::invalid("no query has an eligible match in the gallery"));
    }
    // Ranks run up to the largest eligible gallery among evaluated queries.
    hits.truncate(longest);
    let n = queries.len() as f64;
    let mut cumulative = 0;
    let cmc = hits
        .iter()
        .map(|&h| {
            cumulative += h;
            cumulative as f64 / n
        })
        .collect();
    let map = queries.iter().map(|q| q.average_precision).sum::<f64>() / n;
    Ok(EvalReport {
        protocol: PROTOCOL.into(),
        cmc,
        map,
        queries,
        excluded_queries: excluded,
        similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_cases() {
        let a = array![1.0, 1.0];
        assert!((cosine_similarity(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(array![1.0, 0.0].view(), array![0.0, 2.0].view()).unwrap(), 0.0);
        let v = cosine_similarity(a.view(), array![1.0, 0.0].view()).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine_similarity(a.view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn duplicates_retrieve_perfectly() {
        let emb = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let split = GallerySplit::first_per_identity(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        let r = evaluate(&split, emb.view()).unwrap();
        assert_eq!(r.rank(1), 1.0);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn two_queries_ranked_first_and_second() {
        let emb = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [0.6, 0.8]];
        let split = GallerySplit::first_per_identity(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        let r = evaluate(&split, emb.view()).unwrap();
        assert_eq!(r.queries[0].first_match, 1);
        assert_eq!(r.queries[1].first_match, 1);
        // Now query 1 (id 1) sees the id-0 gallery item first.
        let emb = array![[1.0, 0.0], [0.9, 0.1], [1.0, 0.05], [0.1, 0.9]];
        let r = evaluate(&split, emb.view()).unwrap();
        assert_eq!(r.cmc, vec![0.5, 1.0]);
    }

    #[test]
    fn single_positive_at_rank_two() {
        let emb = array![[1.0, 0.0], [0.9, 0.1], [0.5, 0.5], [0.0, 1.0]];
        let split = GallerySplit {
            identities: vec![0, 1, 0, 2],
            views: vec![0, 1, 1, 1],
            query: vec![0],
            gallery: vec![1, 2, 3],
        };
        let r = evaluate(&split, emb.view()).unwrap();
        assert_eq!(r.queries[0].first_match, 2);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn same_view_matches_are_skipped_and_lonely_queries_flagged() {
        let emb = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
        // Identity 1's only other sample shares its view.
        let split = GallerySplit::first_per_identity(&[0, 1, 0, 1, 0], &[0, 0, 1, 0, 0]).unwrap();
        let r = evaluate(&split, emb.view()).unwrap();
        assert_eq!(r.excluded_queries, vec![1]);
        assert_eq!(r.queries.len(), 1);
        // Sample 4 shares query 0's view, so sample 2 is its only candidate.
        assert_eq!(r.queries[0].first_match, 1);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn ties_go_to_the_lower_gallery_index() {
        let emb = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let split = GallerySplit {
            identities: vec![0, 1, 0],
            views: vec![0, 1, 1],
            query: vec![0],
            gallery: vec![1, 2],
        };
        assert_eq!(evaluate(&split, emb.view()).unwrap().queries[0].first_match, 2);
    }

    fn random_instance(seed: u64) -> (GallerySplit, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..40);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let views: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let emb = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        (GallerySplit::first_per_identity(&ids, &views).unwrap(), emb)
    }

    proptest! {
        #[test]
        fn cmc_is_monotone_and_ends_at_one(seed in any::<u64>()) {
            let (split, emb) = random_instance(seed);
            if let Ok(r) = evaluate(&split, emb.view()) {
                prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(*r.cmc.last().unwrap(), 1.0);
                prop_assert!(r.map > 0.0 && r.map <= 1.0);
            }
        }

        #[test]
        fn positive_scaling_changes_nothing(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let (split, emb) = random_instance(seed);
            let a = evaluate(&split, emb.view());
            let b = evaluate(&split, (&emb * scale).view());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a.cmc, b.cmc);
                prop_assert_eq!(a.map, b.map);
            }
        }
    }
}
