//! Cosine-similarity edge selection between event embeddings.

use super::GraphError;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn check(embeddings: &[Vec<f64>]) -> Result<(), GraphError> {
    if embeddings.len() < 2 {
        return Err(GraphError::Config("similarity selection needs at least two embeddings".into()));
    }
    let dim = embeddings[0].len();
    for (i, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(GraphError::Dimension { what: "event embedding", index: i, expected: dim, found: e.len() });
        }
        if e.iter().all(|&x| x == 0.0) {
            return Err(GraphError::ZeroNorm { index: i });
        }
    }
    Ok(())
}

/// An index pair `(i, j)` with its similarity.
pub type ScoredPair = ((usize, usize), f64);

/// Every unordered pair `(i, j)`, `i < j`, with its cosine similarity,
/// ordered by similarity descending and then by pair index.
pub fn ranked_pairs(embeddings: &[Vec<f64>]) -> Result<Vec<ScoredPair>, GraphError> {
    check(embeddings)?;
    let n = embeddings.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(((i, j), cosine(&embeddings[i], &embeddings[j])));
        }
    }
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(pairs)
}

/// Number of pairs kept for a top fraction `p` of `C(n, 2)` pairs.
pub fn kept_pair_count(n: usize, top_frac: f64) -> usize {
    let total = n * n.saturating_sub(1) / 2;
    let m = (top_frac * total as f64 - 1e-9).ceil().max(1.0) as usize;
    m.min(total)
}

/// Keeps the `max(1, ceil(p * C(n,2)))` most similar pairs. The threshold
/// is the similarity of the last kept pair.
pub fn similarity_threshold(embeddings: &[Vec<f64>], top_frac: f64) -> Result<(f64, Vec<(usize, usize)>), GraphError> {
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return Err(GraphError::Config(format!("edge top fraction {top_frac} outside (0, 1]")));
    }
    let pairs = ranked_pairs(embeddings)?;
    let m = kept_pair_count(embeddings.len(), top_frac);
    let tau = pairs[m - 1].1;
    Ok((tau, pairs[..m].iter().map(|p| p.0).collect()))
}

/// Keeps every pair with similarity at least `tau`.
pub fn pairs_above(embeddings: &[Vec<f64>], tau: f64) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut kept: Vec<(usize, usize)> =
        ranked_pairs(embeddings)?.into_iter().filter(|p| p.1 >= tau).map(|p| p.0).collect();
    kept.sort_unstable();
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_wins() {
        let e = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (tau, kept) = similarity_threshold(&e, 0.2).unwrap();
        assert_eq!(kept, vec![(0, 1)]);
        assert_eq!(tau, 1.0);
    }

    #[test]
    fn full_fraction_keeps_all() {
        let e = vec![vec![1.0, 0.3], vec![0.2, 1.0], vec![-1.0, 0.5], vec![0.1, -2.0]];
        let (_, kept) = similarity_threshold(&e, 1.0).unwrap();
        assert_eq!(kept.len(), 6);
    }

    #[test]
    fn identical_embeddings_take_first_pairs() {
        let e = vec![vec![2.0, 1.0]; 5];
        let (tau, kept) = similarity_threshold(&e, 0.3).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
        assert_eq!(kept, vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(kept_pair_count(60, 0.02), 36); // 0.02 * 1770 = 35.4
        assert_eq!(kept_pair_count(3, 0.01), 1);
        assert_eq!(kept_pair_count(2, 1.0), 1);
        assert_eq!(kept_pair_count(5, 0.3), 3);
    }

    #[test]
    fn zero_vector_rejected() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(similarity_threshold(&e, 0.5), Err(GraphError::ZeroNorm { index: 1 })));
    }

    #[test]
    fn explicit_threshold() {
        let e = vec![vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0]];
        assert_eq!(pairs_above(&e, 0.9).unwrap(), vec![(0, 1)]);
        assert_eq!(pairs_above(&e, -1.0).unwrap().len(), 3);
    }
}
