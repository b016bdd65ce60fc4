//! Auto-tagging by cosine similarity between a clip and every tag embedding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embed::TagMatrix;
use crate::{Error, Result};

/// Cosine similarity. Returns 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            context: "cosine similarity",
            expected: u.len(),
            found: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagPrediction {
    pub tag: String,
    pub score: f64,
    /// 1-based
    pub rank: usize,
}

/// The `n` tags whose PPMI embeddings are most cosine-similar to the clip,
/// best first. Equal scores are ordered by tag name. Asking for more tags
/// than exist returns all of them.
pub fn autotag(clip: &[f64], tags: &TagMatrix, n: usize) -> Result<Vec<TagPrediction>> {
    if tags.is_empty() {
        return Err(Error::Empty("tag matrix"));
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "number of predicted tags must be at least 1".into(),
        ));
    }
    if n > tags.len() {
        log::warn!(
            "requested {n} tags but only {} exist; returning all",
            tags.len()
        );
    }
    if clip.len() != tags.dim() {
        return Err(Error::Shape {
            context: "auto-tagging clip embedding",
            expected: tags.dim(),
            found: clip.len(),
        });
    }
    // Rank by the dot product with unit-length tag rows so that parallel
    // rows tie exactly, whatever the clip's scale.
    let clip_norm = clip.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(usize, f64)> = (0..tags.len())
        .map(|i| {
            (
                i,
                clip.iter()
                    .zip(tags.ppmi_unit_row(i))
                    .map(|(a, b)| a * b)
                    .sum::<f64>(),
            )
        })
        .collect();
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => tags.tags()[a.0].cmp(&tags.tags()[b.0]),
        other => other,
    });
    let score = |dot: f64| {
        if clip_norm == 0.0 {
            0.0
        } else {
            dot / clip_norm
        }
    };
    Ok(scored
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(r, (i, dot))| TagPrediction {
            tag: tags.tags()[i].clone(),
            score: score(dot),
            rank: r + 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    fn tm(tags: &[&str], dim: usize, raw: Vec<f64>) -> TagMatrix {
        TagMatrix::from_parts(tags.iter().map(|s| s.to_string()).collect(), dim, raw).unwrap()
    }

    #[test]
    fn identical_tag_row_ranks_first() {
        // diagonal raw matrix: PPMI rows stay axis-aligned
        let m = tm(
            &["a", "b", "c"],
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let clip = m.ppmi_row(1).to_vec();
        let p = autotag(&clip, &m, 2).unwrap();
        assert_eq!(p[0].tag, "b");
        assert!((p[0].score - 1.0).abs() < 1e-15);
        assert_eq!(p[0].rank, 1);
        assert_eq!(p[1].score, 0.0);
        // tie between a and c: lexicographic
        assert_eq!(p[1].tag, "a");
    }

    #[test]
    fn truncation_and_errors() {
        let m = tm(&["x", "y"], 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(autotag(&[1.0, 0.0], &m, 20).unwrap().len(), 2);
        assert!(autotag(&[1.0, 0.0], &m, 0).is_err());
        assert!(autotag(&[1.0], &m, 1).is_err());
        // silent clip still receives tags
        let p = autotag(&[0.0, 0.0], &m, 2).unwrap();
        assert_eq!(
            p.iter().map(|p| p.tag.as_str()).collect::<Vec<_>>(),
            ["x", "y"]
        );
    }

    proptest! {
        #[test]
        fn ranking_is_scale_invariant_and_ordered(seed in any::<u64>(), scale in 1e-3f64..1e3, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let names: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
            let raw: Vec<f64> = (0..8 * 5).map(|_| rng.random_range(0.0..1.0)).collect();
            let m = TagMatrix::from_parts(names, 5, raw).unwrap();
            let clip: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let scaled: Vec<f64> = clip.iter().map(|v| v * scale).collect();
            let a = autotag(&clip, &m, n).unwrap();
            let b = autotag(&scaled, &m, n).unwrap();
            prop_assert_eq!(a.len(), n.min(8));
            prop_assert_eq!(
                a.iter().map(|p| &p.tag).collect::<Vec<_>>(),
                b.iter().map(|p| &p.tag).collect::<Vec<_>>()
            );
            for w in a.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
                prop_assert_eq!(w[1].rank, w[0].rank + 1);
            }
            prop_assert_eq!(autotag(&clip, &m, n).unwrap(), a);
        }
    }
}
