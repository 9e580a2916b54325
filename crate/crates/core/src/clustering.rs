//! Recursive binary median split over point sets.
//!
//! Used twice: to cut an asset's Gaussians into clusters, and to gather
//! adjacent clusters (by centroid) into cluster groups.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Disjoint, covering index sets over some input collection, in depth-first
/// leaf order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub sets: Vec<Vec<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Check that the sets are non-empty, disjoint and cover `0..n`.
    pub fn check_covers(&self, n: usize) -> std::result::Result<(), String> {
        let mut seen = vec![false; n];
        for set in &self.sets {
            if set.is_empty() {
                return Err("empty set in partition".into());
            }
            for &i in set {
                if i >= n {
                    return Err(format!("index {i} out of range"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("index {i} appears twice"));
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(format!("index {i} is not covered")),
            None => Ok(()),
        }
    }
}

// Above this many indices the two halves are split on separate rayon tasks.
const PARALLEL_THRESHOLD: usize = 1 << 15;

/// Split `points` until every leaf holds at most `max_leaf_size` indices.
///
/// Each split cuts along the axis of largest bounding-box extent (lowest axis
/// on ties); the lower half receives `ceil(n / 2)` indices ordered by
/// `(coordinate, index)`, so the result is fully deterministic.
pub fn median_split(points: &[Vec3], max_leaf_size: usize) -> Result<Partition> {
    if points.is_empty() {
        return Err(Error::Argument("median split of an empty point set".into()));
    }
    if max_leaf_size == 0 {
        return Err(Error::Argument("max leaf size must be at least 1".into()));
    }
    let mut indices: Vec<usize> = (0..points.len()).collect();
    let mut sets = Vec::new();
    split_recursive(points, &mut indices, max_leaf_size, &mut sets);
    Ok(Partition { sets })
}

fn split_recursive(points: &[Vec3], indices: &mut [usize], max_leaf: usize, out: &mut Vec<Vec<usize>>) {
    let n = indices.len();
    if n <= max_leaf {
        out.push(indices.to_vec());
        return;
    }

    let axis = widest_axis(points, indices);
    let mid = n.div_ceil(2);
    let key = |&a: &usize, &b: &usize| -> Ordering {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    };
    indices.select_nth_unstable_by(mid - 1, key);
    // Leaf contents are reported in ascending index order.
    let (lower, upper) = indices.split_at_mut(mid);
    lower.sort_unstable();
    upper.sort_unstable();

    if n >= PARALLEL_THRESHOLD {
        let (mut left, mut right) = (Vec::new(), Vec::new());
        rayon::join(
            || split_recursive(points, lower, max_leaf, &mut left),
            || split_recursive(points, upper, max_leaf, &mut right),
        );
        out.append(&mut left);
        out.append(&mut right);
    } else {
        split_recursive(points, lower, max_leaf, out);
        split_recursive(points, upper, max_leaf, out);
    }
}

fn widest_axis(points: &[Vec3], indices: &[usize]) -> usize {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in indices {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = hi - lo;
    let mut axis = 0;
    for a in 1..3 {
        if extent[a] > extent[axis] {
            axis = a;
        }
    }
    axis
}

/// Gather adjacent clusters into groups of at most `group_size` members.
pub fn group_clusters(centroids: &[Vec3], group_size: usize) -> Result<Partition> {
    if group_size < 2 {
        return Err(Error::Argument("cluster groups need at least 2 members".into()));
    }
    median_split(centroids, group_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn collinear_points_split_into_contiguous_pairs() {
        let pts: Vec<Vec3> = [5.0, 1.0, 7.0, 3.0, 0.0, 6.0, 2.0, 4.0]
            .iter()
            .map(|&x| Vec3::new(x, 0.0, 0.0))
            .collect();
        let p = median_split(&pts, 2).unwrap();
        assert_eq!(p.len(), 4);
        let xs: Vec<Vec<f64>> = p
            .sets
            .iter()
            .map(|s| {
                let mut v: Vec<f64> = s.iter().map(|&i| pts[i].x).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        assert_eq!(xs, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0], vec![6.0, 7.0]]);
    }

    #[test]
    fn small_input_is_a_single_leaf() {
        let pts = random_points(10, 1);
        let p = median_split(&pts, 10).unwrap();
        assert_eq!(p.sets, vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(median_split(&[], 4), Err(Error::Argument(_))));
        assert!(group_clusters(&random_points(4, 0), 1).is_err());
    }

    #[test]
    fn random_points_respect_leaf_bound_and_cover() {
        let pts = random_points(10_000, 2);
        let p = median_split(&pts, 4096).unwrap();
        assert!(p.sets.iter().all(|s| s.len() <= 4096));
        p.check_covers(pts.len()).unwrap();

        // Leaf boxes overlap each other far less than the full box volume.
        let bbox = |s: &[usize]| {
            let mut lo = Vec3::repeat(f64::INFINITY);
            let mut hi = Vec3::repeat(f64::NEG_INFINITY);
            for &i in s {
                lo = lo.inf(&pts[i]);
                hi = hi.sup(&pts[i]);
            }
            (lo, hi)
        };
        let boxes: Vec<_> = p.sets.iter().map(|s| bbox(s)).collect();
        let (flo, fhi) = bbox(&(0..pts.len()).collect::<Vec<_>>());
        let full = (fhi - flo).product();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let lo = boxes[i].0.sup(&boxes[j].0);
                let hi = boxes[i].1.inf(&boxes[j].1);
                let overlap = (hi - lo).map(|v| v.max(0.0)).product();
                assert!(overlap < full);
            }
        }
    }

    #[test]
    fn grouping_halves_exactly() {
        let pts = random_points(4, 3);
        let p = group_clusters(&pts, 2).unwrap();
        assert_eq!(p.sets.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2]);

        let pts = random_points(5, 3);
        let p = group_clusters(&pts, 2).unwrap();
        let mut sizes: Vec<usize> = p.sets.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2, 2]);

        let pts = random_points(64, 4);
        for g in [2, 4, 8, 32] {
            let p = group_clusters(&pts, g).unwrap();
            assert!(p.sets.iter().all(|s| s.len() == g));
        }
    }

    #[test]
    fn leaves_are_spatially_local() {
        let pts = random_points(2000, 5);
        let p = median_split(&pts, 64).unwrap();
        let mean_dist = |idx: &[usize]| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    sum += (pts[i] - pts[j]).norm();
                    count += 1;
                }
            }
            sum / count as f64
        };
        let all: Vec<usize> = (0..pts.len()).step_by(5).collect();
        let global = mean_dist(&all);
        let intra: f64 = p.sets.iter().map(|s| mean_dist(s)).sum::<f64>() / p.len() as f64;
        assert!(intra < global);
    }

    #[test]
    fn ties_are_deterministic() {
        let pts = vec![Vec3::zeros(); 9];
        let a = median_split(&pts, 2).unwrap();
        let b = median_split(&pts, 2).unwrap();
        assert_eq!(a, b);
        a.check_covers(9).unwrap();
        assert_eq!(a.sets[0], vec![0, 1]);
    }

    proptest::proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(
            coords in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..300),
            leaf in 1usize..40,
        ) {
            let pts: Vec<Vec3> = coords.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let p = median_split(&pts, leaf).unwrap();
            proptest::prop_assert!(p.check_covers(pts.len()).is_ok());
            proptest::prop_assert!(p.sets.iter().all(|s| s.len() <= leaf));
            proptest::prop_assert_eq!(p, median_split(&pts, leaf).unwrap());
        }
    }
}
