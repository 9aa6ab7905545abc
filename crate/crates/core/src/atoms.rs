//! Atom neural responses (per-element feature means) and their k-means
//! sparsification into region-carrying sparse atoms.

use rand::Rng;

use crate::error::{NerdError, Result};
use crate::neural::PixelFeatures;
use crate::seed::rng_from_seed;
use crate::segmentation::SuperpixelSegmentation;

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

/// One mean response vector per superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    pub dim: usize,
    pub atoms: Vec<Vec<f64>>,
    /// Pixel count of each element.
    pub sizes: Vec<usize>,
}

impl AtomSet {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Cluster centroids with the elements each one encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAtomSet {
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Element indices per sparse atom; together a partition of the elements.
    pub regions: Vec<Vec<usize>>,
    /// Total pixels of each region.
    pub region_sizes: Vec<usize>,
}

impl SparseAtomSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Sparse-atom index for every element, or the first uncovered element.
    pub fn element_owners(&self, element_count: usize) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; element_count];
        for (i, region) in self.regions.iter().enumerate() {
            for &e in region {
                if e >= element_count {
                    return Err(NerdError::DimensionMismatch(format!(
                        "region {i} names element {e} of {element_count}"
                    )));
                }
                owner[e] = i;
            }
        }
        match owner.iter().position(|&o| o == usize::MAX) {
            Some(e) => Err(NerdError::UncoveredElement(e)),
            None => Ok(owner),
        }
    }
}

/// `t_i = (1 / z_i) * sum_{k in e_i} f_k`, per channel.
pub fn build_atoms(features: &PixelFeatures, seg: &SuperpixelSegmentation) -> Result<AtomSet> {
    if features.width != seg.width || features.height != seg.height {
        return Err(NerdError::DimensionMismatch(format!(
            "features are {}x{}, segmentation {}x{}",
            features.width, features.height, seg.width, seg.height
        )));
    }
    let mut sums = vec![vec![0.0f64; features.dim]; seg.count];
    for (c, plane) in (0..features.dim).map(|c| (c, features.plane(c))) {
        for (&v, &e) in plane.iter().zip(&seg.labels) {
            sums[e][c] += v as f64;
        }
    }
    for (sum, &z) in sums.iter_mut().zip(&seg.sizes) {
        let z = z as f64;
        sum.iter_mut().for_each(|v| *v /= z);
    }
    Ok(AtomSet {
        dim: features.dim,
        atoms: sums,
        sizes: seg.sizes.clone(),
    })
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Outcome of a Lloyd run.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each update step.
    pub objective: Vec<f64>,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // Every point coincides with a chosen centre.
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Unweighted k-means with k-means++ seeding. Stops after
/// [`KMEANS_MAX_ITERATIONS`] or when no centroid moves more than
/// [`KMEANS_TOLERANCE`]. Empty clusters are re-seeded with the point farthest
/// from its centroid. Returned centroids are the means of the returned
/// assignment; clusters may end up empty only when points coincide.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if points.is_empty() {
        return Err(NerdError::InvalidArgument("k-means on an empty set".into()));
    }
    if k == 0 {
        return Err(NerdError::InvalidArgument("k-means needs k >= 1".into()));
    }
    let k = k.min(points.len());
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignments = vec![0usize; points.len()];
    let mut objective = Vec::new();

    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut cost: Vec<f64> = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            cost.push(d);
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = cost
                .iter()
                .enumerate()
                .filter(|&(i, _)| counts[assignments[i]] > 1)
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, &d)| (i, d));
            if let Some((i, d)) = far {
                if d > 0.0 {
                    counts[assignments[i]] -= 1;
                    assignments[i] = j;
                    counts[j] = 1;
                    cost[i] = 0.0;
                    centroids[j] = points[i].clone();
                }
            }
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let n = counts[j] as f64;
            let mean: Vec<f64> = sums[j].iter().map(|s| s / n).collect();
            shift = shift.max(squared_distance(&mean, &centroids[j]).sqrt());
            centroids[j] = mean;
        }
        objective.push(
            points
                .iter()
                .zip(&assignments)
                .map(|(p, &a)| squared_distance(p, &centroids[a]))
                .sum(),
        );
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective,
    })
}

/// Clusters the atoms into at most `k` sparse atoms (`k` is clamped to the
/// atom count). Empty clusters are dropped and the remainder ordered by their
/// lowest member element.
pub fn sparsify_atoms(atoms: &AtomSet, k: usize, seed: u64) -> Result<SparseAtomSet> {
    if atoms.is_empty() {
        return Err(NerdError::InvalidArgument("empty atom set".into()));
    }
    let km = kmeans(&atoms.atoms, k, seed)?;
    let mut regions: Vec<Vec<usize>> = vec![Vec::new(); km.centroids.len()];
    for (e, &a) in km.assignments.iter().enumerate() {
        regions[a].push(e);
    }
    let mut clusters: Vec<(Vec<usize>, Vec<f64>)> = regions
        .into_iter()
        .zip(km.centroids)
        .filter(|(r, _)| !r.is_empty())
        .collect();
    clusters.sort_by_key(|(r, _)| r[0]);
    let region_sizes = clusters
        .iter()
        .map(|(r, _)| r.iter().map(|&e| atoms.sizes[e]).sum())
        .collect();
    let (regions, centroids) = clusters.into_iter().unzip();
    Ok(SparseAtomSet {
        dim: atoms.dim,
        centroids,
        regions,
        region_sizes,
    })
}
