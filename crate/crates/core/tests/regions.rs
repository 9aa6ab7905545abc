//! Atoms, k-means, divergence and layer salience against direct oracles.

use nerd_core::atoms::{build_atoms, kmeans, sparsify_atoms, AtomSet, SparseAtomSet};
use nerd_core::divergence::{divergence_matrix, estimate_sigma, DivergenceParams};
use nerd_core::neural::PixelFeatures;
use nerd_core::salience::layer_salience;
use nerd_core::segmentation::SuperpixelSegmentation;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_features(rng: &mut ChaCha8Rng, w: usize, h: usize, dim: usize) -> PixelFeatures {
    let data = (0..w * h * dim)
        .map(|_| rng.gen_range(0.0f32..10.0))
        .collect();
    PixelFeatures::new(w, h, dim, data).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-spread..spread)).collect())
        .collect()
}

fn sparse_from(points: Vec<Vec<f64>>, sizes: Vec<usize>) -> SparseAtomSet {
    let n = points.len();
    SparseAtomSet {
        dim: points[0].len(),
        centroids: points,
        regions: (0..n).map(|i| vec![i]).collect(),
        region_sizes: sizes,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn atoms_match_brute_force_means(seed in any::<u64>(), m in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_features(&mut rng, 16, 16, 4);
        let labels: Vec<usize> = (0..256).map(|_| rng.gen_range(0..m)).collect();
        let seg = SuperpixelSegmentation::from_labels(16, 16, &labels).unwrap();
        let atoms = build_atoms(&f, &seg).unwrap();
        for (e, atom) in atoms.atoms.iter().enumerate() {
            let members: Vec<usize> = (0..256).filter(|&k| seg.labels[k] == e).collect();
            for (c, &v) in atom.iter().enumerate() {
                let mean = members.iter().map(|&k| f.plane(c)[k] as f64).sum::<f64>()
                    / members.len() as f64;
                prop_assert!((v - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_partition_centroid_and_monotone(seed in any::<u64>(), n in 1usize..60, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, 3, 5.0);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..50)).collect();
        let atoms = AtomSet { dim: 3, atoms: pts.clone(), sizes: sizes.clone() };
        let s = sparsify_atoms(&atoms, k, seed).unwrap();

        prop_assert!(s.len() <= k.min(n));
        let mut seen = vec![0; n];
        for r in &s.regions {
            prop_assert!(!r.is_empty());
            for &e in r { seen[e] += 1; }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(s.region_sizes.iter().sum::<usize>(), sizes.iter().sum::<usize>());

        for (c, r) in s.centroids.iter().zip(&s.regions) {
            for d in 0..3 {
                let mean = r.iter().map(|&e| pts[e][d]).sum::<f64>() / r.len() as f64;
                prop_assert!((c[d] - mean).abs() < 1e-9);
            }
        }

        let km = kmeans(&pts, k, seed).unwrap();
        for w in km.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", km.objective);
        }
        prop_assert_eq!(sparsify_atoms(&atoms, k, seed).unwrap(), s);
    }

    #[test]
    fn divergence_properties(seed in any::<u64>(), n in 1usize..30, dim in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, dim, 3.0);
        let atoms = sparse_from(pts.clone(), vec![1; n]);
        let params = estimate_sigma(&atoms);
        let m = divergence_matrix(&atoms, &params).unwrap();
        for i in 0..n {
            prop_assert_eq!(m.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((0.0..1.0).contains(&m.get(i, j)));
            }
        }

        // Positive rescaling leaves the auto-sigma matrix unchanged.
        let c = rng.gen_range(0.1..20.0);
        let scaled = sparse_from(
            pts.iter().map(|p| p.iter().map(|v| v * c).collect()).collect(),
            vec![1; n],
        );
        let ms = divergence_matrix(&scaled, &estimate_sigma(&scaled)).unwrap();
        for (a, b) in m.values.iter().zip(&ms.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_increases_with_distance(d1 in 0.0f64..50.0, gap in 1e-6f64..50.0, s in 0.1f64..10.0) {
        let params = DivergenceParams::new(s).unwrap();
        let near = divergence_matrix(&sparse_from(vec![vec![0.0], vec![d1]], vec![1, 1]), &params).unwrap();
        let far = divergence_matrix(&sparse_from(vec![vec![0.0], vec![d1 + gap]], vec![1, 1]), &params).unwrap();
        prop_assert!(far.get(0, 1) > near.get(0, 1) || far.get(0, 1) == near.get(0, 1) && near.get(0, 1) > 1.0 - 1e-15);
        prop_assert!(far.get(0, 1) < 1.0 || d1 + gap > 30.0 * s);
    }

    #[test]
    fn layer_salience_matches_double_loop(seed in any::<u64>(), n in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, 4, 2.0);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..1000)).collect();
        let atoms = sparse_from(pts, sizes.clone());
        let m = divergence_matrix(&atoms, &estimate_sigma(&atoms)).unwrap();
        let s = layer_salience(&atoms, &m).unwrap();
        for i in 0..n {
            let mut alpha = 0.0;
            for (j, &z) in sizes.iter().enumerate() {
                if i != j {
                    alpha += z as f64 * m.get(i, j);
                }
            }
            prop_assert_eq!(s.scores[i], alpha);
            prop_assert!(s.scores[i] >= 0.0);
        }
    }

    #[test]
    fn smaller_region_scores_higher(small in 1usize..1000, extra in 1usize..1000, beta_dist in 0.01f64..10.0) {
        let atoms = sparse_from(vec![vec![0.0], vec![beta_dist]], vec![small, small + extra]);
        let m = divergence_matrix(&atoms, &DivergenceParams::new(1.0).unwrap()).unwrap();
        let s = layer_salience(&atoms, &m).unwrap();
        prop_assert!(s.scores[0] > s.scores[1]);
    }
}

#[test]
fn estimate_sigma_scales_with_atoms() {
    let a = sparse_from(vec![vec![0.0, 0.0], vec![3.0, 4.0]], vec![1, 1]);
    assert_eq!(estimate_sigma(&a).sigma_sq, 5.0);
}
