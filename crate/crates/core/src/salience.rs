//! Region salience from size-weighted divergences, propagated to pixels and
//! summed over a hierarchy of clustering granularities.

use crate::atoms::{build_atoms, sparsify_atoms, SparseAtomSet};
use crate::divergence::{divergence_matrix, resolve_sigma, DivergenceMatrix, SigmaMode};
use crate::error::{NerdError, Result};
use crate::imaging::{save_gray, LabImage};
use crate::neural::PixelFeatures;
use crate::seed::derive_seed;
use crate::segmentation::{slic, SlicParams, SuperpixelSegmentation};

pub const DEFAULT_ATOM_COUNTS: [usize; 5] = [5, 25, 45, 65, 85];

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    /// Sparse atom count of each layer, strictly increasing.
    pub atom_counts: Vec<usize>,
    pub slic: SlicParams,
    pub sigma: SigmaMode,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            atom_counts: DEFAULT_ATOM_COUNTS.to_vec(),
            slic: SlicParams::default(),
            sigma: SigmaMode::Auto,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atom_counts.is_empty() {
            return Err(NerdError::InvalidArgument("hierarchy has no layers".into()));
        }
        if self.atom_counts[0] == 0 {
            return Err(NerdError::InvalidArgument(
                "atom counts must be positive".into(),
            ));
        }
        if self.atom_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NerdError::InvalidArgument(format!(
                "atom counts must be strictly increasing: {:?}",
                self.atom_counts
            )));
        }
        Ok(())
    }
}

/// Salience of every sparse atom in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceScores {
    pub scores: Vec<f64>,
}

/// `alpha_i = sum_{j != i} |s_j| * beta_ij`, sizes in pixels.
pub fn layer_salience(atoms: &SparseAtomSet, div: &DivergenceMatrix) -> Result<SalienceScores> {
    let n = atoms.len();
    if div.size != n || atoms.region_sizes.len() != n {
        return Err(NerdError::DimensionMismatch(format!(
            "{n} sparse atoms but a {0}x{0} divergence matrix",
            div.size
        )));
    }
    let scores = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| atoms.region_sizes[j] as f64 * div.get(i, j))
                .sum()
        })
        .collect();
    Ok(SalienceScores { scores })
}

/// Piecewise-constant pixel map: each pixel takes the score of the sparse
/// atom that owns its element.
pub fn propagate_to_pixels(
    scores: &SalienceScores,
    atoms: &SparseAtomSet,
    seg: &SuperpixelSegmentation,
) -> Result<Vec<f64>> {
    if scores.scores.len() != atoms.len() {
        return Err(NerdError::DimensionMismatch(format!(
            "{} scores for {} sparse atoms",
            scores.scores.len(),
            atoms.len()
        )));
    }
    let owner = atoms.element_owners(seg.count)?;
    Ok(seg
        .labels
        .iter()
        .map(|&e| scores.scores[owner[e]])
        .collect())
}

/// Per-pixel salience in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    /// Min-max normalizes `raw`; a constant input becomes the zero map.
    pub fn normalized(width: usize, height: usize, raw: &[f64]) -> Self {
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let values = if range > 0.0 && range.is_finite() {
            raw.iter()
                .map(|v| ((v - min) / range).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self {
            width,
            height,
            values,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_gray(&self.values, self.width, self.height, path)
    }

    pub fn mean_where(&self, pred: impl Fn(usize, usize) -> bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (k, &v) in self.values.iter().enumerate() {
            if pred(k % self.width, k / self.width) {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Per-layer propagated maps and their unnormalized sum.
#[derive(Debug, Clone)]
pub struct LayeredSalience {
    pub layers: Vec<Vec<f64>>,
    pub sum: Vec<f64>,
    pub map: SaliencyMap,
}

/// Runs every hierarchy layer over one fixed segmentation. Layer `i` clusters
/// with a seed derived from `seed` and `i`.
pub fn salience_layers(
    features: &PixelFeatures,
    seg: &SuperpixelSegmentation,
    cfg: &HierarchyConfig,
    seed: u64,
) -> Result<LayeredSalience> {
    cfg.validate()?;
    let atoms = build_atoms(features, seg)?;
    let layers = cfg
        .atom_counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let sparse = sparsify_atoms(&atoms, k, derive_seed(seed, &format!("kmeans/{i}")))?;
            let params = resolve_sigma(cfg.sigma, &sparse)?;
            let div = divergence_matrix(&sparse, &params)?;
            let scores = layer_salience(&sparse, &div)?;
            propagate_to_pixels(&scores, &sparse, seg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![0.0; seg.labels.len()];
    for layer in &layers {
        for (s, v) in sum.iter_mut().zip(layer) {
            *s += v;
        }
    }
    let map = SaliencyMap::normalized(seg.width, seg.height, &sum);
    Ok(LayeredSalience { layers, sum, map })
}

/// Segments `img` with SLIC, then aggregates salience over every layer.
pub fn hierarchical_salience(
    features: &PixelFeatures,
    img: &LabImage,
    cfg: &HierarchyConfig,
    seed: u64,
) -> Result<SaliencyMap> {
    if features.width != img.width || features.height != img.height {
        return Err(NerdError::DimensionMismatch(format!(
            "features are {}x{}, image {}x{}",
            features.width, features.height, img.width, img.height
        )));
    }
    cfg.validate()?;
    let seg = slic(img, &cfg.slic)?;
    Ok(salience_layers(features, &seg, cfg, seed)?.map)
}
