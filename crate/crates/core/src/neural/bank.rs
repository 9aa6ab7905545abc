//! Receptive-field banks with per-synapse connectivity masks, and the
//! NERD-FB file format used to import pretrained first-layer weights.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NerdError, Result};
use crate::seed::{derive_seed, rng_from_seed};

const MAGIC: &str = "NERDFB1";

/// Shape of a bank as `[count, in_channels, kh, kw]`.
pub type BankShape = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Gabor,
    Random,
}

impl std::str::FromStr for FilterKind {
    type Err = NerdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gabor" => Ok(FilterKind::Gabor),
            "random" => Ok(FilterKind::Random),
            other => Err(NerdError::InvalidArgument(format!(
                "unknown filter kind {other:?} (expected gabor or random)"
            ))),
        }
    }
}

/// A stochastic first-layer filter bank. `weights` and `mask` share the
/// `[count][in_channels][kh][kw]` row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub count: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
    pub mask: Vec<u8>,
    pub connectivity: f64,
    pub seed: u64,
}

fn validate_shape(shape: BankShape) -> Result<()> {
    if shape.contains(&0) {
        return Err(NerdError::InvalidArgument(format!(
            "filter bank shape {shape:?} has a zero dimension"
        )));
    }
    Ok(())
}

fn validate_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NerdError::InvalidArgument(format!(
            "connectivity {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Keeps each synapse independently with probability `p`.
pub fn generate_connectivity_mask(shape: BankShape, p: f64, seed: u64) -> Result<Vec<u8>> {
    validate_shape(shape)?;
    validate_p(p)?;
    let n: usize = shape.iter().product();
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| u8::from(rng.gen::<f64>() < p)).collect())
}

impl FilterBank {
    /// Assembles a bank from explicit weights and biases, sampling its mask
    /// at connectivity `p`.
    pub fn from_parts(
        shape: BankShape,
        weights: Vec<f32>,
        biases: Vec<f32>,
        p: f64,
        seed: u64,
    ) -> Result<Self> {
        validate_shape(shape)?;
        let [count, in_channels, kh, kw] = shape;
        if weights.len() != count * in_channels * kh * kw || biases.len() != count {
            return Err(NerdError::DimensionMismatch(format!(
                "bank {shape:?} needs {} weights and {count} biases, got {} and {}",
                count * in_channels * kh * kw,
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(NerdError::NonFinite("filter bank"));
        }
        let mask = generate_connectivity_mask(shape, p, seed)?;
        Ok(Self {
            count,
            in_channels,
            kh,
            kw,
            weights,
            biases,
            mask,
            connectivity: p,
            seed,
        })
    }

    pub fn shape(&self) -> BankShape {
        [self.count, self.in_channels, self.kh, self.kw]
    }

    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn synapse_count(&self) -> usize {
        self.weights.len()
    }

    pub fn active_synapses(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn mask_density(&self) -> f64 {
        self.active_synapses() as f64 / self.synapse_count() as f64
    }

    /// Same weights, new mask drawn at `p` from `seed`.
    pub fn with_connectivity(&self, p: f64, seed: u64) -> Result<Self> {
        let mask = generate_connectivity_mask(self.shape(), p, seed)?;
        Ok(Self {
            mask,
            connectivity: p,
            seed,
            ..self.clone()
        })
    }

    /// Weight multiplied by its mask bit.
    pub fn effective_weights(&self) -> Vec<f32> {
        self.weights
            .iter()
            .zip(&self.mask)
            .map(|(&w, &m)| w * m as f32)
            .collect()
    }

    /// A fully connected bank whose weights are the masked ones of `self`.
    pub fn premultiplied(&self) -> Self {
        Self {
            weights: self.effective_weights(),
            mask: vec![1; self.synapse_count()],
            connectivity: 1.0,
            ..self.clone()
        }
    }

    pub fn filter(&self, i: usize) -> &[f32] {
        let n = self.filter_len();
        &self.weights[i * n..(i + 1) * n]
    }

    /// Writes the NERD-FB encoding. Masks are never stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * (self.weights.len() + self.biases.len()));
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(
            out,
            "{} {} {} {}",
            self.count, self.in_channels, self.kh, self.kw
        )
        .unwrap();
        for v in self.weights.iter().chain(&self.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| NerdError::Unwritable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn from_bytes(bytes: &[u8], p: f64, seed: u64) -> Result<Self> {
        let (magic, rest) = split_line(bytes).ok_or(NerdError::BadMagic)?;
        if magic != MAGIC.as_bytes() {
            return Err(NerdError::BadMagic);
        }
        let (dims, payload) =
            split_line(rest).ok_or_else(|| NerdError::BadDimensions("missing".into()))?;
        let dims_str =
            std::str::from_utf8(dims).map_err(|_| NerdError::BadDimensions("not ASCII".into()))?;
        let parsed: Vec<usize> = dims_str
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| NerdError::BadDimensions(dims_str.to_string()))?;
        let shape: BankShape = parsed
            .try_into()
            .map_err(|_| NerdError::BadDimensions(dims_str.to_string()))?;
        validate_shape(shape).map_err(|_| NerdError::BadDimensions(dims_str.to_string()))?;
        let [l, c, kh, kw] = shape;
        let n_weights = l * c * kh * kw;
        let expected = 4 * (n_weights + l);
        if payload.len() != expected {
            return Err(NerdError::PayloadSize {
                expected,
                actual: payload.len(),
            });
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let (weights, biases) = floats.split_at(n_weights);
        Self::from_parts(shape, weights.to_vec(), biases.to_vec(), p, seed)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    let line = &bytes[..nl];
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    Some((line, &bytes[nl + 1..]))
}

/// Reads a NERD-FB file and samples its mask at connectivity `p`.
/// `p = 1` keeps every synapse.
pub fn import_filter_bank(path: impl AsRef<Path>, p: f64, seed: u64) -> Result<FilterBank> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(NerdError::MissingFile(path.to_path_buf()));
    }
    FilterBank::from_bytes(&fs::read(path)?, p, seed)
}

const ORIENTATIONS: usize = 8;
const SCALES: usize = 2;

// Luminance and the two opponent colour axes.
fn colour_axes() -> [[f64; 3]; 3] {
    let s3 = 3f64.sqrt();
    let s2 = 2f64.sqrt();
    let s15 = 1.5f64.sqrt();
    [
        [1.0 / s3, 1.0 / s3, 1.0 / s3],
        [1.0 / s2, -1.0 / s2, 0.0],
        [-0.5 / s15, -0.5 / s15, 1.0 / s15],
    ]
}

/// Gabor kernel `i` of a bank: orientation varies fastest, then colour axis,
/// scale and phase.
fn gabor_filter(i: usize, c: usize, kh: usize, kw: usize) -> Vec<f64> {
    let orient = i % ORIENTATIONS;
    let colour = (i / ORIENTATIONS) % 3;
    let scale = (i / (ORIENTATIONS * 3)) % SCALES;
    let phase = (i / (ORIENTATIONS * 3 * SCALES)) % 2;

    let theta = PI * orient as f64 / ORIENTATIONS as f64;
    let size = kh.min(kw) as f64;
    let wavelength = (size / 2.0) / (1 << scale) as f64;
    let wavelength = wavelength.max(2.0);
    let sigma = 0.5 * wavelength;
    let psi = if phase == 0 { 0.0 } else { PI / 2.0 };
    let axis = if c == 3 {
        colour_axes()[colour]
    } else {
        [1.0; 3]
    };

    let (cy, cx) = ((kh / 2) as f64, (kw / 2) as f64);
    let mut spatial = Vec::with_capacity(kh * kw);
    for y in 0..kh {
        for x in 0..kw {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let xr = dx * theta.cos() + dy * theta.sin();
            let yr = -dx * theta.sin() + dy * theta.cos();
            let env = (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp();
            spatial.push(env * (2.0 * PI * xr / wavelength + psi).cos());
        }
    }
    let mut f = Vec::with_capacity(c * kh * kw);
    for a in (0..c).map(|ch| if c == 3 { axis[ch] } else { 1.0 }) {
        f.extend(spatial.iter().map(|v| a * v));
    }
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= mean);
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        f.iter_mut().for_each(|v| *v /= norm);
    }
    f
}

/// Procedural stand-in for pretrained first-layer weights.
///
/// `Gabor` yields zero-mean, unit-norm oriented band-pass kernels over eight
/// orientations, two scales, two phases and three colour axes (the full
/// cycle is 96 filters). `Random` draws He-normal weights with variance
/// `2 / (c * kh * kw)`. Biases are zero in both cases and the mask is
/// sampled at `p` from `seed`.
pub fn generate_filter_bank(
    count: usize,
    kh: usize,
    kw: usize,
    kind: FilterKind,
    p: f64,
    seed: u64,
) -> Result<FilterBank> {
    let c = 3;
    if count == 0 || kh == 0 || kw == 0 {
        return Err(NerdError::InvalidArgument(
            "filter count and kernel size must be positive".into(),
        ));
    }
    let weights: Vec<f32> = match kind {
        FilterKind::Gabor => {
            if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
                return Err(NerdError::InvalidArgument(format!(
                    "gabor kernels need odd sizes, got {kh}x{kw}"
                )));
            }
            (0..count)
                .flat_map(|i| gabor_filter(i, c, kh, kw))
                .map(|v| v as f32)
                .collect()
        }
        FilterKind::Random => {
            let std = (2.0 / (c * kh * kw) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = rng_from_seed(derive_seed(seed, "filter-weights"));
            (0..count * c * kh * kw)
                .map(|_| normal.sample(&mut rng) as f32)
                .collect()
        }
    };
    FilterBank::from_parts([count, c, kh, kw], weights, vec![0.0; count], p, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_extremes() {
        let ones = generate_connectivity_mask([4, 3, 5, 5], 1.0, 3).unwrap();
        assert!(ones.iter().all(|&m| m == 1));
        let zeros = generate_connectivity_mask([4, 3, 5, 5], 0.0, 3).unwrap();
        assert!(zeros.iter().all(|&m| m == 0));
    }

    #[test]
    fn mask_density_concentrates() {
        // 100 * 1000 = 100_000 synapses; 3 sigma of Bin(n, 0.25)/n is ~0.004.
        let m = generate_connectivity_mask([100, 1, 10, 100], 0.25, 42).unwrap();
        let frac = m.iter().filter(|&&b| b == 1).count() as f64 / m.len() as f64;
        assert!((0.24..=0.26).contains(&frac), "{frac}");
    }

    #[test]
    fn mask_is_deterministic_and_seeded() {
        let a = generate_connectivity_mask([2, 3, 3, 3], 0.5, 9).unwrap();
        let b = generate_connectivity_mask([2, 3, 3, 3], 0.5, 9).unwrap();
        let c = generate_connectivity_mask([2, 3, 3, 3], 0.5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mask_rejects_bad_inputs() {
        assert!(generate_connectivity_mask([0, 3, 3, 3], 0.5, 1).is_err());
        assert!(generate_connectivity_mask([1, 3, 3, 3], 1.5, 1).is_err());
    }

    #[test]
    fn random_filters_are_near_zero_mean() {
        let bank = generate_filter_bank(96, 11, 11, FilterKind::Random, 1.0, 5).unwrap();
        for i in 0..bank.count {
            let f = bank.filter(i);
            let mean = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
            assert!(mean.abs() < 0.05, "filter {i} mean {mean}");
        }
        let var = bank
            .weights
            .iter()
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            / bank.weights.len() as f64;
        assert!((var - 2.0 / 363.0).abs() < 0.1 * 2.0 / 363.0, "{var}");
    }

    #[test]
    fn gabor_filters_unit_norm_zero_mean() {
        let bank = generate_filter_bank(96, 11, 11, FilterKind::Gabor, 0.25, 5).unwrap();
        for i in 0..bank.count {
            let f = bank.filter(i);
            let norm = f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let mean = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
            assert!((norm - 1.0).abs() < 1e-6, "filter {i} norm {norm}");
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn gabor_spans_orientations_and_scales() {
        let bank = generate_filter_bank(96, 11, 11, FilterKind::Gabor, 1.0, 0).unwrap();
        // Distinct filters across the first 8 (orientations) and across scale.
        let f0 = bank.filter(0);
        for i in 1..8 {
            assert_ne!(f0, bank.filter(i));
        }
        assert_ne!(bank.filter(0), bank.filter(24));
    }

    #[test]
    fn gabor_rejects_even_kernel() {
        assert!(generate_filter_bank(4, 10, 10, FilterKind::Gabor, 1.0, 0).is_err());
        assert!(generate_filter_bank(0, 11, 11, FilterKind::Random, 1.0, 0).is_err());
    }

    #[test]
    fn generation_is_bit_identical() {
        let a = generate_filter_bank(16, 7, 7, FilterKind::Random, 0.25, 77).unwrap();
        let b = generate_filter_bank(16, 7, 7, FilterKind::Random, 0.25, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_filter_bank(16, 7, 7, FilterKind::Random, 0.25, 78).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn export_import_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.nerdfb");
        let bank = generate_filter_bank(8, 5, 5, FilterKind::Random, 1.0, 1).unwrap();
        bank.export(&path).unwrap();
        let back = import_filter_bank(&path, 1.0, 1).unwrap();
        assert_eq!(
            bank.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(bank, back);
    }

    #[test]
    fn import_errors() {
        let bank = generate_filter_bank(2, 3, 3, FilterKind::Random, 1.0, 1).unwrap();
        let bytes = bank.to_bytes();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            FilterBank::from_bytes(truncated, 1.0, 0),
            Err(NerdError::PayloadSize { .. })
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            FilterBank::from_bytes(&bad_magic, 1.0, 0),
            Err(NerdError::BadMagic)
        ));

        let mut nan = bytes.clone();
        let off = nan.len() - 4;
        nan[off..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FilterBank::from_bytes(&nan, 1.0, 0),
            Err(NerdError::NonFinite(_))
        ));

        let mut text = b"NERDFB1\n2 3 x 3\n".to_vec();
        text.extend_from_slice(&[0; 8]);
        assert!(matches!(
            FilterBank::from_bytes(&text, 1.0, 0),
            Err(NerdError::BadDimensions(_))
        ));
    }

    #[test]
    fn imported_bank_masks_at_requested_density() {
        // 96 * 3 * 19 * 19 = 103_968 synapses.
        let bank = generate_filter_bank(96, 19, 19, FilterKind::Random, 1.0, 1).unwrap();
        let sparse = FilterBank::from_bytes(&bank.to_bytes(), 0.25, 99).unwrap();
        assert!(sparse.synapse_count() >= 100_000);
        let d = sparse.mask_density();
        assert!((0.24..=0.26).contains(&d), "{d}");
        assert_eq!(sparse.weights, bank.weights);
    }
}
