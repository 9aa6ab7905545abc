//! End-to-end detection: image -> neural features -> SLIC -> hierarchical
//! salience, with per-stage wall times.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::error::{NerdError, Result};
use crate::imaging::{rgb_to_lab, Image};
use crate::neural::{
    self, generate_filter_bank, import_filter_bank, mac_count, BlockConfig, FilterBank, FilterKind,
    MacCount,
};
use crate::salience::{salience_layers, HierarchyConfig, SaliencyMap};
use crate::seed::derive_seed;
use crate::segmentation::{slic, SuperpixelSegmentation};

pub const DEFAULT_CONNECTIVITY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum BankSource {
    File(PathBuf),
    Generate {
        count: usize,
        size: usize,
        kind: FilterKind,
    },
}

impl Default for BankSource {
    fn default() -> Self {
        BankSource::Generate {
            count: 96,
            size: 11,
            kind: FilterKind::Gabor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub bank: BankSource,
    pub connectivity: f64,
    pub seed: u64,
    pub block: BlockConfig,
    pub hierarchy: HierarchyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bank: BankSource::default(),
            connectivity: DEFAULT_CONNECTIVITY,
            seed: 0,
            block: BlockConfig::default(),
            hierarchy: HierarchyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.connectivity) {
            return Err(NerdError::InvalidArgument(format!(
                "connectivity {} outside [0, 1]",
                self.connectivity
            )));
        }
        self.block.validate()?;
        self.hierarchy.validate()
    }

    /// Seed of the bank's connectivity mask (and random weights).
    pub fn bank_seed(&self) -> u64 {
        derive_seed(self.seed, "bank")
    }

    pub fn salience_seed(&self) -> u64 {
        derive_seed(self.seed, "salience")
    }

    pub fn build_bank(&self) -> Result<FilterBank> {
        self.validate()?;
        match &self.bank {
            BankSource::File(path) => import_filter_bank(path, self.connectivity, self.bank_seed()),
            BankSource::Generate { count, size, kind } => generate_filter_bank(
                *count,
                *size,
                *size,
                *kind,
                self.connectivity,
                self.bank_seed(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub conv: Duration,
    pub rectify_lrn_pool: Duration,
    pub upsample: Duration,
    pub slic: Duration,
    pub salience: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.conv + self.rectify_lrn_pool + self.upsample + self.slic + self.salience
    }

    pub fn named(&self) -> [(&'static str, Duration); 6] {
        [
            ("conv", self.conv),
            ("rectify_lrn_pool", self.rectify_lrn_pool),
            ("upsample", self.upsample),
            ("slic", self.slic),
            ("salience", self.salience),
            ("total", self.total()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub map: SaliencyMap,
    pub segmentation: SuperpixelSegmentation,
    /// Propagated, unnormalized map of each hierarchy layer.
    pub layers: Vec<Vec<f64>>,
    pub timings: StageTimings,
    pub macs: MacCount,
}

/// A configured pipeline holding its (masked) filter bank.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: PipelineConfig,
    pub bank: FilterBank,
}

impl Detector {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let bank = config.build_bank()?;
        Ok(Self { config, bank })
    }

    pub fn with_bank(config: PipelineConfig, bank: FilterBank) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, bank })
    }

    pub fn detect(&self, img: &Image) -> Result<Detection> {
        let rgb = img.to_rgb();
        let block = &self.config.block;

        let t = Instant::now();
        let mut resp = neural::convolve(&rgb, &self.bank, block.stride)?;
        let conv = t.elapsed();

        let t = Instant::now();
        neural::rectify(&mut resp);
        if let Some(lrn) = &block.lrn {
            resp = neural::local_response_norm(&resp, lrn);
        }
        if block.pool_window > 1 || block.pool_stride > 1 {
            resp = neural::max_pool(&resp, block.pool_window, block.pool_stride);
        }
        let rectify_lrn_pool = t.elapsed();

        let t = Instant::now();
        let features = neural::upsample_features(&resp, img.width(), img.height());
        let upsample = t.elapsed();

        let t = Instant::now();
        let lab = rgb_to_lab(&rgb)?;
        let segmentation = slic(&lab, &self.config.hierarchy.slic)?;
        let slic_time = t.elapsed();

        let t = Instant::now();
        let layered = salience_layers(
            &features,
            &segmentation,
            &self.config.hierarchy,
            self.config.salience_seed(),
        )?;
        let salience = t.elapsed();

        // Zero padding makes a featureless image look busy at its borders;
        // with nothing to contrast, nothing is salient.
        let (map, layers) = if is_uniform(&rgb) {
            let n = img.pixel_count();
            (
                SaliencyMap::normalized(img.width(), img.height(), &vec![0.0; n]),
                vec![vec![0.0; n]; layered.layers.len()],
            )
        } else {
            (layered.map, layered.layers)
        };

        Ok(Detection {
            map,
            segmentation,
            layers,
            timings: StageTimings {
                conv,
                rectify_lrn_pool,
                upsample,
                slic: slic_time,
                salience,
            },
            macs: mac_count(&self.bank, img.width(), img.height(), block.stride),
        })
    }
}

fn is_uniform(img: &Image) -> bool {
    let c = img.channels();
    let data = img.data();
    data.chunks_exact(c).all(|px| px == &data[..c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.connectivity = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_bank_matches_conv1_geometry() {
        let bank = PipelineConfig::default().build_bank().unwrap();
        assert_eq!(bank.shape(), [96, 3, 11, 11]);
        assert_eq!(bank.connectivity, 0.25);
    }

    #[test]
    fn grayscale_input_is_accepted() {
        let img = Image::new(
            24,
            24,
            1,
            (0..576).map(|i| (i % 24) as f32 / 23.0).collect(),
        )
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.hierarchy.slic.target_segments = 20;
        cfg.hierarchy.atom_counts = vec![2, 4];
        let det = Detector::new(cfg).unwrap().detect(&img).unwrap();
        assert_eq!(det.map.values.len(), 576);
        assert_eq!(det.layers.len(), 2);
    }
}
