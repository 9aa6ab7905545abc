//! SLIC superpixels over a CIELAB image.
//!
//! Centres are seeded on a regular grid (no randomness), refined by local
//! k-means in `(L, a, b, x, y)`, and a final pass folds every disconnected
//! fragment of a label into its largest 4-adjacent neighbour.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{NerdError, Result};
use crate::imaging::{save_gray16, LabImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub target_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            target_segments: 300,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Pixel-to-element labelling with compact labels `0..count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelSegmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<usize>,
    pub count: usize,
    pub sizes: Vec<usize>,
}

impl SuperpixelSegmentation {
    /// Wraps an arbitrary labelling, renumbering labels to `0..count` in
    /// first-appearance order. Connectivity is not checked.
    pub fn from_labels(width: usize, height: usize, labels: &[usize]) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(NerdError::DimensionMismatch(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = remap.len();
            out.push(*remap.entry(l).or_insert(next));
        }
        let count = remap.len();
        let mut sizes = vec![0; count];
        for &l in &out {
            sizes[l] += 1;
        }
        Ok(Self {
            width,
            height,
            labels: out,
            count,
            sizes,
        })
    }

    /// Pixel indices of every element.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.count];
        for (k, &l) in self.labels.iter().enumerate() {
            m[l].push(k);
        }
        m
    }

    /// True when every element is a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let comps = connected_components(&self.labels, self.width, self.height);
        let mut seen = vec![usize::MAX; self.count];
        for (k, &c) in comps.iter().enumerate() {
            let l = self.labels[k];
            if seen[l] == usize::MAX {
                seen[l] = c;
            } else if seen[l] != c {
                return false;
            }
        }
        true
    }

    /// Debug dump of the label map as a 16-bit PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let vals: Vec<u16> = self
            .labels
            .iter()
            .map(|&l| l.min(u16::MAX as usize) as u16)
            .collect();
        save_gray16(&vals, self.width, self.height, path)
    }
}

#[derive(Debug, Clone, Copy)]
struct Centre {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn grid_centres(img: &LabImage, target: usize) -> (Vec<Centre>, f64) {
    let (w, h) = (img.width as f64, img.height as f64);
    let step = (w * h / target as f64).sqrt();
    let nx = ((w / step).round() as usize).clamp(1, img.width);
    let ny = ((h / step).round() as usize).clamp(1, img.height);
    let (dx, dy) = (w / nx as f64, h / ny as f64);
    let mut centres = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * dx - 0.5;
            let y = (j as f64 + 0.5) * dy - 0.5;
            let px = (x.round() as usize).min(img.width - 1);
            let py = (y.round() as usize).min(img.height - 1);
            centres.push(Centre {
                lab: img.get(px, py),
                x,
                y,
            });
        }
    }
    // Search radius covers the actual grid spacing, which rounding can make
    // slightly larger than `step`.
    (centres, step.max(dx).max(dy))
}

/// SLIC superpixels with grid seeding at spacing `S = sqrt(wh / target)`,
/// distance `d_lab^2 + (compactness / S)^2 d_xy^2` and a `2S x 2S` search
/// window. Ties go to the lower centre index.
pub fn slic(img: &LabImage, params: &SlicParams) -> Result<SuperpixelSegmentation> {
    let n = img.width * img.height;
    if params.target_segments == 0 || params.target_segments > n {
        return Err(NerdError::InvalidArgument(format!(
            "target superpixel count {} must be in 1..={n}",
            params.target_segments
        )));
    }
    if params.iterations == 0 {
        return Err(NerdError::InvalidArgument(
            "SLIC needs >= 1 iteration".into(),
        ));
    }
    let (w, h) = (img.width, img.height);
    let step = (n as f64 / params.target_segments as f64).sqrt();
    let (mut centres, radius) = grid_centres(img, params.target_segments);
    let spatial = (params.compactness / step).powi(2);

    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.iterations {
        labels.fill(usize::MAX);
        dist.fill(f64::INFINITY);
        for (ci, c) in centres.iter().enumerate() {
            let x0 = (c.x - radius).floor().max(0.0) as usize;
            let x1 = ((c.x + radius).ceil() as usize).min(w - 1);
            let y0 = (c.y - radius).floor().max(0.0) as usize;
            let y1 = ((c.y + radius).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let k = y * w + x;
                    let p = img.data[k];
                    let dc = (p[0] - c.lab[0]).powi(2)
                        + (p[1] - c.lab[1]).powi(2)
                        + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + spatial * ds;
                    if d < dist[k] {
                        dist[k] = d;
                        labels[k] = ci;
                    }
                }
            }
        }
        assign_unreached(img, &centres, spatial, &mut labels);

        let mut sums = vec![[0.0f64; 6]; centres.len()];
        for (k, &l) in labels.iter().enumerate() {
            let p = img.data[k];
            let s = &mut sums[l];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (k % w) as f64;
            s[4] += (k / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centres.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.x = s[3] / s[5];
                c.y = s[4] / s[5];
            }
        }
    }
    enforce_connectivity(&mut labels, w, h);
    SuperpixelSegmentation::from_labels(w, h, &labels)
}

fn assign_unreached(img: &LabImage, centres: &[Centre], spatial: f64, labels: &mut [usize]) {
    let w = img.width;
    for (k, label) in labels.iter_mut().enumerate() {
        if *label != usize::MAX {
            continue;
        }
        let p = img.data[k];
        let (x, y) = ((k % w) as f64, (k / w) as f64);
        let mut best = (f64::INFINITY, 0);
        for (ci, c) in centres.iter().enumerate() {
            let d = (p[0] - c.lab[0]).powi(2)
                + (p[1] - c.lab[1]).powi(2)
                + (p[2] - c.lab[2]).powi(2)
                + spatial * ((x - c.x).powi(2) + (y - c.y).powi(2));
            if d < best.0 {
                best = (d, ci);
            }
        }
        *label = best.1;
    }
}

fn neighbours(k: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (k % w, k / w);
    [
        (x > 0).then(|| k - 1),
        (x + 1 < w).then(|| k + 1),
        (y > 0).then(|| k - w),
        (y + 1 < h).then(|| k + w),
    ]
    .into_iter()
    .flatten()
}

/// Component id per pixel (4-connectivity over equal labels), numbered in
/// scan order.
fn connected_components(labels: &[usize], w: usize, h: usize) -> Vec<usize> {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            for nb in neighbours(k, w, h) {
                if comp[nb] == usize::MAX && labels[nb] == labels[start] {
                    comp[nb] = next;
                    queue.push_back(nb);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Keeps the largest component of each label and merges every other
/// fragment into the largest label adjacent to it.
fn enforce_connectivity(labels: &mut [usize], w: usize, h: usize) {
    loop {
        let comp = connected_components(labels, w, h);
        let ncomp = comp.iter().max().map_or(0, |m| m + 1);
        let mut comp_size = vec![0usize; ncomp];
        let mut comp_label = vec![0usize; ncomp];
        let mut comp_first = vec![usize::MAX; ncomp];
        for (k, &c) in comp.iter().enumerate() {
            comp_size[c] += 1;
            comp_label[c] = labels[k];
            comp_first[c] = comp_first[c].min(k);
        }
        let nlabels = labels.iter().max().map_or(0, |m| m + 1);
        let mut main = vec![usize::MAX; nlabels];
        for c in 0..ncomp {
            let l = comp_label[c];
            if main[l] == usize::MAX || comp_size[c] > comp_size[main[l]] {
                main[l] = c;
            }
        }
        let orphans: Vec<usize> = (0..ncomp).filter(|&c| main[comp_label[c]] != c).collect();
        if orphans.is_empty() {
            return;
        }
        let mut label_size = vec![0usize; nlabels];
        for &l in labels.iter() {
            label_size[l] += 1;
        }
        let mut members = vec![Vec::new(); ncomp];
        for (k, &c) in comp.iter().enumerate() {
            members[c].push(k);
        }
        let mut changed = false;
        for c in orphans {
            let own = comp_label[c];
            let mut best: Option<usize> = None;
            for &k in &members[c] {
                for nb in neighbours(k, w, h) {
                    let l = labels[nb];
                    if l == own || comp[nb] == c {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some(b) => {
                            label_size[l] > label_size[b]
                                || (label_size[l] == label_size[b] && l < b)
                        }
                    };
                    if better {
                        best = Some(l);
                    }
                }
            }
            if let Some(target) = best {
                for &k in &members[c] {
                    labels[k] = target;
                }
                label_size[own] -= members[c].len();
                label_size[target] += members[c].len();
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{rgb_to_lab, Image};

    fn lab(w: usize, h: usize, f: impl FnMut(usize, usize) -> [f32; 3]) -> LabImage {
        rgb_to_lab(&Image::from_rgb_fn(w, h, f).unwrap()).unwrap()
    }

    #[test]
    fn uniform_image_splits_into_quadrants() {
        let img = lab(10, 10, |_, _| [0.4, 0.5, 0.6]);
        let seg = slic(
            &img,
            &SlicParams {
                target_segments: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seg.count, 4);
        for &z in &seg.sizes {
            assert!((15..=35).contains(&z), "{:?}", seg.sizes);
        }
        assert!(seg.is_connected());
    }

    #[test]
    fn target_equal_to_pixel_count_gives_singletons() {
        let img = lab(6, 5, |x, y| [(x * y % 3) as f32 / 3.0, 0.2, 0.9]);
        let seg = slic(
            &img,
            &SlicParams {
                target_segments: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seg.count, 30);
        assert!(seg.sizes.iter().all(|&z| z == 1));
    }

    #[test]
    fn halves_split_on_colour_edge() {
        let (w, h) = (20, 10);
        let img = lab(w, h, |x, _| if x < w / 2 { [0.0; 3] } else { [1.0; 3] });
        let seg = slic(
            &img,
            &SlicParams {
                target_segments: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seg.count, 2);
        // Brute-force 2-means oracle in Labxy: the optimal split of two flat
        // halves is the colour edge itself, so every pixel's label must agree
        // with its half.
        let left = seg.labels[0];
        let mut boundary = 0;
        let mut on_edge = 0;
        for y in 0..h {
            for x in 0..w - 1 {
                let (a, b) = (seg.labels[y * w + x], seg.labels[y * w + x + 1]);
                if a != b {
                    boundary += 1;
                    if (x + 1).abs_diff(w / 2) <= 1 {
                        on_edge += 1;
                    }
                }
            }
            assert_eq!(seg.labels[y * w], left);
        }
        assert!(boundary > 0);
        assert!(on_edge as f64 / boundary as f64 >= 0.95);
    }

    #[test]
    fn count_stays_near_target_and_connected() {
        let img = lab(64, 48, |x, y| {
            let v = ((x / 7 + y / 5) % 3) as f32 / 2.0;
            [v, 1.0 - v, (x as f32 / 63.0)]
        });
        for target in [16, 50, 120, 300] {
            let seg = slic(
                &img,
                &SlicParams {
                    target_segments: target,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                seg.count * 2 >= target && seg.count <= 2 * target,
                "{target}: {}",
                seg.count
            );
            assert!(seg.is_connected());
            assert_eq!(seg.sizes.iter().sum::<usize>(), 64 * 48);
        }
    }

    #[test]
    fn deterministic() {
        let img = lab(32, 32, |x, y| [((x ^ y) & 7) as f32 / 7.0, 0.3, 0.6]);
        let p = SlicParams {
            target_segments: 20,
            ..Default::default()
        };
        assert_eq!(slic(&img, &p).unwrap(), slic(&img, &p).unwrap());
    }

    #[test]
    fn rejects_bad_targets() {
        let img = lab(4, 4, |_, _| [0.5; 3]);
        assert!(slic(
            &img,
            &SlicParams {
                target_segments: 17,
                ..Default::default()
            }
        )
        .is_err());
        assert!(slic(
            &img,
            &SlicParams {
                target_segments: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(slic(
            &img,
            &SlicParams {
                iterations: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn fragments_merge_into_largest_neighbour() {
        // Label 1 has a stray pixel inside label 0's territory.
        #[rustfmt::skip]
        let mut labels = vec![
            0, 0, 0, 1, 1,
            0, 1, 0, 1, 1,
            0, 0, 0, 1, 1,
        ];
        enforce_connectivity(&mut labels, 5, 3);
        assert_eq!(labels[6], 0);
        let seg = SuperpixelSegmentation::from_labels(5, 3, &labels).unwrap();
        assert!(seg.is_connected());
        assert_eq!(seg.count, 2);
    }

    #[test]
    fn label_map_exports_as_pgm16() {
        let dir = tempfile::tempdir().unwrap();
        let seg = SuperpixelSegmentation::from_labels(2, 1, &[3, 9]).unwrap();
        let p = dir.path().join("labels.pgm");
        seg.save_pgm(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 1]);
    }
}
