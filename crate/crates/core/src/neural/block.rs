//! The first processing block: sparse convolution, half-wave rectifier,
//! cross-channel LRN and max pooling, followed by bilinear upsampling back
//! to pixel resolution.

use crate::error::{NerdError, Result};
use crate::imaging::Image;
use crate::neural::bank::FilterBank;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    /// Odd window of neighbouring channels.
    pub size: usize,
    pub k: f32,
    pub alpha: f32,
    pub beta: f32,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

/// Geometry of the processing block. Defaults follow AlexNet conv1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub stride: usize,
    /// `None` (or `alpha == 0`) skips normalization.
    pub lrn: Option<LrnParams>,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            lrn: Some(LrnParams::default()),
            pool_window: 3,
            pool_stride: 2,
        }
    }
}

impl BlockConfig {
    /// Convolution only: no normalization, 1x1 pooling.
    pub fn conv_only(stride: usize) -> Self {
        Self {
            stride,
            lrn: None,
            pool_window: 1,
            pool_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.pool_stride == 0 {
            return Err(NerdError::InvalidArgument("strides must be >= 1".into()));
        }
        if self.pool_window == 0 {
            return Err(NerdError::InvalidArgument(
                "pool window must be >= 1".into(),
            ));
        }
        if let Some(lrn) = self.lrn {
            if lrn.size % 2 == 0 {
                return Err(NerdError::InvalidArgument("LRN depth must be odd".into()));
            }
        }
        Ok(())
    }
}

/// Image-pixel position of cell centres: cell `i` sits at `origin + i * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub step: f64,
}

/// Channel-major `[channels][height][width]` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Where the cells sit in the source image; `None` means the map is
    /// assumed to span the image edge to edge.
    pub grid: Option<SampleGrid>,
}

impl ResponseMap {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Multiply-accumulate counts of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacCount {
    pub actual: u64,
    pub dense: u64,
}

pub fn conv_output_dims(
    width: usize,
    height: usize,
    bank: &FilterBank,
    stride: usize,
) -> (usize, usize) {
    let (pw, ph) = (bank.kw / 2, bank.kh / 2);
    (
        (width + 2 * pw - bank.kw) / stride + 1,
        (height + 2 * ph - bank.kh) / stride + 1,
    )
}

/// `active synapses * output positions` and `l*c*kh*kw * output positions`.
pub fn mac_count(bank: &FilterBank, width: usize, height: usize, stride: usize) -> MacCount {
    let (ow, oh) = conv_output_dims(width, height, bank, stride);
    let positions = (ow * oh) as u64;
    MacCount {
        actual: bank.active_synapses() as u64 * positions,
        dense: bank.synapse_count() as u64 * positions,
    }
}

struct Synapse {
    channel: usize,
    dy: usize,
    dx: usize,
    weight: f32,
}

fn planar(img: &Image) -> Vec<f32> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = vec![0.0; w * h * c];
    for (i, px) in img.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * w * h + i] = v;
        }
    }
    out
}

// Output indices `o` with `0 <= o*stride + d - pad < len`.
fn valid_range(len: usize, out_len: usize, stride: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > d {
        (pad - d).div_ceil(stride)
    } else {
        0
    };
    let hi_excl = if len + pad > d {
        ((len + pad - d - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi_excl.max(lo))
}

/// Zero-padded convolution using only the synapses whose mask bit is set.
/// Masked synapses never enter the inner loop.
pub fn convolve(img: &Image, bank: &FilterBank, stride: usize) -> Result<ResponseMap> {
    if img.channels() != bank.in_channels {
        return Err(NerdError::DimensionMismatch(format!(
            "image has {} channels, bank expects {}",
            img.channels(),
            bank.in_channels
        )));
    }
    if stride == 0 {
        return Err(NerdError::InvalidArgument("stride must be >= 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w < bank.kw || h < bank.kh {
        return Err(NerdError::ImageTooSmall {
            width: w,
            height: h,
            kw: bank.kw,
            kh: bank.kh,
        });
    }
    let input = planar(img);
    let (ow, oh) = conv_output_dims(w, h, bank, stride);
    let (pw, ph) = (bank.kw / 2, bank.kh / 2);
    let flen = bank.filter_len();
    let mut data = vec![0.0f32; bank.count * ow * oh];

    for (f, out) in data.chunks_exact_mut(ow * oh).enumerate() {
        out.fill(bank.biases[f]);
        let synapses = (0..flen).filter_map(|j| {
            let idx = f * flen + j;
            (bank.mask[idx] == 1).then(|| Synapse {
                channel: j / (bank.kh * bank.kw),
                dy: (j / bank.kw) % bank.kh,
                dx: j % bank.kw,
                weight: bank.weights[idx],
            })
        });
        for s in synapses {
            let plane = &input[s.channel * w * h..(s.channel + 1) * w * h];
            let (y0, y1) = valid_range(h, oh, stride, s.dy, ph);
            let (x0, x1) = valid_range(w, ow, stride, s.dx, pw);
            for oy in y0..y1 {
                let iy = oy * stride + s.dy - ph;
                let row = &plane[iy * w..(iy + 1) * w];
                let orow = &mut out[oy * ow..(oy + 1) * ow];
                for (ox, o) in orow.iter_mut().enumerate().take(x1).skip(x0) {
                    *o += s.weight * row[ox * stride + s.dx - pw];
                }
            }
        }
    }
    Ok(ResponseMap {
        channels: bank.count,
        width: ow,
        height: oh,
        data,
        grid: Some(SampleGrid {
            origin_x: (bank.kw - 1) as f64 / 2.0 - pw as f64,
            origin_y: (bank.kh - 1) as f64 / 2.0 - ph as f64,
            step: stride as f64,
        }),
    })
}

/// Half-wave rectifier. Non-positive values (including `-0.0`) become `+0.0`.
pub fn rectify(map: &mut ResponseMap) {
    for v in &mut map.data {
        if v.is_nan() || *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Cross-channel local response normalization:
/// `b_c = a_c / (k + alpha * sum_{|j-c| <= n/2} a_j^2)^beta`.
pub fn local_response_norm(map: &ResponseMap, params: &LrnParams) -> ResponseMap {
    if params.alpha == 0.0 {
        return map.clone();
    }
    let n = map.width * map.height;
    let half = params.size / 2;
    let mut out = vec![0.0f32; map.data.len()];
    let squares: Vec<f32> = map.data.iter().map(|v| v * v).collect();
    for c in 0..map.channels {
        let lo = c.saturating_sub(half);
        let hi = (c + half).min(map.channels - 1);
        for i in 0..n {
            let mut sum = 0.0f32;
            for j in lo..=hi {
                sum += squares[j * n + i];
            }
            let denom = (params.k + params.alpha * sum).powf(params.beta);
            out[c * n + i] = map.data[c * n + i] / denom;
        }
    }
    ResponseMap { data: out, ..*map }
}

fn pooled_len(len: usize, window: usize, stride: usize) -> usize {
    if len <= window {
        1
    } else {
        (len - window) / stride + 1
    }
}

/// Per-channel max pooling without padding; a window larger than the input
/// collapses to one cell.
pub fn max_pool(map: &ResponseMap, window: usize, stride: usize) -> ResponseMap {
    let ow = pooled_len(map.width, window, stride);
    let oh = pooled_len(map.height, window, stride);
    let mut data = Vec::with_capacity(map.channels * ow * oh);
    for c in 0..map.channels {
        let plane = map.plane(c);
        for oy in 0..oh {
            let ys = oy * stride;
            let ye = (ys + window).min(map.height);
            for ox in 0..ow {
                let xs = ox * stride;
                let xe = (xs + window).min(map.width);
                let mut m = f32::NEG_INFINITY;
                for y in ys..ye {
                    for &v in &plane[y * map.width + xs..y * map.width + xe] {
                        m = m.max(v);
                    }
                }
                data.push(m);
            }
        }
    }
    let grid = map.grid.map(|g| {
        let centre = (window.min(map.width).min(map.height) - 1) as f64 / 2.0;
        SampleGrid {
            origin_x: g.origin_x + g.step * centre,
            origin_y: g.origin_y + g.step * centre,
            step: g.step * stride as f64,
        }
    });
    ResponseMap {
        channels: map.channels,
        width: ow,
        height: oh,
        data,
        grid,
    }
}

/// Convolution, rectifier, LRN and pooling as one unit. The image is
/// replicated to three channels first if it is grayscale and the bank
/// expects colour.
pub fn forward_block(img: &Image, bank: &FilterBank, cfg: &BlockConfig) -> Result<ResponseMap> {
    cfg.validate()?;
    let rgb;
    let input = if img.channels() == 1 && bank.in_channels == 3 {
        rgb = img.to_rgb();
        &rgb
    } else {
        img
    };
    let mut conv = convolve(input, bank, cfg.stride)?;
    rectify(&mut conv);
    let normed = match &cfg.lrn {
        Some(p) => local_response_norm(&conv, p),
        None => conv,
    };
    if cfg.pool_window == 1 && cfg.pool_stride == 1 {
        return Ok(normed);
    }
    Ok(max_pool(&normed, cfg.pool_window, cfg.pool_stride))
}

/// Per-pixel neural responses at image resolution, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl PixelFeatures {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * dim {
            return Err(NerdError::DimensionMismatch(format!(
                "features {width}x{height}x{dim} need {} values, got {}",
                width * height * dim,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Feature vector of pixel `k` (row-major index).
    pub fn pixel(&self, k: usize) -> Vec<f32> {
        let n = self.width * self.height;
        (0..self.dim).map(|c| self.data[c * n + k]).collect()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

// Clamped source coordinate of destination pixel `dst` as (i0, i1, frac).
fn source_coord(src: f64, src_len: usize) -> (usize, usize, f32) {
    let s = src.clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

// Exact at the endpoints and for a == b.
#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear resampling of every channel to `width x height`.
///
/// When the map carries a [`SampleGrid`], each output pixel is interpolated
/// between the cells whose receptive-field centres surround it; otherwise
/// the map is stretched over the image with half-pixel centres. Pixels
/// beyond the outermost centres take the edge value.
pub fn upsample_features(responses: &ResponseMap, width: usize, height: usize) -> PixelFeatures {
    let (sw, sh) = (responses.width, responses.height);
    let xs: Vec<_>;
    let ys: Vec<_>;
    match responses.grid {
        Some(g) => {
            xs = (0..width)
                .map(|x| source_coord((x as f64 - g.origin_x) / g.step, sw))
                .collect();
            ys = (0..height)
                .map(|y| source_coord((y as f64 - g.origin_y) / g.step, sh))
                .collect();
        }
        None => {
            let fit =
                |d: usize, dl: usize, sl: usize| (d as f64 + 0.5) * sl as f64 / dl as f64 - 0.5;
            xs = (0..width)
                .map(|x| source_coord(fit(x, width, sw), sw))
                .collect();
            ys = (0..height)
                .map(|y| source_coord(fit(y, height, sh), sh))
                .collect();
        }
    }
    let mut data = Vec::with_capacity(responses.channels * width * height);
    for c in 0..responses.channels {
        let p = responses.plane(c);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(p[y0 * sw + x0], p[y0 * sw + x1], fx);
                let bot = lerp(p[y1 * sw + x0], p[y1 * sw + x1], fx);
                data.push(lerp(top, bot, fy));
            }
        }
    }
    PixelFeatures {
        width,
        height,
        dim: responses.channels,
        data,
    }
}

/// Image to per-pixel features: [`forward_block`] then [`upsample_features`].
pub fn extract_features(
    img: &Image,
    bank: &FilterBank,
    cfg: &BlockConfig,
) -> Result<PixelFeatures> {
    let low = forward_block(img, bank, cfg)?;
    Ok(upsample_features(&low, img.width(), img.height()))
}
