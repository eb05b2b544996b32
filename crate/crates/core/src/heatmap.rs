//! Gaussian keypoint heatmaps with occluded joints left empty, the subject
//! crop-and-resize step, and the `HMS1` binary stack format.
//!
//! Pixel `(row, col)` has its center at image coordinates `(u, v) = (col, row)`,
//! so a pixel covers `[col − ½, col + ½) × [row − ½, row + ½)`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::occlusion::OcclusionVector;

pub const HMS1_MAGIC: &[u8; 4] = b"HMS1";
pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_OUT_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("every joint is occluded; nothing to crop around")]
    NoVisibleJoints,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad HMS1 stream: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(#[from] image::ImageError),
}

/// Square crop window in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    /// Left edge (`-0.5` is the left edge of column 0).
    pub x0: f64,
    /// Top edge.
    pub y0: f64,
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMeta {
    /// `(height, width)` of the image the joints were rendered in.
    pub source_size: (usize, usize),
    pub crop: Option<CropWindow>,
    /// Joint index of each channel.
    pub joint_order: Vec<usize>,
}

/// `channels × height × width` intensities in `[0, 1]`, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub meta: HeatmapMeta,
}

impl HeatmapStack {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Per-pixel maximum over channels: one grayscale image with a blob per visible joint.
    pub fn max_projection(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0f64; n];
        for c in 0..self.channels {
            for (o, &v) in out.iter_mut().zip(self.channel(c)) {
                *o = (*o).max(v);
            }
        }
        out
    }

    /// Writes the max-projection as an 8-bit grayscale PNG.
    pub fn write_png(&self, path: &Path) -> Result<(), HeatmapError> {
        let pixels: Vec<u8> = self
            .max_projection()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .ok_or_else(|| HeatmapError::ShapeMismatch("png buffer size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// `HMS1` header `{magic, u32 N, u32 H, u32 W}` then `N·H·W` little-endian f32.
    pub fn write_hms1<W: Write>(&self, mut out: W) -> Result<(), HeatmapError> {
        out.write_all(HMS1_MAGIC)?;
        for dim in [self.channels, self.height, self.width] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_hms1<R: Read>(mut input: R) -> Result<Self, HeatmapError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != HMS1_MAGIC {
            return Err(HeatmapError::Format(format!("bad magic {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [channels, height, width] = dims;
        let count = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| HeatmapError::Format("dimensions overflow".into()))?;
        let mut raw = vec![0u8; count * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            channels,
            height,
            width,
            data,
            meta: HeatmapMeta {
                source_size: (height, width),
                crop: None,
                joint_order: (0..channels).collect(),
            },
        })
    }
}

/// One Gaussian channel per joint, `exp(−d²/2σ²)` at pixel centers; occluded
/// joints get an all-zero channel.
pub fn render_heatmaps(
    pose: &Pose2D,
    occ: &OcclusionVector,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<HeatmapStack, HeatmapError> {
    if !(sigma > 0.0) || height == 0 || width == 0 {
        return Err(HeatmapError::InvalidArgument(format!(
            "need sigma > 0 and a non-empty image, got sigma={sigma}, {height}×{width}"
        )));
    }
    if occ.len() != pose.len() {
        return Err(HeatmapError::ShapeMismatch(format!(
            "{} joints but {} occlusion labels",
            pose.len(),
            occ.len()
        )));
    }
    let plane = height * width;
    let mut data = vec![0.0; pose.len() * plane];
    let inv = 1.0 / (2.0 * sigma * sigma);
    data.par_chunks_mut(plane)
        .enumerate()
        .filter(|(j, _)| !occ.is_occluded(*j))
        .for_each(|(j, chan)| {
            let [u, v] = pose.joints[j];
            let gx: Vec<f64> = (0..width).map(|c| (-(c as f64 - u).powi(2) * inv).exp()).collect();
            for (r, row) in chan.chunks_mut(width).enumerate() {
                let gy = (-(r as f64 - v).powi(2) * inv).exp();
                for (o, g) in row.iter_mut().zip(&gx) {
                    *o = g * gy;
                }
            }
        });
    Ok(HeatmapStack {
        channels: pose.len(),
        height,
        width,
        data,
        meta: HeatmapMeta {
            source_size: (height, width),
            crop: None,
            joint_order: (0..pose.len()).collect(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropConfig {
    /// Window side relative to the longer side of the visible-joint bounding box.
    pub margin: f64,
    /// Lower bound on the window side, in source pixels.
    pub min_side: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            margin: 1.25,
            min_side: 16.0,
        }
    }
}

/// Square window around the visible joints' bounding-box center, shifted
/// (and if necessary shrunk) to stay inside the image.
pub fn crop_window(
    pose: &Pose2D,
    occ: &OcclusionVector,
    height: usize,
    width: usize,
    cfg: &CropConfig,
) -> Result<CropWindow, HeatmapError> {
    let visible: Vec<[f64; 2]> = pose
        .joints
        .iter()
        .enumerate()
        .filter(|(j, _)| !occ.is_occluded(*j))
        .map(|(_, p)| *p)
        .collect();
    if visible.is_empty() {
        return Err(HeatmapError::NoVisibleJoints);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &visible {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let side = (cfg.margin * (hi[0] - lo[0]).max(hi[1] - lo[1]))
        .max(cfg.min_side)
        .min(height.min(width) as f64);
    let clamp = |c: f64, extent: usize| (c - side / 2.0).clamp(-0.5, extent as f64 - 0.5 - side);
    Ok(CropWindow {
        x0: clamp(center[0], width),
        y0: clamp(center[1], height),
        side,
    })
}

/// Crops every channel to the subject window and bilinearly resamples it to
/// `out_size × out_size`.
pub fn center_crop_resize(
    hm: &HeatmapStack,
    pose: &Pose2D,
    occ: &OcclusionVector,
    out_size: usize,
    cfg: &CropConfig,
) -> Result<HeatmapStack, HeatmapError> {
    let window = crop_window(pose, occ, hm.height, hm.width, cfg)?;
    resize_window(hm, window, out_size)
}

pub fn resize_window(
    hm: &HeatmapStack,
    window: CropWindow,
    out_size: usize,
) -> Result<HeatmapStack, HeatmapError> {
    if out_size == 0 {
        return Err(HeatmapError::InvalidArgument("out_size must be ≥ 1".into()));
    }
    let scale = window.side / out_size as f64;
    // source sample coordinate of each output pixel center
    let xs: Vec<(usize, usize, f64)> = (0..out_size)
        .map(|i| taps(window.x0 + (i as f64 + 0.5) * scale, hm.width))
        .collect();
    let ys: Vec<(usize, usize, f64)> = (0..out_size)
        .map(|i| taps(window.y0 + (i as f64 + 0.5) * scale, hm.height))
        .collect();
    let plane = out_size * out_size;
    let mut data = vec![0.0; hm.channels * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(c, chan)| {
        let src = hm.channel(c);
        for (r, &(y0, y1, fy)) in ys.iter().enumerate() {
            let row0 = &src[y0 * hm.width..(y0 + 1) * hm.width];
            let row1 = &src[y1 * hm.width..(y1 + 1) * hm.width];
            for (col, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = row0[x0] * (1.0 - fx) + row0[x1] * fx;
                let bottom = row1[x0] * (1.0 - fx) + row1[x1] * fx;
                chan[r * out_size + col] = top * (1.0 - fy) + bottom * fy;
            }
        }
    });
    Ok(HeatmapStack {
        channels: hm.channels,
        height: out_size,
        width: out_size,
        data,
        meta: HeatmapMeta {
            source_size: hm.meta.source_size,
            crop: Some(window),
            joint_order: hm.meta.joint_order.clone(),
        },
    })
}

/// Neighboring sample indices and the weight of the upper one, clamped to the edge.
fn taps(s: f64, extent: usize) -> (usize, usize, f64) {
    let max = (extent - 1) as f64;
    let s = s.clamp(0.0, max);
    let i0 = s.floor();
    let f = s - i0;
    let i0 = i0 as usize;
    (i0, (i0 + 1).min(extent - 1), f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_joint(u: f64, v: f64) -> (Pose2D, OcclusionVector) {
        (Pose2D::new(vec![[u, v]]), OcclusionVector::zeros(1))
    }

    #[test]
    fn occluded_joints_render_empty() {
        let pose = Pose2D::new(vec![[10.0, 10.0], [20.0, 5.0]]);
        let occ = OcclusionVector::from_labels([1, 1]).unwrap();
        let hm = render_heatmaps(&pose, &occ, 32, 32, 2.0).unwrap();
        assert!(hm.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn peak_and_two_pixel_falloff() {
        let (pose, occ) = one_joint(12.0, 9.0);
        let hm = render_heatmaps(&pose, &occ, 24, 24, 2.0).unwrap();
        assert_eq!(hm.at(0, 9, 12), 1.0);
        let expected = (-0.5f64).exp();
        assert!((hm.at(0, 9, 14) - expected).abs() < 1e-15);
        assert!((hm.at(0, 11, 12) - expected).abs() < 1e-15);
        assert!((expected - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn interior_mass_is_gaussian_integral() {
        let (pose, occ) = one_joint(31.3, 30.6);
        let hm = render_heatmaps(&pose, &occ, 64, 64, 2.0).unwrap();
        let mass: f64 = hm.channel(0).iter().sum();
        let expected = 2.0 * std::f64::consts::PI * 4.0;
        assert!((mass / expected - 1.0).abs() < 0.01, "{mass}");
    }

    #[test]
    fn channels_are_independent() {
        let pose = Pose2D::new(vec![[5.0, 5.0], [20.0, 20.0]]);
        let occ = OcclusionVector::zeros(2);
        let a = render_heatmaps(&pose, &occ, 32, 32, 2.0).unwrap();
        let mut moved = pose.clone();
        moved.joints[1] = [8.0, 25.0];
        let b = render_heatmaps(&moved, &occ, 32, 32, 2.0).unwrap();
        assert_eq!(a.channel(0), b.channel(0));
    }

    #[test]
    fn integer_shift_translates_channel() {
        let (pose, occ) = one_joint(15.25, 14.5);
        let a = render_heatmaps(&pose, &occ, 40, 40, 2.0).unwrap();
        let (shifted, _) = one_joint(18.25, 12.5);
        let b = render_heatmaps(&shifted, &occ, 40, 40, 2.0).unwrap();
        for r in 5..30 {
            for c in 5..30 {
                assert_eq!(a.at(0, r, c), b.at(0, r - 2, c + 3));
            }
        }
    }

    #[test]
    fn full_window_identity_resize() {
        let pose = Pose2D::new(vec![[1.0, 2.0], [40.0, 45.0], [20.0, 10.0]]);
        let occ = OcclusionVector::zeros(3);
        let hm = render_heatmaps(&pose, &occ, 48, 48, 2.0).unwrap();
        let out = center_crop_resize(&hm, &pose, &occ, 48, &CropConfig::default()).unwrap();
        assert_eq!(
            out.meta.crop,
            Some(CropWindow {
                x0: -0.5,
                y0: -0.5,
                side: 48.0
            })
        );
        for (a, b) in out.data.iter().zip(&hm.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_peak_lands_in_output_center() {
        let (pose, occ) = one_joint(87.0, 140.0);
        let hm = render_heatmaps(&pose, &occ, 200, 240, 2.0).unwrap();
        let out = center_crop_resize(&hm, &pose, &occ, 128, &CropConfig::default()).unwrap();
        let (mut best, mut at) = (f64::MIN, 0);
        for (i, &v) in out.data.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        let (r, c) = (at / 128, at % 128);
        assert!((r as f64 - 63.5).abs() <= 1.0 && (c as f64 - 63.5).abs() <= 1.0);
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn crop_requires_a_visible_joint() {
        let pose = Pose2D::new(vec![[1.0, 2.0]]);
        let occ = OcclusionVector::from_labels([1]).unwrap();
        let hm = render_heatmaps(&pose, &occ, 8, 8, 1.0).unwrap();
        assert!(matches!(
            center_crop_resize(&hm, &pose, &occ, 4, &CropConfig::default()),
            Err(HeatmapError::NoVisibleJoints)
        ));
    }

    #[test]
    fn window_is_clamped_inside_image() {
        let pose = Pose2D::new(vec![[0.0, 0.0], [30.0, 10.0]]);
        let occ = OcclusionVector::zeros(2);
        let w = crop_window(&pose, &occ, 100, 100, &CropConfig::default()).unwrap();
        assert_eq!(w.x0, -0.5);
        assert_eq!(w.y0, -0.5);
        assert!((w.side - 37.5).abs() < 1e-12);
    }

    #[test]
    fn hms1_round_trip_is_f32_exact() {
        let pose = Pose2D::new(vec![[3.0, 4.0], [6.5, 2.25]]);
        let occ = OcclusionVector::from_labels([0, 1]).unwrap();
        let hm = render_heatmaps(&pose, &occ, 9, 11, 1.5).unwrap();
        let mut buf = Vec::new();
        hm.write_hms1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HMS1");
        assert_eq!(buf.len(), 16 + 2 * 9 * 11 * 4);
        let back = HeatmapStack::read_hms1(buf.as_slice()).unwrap();
        assert_eq!((back.channels, back.height, back.width), (2, 9, 11));
        for (a, b) in back.data.iter().zip(&hm.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(HeatmapStack::read_hms1(&b"HMS2\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn png_is_max_projection() {
        let pose = Pose2D::new(vec![[3.0, 4.0], [10.0, 12.0]]);
        let occ = OcclusionVector::zeros(2);
        let hm = render_heatmaps(&pose, &occ, 16, 16, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hm.png");
        hm.write_png(&path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (16, 16));
        assert_eq!(img.get_pixel(3, 4).0[0], 255);
        assert_eq!(img.get_pixel(10, 12).0[0], 255);
        assert_eq!(img.get_pixel(0, 15).0[0], 0);
    }
}
