//! Model input streams: body crop (RGB-b), context with the body masked out
//! (RGB-c), and stacked body optical flow (Flow-b).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{flow_files, frame_file, BodyBox, Dataset, InstanceAnnotation, FLOW_CENTER, FLOW_SCALE};
use crate::error::{Error, Result};
use crate::sampler::SamplePlan;

/// Fraction of the box size added on each side before cropping the body.
pub const CROP_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    RgbB,
    RgbC,
    FlowB,
}

impl StreamKind {
    pub fn channels(self, snippet_len: usize) -> usize {
        match self {
            StreamKind::RgbB | StreamKind::RgbC => 3,
            StreamKind::FlowB => 2 * snippet_len,
        }
    }
}

/// Per-channel normalization applied to RGB values scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for RgbNorm {
    /// ImageNet statistics used by the usual pretrained backbones.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Planar float image, layout C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Model input for one segment of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub stream: StreamKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// C×H×W values.
    pub data: Vec<f32>,
    /// Source frame indices, relative to the clip start.
    pub frames: Vec<usize>,
}

/// Horizontal and vertical flow components for one frame, 8-bit encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub x: GrayImage,
    pub y: GrayImage,
}

fn check_bounds(region: &BodyBox, width: u32, height: u32) -> Result<()> {
    if region.fits(width, height) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "region {:?} outside {width}x{height} image",
            <[u32; 4]>::from(*region)
        )))
    }
}

/// Copy of `frame` with every pixel inside `region` set to zero.
pub fn mask_body(frame: &RgbImage, region: &BodyBox) -> Result<RgbImage> {
    check_bounds(region, frame.width(), frame.height())?;
    let mut out = frame.clone();
    for y in region.y1..region.y2 {
        for x in region.x1..region.x2 {
            out.put_pixel(x, y, image::Rgb([0, 0, 0]));
        }
    }
    Ok(out)
}

/// Grows `region` by [`CROP_MARGIN`] of its size per side, clamped to the image.
pub fn expand_region(region: &BodyBox, width: u32, height: u32) -> BodyBox {
    let mx = (region.width() as f64 * CROP_MARGIN).round() as u32;
    let my = (region.height() as f64 * CROP_MARGIN).round() as u32;
    BodyBox::new(
        region.x1.saturating_sub(mx),
        region.y1.saturating_sub(my),
        (region.x2 + mx).min(width),
        (region.y2 + my).min(height),
    )
}

/// Bilinear resize of one plane with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(src: &[f32], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(out_w, width);
    let ys = axis(out_h, height);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
            let bot = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

fn rgb_planes(frame: &RgbImage, region: &BodyBox) -> Vec<Vec<f32>> {
    let n = (region.width() * region.height()) as usize;
    let mut planes: Vec<Vec<f32>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for y in region.y1..region.y2 {
        for x in region.x1..region.x2 {
            let p = frame.get_pixel(x, y);
            for (c, plane) in planes.iter_mut().enumerate() {
                plane.push(p[c] as f32);
            }
        }
    }
    planes
}

/// Exactly `region`, resized to `out_size`×`out_size`; values stay on the 0–255 scale.
pub fn crop_region(frame: &RgbImage, region: &BodyBox, out_size: usize) -> Result<FloatImage> {
    check_bounds(region, frame.width(), frame.height())?;
    let (w, h) = (region.width() as usize, region.height() as usize);
    let data = rgb_planes(frame, region)
        .iter()
        .flat_map(|p| resize_bilinear(p, w, h, out_size, out_size))
        .collect();
    Ok(FloatImage {
        channels: 3,
        height: out_size,
        width: out_size,
        data,
    })
}

/// Body crop: `region` plus the crop margin, resized to `out_size`×`out_size`.
pub fn crop_body(frame: &RgbImage, region: &BodyBox, out_size: usize) -> Result<FloatImage> {
    check_bounds(region, frame.width(), frame.height())?;
    crop_region(frame, &expand_region(region, frame.width(), frame.height()), out_size)
}

fn normalize_rgb(img: FloatImage, norm: &RgbNorm, stream: StreamKind, frames: Vec<usize>) -> Snippet {
    let n = img.height * img.width;
    let mut data = img.data;
    for c in 0..3 {
        for v in &mut data[c * n..(c + 1) * n] {
            *v = (*v / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    Snippet {
        stream,
        channels: 3,
        height: img.height,
        width: img.width,
        data,
        frames,
    }
}

/// RGB-b input for one frame.
pub fn body_snippet(
    frame: &RgbImage,
    region: &BodyBox,
    out_size: usize,
    norm: &RgbNorm,
    frame_index: usize,
) -> Result<Snippet> {
    let img = crop_body(frame, region, out_size)?;
    Ok(normalize_rgb(img, norm, StreamKind::RgbB, vec![frame_index]))
}

/// RGB-c input for one frame: the full frame with the body zeroed, resized.
pub fn context_snippet(
    frame: &RgbImage,
    region: &BodyBox,
    out_size: usize,
    norm: &RgbNorm,
    frame_index: usize,
) -> Result<Snippet> {
    let masked = mask_body(frame, region)?;
    let full = BodyBox::new(0, 0, frame.width(), frame.height());
    let img = crop_region(&masked, &full, out_size)?;
    Ok(normalize_rgb(img, norm, StreamKind::RgbC, vec![frame_index]))
}

/// Flow-b input: each flow pair cropped to the body, decoded to pixel
/// displacements and stacked as `x0, y0, x1, y1, …`.
pub fn stack_flow(flow_frames: &[FlowPair], region: &BodyBox, out_size: usize) -> Result<Snippet> {
    let first = flow_frames
        .first()
        .ok_or_else(|| Error::invalid("empty flow snippet"))?;
    let (w, h) = first.x.dimensions();
    if flow_frames
        .iter()
        .any(|f| f.x.dimensions() != (w, h) || f.y.dimensions() != (w, h))
    {
        return Err(Error::invalid("flow frames have mixed shapes"));
    }
    check_bounds(region, w, h)?;
    let crop = expand_region(region, w, h);
    let (cw, ch) = (crop.width() as usize, crop.height() as usize);
    let decode = |img: &GrayImage| -> Vec<f32> {
        let mut plane = Vec::with_capacity(cw * ch);
        for y in crop.y1..crop.y2 {
            for x in crop.x1..crop.x2 {
                plane.push((img.get_pixel(x, y)[0] as f32 - FLOW_CENTER) / FLOW_SCALE);
            }
        }
        resize_bilinear(&plane, cw, ch, out_size, out_size)
    };
    let mut data = Vec::with_capacity(2 * flow_frames.len() * out_size * out_size);
    for pair in flow_frames {
        data.extend(decode(&pair.x));
        data.extend(decode(&pair.y));
    }
    Ok(Snippet {
        stream: StreamKind::FlowB,
        channels: 2 * flow_frames.len(),
        height: out_size,
        width: out_size,
        data,
        frames: Vec::new(),
    })
}

/// Preprocessing settings shared by every stream of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSettings {
    pub out_size: usize,
    pub norm: RgbNorm,
}

/// Loads frames and flow from a dataset's on-disk layout, caching decoded images.
#[derive(Debug, Default, Clone)]
pub struct SnippetLoader {
    rgb: Arc<Mutex<HashMap<PathBuf, Arc<RgbImage>>>>,
    gray: Arc<Mutex<HashMap<PathBuf, Arc<GrayImage>>>>,
}

impl SnippetLoader {
    pub fn new() -> Self {
        Self::default()
    }

    fn load_rgb(&self, path: &Path) -> Result<Arc<RgbImage>> {
        if let Some(img) = self.rgb.lock().unwrap().get(path) {
            return Ok(img.clone());
        }
        let img = Arc::new(
            image::open(path)
                .map_err(|source| Error::Image {
                    path: path.to_path_buf(),
                    source,
                })?
                .to_rgb8(),
        );
        self.rgb.lock().unwrap().insert(path.to_path_buf(), img.clone());
        Ok(img)
    }

    fn load_gray(&self, path: &Path) -> Result<Arc<GrayImage>> {
        if let Some(img) = self.gray.lock().unwrap().get(path) {
            return Ok(img.clone());
        }
        let img = Arc::new(
            image::open(path)
                .map_err(|source| Error::Image {
                    path: path.to_path_buf(),
                    source,
                })?
                .to_luma8(),
        );
        self.gray.lock().unwrap().insert(path.to_path_buf(), img.clone());
        Ok(img)
    }

    /// One snippet per planned segment. The region of a snippet is the region of
    /// its first sampled frame.
    pub fn load(
        &self,
        dataset: &Dataset,
        inst: &InstanceAnnotation,
        plan: &SamplePlan,
        stream: StreamKind,
        settings: &StreamSettings,
    ) -> Result<Vec<Snippet>> {
        let dir = dataset.frames_dir(inst);
        plan.frame_indices()
            .into_iter()
            .map(|frames| {
                let offset = frames[0];
                let region = inst.region(offset);
                match stream {
                    StreamKind::RgbB | StreamKind::RgbC => {
                        let frame = self.load_rgb(&dir.join(frame_file(inst.frame_start + offset)))?;
                        if stream == StreamKind::RgbB {
                            body_snippet(&frame, &region, settings.out_size, &settings.norm, offset)
                        } else {
                            context_snippet(&frame, &region, settings.out_size, &settings.norm, offset)
                        }
                    }
                    StreamKind::FlowB => {
                        let pairs = frames
                            .iter()
                            .map(|&f| {
                                let (xn, yn) = flow_files(inst.frame_start + f);
                                Ok(FlowPair {
                                    x: (*self.load_gray(&dir.join(xn))?).clone(),
                                    y: (*self.load_gray(&dir.join(yn))?).clone(),
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let mut s = stack_flow(&pairs, &region, settings.out_size)?;
                        s.frames = frames;
                        Ok(s)
                    }
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    fn checkerboard(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| {
            if (x + y) % 2 == 0 {
                Rgb([255, 200, 10])
            } else {
                Rgb([3, 40, 90])
            }
        })
    }

    #[test]
    fn mask_single_pixel() {
        let img = RgbImage::from_fn(2, 2, |x, y| Rgb([1 + x as u8, 2 + y as u8, 9]));
        let out = mask_body(&img, &BodyBox::new(0, 0, 1, 1)).unwrap();
        assert_eq!(out.get_pixel(0, 0), &Rgb([0, 0, 0]));
        for (x, y) in [(1, 0), (0, 1), (1, 1)] {
            assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y));
        }
    }

    #[test]
    fn mask_whole_image() {
        let img = checkerboard(5);
        let out = mask_body(&img, &BodyBox::new(0, 0, 5, 5)).unwrap();
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn mask_left_half_keeps_right_half() {
        let img = checkerboard(8);
        let out = mask_body(&img, &BodyBox::new(0, 0, 4, 8)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if x < 4 {
                    assert_eq!(out.get_pixel(x, y).0, [0, 0, 0]);
                } else {
                    assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn mask_rejects_out_of_bounds() {
        assert!(mask_body(&checkerboard(4), &BodyBox::new(2, 2, 5, 4)).is_err());
    }

    #[test]
    fn full_frame_crop_is_identity() {
        let img = RgbImage::from_fn(6, 6, |x, y| Rgb([(x * 40) as u8, (y * 30) as u8, (x * y) as u8]));
        let out = crop_body(&img, &BodyBox::new(0, 0, 6, 6), 6).unwrap();
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..6 {
                    assert_eq!(out.get(c, y, x), img.get_pixel(x as u32, y as u32)[c] as f32);
                }
            }
        }
    }

    #[test]
    fn one_pixel_crop_is_constant() {
        let img = checkerboard(8);
        let out = crop_body(&img, &BodyBox::new(3, 5, 4, 6), 7).unwrap();
        let p = img.get_pixel(3, 5);
        for c in 0..3 {
            assert!(out.plane(c).iter().all(|&v| v == p[c] as f32));
        }
    }

    #[test]
    fn bilinear_upscale_matches_hand_values() {
        // Linear ramp v = x + 4y: interior samples are exact, borders clamp.
        let src: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let out = resize_bilinear(&src, 4, 4, 8, 8);
        let at = |x: usize, y: usize| out[y * 8 + x];
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(1, 1), 1.25);
        assert_eq!(at(2, 1), 0.75 + 1.0);
        assert_eq!(at(7, 7), 15.0);
        assert_eq!(at(3, 0), 1.25);

        // Non-linear pattern: single bright pixel at (1,1) of value 16.
        let mut spike = vec![0.0f32; 16];
        spike[5] = 16.0;
        let out = resize_bilinear(&spike, 4, 4, 8, 8);
        // dst 2 -> src 0.75, dst 3 -> src 1.25.
        assert_eq!(out[2 * 8 + 2], 16.0 * 0.75 * 0.75);
        assert_eq!(out[3 * 8 + 3], 16.0 * 0.75 * 0.75);
        assert_eq!(out[2 * 8 + 3], 16.0 * 0.75 * 0.75);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn expand_adds_margin_and_clamps() {
        assert_eq!(expand_region(&BodyBox::new(10, 10, 20, 30), 100, 100), BodyBox::new(9, 8, 21, 32));
        assert_eq!(expand_region(&BodyBox::new(0, 0, 10, 10), 10, 10), BodyBox::new(0, 0, 10, 10));
    }

    fn flow(w: u32, vx: u8, vy: u8) -> FlowPair {
        FlowPair {
            x: GrayImage::from_pixel(w, w, Luma([vx])),
            y: GrayImage::from_pixel(w, w, Luma([vy])),
        }
    }

    #[test]
    fn flow_stack_shapes_and_values() {
        let frames: Vec<FlowPair> = (0..5).map(|_| flow(16, 128, 128)).collect();
        let s = stack_flow(&frames, &BodyBox::new(2, 2, 10, 12), 8).unwrap();
        assert_eq!(s.channels, 10);
        assert!(s.data.iter().all(|&v| v == 0.0));

        let s = stack_flow(&[flow(16, 160, 112)], &BodyBox::new(0, 0, 16, 16), 4).unwrap();
        assert!(s.data[..16].iter().all(|&v| v == 2.0));
        assert!(s.data[16..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn flow_rejects_mixed_shapes() {
        let frames = vec![flow(16, 128, 128), flow(8, 128, 128)];
        assert!(stack_flow(&frames, &BodyBox::new(0, 0, 4, 4), 4).is_err());
    }

    #[test]
    fn context_snippet_zeroes_body_before_normalizing() {
        let img = checkerboard(8);
        let norm = RgbNorm::default();
        let s = context_snippet(&img, &BodyBox::new(0, 0, 8, 8), 8, &norm, 0).unwrap();
        for c in 0..3 {
            let want = -norm.mean[c] / norm.std[c];
            assert!(s.data[c * 64..(c + 1) * 64].iter().all(|&v| (v - want).abs() < 1e-6));
        }
    }
}
