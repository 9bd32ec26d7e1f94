//! Conversions between image tensors and 8-bit RGBA images, PNG encoding
//! and GIF animations.
//!
//! Four-channel tensors hold premultiplied RGBA in `[0, 1]`; three-channel
//! tensors hold opaque RGB.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, ImageFormat, Rgba, RgbaImage};
use ncam_autodiff::Tensor;

use crate::error::{NcamError, Result};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tensor (V, H, W) → 8-bit straight-alpha RGBA.
pub fn tensor_to_rgba8(t: &Tensor<f32>) -> Result<RgbaImage> {
    let s = t.shape();
    if s.len() != 3 || !(s[0] == 3 || s[0] == 4) {
        return Err(NcamError::Precondition(format!(
            "expected a (3|4, H, W) image tensor, got {s:?}"
        )));
    }
    let (v, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let d = t.data();
    Ok(RgbaImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        if v == 3 {
            return Rgba([quantize(d[i]), quantize(d[plane + i]), quantize(d[2 * plane + i]), 255]);
        }
        let a = d[3 * plane + i].clamp(0.0, 1.0);
        let a8 = quantize(a);
        if a8 == 0 {
            return Rgba([0, 0, 0, 0]);
        }
        let un = |c: f32| quantize(c / a);
        Rgba([un(d[i]), un(d[plane + i]), un(d[2 * plane + i]), a8])
    }))
}

/// 8-bit straight-alpha RGBA → tensor with `visible` channels. RGB
/// tensors drop the alpha channel.
pub fn rgba8_to_tensor(img: &RgbaImage, visible: usize) -> Result<Tensor<f32>> {
    if visible != 3 && visible != 4 {
        return Err(NcamError::Precondition(format!("visible channels must be 3 or 4, got {visible}")));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut t = Tensor::zeros(&[visible, h, w]);
    let d = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        let a = if visible == 4 { px[3] as f32 / 255.0 } else { 1.0 };
        for c in 0..3 {
            d[c * plane + i] = px[c] as f32 / 255.0 * a;
        }
        if visible == 4 {
            d[3 * plane + i] = a;
        }
    }
    Ok(t)
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgba8())
}

pub fn tensor_to_png(t: &Tensor<f32>) -> Result<Vec<u8>> {
    encode_png(&tensor_to_rgba8(t)?)
}

pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    tensor_to_rgba8(t)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Straight RGBA composited over white, fully opaque.
fn over_white(img: &RgbaImage) -> RgbaImage {
    let mut out = img.clone();
    for px in out.pixels_mut() {
        let a = px[3] as f32 / 255.0;
        for c in 0..3 {
            px[c] = (px[c] as f32 * a + 255.0 * (1.0 - a)).round() as u8;
        }
        px[3] = 255;
    }
    out
}

/// Writes an endlessly looping animation; frames are composited over white
/// since GIF has no partial transparency.
pub fn save_gif(path: &Path, frames: &[Tensor<f32>], frame_ms: u32) -> Result<()> {
    if frames.is_empty() {
        return Err(NcamError::Precondition("an animation needs at least one frame".into()));
    }
    let file = File::create(path).map_err(|e| NcamError::io(path, e))?;
    let mut enc = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    enc.set_repeat(Repeat::Infinite)?;
    for f in frames {
        let img = over_white(&tensor_to_rgba8(f)?);
        enc.encode_frame(Frame::from_parts(img, 0, 0, Delay::from_numer_denom_ms(frame_ms, 1)))?;
    }
    Ok(())
}
