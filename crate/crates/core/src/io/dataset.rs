//! Image/mask ingestion into `[0,1]` tensors at a fixed square resolution.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImageView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// One image (`[3,s,s]`, values in `[0,1]`) and its binary mask (`[1,s,s]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the selected samples into `([b,3,s,s], [b,1,s,s])`.
    pub fn batch(&self, ids: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let picked: Vec<&Sample> = ids.iter().map(|&i| &self.samples[i]).collect();
        stack(&picked)
    }
}

pub fn stack(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let stack_one = |get: &dyn Fn(&Sample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let shape = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * get(first).numel());
        for s in samples {
            if get(s).shape() != shape.as_slice() {
                return Err(Error::Shape(format!("sample {} has shape {:?}, batch expects {shape:?}", s.id, get(s).shape())));
            }
            data.extend_from_slice(get(s).data());
        }
        let mut full = vec![samples.len()];
        full.extend(shape);
        Tensor::from_vec(&full, data)
    };
    Ok((stack_one(&|s| &s.image)?, stack_one(&|s| &s.mask)?))
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion { path: path.to_path_buf(), reason: reason.into() }
}

fn open_8bit(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|e| ingest_err(path, e.to_string()))?;
    match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            Ok(img)
        }
        other => Err(ingest_err(path, format!("unsupported pixel format {:?}, need 8-bit gray or RGB", other.color()))),
    }
}

/// Bilinear (half-pixel) resize of a `[c,h,w]` tensor.
pub fn resize_bilinear(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let shape = x.shape().to_vec();
    let tape = Tape::disabled();
    let mut full = vec![1];
    full.extend(&shape);
    let v = tape.constant(x.clone().reshape(&full)?);
    let y = tape.bilinear_resize(&v, out_h, out_w)?;
    y.into_tensor().reshape(&[shape[0], out_h, out_w])
}

/// Nearest source index for output position `i` under half-pixel alignment.
fn nearest(i: usize, in_len: usize, out_len: usize) -> usize {
    (((i as f64 + 0.5) * in_len as f64 / out_len as f64) as usize).min(in_len - 1)
}

/// RGB `[3,h,w]` in `[0,1]`; gray images are replicated to three channels.
pub fn image_tensor(img: &DynamicImage) -> Tensor<f32> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// Binary `[1,size,size]` mask: nearest-neighbour resize, then gray ≥ 128.
pub fn mask_tensor(img: &DynamicImage, size: usize) -> Tensor<f32> {
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; size * size];
    for oy in 0..size {
        let sy = nearest(oy, h, size);
        for ox in 0..size {
            let sx = nearest(ox, w, size);
            data[oy * size + ox] = if gray.get_pixel(sx as u32, sy as u32)[0] >= 128 { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_parts(vec![1, size, size], data)
}

/// Reads an image and its mask and brings both to `img_size`².
pub fn load_sample(image: &Path, mask: &Path, img_size: usize) -> Result<Sample> {
    if img_size == 0 {
        return Err(Error::Config("img_size must be positive".into()));
    }
    let img = open_8bit(image)?;
    if !mask.exists() {
        return Err(ingest_err(mask, "mask file is missing"));
    }
    let m = open_8bit(mask)?;
    if img.dimensions() != m.dimensions() {
        return Err(ingest_err(
            mask,
            format!("mask is {:?} but image {} is {:?}", m.dimensions(), image.display(), img.dimensions()),
        ));
    }
    let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Sample { id, image: resize_bilinear(&image_tensor(&img), img_size, img_size)?, mask: mask_tensor(&m, img_size) })
}

/// Loads image `<input>` alone (for inference) as `[1,3,size,size]` plus its
/// original `(height, width)`.
pub fn load_image(path: &Path, size: usize) -> Result<(Tensor<f32>, (usize, usize))> {
    let img = open_8bit(path)?;
    let (w, h) = img.dimensions();
    let t = resize_bilinear(&image_tensor(&img), size, size)?;
    Ok((t.reshape(&[1, 3, size, size])?, (h as usize, w as usize)))
}

const IMAGE_EXTS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| ingest_err(dir, e.to_string()))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Mask for `image` inside `masks/`: same base name, any supported extension,
/// optionally with a `_segmentation` suffix.
fn find_mask(masks: &[PathBuf], image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    let alt = format!("{stem}_segmentation");
    masks
        .iter()
        .find(|m| m.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s == stem || s == alt))
        .cloned()
}

/// Loads `root/images/*` with their masks from `root/masks/`.
pub fn load_dataset(root: &Path, img_size: usize) -> Result<Dataset> {
    let images = list_images(&root.join("images"))?;
    let masks = list_images(&root.join("masks"))?;
    if images.is_empty() {
        return Err(ingest_err(&root.join("images"), "no images found"));
    }
    let pairs = images
        .into_iter()
        .map(|img| {
            let mask = find_mask(&masks, &img).ok_or_else(|| ingest_err(&img, "no matching mask in masks/"))?;
            Ok((img, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = pairs.par_iter().map(|(i, m)| load_sample(i, m, img_size)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

/// Writes a `[.., h, w]` mask (nonzero = foreground) as 8-bit 0/255 PNG.
pub fn save_mask_png(mask: &Tensor<f32>, path: &Path) -> Result<()> {
    let shape = mask.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if mask.numel() != h * w {
        return Err(Error::Shape(format!("mask must hold a single plane, got {shape:?}")));
    }
    let buf: Vec<u8> = mask.data().iter().map(|&v| if v != 0.0 { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to h*w");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| ingest_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
        image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)])).save(path).unwrap();
    }

    #[test]
    fn white_image_and_full_mask() {
        let dir = tempfile::tempdir().unwrap();
        let (i, m) = (dir.path().join("a.png"), dir.path().join("a_mask.png"));
        write_gray(&i, 10, 6, |_, _| 255);
        write_gray(&m, 10, 6, |_, _| 255);
        let s = load_sample(&i, &m, 32).unwrap();
        assert_eq!(s.image.shape(), [3, 32, 32]);
        assert!(s.image.data().iter().all(|&v| v == 1.0));
        assert!(s.mask.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let (i, m) = (dir.path().join("a.png"), dir.path().join("missing.png"));
        write_gray(&i, 4, 4, |_, _| 0);
        let err = load_sample(&i, &m, 8).unwrap_err();
        assert!(err.to_string().contains("missing.png"), "{err}");
        write_gray(&m, 5, 4, |_, _| 0);
        assert!(matches!(load_sample(&i, &m, 8), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn mask_threshold() {
        let img = DynamicImage::ImageLuma8(image::GrayImage::from_fn(2, 2, |x, _| image::Luma([if x == 0 { 127 } else { 128 }])));
        assert_eq!(mask_tensor(&img, 2).data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        for id in ["x", "y"] {
            write_gray(&dir.path().join(format!("images/{id}.png")), 8, 8, |x, _| (x * 30) as u8);
            write_gray(&dir.path().join(format!("masks/{id}_segmentation.png")), 8, 8, |x, _| if x > 3 { 255 } else { 0 });
        }
        let ds = load_dataset(dir.path(), 16).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].id, "x");
        let (xb, yb) = ds.batch(&[0, 1]).unwrap();
        assert_eq!((xb.shape(), yb.shape()), (&[2usize, 3, 16, 16][..], &[2usize, 1, 16, 16][..]));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        save_mask_png(&m, &p).unwrap();
        let back = image::open(&p).unwrap().to_luma8();
        assert_eq!(back.into_raw(), vec![0, 255, 255, 0]);
    }
}
