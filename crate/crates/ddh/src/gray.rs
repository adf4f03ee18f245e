//! Grayscale image helpers shared by the ROI and dataset modules:
//! bilinear sampling with pixel centers at half-integer coordinates,
//! resizing, and PNG/BMP decode/encode.
//!
//! Images are rank-2 tensors [height, width] with values in [0, 1].
//! RGB sources convert with luminance weights (0.299, 0.587, 0.114).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Bilinear sample at continuous position (x, y), where pixel (row r,
/// col c) is centered at x = c + 0.5, y = r + 0.5. Returns `None` when
/// the position needs data outside the image.
pub fn bilinear_at(image: &Tensor, x: f64, y: f64) -> Option<f64> {
    let h = image.dim(0);
    let w = image.dim(1);
    let fx = x - 0.5;
    let fy = y - 0.5;
    if fx < 0.0 || fy < 0.0 || fx > (w - 1) as f64 || fy > (h - 1) as f64 {
        return None;
    }
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let data = image.data();
    let v00 = data[y0 * w + x0];
    let v01 = data[y0 * w + x1];
    let v10 = data[y1 * w + x0];
    let v11 = data[y1 * w + x1];
    let top = v00 * (1.0 - tx) + v01 * tx;
    let bot = v10 * (1.0 - tx) + v11 * tx;
    Some(top * (1.0 - ty) + bot * ty)
}

/// Bilinear resize to `out_h` x `out_w`.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if image.rank() != 2 {
        return Err(Error::Input(format!(
            "resize expects a rank-2 image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.dim(0), image.dim(1));
    if h == out_h && w == out_w {
        return Ok(image.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        let y = ((r as f64 + 0.5) * sy).clamp(0.5, h as f64 - 0.5);
        for c in 0..out_w {
            let x = ((c as f64 + 0.5) * sx).clamp(0.5, w as f64 - 0.5);
            out[r * out_w + c] = bilinear_at(image, x, y).expect("clamped sample in range");
        }
    }
    Tensor::from_vec(vec![out_h, out_w], out)
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Decodes a PNG or BMP file to a grayscale image in [0, 1].
pub fn decode_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Data(format!("empty image {}", path.display())));
    }
    let mut data = vec![0.0f64; h * w];
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                data[i] = p.0[0] as f64 / 255.0;
            }
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                data[i] = p.0[0] as f64 / 255.0;
            }
        }
        image::DynamicImage::ImageRgb8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                data[i] = (LUMA[0] * p.0[0] as f64 + LUMA[1] * p.0[1] as f64 + LUMA[2] * p.0[2] as f64)
                    / 255.0;
            }
        }
        image::DynamicImage::ImageRgba8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                data[i] = (LUMA[0] * p.0[0] as f64 + LUMA[1] * p.0[1] as f64 + LUMA[2] * p.0[2] as f64)
                    / 255.0;
            }
        }
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported pixel format {:?} (8-bit gray or RGB expected)",
                path.display(),
                other.color()
            )));
        }
    }
    Tensor::from_vec(vec![h, w], data)
}

/// Writes a [0, 1] grayscale image as an 8-bit PNG.
pub fn encode_png(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if image.rank() != 2 {
        return Err(Error::Input(format!(
            "encode expects a rank-2 image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.dim(0), image.dim(1));
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: image::GrayImage = image::ImageBuffer::from_raw(w as u32, h as u32, bytes)
        .expect("buffer sized to image");
    buf.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers() {
        let img = Tensor::from_vec(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_at(&img, 0.5, 0.5), Some(0.0));
        assert_eq!(bilinear_at(&img, 1.5, 0.5), Some(1.0));
        assert_eq!(bilinear_at(&img, 0.5, 1.5), Some(2.0));
        // midpoint between all four centers
        assert_eq!(bilinear_at(&img, 1.0, 1.0), Some(1.5));
        // outside the interpolable region
        assert_eq!(bilinear_at(&img, 0.4, 0.5), None);
        assert_eq!(bilinear_at(&img, 1.61, 1.5), None);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Tensor::from_vec(vec![3, 3], vec![0.5; 9]).unwrap();
        let same = resize(&img, 3, 3).unwrap();
        assert_eq!(same.data(), img.data());
        let up = resize(&img, 7, 5).unwrap();
        assert_eq!(up.shape(), &[7, 5]);
        assert!(up.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn png_roundtrip_exact_for_8bit_levels() {
        let img = Tensor::from_vec(
            vec![4, 4],
            (0..16).map(|v| (v * 17) as f64 / 255.0).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        encode_png(&img, &p).unwrap();
        let back = decode_gray(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"this is not a png").unwrap();
        let err = decode_gray(&p).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }
}
