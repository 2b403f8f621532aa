use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Blends prediction (red) and ground truth (green) over a grayscale image;
/// agreement shows as yellow.
pub fn overlay_image(base: &Array2<f32>, predicted: &Array2<u8>, truth: Option<&Array2<u8>>) -> Result<RgbImage> {
    let (rows, cols) = base.dim();
    if predicted.dim() != (rows, cols) || truth.is_some_and(|t| t.dim() != (rows, cols)) {
        return Err(Error::Input("overlay layers differ in shape".into()));
    }
    let mut img = RgbImage::new(cols as u32, rows as u32);
    for ((r, c), &v) in base.indexed_iter() {
        let gray = (v.clamp(0.0, 1.0) * 255.0).round();
        let red = predicted[[r, c]] != 0;
        let green = truth.is_some_and(|t| t[[r, c]] != 0);
        let tint = |on: bool| -> u8 {
            if on {
                (0.5 * gray + 127.5) as u8
            } else if red || green {
                (0.5 * gray) as u8
            } else {
                gray as u8
            }
        };
        img.put_pixel(c as u32, r as u32, Rgb([tint(red), tint(green), tint(false)]));
    }
    Ok(img)
}

pub fn write_overlay(path: &Path, base: &Array2<f32>, predicted: &Array2<u8>, truth: Option<&Array2<u8>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    overlay_image(base, predicted, truth)?.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn colours() {
        let base = Array2::from_elem((1, 4), 0.0f32);
        let pred = array![[1u8, 0, 1, 0]];
        let gt = array![[0u8, 1, 1, 0]];
        let img = overlay_image(&base, &pred, Some(&gt)).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [127, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 127, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [127, 127, 0]);
        assert_eq!(img.get_pixel(3, 0).0, [0, 0, 0]);
    }

    #[test]
    fn writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.png");
        write_overlay(&path, &Array2::from_elem((4, 4), 0.5), &Array2::zeros((4, 4)), None).unwrap();
        assert!(path.exists());
    }
}
