//! Minimal frame storage: a frame stack (one PNG with the `T` frames stacked
//! vertically) or a directory of per-frame PNGs read in file-name order.

use std::fs;
use std::path::Path;

use image::{GenericImage, GenericImageView, RgbImage};

use super::DataError;

pub fn write_frame_stack(frames: &[RgbImage], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let first = frames.first().ok_or_else(|| DataError::Argument("no frames to write".into()))?;
    let (w, h) = first.dimensions();
    let mut stack = RgbImage::new(w, h * frames.len() as u32);
    for (i, f) in frames.iter().enumerate() {
        if f.dimensions() != (w, h) {
            return Err(DataError::Image(format!("frame {i} is {:?}, expected {:?}", f.dimensions(), (w, h))));
        }
        stack.copy_from(f, 0, h * i as u32).map_err(|e| DataError::Image(e.to_string()))?;
    }
    stack.save(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
}

/// Reads `num_frames` frames from a stack file or a frame directory.
pub fn read_frames(path: impl AsRef<Path>, num_frames: usize) -> Result<Vec<RgbImage>, DataError> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| DataError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        if files.len() != num_frames {
            return Err(DataError::Image(format!(
                "{} holds {} frames, expected {num_frames}",
                path.display(),
                files.len()
            )));
        }
        return files.iter().map(|f| load_rgb(f)).collect();
    }
    let stack = load_rgb(path)?;
    if num_frames == 0 || stack.height() % num_frames as u32 != 0 {
        return Err(DataError::Image(format!(
            "stack height {} is not a multiple of {num_frames} frames",
            stack.height()
        )));
    }
    let h = stack.height() / num_frames as u32;
    Ok((0..num_frames as u32).map(|i| stack.view(0, i * h, stack.width(), h).to_image()).collect())
}

fn load_rgb(path: &Path) -> Result<RgbImage, DataError> {
    Ok(image::open(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<RgbImage> {
        (0..3u8).map(|i| RgbImage::from_fn(5, 4, |x, y| image::Rgb([i, x as u8, y as u8]))).collect()
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.png");
        write_frame_stack(&frames(), &path).unwrap();
        assert_eq!(read_frames(&path, 3).unwrap(), frames());
        assert!(read_frames(&path, 5).is_err());
    }

    #[test]
    fn frame_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (i, f) in frames().iter().enumerate() {
            f.save(dir.path().join(format!("{i:03}.png"))).unwrap();
        }
        assert_eq!(read_frames(dir.path(), 3).unwrap(), frames());
        assert!(read_frames(dir.path(), 2).is_err());
    }
}
