//! Seeded synthetic dataset: one low-contrast shape per image over a noisy
//! textured background, one shape family per class.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppm::encode_ppm;
use crate::{Error, Result};

/// Shape families in class order.
pub const SHAPES: [&str; 6] = ["disk", "bar", "cross", "ring", "triangle", "square"];

fn inside(shape: &str, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        "disk" => dx * dx + dy * dy <= r * r,
        "bar" => ax <= r && ay <= 0.3 * r,
        "cross" => (ax <= 0.25 * r && ay <= r) || (ay <= 0.25 * r && ax <= r),
        "ring" => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= 0.55 * r
        }
        "triangle" => dy >= -r && dy <= r && ax <= 0.5 * (dy + r),
        "square" => ax <= 0.8 * r && ay <= 0.8 * r,
        _ => false,
    }
}

/// Renders one `size x size` RGB image of `shape`.
pub fn render(shape: &str, size: usize, rng: &mut impl Rng) -> Vec<u8> {
    let s = size as f32;
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let contrast: f32 = rng.random_range(0.22..0.32);
    let r = s * rng.random_range(0.22..0.32);
    let margin = r + 1.0;
    let cx = rng.random_range(margin..(s - margin).max(margin + 1e-3));
    let cy = rng.random_range(margin..(s - margin).max(margin + 1e-3));
    // coarse blotches make the texture less uniform than white noise
    let cells = 4usize;
    let blotch: Vec<f32> = (0..cells * cells).map(|_| rng.random_range(-0.08..0.08)).collect();
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let cell = (y * cells / size) * cells + x * cells / size;
            let on = inside(shape, x as f32 + 0.5 - cx, y as f32 + 0.5 - cy, r);
            for b in base {
                let noise: f32 = rng.random_range(-0.1..0.1);
                let v = b + blotch[cell] + noise + if on { contrast } else { 0.0 };
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Writes `root/<shape>/<shape>_<i>.ppm` for the first `classes` shape
/// families. The same arguments always produce byte-identical files.
pub fn generate_synthetic(root: impl AsRef<Path>, classes: usize, per_class: usize, size: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    if classes < 2 || classes > SHAPES.len() {
        return Err(Error::Config(format!(
            "class count must be between 2 and {}, got {classes}",
            SHAPES.len()
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be positive".into()));
    }
    if size < 8 {
        return Err(Error::Config(format!("image size must be at least 8, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for shape in &SHAPES[..classes] {
        let dir = root.join(shape);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let rgb = render(shape, size, &mut rng);
            let path = dir.join(format!("{shape}_{i:04}.ppm"));
            fs::write(&path, encode_ppm(size, size, &rgb)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::load_image_folder;

    fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        for shape in SHAPES {
            let dir = root.join(shape);
            if let Ok(rd) = fs::read_dir(&dir) {
                for e in rd {
                    let p = e.unwrap().path();
                    files.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn counts_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(dir.path(), 4, 16, 32, 1).unwrap();
        let ds = load_image_folder(dir.path(), [32, 32]).unwrap();
        assert_eq!(ds.len(), 64);
        assert_eq!(ds.num_classes(), 4);
        assert_eq!(snapshot(dir.path()).len(), 64);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(a.path(), 3, 4, 16, 9).unwrap();
        generate_synthetic(b.path(), 3, 4, 16, 9).unwrap();
        generate_synthetic(c.path(), 3, 4, 16, 10).unwrap();
        assert_eq!(snapshot(a.path()), snapshot(b.path()));
        assert_ne!(snapshot(a.path()), snapshot(c.path()));
    }

    #[test]
    fn argument_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_synthetic(dir.path(), 4, 0, 32, 0).is_err());
        assert!(generate_synthetic(dir.path(), 1, 4, 32, 0).is_err());
        assert!(generate_synthetic(dir.path(), 7, 4, 32, 0).is_err());
    }

    #[test]
    fn shapes_are_distinct_masks() {
        let masks: Vec<Vec<bool>> = SHAPES
            .iter()
            .map(|s| {
                (0..400)
                    .map(|i| inside(s, (i % 20) as f32 - 9.5, (i / 20) as f32 - 9.5, 9.0))
                    .collect()
            })
            .collect();
        for i in 0..masks.len() {
            assert!(masks[i].iter().any(|&b| b));
            for j in i + 1..masks.len() {
                assert_ne!(masks[i], masks[j], "{} vs {}", SHAPES[i], SHAPES[j]);
            }
        }
    }
}
