//! Real-image ingestion: IDX containers, PCA rank reduction, noise padding,
//! and patch formatting into the synthetic dataset layout.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Label, PatchedDataset, Provenance};
use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw image collection with pixels scaled to [0, 1].
///
/// Padded sets may carry values outside [0, 1] on the noise border; byte
/// serialization clamps back to the byte range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Image-major, then row-major within an image.
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn image_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, image: usize, row: usize, col: usize) -> f64 {
        self.pixels[image * self.image_dim() + row * self.width + col]
    }

    /// Stacks images as columns of a (height*width) x count matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.image_dim();
        DMatrix::from_fn(d, self.count, |r, i| self.pixels[i * d + r])
    }

    /// Same shape and labels, pixels replaced column-by-column from `m`.
    pub fn with_pixels_from(&self, m: &DMatrix<f64>) -> Result<ImageSet> {
        let d = self.image_dim();
        if m.nrows() != d || m.ncols() != self.count {
            return Err(Error::InvalidInput(format!(
                "matrix {}x{} does not match {} images of dim {d}",
                m.nrows(),
                m.ncols(),
                self.count
            )));
        }
        let mut pixels = Vec::with_capacity(d * self.count);
        for i in 0..self.count {
            pixels.extend(m.column(i).iter());
        }
        Ok(ImageSet {
            pixels,
            ..self.clone()
        })
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Format(format!("truncated {what} header")))?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4-byte slice")))
}

/// Parses a standard IDX image/label file pair (pre-decompressed).
pub fn parse_idx(image_file: &[u8], label_file: &[u8]) -> Result<ImageSet> {
    let magic = read_be_u32(image_file, 0, "image")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(image_file, 4, "image")? as usize;
    let height = read_be_u32(image_file, 8, "image")? as usize;
    let width = read_be_u32(image_file, 12, "image")? as usize;
    let payload = image_file.get(16..).unwrap_or(&[]);
    let expected = count * height * width;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "image payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }

    let lmagic = read_be_u32(label_file, 0, "label")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let lcount = read_be_u32(label_file, 4, "label")? as usize;
    if lcount != count {
        return Err(Error::Format(format!(
            "label count {lcount} does not match image count {count}"
        )));
    }
    let labels = label_file.get(8..).unwrap_or(&[]);
    if labels.len() != count {
        return Err(Error::Format(format!(
            "label payload has {} bytes, expected {count}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} outside 0-9")));
    }

    Ok(ImageSet {
        count,
        height,
        width,
        pixels: payload.iter().map(|&b| b as f64 / 255.0).collect(),
        labels: labels.to_vec(),
    })
}

/// Inverse of `parse_idx`; pixel values are quantized back to bytes.
pub fn serialize_idx(set: &ImageSet) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + set.pixels.len());
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(set.count as u32).to_be_bytes());
    images.extend_from_slice(&(set.height as u32).to_be_bytes());
    images.extend_from_slice(&(set.width as u32).to_be_bytes());
    images.extend(
        set.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );

    let mut labels = Vec::with_capacity(8 + set.count);
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(set.count as u32).to_be_bytes());
    labels.extend_from_slice(&set.labels);
    (images, labels)
}

/// Rank-R truncated-SVD reconstruction of a D x N column-image matrix.
/// Uncentered by default; `center` subtracts and restores per-row means.
pub fn pca_reduce(matrix: &DMatrix<f64>, r: usize, center: bool) -> Result<DMatrix<f64>> {
    let (d, n) = matrix.shape();
    let max_rank = d.min(n);
    if r < 1 || r > max_rank {
        return Err(Error::InvalidInput(format!(
            "rank {r} outside [1, {max_rank}] for a {d}x{n} matrix"
        )));
    }
    let mut work = matrix.clone();
    let mut means = None;
    if center {
        let mu: Vec<f64> = (0..d).map(|row| work.row(row).mean()).collect();
        for row in 0..d {
            for col in 0..n {
                work[(row, col)] -= mu[row];
            }
        }
        means = Some(mu);
    }

    let svd = work.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
    });

    let mut u_r = DMatrix::zeros(d, r);
    let mut sv_t = DMatrix::zeros(r, n);
    for (slot, &idx) in order.iter().take(r).enumerate() {
        u_r.set_column(slot, &u.column(idx));
        sv_t.row_mut(slot)
            .copy_from(&(v_t.row(idx) * svd.singular_values[idx]));
    }
    let mut rec = u_r * sv_t;

    if let Some(mu) = means {
        for row in 0..d {
            for col in 0..n {
                rec[(row, col)] += mu[row];
            }
        }
    }
    Ok(rec)
}

/// Surrounds each image with a `pad`-wide border of N(0, sigma^2) noise.
/// Draw order is image-major then row-major, so output is seed-deterministic;
/// sigma = 0 keeps the border exactly zero.
pub fn pad_with_noise(images: &ImageSet, pad: usize, sigma: f64, seed: u64) -> ImageSet {
    let (h, w) = (images.height, images.width);
    let (h2, w2) = (h + 2 * pad, w + 2 * pad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(images.count * h2 * w2);
    for i in 0..images.count {
        for r in 0..h2 {
            for c in 0..w2 {
                let inside =
                    r >= pad && r < pad + h && c >= pad && c < pad + w;
                if inside {
                    pixels.push(images.pixel(i, r - pad, c - pad));
                } else {
                    let g: f64 = rng.sample(StandardNormal);
                    pixels.push(sigma * g);
                }
            }
        }
    }
    ImageSet {
        count: images.count,
        height: h2,
        width: w2,
        pixels,
        labels: images.labels.clone(),
    }
}

/// Splits each image into a rows x cols grid of non-overlapping blocks; each
/// block is flattened row-major into one patch column of the returned
/// d x (rows*cols) matrix. Patch order is row-major over the grid.
pub fn to_patches(images: &ImageSet, grid: (usize, usize)) -> Result<Vec<DMatrix<f64>>> {
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || images.height % gr != 0 || images.width % gc != 0 {
        return Err(Error::Geometry(format!(
            "grid {gr}x{gc} does not divide {}x{}",
            images.height, images.width
        )));
    }
    let (bh, bw) = (images.height / gr, images.width / gc);
    let d = bh * bw;
    let p = gr * gc;
    let mut out = Vec::with_capacity(images.count);
    for i in 0..images.count {
        let mut block = DMatrix::zeros(d, p);
        for br in 0..gr {
            for bc in 0..gc {
                let patch = br * gc + bc;
                for rr in 0..bh {
                    for cc in 0..bw {
                        block[(rr * bw + cc, patch)] =
                            images.pixel(i, br * bh + rr, bc * bw + cc);
                    }
                }
            }
        }
        out.push(block);
    }
    Ok(out)
}

/// Reassembles `to_patches` output back into images; exact inverse.
pub fn merge_patches(
    blocks: &[DMatrix<f64>],
    labels: &[u8],
    grid: (usize, usize),
    height: usize,
    width: usize,
) -> Result<ImageSet> {
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || height % gr != 0 || width % gc != 0 {
        return Err(Error::Geometry(format!(
            "grid {gr}x{gc} does not divide {height}x{width}"
        )));
    }
    if blocks.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} blocks vs {} labels",
            blocks.len(),
            labels.len()
        )));
    }
    let (bh, bw) = (height / gr, width / gc);
    let (d, p) = (bh * bw, gr * gc);
    let mut pixels = vec![0.0; blocks.len() * height * width];
    for (i, block) in blocks.iter().enumerate() {
        if block.shape() != (d, p) {
            return Err(Error::InvalidInput(format!(
                "block {i} is {}x{}, expected {d}x{p}",
                block.nrows(),
                block.ncols()
            )));
        }
        for br in 0..gr {
            for bc in 0..gc {
                let patch = br * gc + bc;
                for rr in 0..bh {
                    for cc in 0..bw {
                        pixels[i * height * width
                            + (br * bh + rr) * width
                            + (bc * bw + cc)] = block[(rr * bw + cc, patch)];
                    }
                }
            }
        }
    }
    Ok(ImageSet {
        count: blocks.len(),
        height,
        width,
        pixels,
        labels: labels.to_vec(),
    })
}

/// Keeps only two digit classes, in original order.
pub fn select_classes(images: &ImageSet, classes: (u8, u8)) -> Result<ImageSet> {
    let (a, b) = classes;
    if a == b {
        return Err(Error::InvalidInput(format!("classes must differ, got {a}")));
    }
    let d = images.image_dim();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..images.count {
        let l = images.labels[i];
        if l == a || l == b {
            pixels.extend_from_slice(&images.pixels[i * d..(i + 1) * d]);
            labels.push(l);
        }
    }
    Ok(ImageSet {
        count: labels.len(),
        height: images.height,
        width: images.width,
        pixels,
        labels,
    })
}

/// Converts a two-class image set into the patched layout used everywhere
/// else. The first class maps to +1. Object-patch structure is unknown for
/// real data, so object sets, assignments, and the noise index stay empty.
pub fn to_patched_dataset(
    images: &ImageSet,
    grid: (usize, usize),
    classes: (u8, u8),
    sigma_noise: f64,
    source: &str,
) -> Result<PatchedDataset> {
    let (a, b) = classes;
    if a == b {
        return Err(Error::InvalidInput(format!("classes must differ, got {a}")));
    }
    let mut labels = Vec::with_capacity(images.count);
    for &l in &images.labels {
        if l == a {
            labels.push(Label::Plus);
        } else if l == b {
            labels.push(Label::Minus);
        } else {
            return Err(Error::InvalidInput(format!(
                "label {l} present; select classes {a}/{b} first"
            )));
        }
    }
    let inputs = to_patches(images, grid)?;
    let (d, p) = inputs
        .first()
        .map(|m| m.shape())
        .ok_or_else(|| Error::InvalidInput("empty image set".into()))?;
    Ok(PatchedDataset {
        d,
        n: images.count,
        p,
        k: 0,
        sigma_noise,
        labels,
        object_sets: vec![Vec::new(); images.count],
        assignments: vec![Vec::new(); images.count],
        noise_index: Vec::new(),
        inputs,
        provenance: Provenance::External {
            source: source.to_string(),
        },
    })
}

/// Deterministic two-class stand-in for the real digit files: class 0 draws
/// an annulus, class 1 a vertical bar, both over light pixel noise. Pixels
/// are quantized to the byte grid so IDX round trips are exact.
pub fn synthetic_fixture(count: usize, height: usize, width: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * height * width);
    let mut labels = Vec::with_capacity(count);
    let (hc, wc) = (height as f64 / 2.0, width as f64 / 2.0);
    let radius = height.min(width) as f64 / 3.5;
    for _ in 0..count {
        let label = u8::from(rng.gen_bool(0.5));
        labels.push(label);
        for r in 0..height {
            for c in 0..width {
                let mut v: f64 = rng.gen_range(0.0..0.12);
                if label == 0 {
                    let dist =
                        ((r as f64 - hc).powi(2) + (c as f64 - wc).powi(2)).sqrt();
                    if (dist - radius).abs() < 1.6 {
                        v += 0.8;
                    }
                } else {
                    let in_bar = (c as f64 - wc).abs() < 1.6
                        && r as f64 > 0.2 * height as f64
                        && (r as f64) < 0.8 * height as f64;
                    if in_bar {
                        v += 0.85;
                    }
                }
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }
    ImageSet {
        count,
        height,
        width,
        pixels,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_blob() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&[0, 64, 128, 255, 10, 20, 30, 40]);
        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 2];
        labels.extend_from_slice(&[3, 7]);
        (images, labels)
    }

    #[test]
    fn idx_blob_round_trip() {
        let (images, labels) = tiny_blob();
        let set = parse_idx(&images, &labels).unwrap();
        assert_eq!((set.count, set.height, set.width), (2, 2, 2));
        assert_eq!(set.labels, vec![3, 7]);
        assert_eq!(set.pixels[0], 0.0);
        assert_eq!(set.pixels[3], 1.0);
        assert!((set.pixel(1, 0, 1) - 20.0 / 255.0).abs() < 1e-15);

        let (im2, lb2) = serialize_idx(&set);
        assert_eq!(im2, images);
        assert_eq!(lb2, labels);
        assert_eq!(parse_idx(&im2, &lb2).unwrap(), set);
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let (mut images, labels) = tiny_blob();
        images[3] = 2;
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
        let (images, mut labels) = tiny_blob();
        labels[3] = 2;
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn idx_rejects_truncation() {
        let (mut images, labels) = tiny_blob();
        images.pop();
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&images[..10], &labels), Err(Error::Format(_))));
        let (images, mut labels) = tiny_blob();
        labels.pop();
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn idx_rejects_count_mismatch_and_bad_labels() {
        let (images, _) = tiny_blob();
        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 3];
        labels.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));

        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 2];
        labels.extend_from_slice(&[1, 10]);
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn pca_full_rank_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(8, 5, |_, _| rng.gen_range(-1.0..1.0));
        for center in [false, true] {
            let rec = pca_reduce(&a, 5, center).unwrap();
            assert!((&rec - &a).amax() <= 1e-9);
        }
    }

    #[test]
    fn pca_rank_bounds_validated() {
        let a = DMatrix::zeros(4, 6);
        assert!(matches!(pca_reduce(&a, 0, false), Err(Error::InvalidInput(_))));
        assert!(matches!(pca_reduce(&a, 5, false), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pca_constructed_rank_two() {
        // A = 3 u1 v1' + 1.5 u2 v2' with orthonormal factors: truncation
        // error is known in closed form
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let qu = DMatrix::from_fn(7, 7, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let qv = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let a = qu.column(0) * 3.0 * qv.column(0).transpose()
            + qu.column(1) * 1.5 * qv.column(1).transpose();

        let rec2 = pca_reduce(&a, 2, false).unwrap();
        assert!((&rec2 - &a).amax() <= 1e-9);

        let rec1 = pca_reduce(&a, 1, false).unwrap();
        let err_sq = (&a - &rec1).norm_squared();
        assert!((err_sq - 2.25).abs() <= 1e-9 * 2.25);
    }

    #[test]
    fn pca_centering_flag_changes_mean_structure() {
        // constant offset plus rank one: centered PCA recovers it at R=1,
        // uncentered needs R=2
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let offset = DMatrix::from_fn(6, 9, |r, _| (r + 1) as f64);
        let u = DMatrix::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0));
        let v = DMatrix::from_fn(1, 9, |_, c| (c as f64 - 4.0) / 3.0);
        let a = offset + u * v;

        let centered = pca_reduce(&a, 1, true).unwrap();
        assert!((&centered - &a).amax() <= 1e-9);
        let uncentered = pca_reduce(&a, 1, false).unwrap();
        assert!((&uncentered - &a).amax() > 1e-3);
    }

    #[test]
    fn pad_geometry_and_determinism() {
        let set = synthetic_fixture(3, 28, 28, 4);
        let padded = pad_with_noise(&set, 14, 0.2, 77);
        assert_eq!((padded.height, padded.width), (56, 56));
        for i in 0..3 {
            for r in 0..28 {
                for c in 0..28 {
                    assert_eq!(padded.pixel(i, r + 14, c + 14), set.pixel(i, r, c));
                }
            }
        }
        assert_eq!(pad_with_noise(&set, 14, 0.2, 77), padded);
        assert_ne!(pad_with_noise(&set, 14, 0.2, 78).pixels, padded.pixels);

        let silent = pad_with_noise(&set, 2, 0.0, 1);
        for i in 0..3 {
            for c in 0..silent.width {
                assert_eq!(silent.pixel(i, 0, c), 0.0);
                assert_eq!(silent.pixel(i, silent.height - 1, c), 0.0);
            }
        }
        assert_eq!(pad_with_noise(&set, 0, 0.5, 9), set);
    }

    #[test]
    fn patch_shapes() {
        let set = synthetic_fixture(2, 56, 56, 4);
        let blocks = to_patches(&set, (2, 2)).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].shape(), (784, 4));

        let small = synthetic_fixture(1, 28, 28, 4);
        let single = to_patches(&small, (1, 1)).unwrap();
        assert_eq!(single[0].shape(), (784, 1));
        for r in 0..28 {
            for c in 0..28 {
                assert_eq!(single[0][(r * 28 + c, 0)], small.pixel(0, r, c));
            }
        }

        assert!(matches!(to_patches(&small, (3, 2)), Err(Error::Geometry(_))));
        assert!(matches!(to_patches(&small, (0, 2)), Err(Error::Geometry(_))));
    }

    #[test]
    fn patch_merge_round_trip() {
        let set = pad_with_noise(&synthetic_fixture(4, 14, 14, 21), 7, 0.3, 5);
        let blocks = to_patches(&set, (2, 2)).unwrap();
        let merged = merge_patches(&blocks, &set.labels, (2, 2), 28, 28).unwrap();
        assert_eq!(merged, set);
    }

    #[test]
    fn patched_dataset_conversion() {
        let set = pad_with_noise(&synthetic_fixture(6, 14, 14, 3), 1, 0.1, 8);
        let ds = to_patched_dataset(&set, (2, 2), (0, 1), 0.1, "fixture").unwrap();
        assert_eq!((ds.n, ds.d, ds.p, ds.k), (6, 64, 4, 0));
        assert!(ds.noise_index.is_empty());
        assert!(ds.object_sets.iter().all(Vec::is_empty));
        for (i, label) in ds.labels.iter().enumerate() {
            let expect = if set.labels[i] == 0 { 1.0 } else { -1.0 };
            assert_eq!(label.sign(), expect);
        }
        assert!(matches!(ds.provenance, Provenance::External { .. }));

        let mut with_stray = set.clone();
        with_stray.labels[0] = 5;
        assert!(matches!(
            to_patched_dataset(&with_stray, (2, 2), (0, 1), 0.1, "fixture"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn class_selection() {
        let mut set = synthetic_fixture(8, 6, 6, 2);
        set.labels = vec![0, 1, 2, 0, 1, 7, 0, 1];
        let two = select_classes(&set, (0, 1)).unwrap();
        assert_eq!(two.count, 6);
        assert_eq!(two.labels, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(two.pixels.len(), 6 * 36);
        // surviving pixels follow their images
        assert_eq!(two.pixels[36..72], set.pixels[36..72]);
        assert!(matches!(select_classes(&set, (3, 3)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fixture_is_deterministic_and_quantized() {
        let a = synthetic_fixture(5, 12, 12, 42);
        let b = synthetic_fixture(5, 12, 12, 42);
        assert_eq!(a, b);
        assert!(a.labels.iter().all(|&l| l <= 1));
        for &p in &a.pixels {
            assert!((0.0..=1.0).contains(&p));
            let q = (p * 255.0).round() / 255.0;
            assert_eq!(p, q);
        }
        let (im, lb) = serialize_idx(&a);
        assert_eq!(parse_idx(&im, &lb).unwrap(), a);
    }
}
