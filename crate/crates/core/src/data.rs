//! Patch data model: orthonormal class bases, noise confined to the
//! orthogonal complement, and dataset assembly/serialization.
//!
//! An input is a d x P block of patch columns. Object patches are copied
//! exactly from the label's basis set; background patches are sigma * P_N g
//! with g standard Gaussian, so their covariance is sigma^2 * P_N.
//!
//! RNG layout: one seeded stream drives labels, object-set choice and basis
//! assignment; a second stream (derived from the same seed) drives the noise
//! Gaussians. Background draws are taken at every noise level including
//! sigma = 0 and scaled afterwards, so datasets with the same seed share
//! their clean part and noise directions across a sigma grid.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NOISE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PAYLOAD_FILE: &str = "payload.bin";
const MANIFEST_FILE: &str = "manifest.json";

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Plus,
    Minus,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Plus => 1.0,
            Label::Minus => -1.0,
        }
    }

    /// 0 for Plus, 1 for Minus; indexes class-major arrays of size 2K.
    pub fn index(self) -> usize {
        match self {
            Label::Plus => 0,
            Label::Minus => 1,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Plus => Label::Minus,
            Label::Minus => Label::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    OneHot,
    RandomOrthonormal,
}

/// The two disjoint orthonormal sets (K vectors per class, dimension d) and
/// the projector onto their joint orthogonal complement.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    d: usize,
    k: usize,
    mode: BasisMode,
    seed: u64,
    /// d x 2K; columns 0..K are the Plus basis, K..2K the Minus basis.
    u: DMatrix<f64>,
}

impl BasisSystem {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column index of basis vector (class, k) in class-major order.
    pub fn column_of(&self, class: Label, k: usize) -> usize {
        class.index() * self.k + k
    }

    pub fn mu(&self, class: Label, k: usize) -> DVectorView<'_, f64> {
        self.u.column(self.column_of(class, k))
    }

    pub fn mu_by_column(&self, c: usize) -> DVectorView<'_, f64> {
        self.u.column(c)
    }

    /// (class, k) of a class-major column index.
    pub fn class_of_column(&self, c: usize) -> (Label, usize) {
        if c < self.k {
            (Label::Plus, c)
        } else {
            (Label::Minus, c - self.k)
        }
    }

    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Apply P_N = I - U U^T. One-hot bases zero the basis coordinates
    /// exactly, which keeps noise orthogonality exact in floating point.
    pub fn project_noise(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.mode {
            BasisMode::OneHot => {
                let mut out = v.clone();
                for i in 0..2 * self.k {
                    out[i] = 0.0;
                }
                out
            }
            BasisMode::RandomOrthonormal => {
                let coeffs = self.u.transpose() * v;
                v - &self.u * coeffs
            }
        }
    }

    /// Dense P_N, for tests and small-scale diagnostics only.
    pub fn projector_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d) - &self.u * self.u.transpose()
    }

    /// Max |<u_i, u_j> - delta_ij| over all basis pairs.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.u.transpose() * &self.u;
        let mut worst = 0.0f64;
        for i in 0..2 * self.k {
            for j in 0..2 * self.k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Build a basis system. One-hot mode assigns e_1..e_K to the Plus class and
/// e_{K+1}..e_{2K} to the Minus class; random mode orthonormalizes 2K
/// Gaussian vectors.
pub fn make_basis(d: usize, k: usize, mode: BasisMode, seed: u64) -> Result<BasisSystem> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if d < 2 * k {
        return Err(Error::Capacity(format!(
            "dimension {d} cannot hold 2K = {} orthonormal vectors",
            2 * k
        )));
    }
    let u = match mode {
        BasisMode::OneHot => {
            let mut u = DMatrix::zeros(d, 2 * k);
            for c in 0..2 * k {
                u[(c, c)] = 1.0;
            }
            u
        }
        BasisMode::RandomOrthonormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(d, 2 * k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let qr = g.qr();
            let q = qr.q();
            let r = qr.r();
            // Fix column signs so the factorization (and thus the basis) does
            // not depend on QR sign conventions.
            let mut q = q;
            for c in 0..2 * k {
                if r[(c, c)] < 0.0 {
                    for i in 0..d {
                        q[(i, c)] = -q[(i, c)];
                    }
                }
            }
            q.columns(0, 2 * k).into_owned()
        }
    };
    Ok(BasisSystem {
        d,
        k,
        mode,
        seed,
        u,
    })
}

/// Law of the object-patch index set S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SPolicy {
    /// |S| = s with uniformly random positions.
    FixedSize { s: usize },
    /// Uniform over all nonempty proper subsets of [P].
    UniformNonemptyProper,
}

/// Where a dataset came from; external data carries no object structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic { seed: u64, policy: SPolicy },
    External { source: String },
}

/// n labeled patch blocks plus the sampling record needed by the filter
/// decomposition: object sets, basis assignments and the background-patch
/// index (the noise vectors themselves live in `inputs`).
#[derive(Debug, Clone)]
pub struct PatchedDataset {
    pub d: usize,
    pub n: usize,
    pub p: usize,
    /// K of the generating basis (0 for external data).
    pub k: usize,
    pub sigma_noise: f64,
    pub labels: Vec<Label>,
    /// Sorted object-patch indices per sample; empty vectors for external data.
    pub object_sets: Vec<Vec<usize>>,
    /// Per sample: (patch index, basis index k within the label's class).
    pub assignments: Vec<Vec<(usize, usize)>>,
    /// Flattened (sample, patch) positions of background patches, in sampling
    /// order; defines the noise-direction ordering used by the decomposition.
    pub noise_index: Vec<(usize, usize)>,
    /// d x P block per sample.
    pub inputs: Vec<DMatrix<f64>>,
    pub provenance: Provenance,
}

impl PatchedDataset {
    pub fn input(&self, i: usize) -> &DMatrix<f64> {
        &self.inputs[i]
    }

    /// Background patch by flattened noise index.
    pub fn xi(&self, c: usize) -> DVectorView<'_, f64> {
        let (i, p) = self.noise_index[c];
        self.inputs[i].column(p)
    }

    pub fn noise_count(&self) -> usize {
        self.noise_index.len()
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.provenance, Provenance::Synthetic { .. })
    }

    /// Object-patch count per basis vector, class-major (2K entries).
    pub fn basis_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; 2 * self.k];
        for (i, asg) in self.assignments.iter().enumerate() {
            let class = self.labels[i];
            for &(_, k) in asg {
                counts[class.index() * self.k + k] += 1;
            }
        }
        counts
    }

    /// Total number of object patches.
    pub fn object_patch_count(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }
}

/// Sample a dataset per the patch data model.
pub fn sample_dataset(
    basis: &BasisSystem,
    n: usize,
    p: usize,
    policy: SPolicy,
    sigma_noise: f64,
    seed: u64,
) -> Result<PatchedDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if p < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 patches for a nonempty proper object set".into(),
        ));
    }
    if p > 30 {
        return Err(Error::InvalidInput("patch count above 30 unsupported".into()));
    }
    if sigma_noise < 0.0 || !sigma_noise.is_finite() {
        return Err(Error::InvalidInput("sigma_noise must be finite and >= 0".into()));
    }
    if let SPolicy::FixedSize { s } = policy {
        if s == 0 || s >= p {
            return Err(Error::InvalidInput(format!(
                "fixed object-set size {s} must satisfy 1 <= s <= P-1 = {}",
                p - 1
            )));
        }
    }

    let d = basis.dim();
    let k = basis.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM_SALT);

    let mut labels = Vec::with_capacity(n);
    let mut object_sets = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    let mut noise_index = Vec::new();
    let mut inputs = Vec::with_capacity(n);
    let mut g = DVector::zeros(d);

    for i in 0..n {
        let y = if rng.gen_bool(0.5) { Label::Plus } else { Label::Minus };
        let s_set: Vec<usize> = match policy {
            SPolicy::FixedSize { s } => {
                let mut idx = rand::seq::index::sample(&mut rng, p, s).into_vec();
                idx.sort_unstable();
                idx
            }
            SPolicy::UniformNonemptyProper => {
                // Bitmask uniform over [1, 2^P - 2]: nonempty proper subsets.
                let mask: u32 = rng.gen_range(1..(1u32 << p) - 1);
                (0..p).filter(|b| mask & (1 << b) != 0).collect()
            }
        };

        let mut block = DMatrix::zeros(d, p);
        let mut asg = Vec::with_capacity(s_set.len());
        for patch in 0..p {
            if s_set.binary_search(&patch).is_ok() {
                let kk = rng.gen_range(0..k);
                block.set_column(patch, &basis.mu(y, kk));
                asg.push((patch, kk));
            } else {
                for v in g.iter_mut() {
                    *v = noise_rng.sample(StandardNormal);
                }
                let mut xi = basis.project_noise(&g);
                xi *= sigma_noise;
                block.set_column(patch, &xi);
                noise_index.push((i, patch));
            }
        }
        labels.push(y);
        object_sets.push(s_set);
        assignments.push(asg);
        inputs.push(block);
    }

    Ok(PatchedDataset {
        d,
        n,
        p,
        k,
        sigma_noise,
        labels,
        object_sets,
        assignments,
        noise_index,
        inputs,
        provenance: Provenance::Synthetic { seed, policy },
    })
}

/// Stack every input into the d x (nP) matrix with columns ordered
/// sample-major: x_1^(1), ..., x_1^(P), x_2^(1), ...
pub fn assemble_data_matrix(data: &PatchedDataset) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(data.d, data.n * data.p);
    for (i, block) in data.inputs.iter().enumerate() {
        for p in 0..data.p {
            x.set_column(i * data.p + p, &block.column(p));
        }
    }
    x
}

/// Object-patch columns only, in sample-major order.
pub fn object_submatrix(data: &PatchedDataset) -> DMatrix<f64> {
    let cols: Vec<(usize, usize)> = data
        .object_sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&p| (i, p)))
        .collect();
    let mut x = DMatrix::zeros(data.d, cols.len());
    for (c, &(i, p)) in cols.iter().enumerate() {
        x.set_column(c, &data.inputs[i].column(p));
    }
    x
}

/// Exact nonzero spectrum of the clean (object-patch) block: the square roots
/// of the per-basis-vector counts, descending. Zero-count basis vectors
/// contribute zeros, so the list always has 2K entries.
pub fn clean_spectrum_oracle(data: &PatchedDataset) -> Vec<f64> {
    let mut vals: Vec<f64> = data
        .basis_counts()
        .iter()
        .map(|&c| (c as f64).sqrt())
        .collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRegime {
    BelowBoundary,
    AboveBoundary,
}

/// Predicted stable-rank band for a noise level. Band constants are
/// configuration inputs reported as-is, never asserted.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub regime: NoiseRegime,
    /// sigma * sqrt(d), compared against 1.
    pub boundary_value: f64,
    pub sr_lower: f64,
    /// None above the boundary, where only a lower bound is predicted.
    pub sr_upper: Option<f64>,
    pub c: f64,
    pub delta: f64,
}

/// Band prediction with explicit constants.
pub fn classify_noise_regime(
    sigma_noise: f64,
    d: usize,
    n: usize,
    k: usize,
    c: f64,
    delta: f64,
) -> RegimeReport {
    let two_k = (2 * k) as f64;
    let boundary_value = sigma_noise * (d as f64).sqrt();
    let sigma2d = sigma_noise * sigma_noise * d as f64;
    if boundary_value <= 1.0 {
        RegimeReport {
            regime: NoiseRegime::BelowBoundary,
            boundary_value,
            sr_lower: two_k - c * ((1.0 / delta).ln() / n as f64).sqrt(),
            sr_upper: Some(two_k + c * sigma2d),
            c,
            delta,
        }
    } else {
        RegimeReport {
            regime: NoiseRegime::AboveBoundary,
            boundary_value,
            sr_lower: (two_k + c * sigma2d).min(n as f64),
            sr_upper: None,
            c,
            delta,
        }
    }
}

/// Band prediction with the default constants c = 1, delta = 0.05.
pub fn classify_noise_regime_default(sigma_noise: f64, d: usize, n: usize, k: usize) -> RegimeReport {
    classify_noise_regime(sigma_noise, d, n, k, 1.0, 0.05)
}

/// On-disk manifest; the patch payload lives in a separate binary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    d: usize,
    n: usize,
    p: usize,
    k: usize,
    sigma_noise: f64,
    provenance: Provenance,
    basis: Option<BasisManifest>,
    labels: Vec<i8>,
    object_sets: Vec<Vec<usize>>,
    assignments: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisManifest {
    mode: BasisMode,
    seed: u64,
}

/// Write `manifest.json` plus `payload.bin` (f64 little-endian, column-major
/// over the assembled d x nP matrix) into `dir`.
pub fn save_dataset(data: &PatchedDataset, basis: Option<&BasisSystem>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: 1,
        d: data.d,
        n: data.n,
        p: data.p,
        k: data.k,
        sigma_noise: data.sigma_noise,
        provenance: data.provenance.clone(),
        basis: basis.map(|b| BasisManifest {
            mode: b.mode(),
            seed: b.seed(),
        }),
        labels: data.labels.iter().map(|l| l.sign() as i8).collect(),
        object_sets: data.object_sets.clone(),
        assignments: data.assignments.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;

    let mut payload = Vec::with_capacity(data.d * data.n * data.p * 8);
    for block in &data.inputs {
        for col in block.column_iter() {
            for v in col.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(dir.join(PAYLOAD_FILE))?;
    f.write_all(&payload)?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`]. The basis is
/// regenerated from its recorded mode and seed.
pub fn load_dataset(dir: &Path) -> Result<(Option<BasisSystem>, PatchedDataset)> {
    let json = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }

    let mut raw = Vec::new();
    fs::File::open(dir.join(PAYLOAD_FILE))?.read_to_end(&mut raw)?;
    let expect = manifest.d * manifest.n * manifest.p * 8;
    if raw.len() != expect {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {expect}",
            raw.len()
        )));
    }

    let mut inputs = Vec::with_capacity(manifest.n);
    let mut off = 0usize;
    for _ in 0..manifest.n {
        let mut block = DMatrix::zeros(manifest.d, manifest.p);
        for p in 0..manifest.p {
            for i in 0..manifest.d {
                let bytes: [u8; 8] = raw[off..off + 8].try_into().unwrap();
                block[(i, p)] = f64::from_le_bytes(bytes);
                off += 8;
            }
        }
        inputs.push(block);
    }

    let labels: Vec<Label> = manifest
        .labels
        .iter()
        .map(|&s| if s >= 0 { Label::Plus } else { Label::Minus })
        .collect();
    let noise_index: Vec<(usize, usize)> = manifest
        .object_sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            (0..manifest.p)
                .filter(move |p| s.binary_search(p).is_err())
                .map(move |p| (i, p))
        })
        .collect();

    let basis = match &manifest.basis {
        Some(b) => Some(make_basis(manifest.d, manifest.k, b.mode, b.seed)?),
        None => None,
    };

    // External data has empty object sets; every patch of such a sample is
    // listed as background, which load must not do. Trust the manifest:
    // external provenance means no noise bookkeeping at all.
    let noise_index = if matches!(manifest.provenance, Provenance::External { .. }) {
        Vec::new()
    } else {
        noise_index
    };

    Ok((
        basis,
        PatchedDataset {
            d: manifest.d,
            n: manifest.n,
            p: manifest.p,
            k: manifest.k,
            sigma_noise: manifest.sigma_noise,
            labels,
            object_sets: manifest.object_sets,
            assignments: manifest.assignments,
            noise_index,
            inputs,
            provenance: manifest.provenance,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_smallest_case() {
        let b = make_basis(3, 1, BasisMode::OneHot, 0).unwrap();
        assert_eq!(b.mu(Label::Plus, 0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(b.mu(Label::Minus, 0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn capacity_checked() {
        assert!(matches!(
            make_basis(3, 2, BasisMode::OneHot, 0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn random_basis_orthonormal() {
        let b = make_basis(8, 2, BasisMode::RandomOrthonormal, 7).unwrap();
        assert!(b.orthonormality_defect() <= 1e-12);
        // projector annihilates every basis vector and is idempotent
        let pn = b.projector_matrix();
        for c in 0..4 {
            let mu = b.mu_by_column(c).into_owned();
            assert!((&pn * &mu).norm() <= 1e-12);
        }
        assert!(((&pn * &pn) - &pn).norm() <= 1e-10);
    }

    #[test]
    fn zero_sigma_backgrounds_are_zero() {
        let b = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        let ds = sample_dataset(&b, 6, 3, SPolicy::FixedSize { s: 1 }, 0.0, 5).unwrap();
        for &(i, p) in &ds.noise_index {
            assert_eq!(ds.inputs[i].column(p).norm(), 0.0);
        }
    }

    #[test]
    fn fixed_size_counts() {
        let b = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        let ds = sample_dataset(&b, 20, 3, SPolicy::FixedSize { s: 1 }, 0.1, 5).unwrap();
        for s in &ds.object_sets {
            assert_eq!(s.len(), 1);
        }
        assert_eq!(ds.noise_count(), 20 * 2);
    }

    #[test]
    fn proper_subset_policy() {
        let b = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        let ds = sample_dataset(&b, 50, 3, SPolicy::UniformNonemptyProper, 0.0, 9).unwrap();
        for s in &ds.object_sets {
            assert!(!s.is_empty() && s.len() < 3);
        }
    }

    #[test]
    fn invalid_policy_rejected() {
        let b = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        assert!(sample_dataset(&b, 5, 3, SPolicy::FixedSize { s: 0 }, 0.0, 1).is_err());
        assert!(sample_dataset(&b, 5, 3, SPolicy::FixedSize { s: 3 }, 0.0, 1).is_err());
    }

    #[test]
    fn assembled_layout() {
        let b = make_basis(5, 1, BasisMode::OneHot, 1).unwrap();
        let ds = sample_dataset(&b, 2, 3, SPolicy::FixedSize { s: 1 }, 0.2, 3).unwrap();
        let x = assemble_data_matrix(&ds);
        assert_eq!(x.shape(), (5, 6));
        // column 3 (0-based) is sample 1, patch 0
        assert_eq!(
            x.column(3).iter().copied().collect::<Vec<_>>(),
            ds.inputs[1].column(0).iter().copied().collect::<Vec<_>>()
        );
    }

    #[test]
    fn oracle_two_block_case() {
        // counts (3, 1) for K=1 -> [sqrt(3), 1]
        let b = make_basis(4, 1, BasisMode::OneHot, 1).unwrap();
        let mut ds = sample_dataset(&b, 4, 2, SPolicy::FixedSize { s: 1 }, 0.0, 1).unwrap();
        ds.labels = vec![Label::Plus, Label::Plus, Label::Plus, Label::Minus];
        ds.assignments = vec![
            vec![(0, 0)],
            vec![(0, 0)],
            vec![(0, 0)],
            vec![(0, 0)],
        ];
        let vals = clean_spectrum_oracle(&ds);
        assert!((vals[0] - 3.0f64.sqrt()).abs() <= 1e-15);
        assert!((vals[1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn regime_examples() {
        let r = classify_noise_regime_default(0.0, 2000, 200, 5);
        assert_eq!(r.regime, NoiseRegime::BelowBoundary);
        assert!(r.sr_upper.unwrap() - 10.0 <= 1e-12);
        assert!(r.sr_lower < 10.0);

        // sigma * sqrt(d) = 20, n = 200, K = 5 -> above, lower = min(10 + 400, 200)
        let d = 2000usize;
        let sigma = 20.0 / (d as f64).sqrt();
        let r = classify_noise_regime(sigma, d, 200, 5, 1.0, 0.05);
        assert_eq!(r.regime, NoiseRegime::AboveBoundary);
        assert!((r.sr_lower - 200.0).abs() <= 1e-9);

        // sigma * sqrt(d) = 0.5 -> below with upper 2K + 0.25 c
        let sigma = 0.5 / (d as f64).sqrt();
        let r = classify_noise_regime(sigma, d, 200, 5, 1.0, 0.05);
        assert_eq!(r.regime, NoiseRegime::BelowBoundary);
        assert!((r.sr_upper.unwrap() - 10.25).abs() <= 1e-9);
    }

    #[test]
    fn determinism_bitwise() {
        let b = make_basis(30, 3, BasisMode::OneHot, 2).unwrap();
        let a = sample_dataset(&b, 12, 4, SPolicy::UniformNonemptyProper, 0.3, 77).unwrap();
        let c = sample_dataset(&b, 12, 4, SPolicy::UniformNonemptyProper, 0.3, 77).unwrap();
        assert_eq!(a.labels, c.labels);
        assert_eq!(a.object_sets, c.object_sets);
        for (x, y) in a.inputs.iter().zip(&c.inputs) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
    }

    #[test]
    fn shared_clean_part_across_sigma() {
        let b = make_basis(30, 3, BasisMode::OneHot, 2).unwrap();
        let lo = sample_dataset(&b, 12, 3, SPolicy::FixedSize { s: 1 }, 0.1, 4).unwrap();
        let hi = sample_dataset(&b, 12, 3, SPolicy::FixedSize { s: 1 }, 0.4, 4).unwrap();
        assert_eq!(lo.object_sets, hi.object_sets);
        assert_eq!(lo.assignments, hi.assignments);
        // noise directions identical up to the sigma rescaling
        for c in 0..lo.noise_count() {
            let a = lo.xi(c);
            let b = hi.xi(c);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x * 4.0 - y).abs() <= 1e-15_f64.max(y.abs() * 1e-12));
            }
        }
    }
}
