//! Synthetic scenes with known ground truth.
//!
//! A scene is built in five steps:
//!
//! 1. pick `p` library signatures at random;
//! 2. tile the image with `block_size × block_size` blocks and fill every
//!    block with a single endmember;
//! 3. smooth each abundance plane with a `filter_size × filter_size` mean
//!    filter (symmetric reflection at the borders) and renormalize each
//!    pixel to sum to one;
//! 4. replace every pixel whose largest abundance exceeds
//!    `purity_threshold` with the uniform mixture `1/p`;
//! 5. mix: `X = A·S`.
//!
//! Noise is zero-mean Gaussian with per-element variance
//! `σ² = E[xᵀx] / (B·10^(SNR/10))`, where `E[xᵀx]` is the mean squared norm
//! of a pixel spectrum, so that the per-pixel energy ratio matches the
//! requested SNR.

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{AbundanceMatrix, NoiseField, SignatureMatrix, SpectralCube};
use crate::error::{Error, Result};
use crate::seed;

/// A set of reference spectra, bands × signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    pub signatures: Array2<f64>,
    pub names: Vec<String>,
    /// Band centres in nanometres.
    pub wavelengths: Vec<f64>,
}

impl SpectralLibrary {
    pub fn new(signatures: Array2<f64>, names: Vec<String>, wavelengths: Vec<f64>) -> Result<Self> {
        let (b, k) = signatures.dim();
        if b == 0 || k == 0 {
            return Err(Error::Dimension(format!("library must be nonempty, got {b}x{k}")));
        }
        if names.len() != k {
            return Err(Error::Dimension(format!("{} names for {k} signatures", names.len())));
        }
        if wavelengths.len() != b {
            return Err(Error::Dimension(format!(
                "{} wavelengths for {b} bands",
                wavelengths.len()
            )));
        }
        if signatures.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("library reflectances must be finite and >= 0".into()));
        }
        Ok(Self {
            signatures,
            names,
            wavelengths,
        })
    }

    pub fn bands(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn len(&self) -> usize {
        self.signatures.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The bundled test library: twelve smooth synthetic spectra on 224
    /// bands spanning 380–2500 nm, each a constant continuum plus a few
    /// Gaussian features. Generated from a fixed seed, so it is identical
    /// on every platform.
    pub fn builtin() -> Self {
        const BANDS: usize = 224;
        const SIGNATURES: usize = 12;
        const SEED: u64 = 0x5eed_1ab5;
        let wavelengths: Vec<f64> = (0..BANDS)
            .map(|i| 380.0 + (2500.0 - 380.0) * i as f64 / (BANDS - 1) as f64)
            .collect();
        let mut rng = seed::rng(SEED);
        let mut signatures = Array2::zeros((BANDS, SIGNATURES));
        for k in 0..SIGNATURES {
            let continuum = rng.random_range(0.05..0.15);
            let features = rng.random_range(3..=6);
            let bumps: Vec<(f64, f64, f64)> = (0..features)
                .map(|_| {
                    (
                        rng.random_range(380.0..2500.0),
                        rng.random_range(60.0..300.0),
                        rng.random_range(0.05..0.45),
                    )
                })
                .collect();
            for (i, &wl) in wavelengths.iter().enumerate() {
                let v: f64 = bumps
                    .iter()
                    .map(|&(c, w, amp)| amp * (-(wl - c) * (wl - c) / (2.0 * w * w)).exp())
                    .sum();
                signatures[[i, k]] = continuum + v;
            }
        }
        let names = (0..SIGNATURES).map(|k| format!("synthetic_{k:02}")).collect();
        Self::new(signatures, names, wavelengths).expect("builtin library is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub filter_size: usize,
    pub purity_threshold: f64,
    pub p: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            block_size: 8,
            filter_size: 9,
            purity_threshold: 0.8,
            p: 6,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("image size {}x{} is empty", self.rows, self.cols));
        }
        if self.block_size == 0 || self.rows % self.block_size != 0 || self.cols % self.block_size != 0 {
            return bad(format!(
                "block size {} must divide the image size {}x{}",
                self.block_size, self.rows, self.cols
            ));
        }
        if self.filter_size % 2 == 0 {
            return bad(format!("filter size {} must be odd", self.filter_size));
        }
        if self.p == 0 {
            return bad("p must be >= 1".into());
        }
        if !(self.purity_threshold > 0.0 && self.purity_threshold <= 1.0) {
            return bad(format!("purity threshold {} not in (0, 1]", self.purity_threshold));
        }
        // The replacement mixture must itself pass the threshold.
        if 1.0 / (self.p as f64) > self.purity_threshold {
            return bad(format!(
                "purity threshold {} is below the uniform mixture 1/{}",
                self.purity_threshold, self.p
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub a_true: SignatureMatrix,
    pub s_true: AbundanceMatrix,
    pub clean_cube: SpectralCube,
    pub noisy_cube: SpectralCube,
    /// Noise standard deviation; zero for a noise-free cube.
    pub sigma: f64,
    /// Requested SNR in dB; `+∞` for a noise-free cube.
    pub snr_db: f64,
    /// Library columns used as endmembers, in endmember order.
    pub library_indices: Vec<usize>,
}

impl GroundTruth {
    /// Replaces the noisy cube with `clean + noise` at the given SNR.
    pub fn with_noise(mut self, snr_db: f64, seed: u64) -> Result<Self> {
        let (noisy, sigma) = add_noise(&self.clean_cube, snr_db, seed)?;
        self.noisy_cube = noisy;
        self.sigma = sigma;
        self.snr_db = snr_db;
        Ok(self)
    }
}

/// Index into `0..n` with symmetric (edge-repeating) reflection.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// `size × size` mean filter of a row-major `rows × cols` plane.
pub fn mean_filter(plane: &[f64], rows: usize, cols: usize, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for dr in -half..=half {
                let rr = reflect(r as isize + dr, rows);
                for dc in -half..=half {
                    acc += plane[rr * cols + reflect(c as isize + dc, cols)];
                }
            }
            out[r * cols + c] = acc * norm;
        }
    }
    out
}

/// Builds the noise-free part of a scene; `noisy_cube` is a copy of the
/// clean cube until [`GroundTruth::with_noise`] is applied.
pub fn generate_scene(lib: &SpectralLibrary, spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    if lib.len() < spec.p {
        return Err(Error::Config(format!(
            "library has {} signatures, scene needs {}",
            lib.len(),
            spec.p
        )));
    }
    let mut rng = seed::rng(spec.seed);
    let (rows, cols, p) = (spec.rows, spec.cols, spec.p);

    let chosen = index::sample(&mut rng, lib.len(), p).into_vec();

    let blocks_r = rows / spec.block_size;
    let blocks_c = cols / spec.block_size;
    let n_blocks = blocks_r * blocks_c;
    // Every endmember gets at least one block when there are enough blocks;
    // the remaining blocks are drawn uniformly.
    let mut labels: Vec<usize> = (0..n_blocks)
        .map(|i| if i < p { i } else { rng.random_range(0..p) })
        .collect();
    labels.shuffle(&mut rng);

    let n = rows * cols;
    let mut planes = vec![vec![0.0; n]; p];
    for r in 0..rows {
        for c in 0..cols {
            let block = (r / spec.block_size) * blocks_c + c / spec.block_size;
            planes[labels[block]][r * cols + c] = 1.0;
        }
    }
    if spec.filter_size > 1 {
        for plane in planes.iter_mut() {
            *plane = mean_filter(plane, rows, cols, spec.filter_size);
        }
    }

    let mut s = Array2::zeros((p, n));
    for (k, plane) in planes.iter().enumerate() {
        for (j, &v) in plane.iter().enumerate() {
            s[[k, j]] = v;
        }
    }
    let uniform = 1.0 / p as f64;
    for mut col in s.axis_iter_mut(Axis(1)) {
        let total = col.sum();
        col /= total;
        if col.iter().any(|&v| v > spec.purity_threshold) {
            col.fill(uniform);
        }
    }

    let mut a = Array2::zeros((lib.bands(), p));
    for (k, &idx) in chosen.iter().enumerate() {
        a.column_mut(k).assign(&lib.signatures.column(idx));
    }
    let names = chosen.iter().map(|&i| lib.names[i].clone()).collect();
    let clean = a.dot(&s);

    let clean_cube = SpectralCube::new(clean)?
        .with_spatial_dims(rows, cols)?
        .with_wavelengths(lib.wavelengths.clone())?;
    Ok(GroundTruth {
        a_true: SignatureMatrix::new(a)?.with_names(names)?,
        s_true: AbundanceMatrix::new_normalized(s)?,
        noisy_cube: clean_cube.clone(),
        clean_cube,
        sigma: 0.0,
        snr_db: f64::INFINITY,
        library_indices: chosen,
    })
}

/// Mean squared norm of a pixel spectrum, `E[xᵀx]`.
pub fn mean_pixel_energy(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.ncols() as f64
}

/// Per-element noise standard deviation for the requested SNR.
pub fn noise_sigma(clean: &SpectralCube, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    let energy = mean_pixel_energy(clean.data());
    (energy / (clean.bands() as f64 * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Draws the Gaussian noise field for `clean` at the requested SNR.
pub fn noise_field(clean: &SpectralCube, snr_db: f64, seed: u64) -> Result<NoiseField> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("invalid SNR {snr_db}")));
    }
    let sigma = noise_sigma(clean, snr_db);
    let data = if sigma == 0.0 {
        Array2::zeros(clean.data().raw_dim())
    } else {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn(clean.data().raw_dim(), || {
            sigma * rng.sample::<f64, _>(StandardNormal)
        })
    };
    Ok(NoiseField { data, sigma })
}

impl NoiseField {
    /// `clean + noise`, optionally clamping negative results to zero.
    pub fn apply(&self, clean: &Array2<f64>, clamp: bool) -> Result<Array2<f64>> {
        if self.data.dim() != clean.dim() {
            return Err(Error::Dimension(format!(
                "noise {:?} vs cube {:?}",
                self.data.dim(),
                clean.dim()
            )));
        }
        let mut out = clean + &self.data;
        if clamp {
            out.mapv_inplace(|v| v.max(0.0));
        }
        Ok(out)
    }
}

/// Adds SNR-calibrated Gaussian noise and clamps negatives to zero.
///
/// `snr_db = +∞` returns the clean cube unchanged with `sigma = 0`.
pub fn add_noise(clean: &SpectralCube, snr_db: f64, seed: u64) -> Result<(SpectralCube, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), 0.0));
    }
    let noise = noise_field(clean, snr_db, seed)?;
    let noisy = noise.apply(clean.data(), true)?;
    let mut cube = SpectralCube::new(noisy)?;
    if let Some((r, c)) = clean.spatial_dims() {
        cube = cube.with_spatial_dims(r, c)?;
    }
    if let Some(w) = clean.wavelengths() {
        cube = cube.with_wavelengths(w.to_vec())?;
    }
    Ok((cube, noise.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            rows: 32,
            cols: 32,
            p: 4,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn reflect_is_symmetric() {
        let n = 4;
        let got: Vec<usize> = (-5..9).map(|i| reflect(i, n)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn builtin_library_shape() {
        let lib = SpectralLibrary::builtin();
        assert_eq!(lib.bands(), 224);
        assert_eq!(lib.len(), 12);
        assert_eq!(lib.wavelengths[0], 380.0);
        assert_eq!(lib.wavelengths[223], 2500.0);
        assert!(lib.signatures.iter().all(|&v| v > 0.0));
        assert_eq!(lib, SpectralLibrary::builtin());
    }

    #[test]
    fn scene_abundances_sum_to_one_and_respect_purity() {
        let lib = SpectralLibrary::builtin();
        for seed in 0..4 {
            let gt = generate_scene(&lib, &small_spec(seed)).unwrap();
            for col in gt.s_true.data().axis_iter(Axis(1)) {
                assert!((col.sum() - 1.0).abs() < 1e-12);
                assert!(col.iter().all(|&v| v <= 0.8 + 1e-12));
            }
            assert_eq!(gt.clean_cube.data(), &gt.a_true.data().dot(gt.s_true.data()));
        }
    }

    #[test]
    fn scene_signatures_are_library_columns() {
        let lib = SpectralLibrary::builtin();
        let gt = generate_scene(&lib, &small_spec(3)).unwrap();
        for (k, &idx) in gt.library_indices.iter().enumerate() {
            assert_eq!(gt.a_true.data().column(k), lib.signatures.column(idx));
        }
        let mut sorted = gt.library_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn scene_is_deterministic_per_seed() {
        let lib = SpectralLibrary::builtin();
        assert_eq!(
            generate_scene(&lib, &small_spec(5)).unwrap(),
            generate_scene(&lib, &small_spec(5)).unwrap()
        );
        assert_ne!(
            generate_scene(&lib, &small_spec(5)).unwrap().s_true,
            generate_scene(&lib, &small_spec(6)).unwrap().s_true
        );
    }

    #[test]
    fn degenerate_spec_gives_raw_blocks() {
        let lib = SpectralLibrary::builtin();
        let spec = SceneSpec {
            filter_size: 1,
            purity_threshold: 1.0,
            ..small_spec(1)
        };
        let gt = generate_scene(&lib, &spec).unwrap();
        let s = gt.s_true.data();
        for j in 0..spec.pixels() {
            let col = s.column(j);
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), spec.p - 1);
            // Constant within each block.
            let (r, c) = (j / spec.cols, j % spec.cols);
            let anchor = (r / 8 * 8) * spec.cols + c / 8 * 8;
            assert_eq!(col, s.column(anchor));
        }
    }

    #[test]
    fn every_endmember_present_in_small_scene() {
        let lib = SpectralLibrary::builtin();
        let spec = SceneSpec {
            rows: 16,
            cols: 16,
            p: 3,
            filter_size: 1,
            purity_threshold: 1.0,
            ..SceneSpec::default()
        };
        for seed in 0..30 {
            let gt = generate_scene(&lib, &SceneSpec { seed, ..spec.clone() }).unwrap();
            for row in gt.s_true.data().axis_iter(Axis(0)) {
                assert!(row.sum() > 0.0, "seed {seed}");
            }
        }
    }

    #[test]
    fn mean_filter_step_smoothness() {
        // Left half ones, right half zeros: a single vertical block boundary.
        let (rows, cols, f) = (24, 24, 9);
        let plane: Vec<f64> = (0..rows * cols)
            .map(|i| if i % cols < cols / 2 { 1.0 } else { 0.0 })
            .collect();
        let out = mean_filter(&plane, rows, cols, f);
        let bound = 1.0 / f as f64 + 1e-12;
        for r in f..rows - f {
            for c in f / 2..cols - f / 2 - 1 {
                let d = (out[r * cols + c] - out[r * cols + c + 1]).abs();
                assert!(d <= bound, "({r},{c}) jump {d}");
                let d = (out[r * cols + c] - out[(r + 1) * cols + c]).abs();
                assert!(d <= 1e-12);
            }
        }
        // The step across the boundary is exactly one column's worth.
        let c = cols / 2 - 1;
        let d = out[10 * cols + c] - out[10 * cols + c + 1];
        assert!((d - 1.0 / f as f64).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let ok = SceneSpec::default();
        assert!(ok.validate().is_ok());
        assert!(SceneSpec { block_size: 7, ..ok.clone() }.validate().is_err());
        assert!(SceneSpec { filter_size: 8, ..ok.clone() }.validate().is_err());
        assert!(SceneSpec { purity_threshold: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SceneSpec { purity_threshold: 0.1, ..ok.clone() }.validate().is_err());
        let lib = SpectralLibrary::builtin();
        assert!(generate_scene(&lib, &SceneSpec { p: 13, ..ok }).is_err());
    }

    #[test]
    fn infinite_snr_is_noise_free() {
        let lib = SpectralLibrary::builtin();
        let gt = generate_scene(&lib, &small_spec(1)).unwrap();
        let (noisy, sigma) = add_noise(&gt.clean_cube, f64::INFINITY, 3).unwrap();
        assert_eq!(sigma, 0.0);
        assert_eq!(noisy, gt.clean_cube);
    }

    #[test]
    fn noise_seeds_differ_but_sigma_does_not() {
        let lib = SpectralLibrary::builtin();
        let gt = generate_scene(&lib, &small_spec(1)).unwrap();
        let a = noise_field(&gt.clean_cube, 20.0, 1).unwrap();
        let b = noise_field(&gt.clean_cube, 20.0, 2).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_ne!(a.data, b.data);
        let (noisy, sigma) = add_noise(&gt.clean_cube, 20.0, 1).unwrap();
        assert_eq!(sigma, a.sigma);
        assert!(noisy.data().iter().all(|&v| v >= 0.0));
        assert_eq!(noisy.spatial_dims(), Some((32, 32)));
    }

    #[test]
    fn noise_mean_is_near_zero() {
        let lib = SpectralLibrary::builtin();
        let gt = generate_scene(&lib, &small_spec(2)).unwrap();
        let nf = noise_field(&gt.clean_cube, 15.0, 9).unwrap();
        let count = nf.data.len() as f64;
        let mean = nf.data.sum() / count;
        assert!(mean.abs() < 3.0 * nf.sigma / count.sqrt(), "mean {mean}");
        let raw = nf.apply(gt.clean_cube.data(), false).unwrap();
        assert_eq!(raw.dim(), gt.clean_cube.data().dim());
    }

    #[test]
    fn sigma_matches_energy_relation() {
        let lib = SpectralLibrary::builtin();
        let gt = generate_scene(&lib, &small_spec(2)).unwrap();
        let x = gt.clean_cube.data();
        let exx = mean_pixel_energy(x);
        let sigma = noise_sigma(&gt.clean_cube, 25.0);
        let implied = 10.0 * (exx / (x.nrows() as f64 * sigma * sigma)).log10();
        assert!((implied - 25.0).abs() < 1e-10);
    }
}
