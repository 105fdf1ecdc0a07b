//! Shared data model for the linear mixing model `X = A·S + E`.
//!
//! Matrices are dense `f64`. `X` is bands × pixels, `A` is bands ×
//! endmembers (one signature per column) and `S` is endmembers × pixels
//! (one abundance vector per column).

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{dim_err, Error, Result};

/// Tolerance used by [`AbundanceMatrix::is_normalized`].
pub const ASC_TOLERANCE: f64 = 1e-6;

fn check_nonnegative(m: ArrayView2<f64>, what: &str) -> Result<()> {
    if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "{what} entry ({i}, {j}) = {v} is not a finite nonnegative value"
        )));
    }
    Ok(())
}

/// Observed hyperspectral data, bands × pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: Array2<f64>,
    spatial_dims: Option<(usize, usize)>,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralCube {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (b, n) = data.dim();
        if b == 0 || n == 0 {
            return dim_err(format!("cube must be at least 1x1, got {b}x{n}"));
        }
        check_nonnegative(data.view(), "cube")?;
        Ok(Self {
            data,
            spatial_dims: None,
            wavelengths: None,
        })
    }

    /// Attaches an image shape; `rows * cols` must equal the pixel count.
    pub fn with_spatial_dims(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.pixels() {
            return dim_err(format!(
                "spatial dims {rows}x{cols} do not cover {} pixels",
                self.pixels()
            ));
        }
        self.spatial_dims = Some((rows, cols));
        Ok(self)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands() {
            return dim_err(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands()
            ));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn spatial_dims(&self) -> Option<(usize, usize)> {
        self.spatial_dims
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }
}

/// Endmember spectra, bands × endmembers.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureMatrix {
    data: Array2<f64>,
    names: Option<Vec<String>>,
}

impl SignatureMatrix {
    /// Validates nonnegativity and rejects all-zero columns.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (b, p) = data.dim();
        if b == 0 || p == 0 {
            return dim_err(format!("signature matrix must be at least 1x1, got {b}x{p}"));
        }
        check_nonnegative(data.view(), "signature")?;
        if let Some(j) = data
            .axis_iter(Axis(1))
            .position(|col| col.iter().all(|&v| v == 0.0))
        {
            return Err(Error::Domain(format!("signature column {j} is all zero")));
        }
        Ok(Self { data, names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.endmembers() {
            return dim_err(format!(
                "{} names for {} endmembers",
                names.len(),
                self.endmembers()
            ));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn endmembers(&self) -> usize {
        self.data.ncols()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }
}

/// Abundance fractions, endmembers × pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: Array2<f64>,
    normalized: bool,
}

impl AbundanceMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (p, n) = data.dim();
        if p == 0 || n == 0 {
            return dim_err(format!("abundance matrix must be at least 1x1, got {p}x{n}"));
        }
        check_nonnegative(data.view(), "abundance")?;
        Ok(Self {
            data,
            normalized: false,
        })
    }

    /// Like [`AbundanceMatrix::new`] but also asserts that every column sums
    /// to one within [`ASC_TOLERANCE`].
    pub fn new_normalized(data: Array2<f64>) -> Result<Self> {
        let mut s = Self::new(data)?;
        if let Some((j, sum)) = s
            .data
            .axis_iter(Axis(1))
            .map(|c| c.sum())
            .enumerate()
            .find(|(_, sum)| (sum - 1.0).abs() > ASC_TOLERANCE)
        {
            return Err(Error::Domain(format!(
                "abundance column {j} sums to {sum}, expected 1"
            )));
        }
        s.normalized = true;
        Ok(s)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    /// Whether the sum-to-one assertion was made at construction.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Additive observation noise, bands × pixels; may hold negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub data: Array2<f64>,
    /// Standard deviation the field was drawn with.
    pub sigma: f64,
}

/// Sum of `q`-th powers of all entries, with no outer root.
///
/// This is the "q-norm" used by the L1/2 penalty: `qnorm(M, 0.5)` is the sum
/// of square roots of the entries.
pub fn qnorm(m: ArrayView2<f64>, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("q must be positive, got {q}")));
    }
    let mut total = 0.0;
    for &v in m.iter() {
        if v < 0.0 || v.is_nan() {
            return Err(Error::Domain(format!("qnorm of negative entry {v}")));
        }
        total += if q == 0.5 {
            v.sqrt()
        } else if q == 1.0 {
            v
        } else {
            v.powf(q)
        };
    }
    Ok(total)
}

/// The product `A·S`.
pub fn reconstruct(a: &SignatureMatrix, s: &AbundanceMatrix) -> Result<Array2<f64>> {
    if a.endmembers() != s.endmembers() {
        return dim_err(format!(
            "A has {} columns but S has {} rows",
            a.endmembers(),
            s.endmembers()
        ));
    }
    Ok(a.data().dot(s.data()))
}

/// Squared Frobenius residual `½‖X − A·S‖²` on raw matrices.
pub(crate) fn half_sq_residual(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    s: ArrayView2<f64>,
) -> Result<f64> {
    if a.ncols() != s.nrows() || x.nrows() != a.nrows() || x.ncols() != s.ncols() {
        return dim_err(format!(
            "X {:?} vs A {:?} · S {:?}",
            x.dim(),
            a.dim(),
            s.dim()
        ));
    }
    let approx = a.dot(&s);
    let sq: f64 = x
        .iter()
        .zip(approx.iter())
        .map(|(xv, av)| (xv - av) * (xv - av))
        .sum();
    Ok(0.5 * sq)
}

/// Euclidean NMF cost `½‖X − A·S‖²_F`.
pub fn frobenius_cost(
    x: ArrayView2<f64>,
    a: &SignatureMatrix,
    s: &AbundanceMatrix,
) -> Result<f64> {
    half_sq_residual(x, a.data().view(), s.data().view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate};
    use proptest::prelude::*;

    fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[[i, k]] * b[[k, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    #[test]
    fn qnorm_examples() {
        let m = array![[1.0, 4.0], [9.0, 16.0]];
        assert_eq!(qnorm(m.view(), 0.5).unwrap(), 10.0);
        assert_eq!(qnorm(m.view(), 1.0).unwrap(), 30.0);
        assert_eq!(qnorm(Array2::zeros((2, 2)).view(), 0.3).unwrap(), 0.0);
    }

    #[test]
    fn qnorm_rejects_negative_and_bad_q() {
        let m = array![[1.0, -4.0]];
        assert!(matches!(qnorm(m.view(), 0.5), Err(Error::Domain(_))));
        assert!(qnorm(array![[1.0]].view(), 0.0).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let eye = SignatureMatrix::new(Array2::eye(2)).unwrap();
        let s = AbundanceMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(reconstruct(&eye, &s).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);

        let a = SignatureMatrix::new(array![[1.0], [1.0]]).unwrap();
        let s = AbundanceMatrix::new(array![[2.0, 3.0]]).unwrap();
        assert_eq!(reconstruct(&a, &s).unwrap(), array![[2.0, 3.0], [2.0, 3.0]]);

        let s = AbundanceMatrix::new(array![[2.0, 3.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(reconstruct(&a, &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let a = array![
            [0.3, 0.9],
            [0.1, 0.4],
            [0.7, 0.2],
            [0.5, 0.8]
        ];
        let s = array![[0.2, 0.4, 0.6, 0.8, 1.0], [0.9, 0.7, 0.5, 0.3, 0.1]];
        let got = reconstruct(
            &SignatureMatrix::new(a.clone()).unwrap(),
            &AbundanceMatrix::new(s.clone()).unwrap(),
        )
        .unwrap();
        let want = naive_matmul(&a, &s);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn frobenius_examples() {
        let a = SignatureMatrix::new(array![[1.0, 2.0], [0.5, 0.0]]).unwrap();
        let s = AbundanceMatrix::new(array![[1.0, 0.0, 2.0], [0.5, 1.0, 0.0]]).unwrap();
        let x = reconstruct(&a, &s).unwrap();
        assert_eq!(frobenius_cost(x.view(), &a, &s).unwrap(), 0.0);

        // A and S of zeros are rejected by SignatureMatrix, so use raw form.
        let c = half_sq_residual(
            array![[1.0]].view(),
            array![[0.0]].view(),
            array![[0.0]].view(),
        )
        .unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(SpectralCube::new(array![[1.0, -0.1]]).is_err());
        assert!(SpectralCube::new(Array2::zeros((0, 3))).is_err());
        let cube = SpectralCube::new(Array2::ones((2, 6))).unwrap();
        assert!(cube.clone().with_spatial_dims(2, 3).is_ok());
        assert!(cube.with_spatial_dims(4, 2).is_err());
        assert!(SignatureMatrix::new(array![[1.0, 0.0], [2.0, 0.0]]).is_err());
        assert!(AbundanceMatrix::new_normalized(array![[0.5, 0.2], [0.5, 0.7]]).is_err());
        let s = AbundanceMatrix::new_normalized(array![[0.5, 0.3], [0.5, 0.7]]).unwrap();
        assert!(s.is_normalized());
        assert!(!AbundanceMatrix::new(array![[2.0]]).unwrap().is_normalized());
    }

    fn nonneg_matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Array2<f64>> {
        (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
            prop::collection::vec(0.0f64..10.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn qnorm_nonnegative_and_zero_iff_zero(m in nonneg_matrix(6, 6), q in 0.1f64..3.0) {
            let v = qnorm(m.view(), q).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, m.iter().all(|&x| x == 0.0));
        }

        #[test]
        fn qnorm_additive_over_blocks(m1 in nonneg_matrix(5, 4), extra in 1usize..4, q in 0.1f64..3.0) {
            let m2 = m1.slice(ndarray::s![.., ..1]).to_owned() * 0.5
                + Array2::from_elem((m1.nrows(), 1), 0.25);
            let m2 = concatenate![Axis(1), m2.clone(), Array2::from_elem((m1.nrows(), extra), 1.5)];
            let joined = concatenate![Axis(1), m1.view(), m2.view()];
            let lhs = qnorm(joined.view(), q).unwrap();
            let rhs = qnorm(m1.view(), q).unwrap() + qnorm(m2.view(), q).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }

        #[test]
        fn frobenius_zero_iff_exact(a in nonneg_matrix(5, 3), bump in 1e-3f64..1.0) {
            let p = a.ncols();
            let s = Array2::from_shape_fn((p, 4), |(i, j)| ((i + 2 * j) % 3) as f64 * 0.5);
            let x = a.dot(&s);
            prop_assert_eq!(half_sq_residual(x.view(), a.view(), s.view()).unwrap(), 0.0);
            let mut y = x.clone();
            y[[0, 0]] += bump;
            prop_assert!(half_sq_residual(y.view(), a.view(), s.view()).unwrap() > 0.0);
            prop_assert!(x.iter().all(|&v| v >= 0.0));
        }
    }
}
