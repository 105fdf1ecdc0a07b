//! Starting points for the first layer.
//!
//! [`vca_endmembers`] is a vertex component analysis extractor: the data are
//! projected onto their leading `P−1` principal directions, lifted onto a
//! constant extra coordinate so the simplex becomes a cone, and endmembers
//! are picked one at a time as the pixel with the largest absolute
//! projection onto a random direction orthogonal to everything picked so
//! far. The returned signatures are verbatim pixel spectra.
//!
//! [`random_init`] draws both factors i.i.d. uniform on (0, 1].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    Vca,
    Random,
}

impl InitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMethod::Vca => "vca",
            InitMethod::Random => "random",
        }
    }
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vca" => Ok(InitMethod::Vca),
            "random" => Ok(InitMethod::Random),
            other => Err(Error::Config(format!("unknown init method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub a0: Array2<f64>,
    pub s0: Array2<f64>,
    pub method: InitMethod,
    /// Pixel indices of the chosen endmembers, VCA only.
    pub selected_pixel_indices: Option<Vec<usize>>,
}

fn to_dmatrix(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Numerical rank of `x` from the eigenvalues of its smaller Gram matrix.
pub fn data_rank(x: ArrayView2<f64>) -> usize {
    let gram = if x.nrows() <= x.ncols() {
        x.dot(&x.t())
    } else {
        x.t().dot(&x)
    };
    let eig = SymmetricEigen::new(to_dmatrix(gram.view()));
    let svals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    // Gram eigenvalues carry ~eps·λmax absolute error, i.e. ~1e-8·smax on
    // the singular values.
    svals.iter().filter(|&&s| s > 1e-7 * smax).count()
}

/// Leading `d` principal directions of the mean-removed columns of `x`,
/// as a bands × d matrix, and the column mean.
fn principal_directions(x: ArrayView2<f64>, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let b = x.nrows();
    let n = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("nonempty");
    let centered = &x - &mean.view().insert_axis(Axis(1));
    let cov = centered.dot(&centered.t()) / n;
    let eig = SymmetricEigen::new(to_dmatrix(cov.view()));
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut dirs = DMatrix::zeros(b, d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        dirs.set_column(k, &eig.eigenvectors.column(idx));
    }
    (dirs, DVector::from_iterator(b, mean.iter().cloned()))
}

/// Removes from `v` its components along the orthonormal `basis`.
fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for q in basis {
        let c = q.dot(v);
        v.axpy(-c, q, 1.0);
    }
}

/// Picks `p` pure-pixel endmembers from `x` (bands × pixels).
///
/// `a0` holds copies of the selected pixel spectra; `s0` is the uniform
/// matrix with every entry `1/p`.
pub fn vca_endmembers(x: ArrayView2<f64>, p: usize, seed: u64) -> Result<InitResult> {
    let (b, n) = x.dim();
    if p == 0 {
        return Err(Error::Config("endmember count must be >= 1".into()));
    }
    if p > b.min(n) {
        return Err(Error::Config(format!(
            "cannot extract {p} endmembers from {b} bands x {n} pixels"
        )));
    }
    if x.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("VCA input must be nonnegative".into()));
    }
    let rank = data_rank(x);
    if rank == 0 {
        return Err(Error::Domain("VCA input is all zero".into()));
    }
    if p > rank {
        return Err(Error::Rank { requested: p, rank });
    }

    // Project onto p−1 principal directions and lift onto a constant last
    // coordinate at least as large as any projected norm.
    let (dirs, mean) = principal_directions(x, p - 1);
    let xm = to_dmatrix(x);
    let mut lifted = DMatrix::zeros(p, n);
    let mut max_norm: f64 = 0.0;
    for j in 0..n {
        let centered = xm.column(j) - &mean;
        let y = dirs.tr_mul(&centered);
        max_norm = max_norm.max(y.norm());
        for k in 0..p - 1 {
            lifted[(k, j)] = y[k];
        }
    }
    let lift = if max_norm > 0.0 { max_norm } else { 1.0 };
    lifted.row_mut(p - 1).fill(lift);

    let mut rng = seed::rng(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(p);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    for _ in 0..p {
        // Before anything is picked, the lift axis plays the role of the
        // span, so the first direction probes the spread of the data.
        let seed_axis = if selected.is_empty() && p > 1 {
            let mut e = DVector::zeros(p);
            e[p - 1] = 1.0;
            vec![e]
        } else {
            Vec::new()
        };
        let span = if selected.is_empty() { &seed_axis } else { &basis };

        let mut direction = DVector::zeros(p);
        for _attempt in 0..16 {
            let w = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut f = w.clone();
            project_out(&mut f, span);
            project_out(&mut f, span);
            let norm = f.norm();
            if norm > 1e-12 * w.norm() {
                direction = f / norm;
                break;
            }
            direction = w;
        }

        let proj = direction.tr_mul(&lifted);
        let mut best: Option<(usize, f64)> = None;
        for (j, v) in proj.iter().enumerate() {
            if selected.contains(&j) {
                continue;
            }
            let mag = v.abs();
            if best.is_none_or(|(_, m)| mag > m) {
                best = Some((j, mag));
            }
        }
        let (idx, _) = best.expect("p <= n leaves an unselected pixel");
        selected.push(idx);

        let mut q = lifted.column(idx).into_owned();
        project_out(&mut q, &basis);
        project_out(&mut q, &basis);
        let qn = q.norm();
        if qn > 1e-12 {
            basis.push(q / qn);
        }
    }

    let mut a0 = Array2::zeros((b, p));
    for (k, &j) in selected.iter().enumerate() {
        a0.column_mut(k).assign(&x.column(j));
    }
    Ok(InitResult {
        a0,
        s0: Array2::from_elem((p, n), 1.0 / p as f64),
        method: InitMethod::Vca,
        selected_pixel_indices: Some(selected),
    })
}

/// Factors of shape `b×p` and `p×n` with i.i.d. uniform (0, 1] entries.
pub fn random_init(b: usize, p: usize, n: usize, seed: u64) -> Result<InitResult> {
    if b == 0 || p == 0 || n == 0 {
        return Err(Error::Config(format!(
            "random init needs positive sizes, got {b}x{p}x{n}"
        )));
    }
    let mut rng = seed::rng(seed);
    Ok(InitResult {
        a0: uniform_open_closed(&mut rng, b, p),
        s0: uniform_open_closed(&mut rng, p, n),
        method: InitMethod::Random,
        selected_pixel_indices: None,
    })
}

pub(crate) fn uniform_open_closed<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>())
}
