//! Spectral and abundance angle distances.
//!
//! Estimated endmembers come out of a factorization in arbitrary order, so
//! they are first paired with the true ones by the assignment that minimizes
//! the total spectral angle; all scores are computed after that pairing.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{dim_err, Error, Result};
use crate::mlnmf::UnmixResult;
use crate::synth::GroundTruth;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// SAD of each true endmember against its matched estimate, radians.
    pub per_endmember_sad: Vec<f64>,
    pub rms_sad: f64,
    pub rms_aad: f64,
    /// `assignment[k]` is the true endmember matched to estimate `k`.
    pub assignment: Vec<usize>,
    /// Pixels left out of the AAD average because an abundance vector was
    /// all zero.
    pub excluded_pixels: usize,
}

/// Angle between two nonzero vectors, `acos(mᵀm̂ / ‖m‖‖m̂‖)`.
///
/// Evaluated as `2·atan2(‖u − v‖, ‖u + v‖)` on the unit vectors, which keeps
/// full precision for nearly parallel inputs where `acos` loses half the
/// digits.
pub fn sad(m: ArrayView1<f64>, m_hat: ArrayView1<f64>) -> Result<f64> {
    if m.len() != m_hat.len() {
        return dim_err(format!("vectors of length {} and {}", m.len(), m_hat.len()));
    }
    let nm = m.dot(&m).sqrt();
    let nh = m_hat.dot(&m_hat).sqrt();
    if nm == 0.0 || nh == 0.0 {
        return Err(Error::Domain("angle with a zero vector is undefined".into()));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (&a, &b) in m.iter().zip(m_hat.iter()) {
        let (u, v) = (a / nm, b / nh);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Same angle as [`sad`], applied to per-pixel abundance vectors.
pub fn aad(a: ArrayView1<f64>, a_hat: ArrayView1<f64>) -> Result<f64> {
    sad(a, a_hat)
}

/// Pairwise (cascade) summation; fixes the reduction order independently
/// of how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

fn root_mean_square(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("root mean square of an empty list".into()));
    }
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    Ok((pairwise_sum(&squares) / values.len() as f64).sqrt())
}

/// `sqrt(mean(SAD²))` over endmembers.
pub fn rms_sad(sads: &[f64]) -> Result<f64> {
    root_mean_square(sads)
}

/// `sqrt(mean(AAD²))` over pixels.
pub fn rms_aad(aads: &[f64]) -> Result<f64> {
    root_mean_square(aads)
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn–Munkres with
/// potentials, O(n³)). Returns `row_to_col`.
pub fn min_cost_assignment(cost: ArrayView2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // 1-based arrays; index 0 is the virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    row_to_col
}

/// Pairwise SAD between true columns (rows of the result) and estimated
/// columns (columns of the result).
pub fn sad_matrix(a_true: ArrayView2<f64>, a_est: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a_true.dim() != a_est.dim() {
        return dim_err(format!(
            "true signatures {:?} vs estimated {:?}",
            a_true.dim(),
            a_est.dim()
        ));
    }
    let p = a_true.ncols();
    let mut out = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            out[[i, j]] = sad(a_true.column(i), a_est.column(j))?;
        }
    }
    Ok(out)
}

/// Optimal pairing of estimated to true endmembers by total SAD.
/// `result[k]` is the true index matched to estimate `k`.
pub fn match_endmembers(a_true: ArrayView2<f64>, a_est: ArrayView2<f64>) -> Result<Vec<usize>> {
    let cost = sad_matrix(a_true, a_est)?;
    let true_to_est = min_cost_assignment(cost.view());
    let mut est_to_true = vec![0; true_to_est.len()];
    for (t, &e) in true_to_est.iter().enumerate() {
        est_to_true[e] = t;
    }
    Ok(est_to_true)
}

/// Scores estimated factors against ground truth.
pub fn evaluate_factors(
    a_true: ArrayView2<f64>,
    s_true: ArrayView2<f64>,
    a_est: ArrayView2<f64>,
    s_est: ArrayView2<f64>,
) -> Result<EvalReport> {
    if s_true.dim() != s_est.dim() {
        return dim_err(format!(
            "true abundances {:?} vs estimated {:?}",
            s_true.dim(),
            s_est.dim()
        ));
    }
    if a_true.ncols() != s_true.nrows() {
        return dim_err(format!(
            "true signatures {:?} do not match abundances {:?}",
            a_true.dim(),
            s_true.dim()
        ));
    }
    let assignment = match_endmembers(a_true, a_est)?;
    let p = assignment.len();

    let mut per_endmember_sad = vec![0.0; p];
    // Row `t` of the permuted estimate is the estimate matched to truth `t`.
    let mut s_perm = Array2::zeros(s_est.raw_dim());
    for (est, &t) in assignment.iter().enumerate() {
        per_endmember_sad[t] = sad(a_true.column(t), a_est.column(est))?;
        s_perm.row_mut(t).assign(&s_est.row(est));
    }

    let mut aads = Vec::with_capacity(s_true.ncols());
    let mut excluded = 0;
    for (truth, est) in s_true.axis_iter(Axis(1)).zip(s_perm.axis_iter(Axis(1))) {
        match aad(truth, est) {
            Ok(angle) => aads.push(angle),
            Err(Error::Domain(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let rms_aad = if aads.is_empty() {
        f64::NAN
    } else {
        rms_aad(&aads)?
    };
    Ok(EvalReport {
        rms_sad: rms_sad(&per_endmember_sad)?,
        per_endmember_sad,
        rms_aad,
        assignment,
        excluded_pixels: excluded,
    })
}

/// Scores an unmixing result against the scene it was run on.
pub fn evaluate(truth: &GroundTruth, result: &UnmixResult) -> Result<EvalReport> {
    evaluate_factors(
        truth.a_true.data().view(),
        truth.s_true.data().view(),
        result.a.view(),
        result.s.view(),
    )
}
