//! Rough per-block estimators: ESPRIT Doppler estimation from shifted
//! correlation matrices, one-atom SOMP angle search over a grid of
//! steering vectors, combiner design, and least-squares recovery of the
//! aggregate gain and of the channel vector.

use crate::channel::{array_response, ArrayGeometry, ChannelVector, Combiner, ReceivedBlock};
use crate::geometry::MeasurementVector;
use crate::linalg::{self, CMatrix, CVector, LinalgError};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimError {
    #[error("block needs at least 3 pilot symbols, got {0}")]
    TooFewPilots(usize),
    #[error("Doppler estimation failed: degenerate correlation pencil")]
    DegeneratePencil,
    #[error("dimension mismatch between block, combiner, and array ({0})")]
    DimensionMismatch(String),
    #[error("effective steering vector has zero norm")]
    ZeroSteering,
    #[error("combiner is rank deficient; least-squares recovery undefined")]
    RankDeficientCombiner,
}

impl From<LinalgError> for EstimError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::DegeneratePencil { .. } => EstimError::DegeneratePencil,
            other => EstimError::DimensionMismatch(other.to_string()),
        }
    }
}

/// Uniform search grid for the angle estimator: elevations start at 0
/// with spacing `pi/(2 n_elev)`, azimuths start at `-pi/2` with spacing
/// `pi/n_azim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub n_elev: usize,
    pub n_azim: usize,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
}

impl AngleGrid {
    pub fn new(n_elev: usize, n_azim: usize) -> Self {
        assert!(n_elev >= 2 && n_azim >= 2, "grid sizes must be at least 2");
        let elevations = (0..n_elev)
            .map(|i| i as f64 * FRAC_PI_2 / n_elev as f64)
            .collect();
        let azimuths = (0..n_azim)
            .map(|j| -FRAC_PI_2 + j as f64 * PI / n_azim as f64)
            .collect();
        Self {
            n_elev,
            n_azim,
            elevations,
            azimuths,
        }
    }

    pub fn len(&self) -> usize {
        self.n_elev * self.n_azim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing of the elevation and azimuth grids.
    pub fn spacings(&self) -> (f64, f64) {
        (
            FRAC_PI_2 / self.n_elev as f64,
            PI / self.n_azim as f64,
        )
    }
}

/// Output of the grid angle search: the winning grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub elev_index: usize,
    pub azim_index: usize,
    pub elevation: f64,
    pub azimuth: f64,
}

/// Rough per-block parameter estimate used as the tracking measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughEstimate {
    pub measurement: MeasurementVector,
    pub grid_indices: (usize, usize),
}

/// ESPRIT Doppler estimate from one de-spread block.
///
/// Builds the forward and shifted snapshot matrices, their normalized
/// auto- and cross-correlations, subtracts the minimum eigenvalue as a
/// noise-floor estimate (with the matching subdiagonal shift on the
/// cross term), and reads the Doppler off the argument of the rank-1
/// pencil eigenvalue. The principal branch limits the unambiguous range
/// to `|u| < 1/(2 t_sym)`.
pub fn esprit_doppler(block: &ReceivedBlock, t_sym: f64) -> Result<f64, EstimError> {
    let n_pilots = block.ncols();
    let rf_chains = block.nrows();
    if n_pilots < 3 {
        return Err(EstimError::TooFewPilots(n_pilots));
    }
    let rows = n_pilots - 1;

    // Snapshot matrices: row b is the (transposed, unconjugated) symbol-b
    // observation; the second matrix is shifted by one symbol.
    let y1 = CMatrix::from_fn(rows, rf_chains, |b, m| block[(m, b)]);
    let y2 = CMatrix::from_fn(rows, rf_chains, |b, m| block[(m, b + 1)]);

    let scale = Complex64::new(1.0 / (rows as f64 * rf_chains as f64), 0.0);
    let r11 = (&y1 * y1.adjoint()) * scale;
    let r12 = (&y1 * y2.adjoint()) * scale;

    let lambda_min = linalg::hermitian_eig(&r11)?.eigenvalues[0];

    let mut r11_bar = r11;
    for i in 0..rows {
        r11_bar[(i, i)] -= Complex64::new(lambda_min, 0.0);
    }
    let mut r12_bar = r12;
    for i in 1..rows {
        r12_bar[(i, i - 1)] -= Complex64::new(lambda_min, 0.0);
    }

    let lambda = linalg::solve_rank1_pencil(&r11_bar, &r12_bar)?;
    let rotation = lambda / lambda.norm();
    Ok(rotation.arg() / (2.0 * PI * t_sym))
}

/// One-atom SOMP angle search: maximize the summed correlation magnitude
/// between the block and the combined steering dictionary. Ties resolve
/// to the smallest linear grid index.
///
/// The steering vector factors over the two array axes. Per elevation
/// the combiner is contracted against the y-axis response and then
/// against the block once, so each azimuth costs only an `m_x`-length
/// product per pilot symbol:
///
/// ```text
///   U = W (I_{m_x} (x) a_y)      rf x m_x
///   C = U^H R                    m_x x n_pilots
///   score(i, j) = sum_b | a_x(i, j)^H C[:, b] |
/// ```
pub fn somp_angles(
    block: &ReceivedBlock,
    w: &Combiner,
    grid: &AngleGrid,
    geom: &ArrayGeometry,
) -> Result<AngleEstimate, EstimError> {
    let m = geom.antennas();
    let rf = w.rf_chains();
    if w.antennas() != m {
        return Err(EstimError::DimensionMismatch(format!(
            "combiner spans {} antennas, array has {m}",
            w.antennas()
        )));
    }
    if block.nrows() != rf {
        return Err(EstimError::DimensionMismatch(format!(
            "block has {} rows, combiner {rf} RF chains",
            block.nrows()
        )));
    }
    let n_pilots = block.ncols();
    let (m_x, m_y) = (geom.m_x, geom.m_y);
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();

    // Row-major copy of the combiner for contiguous row walks.
    let w_mat = w.matrix();
    let mut w_rows = vec![Complex64::new(0.0, 0.0); rf * m];
    for r in 0..rf {
        for c in 0..m {
            w_rows[r * m + c] = w_mat[(r, c)];
        }
    }
    let block_cols = block.as_slice(); // column-major: column b at [b*rf..]

    let mut best_score = f64::NEG_INFINITY;
    let mut best = (0usize, 0usize);
    let mut contracted = vec![Complex64::new(0.0, 0.0); rf * m_x];
    // projected[b * m_x + p] = sum_r conj(U[r, p]) * block[r, b]
    let mut projected = vec![Complex64::new(0.0, 0.0); n_pilots * m_x];
    let mut ax_conj = vec![Complex64::new(0.0, 0.0); m_x];

    for (i, &elev) in grid.elevations.iter().enumerate() {
        let virt_y = elev.cos();
        let ay: Vec<Complex64> = (0..m_y)
            .map(|q| Complex64::from_polar(1.0, PI * q as f64 * virt_y))
            .collect();
        for r in 0..rf {
            let row = &w_rows[r * m..(r + 1) * m];
            for p in 0..m_x {
                let mut acc = Complex64::new(0.0, 0.0);
                for q in 0..m_y {
                    acc += row[p * m_y + q] * ay[q];
                }
                contracted[r * m_x + p] = acc;
            }
        }
        for b in 0..n_pilots {
            let col = &block_cols[b * rf..(b + 1) * rf];
            let out = &mut projected[b * m_x..(b + 1) * m_x];
            out.fill(Complex64::new(0.0, 0.0));
            for r in 0..rf {
                let u_row = &contracted[r * m_x..(r + 1) * m_x];
                let sample = col[r];
                for p in 0..m_x {
                    out[p] += u_row[p].conj() * sample;
                }
            }
        }
        let sin_e = elev.sin();
        for (j, &azim) in grid.azimuths.iter().enumerate() {
            let virt_x = azim.sin() * sin_e;
            for (p, slot) in ax_conj.iter_mut().enumerate() {
                *slot = Complex64::from_polar(inv_sqrt_m, -PI * p as f64 * virt_x);
            }
            let mut score = 0.0;
            for b in 0..n_pilots {
                let c_col = &projected[b * m_x..(b + 1) * m_x];
                let mut acc = Complex64::new(0.0, 0.0);
                for p in 0..m_x {
                    acc += ax_conj[p] * c_col[p];
                }
                score += acc.norm();
            }
            if score > best_score {
                best_score = score;
                best = (i, j);
            }
        }
    }

    Ok(AngleEstimate {
        elev_index: best.0,
        azim_index: best.1,
        elevation: grid.elevations[best.0],
        azimuth: grid.azimuths[best.1],
    })
}

/// Reference scorer for the angle search: the same relevance metric
/// evaluated densely, used by tests to validate the factored fast path.
pub fn somp_scores_dense(
    block: &ReceivedBlock,
    w: &Combiner,
    grid: &AngleGrid,
    geom: &ArrayGeometry,
) -> Vec<f64> {
    let mut scores = Vec::with_capacity(grid.len());
    for &elev in &grid.elevations {
        for &azim in &grid.azimuths {
            let atom = w.matrix() * array_response(elev, azim, geom);
            let score: f64 = (0..block.ncols())
                .map(|b| (atom.adjoint() * block.column(b))[(0, 0)].norm())
                .sum();
            scores.push(score);
        }
    }
    scores
}

/// Subarray dimensions for the DFT codebook: `sx * sy = m_rf` with
/// `sx <= m_x`, `sy <= m_y`, preferring at least two y-elements (so the
/// codebook keeps an elevation aperture) and then the widest x-span.
fn subarray_dims(geom: &ArrayGeometry, m_rf: usize) -> (usize, usize) {
    let mut best: Option<((bool, usize), (usize, usize))> = None;
    for sx in 1..=geom.m_x.min(m_rf) {
        if m_rf % sx != 0 {
            continue;
        }
        let sy = m_rf / sx;
        if sy > geom.m_y {
            continue;
        }
        let key = (sy >= 2 || m_rf == 1, sx);
        if best.map_or(true, |(k, _)| key > k) {
            best = Some((key, (sx, sy)));
        }
    }
    best.unwrap_or_else(|| {
        panic!(
            "m_rf = {m_rf} does not factor into a {}x{} subarray",
            geom.m_x, geom.m_y
        )
    })
    .1
}

/// Rows of the 2-D DFT over an RF-chain-sized subarray, embedded in the
/// full aperture (antennas outside the subarray are switched off).
///
/// Every steering atom carries identical energy through this codebook
/// (its Gram is a scaled subarray selector), so the grid search's
/// unnormalized correlation metric has no gain bias across atoms.
fn subarray_dft_rows(geom: &ArrayGeometry, m_rf: usize) -> Vec<Vec<Complex64>> {
    let (sx, sy) = subarray_dims(geom, m_rf);
    let m = geom.antennas();
    let mut rows = Vec::with_capacity(m_rf);
    for kp in 0..sx {
        for kq in 0..sy {
            let mut row = vec![Complex64::new(0.0, 0.0); m];
            for p in 0..sx {
                for q in 0..sy {
                    let phase = -2.0 * PI
                        * ((kp * p) as f64 / sx as f64 + (kq * q) as f64 / sy as f64);
                    row[p * geom.m_y + q] = Complex64::from_polar(1.0, phase);
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Combiner design for one block.
///
/// Without previous angles the combiner is the 2-D DFT beam codebook of
/// an RF-chain-sized subarray. With previous angles the first row
/// becomes the conjugated steering vector at those angles (a matched
/// filter that maximizes received power) and the remaining rows are the
/// codebook rows least correlated with it, keeping the post-combining
/// noise shaping well conditioned. Either way the result is
/// Frobenius-normalized.
pub fn design_combiner(
    prev_angles: Option<(f64, f64)>,
    geom: &ArrayGeometry,
    m_rf: usize,
) -> Combiner {
    let m = geom.antennas();
    assert!(m_rf >= 1 && m_rf <= m, "need 1 <= m_rf <= antennas");
    let codebook = subarray_dft_rows(geom, m_rf);
    let rows: Vec<Vec<Complex64>> = match prev_angles {
        None => codebook,
        Some((theta_e, theta_a)) => {
            let a = array_response(theta_e, theta_a, geom);
            let matched: Vec<Complex64> = a.iter().map(|z| z.conj()).collect();
            let mut ranked: Vec<(usize, f64)> = codebook
                .iter()
                .enumerate()
                .map(|(k, row)| {
                    let corr: Complex64 = row
                        .iter()
                        .zip(matched.iter())
                        .map(|(d, w0)| w0.conj() * d)
                        .sum();
                    (k, corr.norm())
                })
                .collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let mut picked: Vec<usize> = ranked.iter().take(m_rf - 1).map(|&(k, _)| k).collect();
            picked.sort_unstable();
            let mut rows = vec![matched];
            rows.extend(picked.into_iter().map(|k| codebook[k].clone()));
            rows
        }
    };
    let w = CMatrix::from_fn(m_rf, m, |r, c| rows[r][c]);
    Combiner::new(w).expect("combiner rows are nonzero")
}

/// Least-squares estimate of the aggregate complex gain: project each
/// de-spread symbol onto the effective steering vector, remove the
/// Doppler rotation, and average over the block.
pub fn ls_summation_term(
    block: &ReceivedBlock,
    w: &Combiner,
    theta_e: f64,
    theta_a: f64,
    doppler_hz: f64,
    tx_power: f64,
    t_sym: f64,
    geom: &ArrayGeometry,
) -> Result<Complex64, EstimError> {
    let a = array_response(theta_e, theta_a, geom);
    let x = w.matrix() * a * Complex64::new(tx_power.sqrt(), 0.0);
    let energy = x.norm_squared();
    if energy <= f64::MIN_POSITIVE {
        return Err(EstimError::ZeroSteering);
    }
    let n_pilots = block.ncols();
    let mut acc = Complex64::new(0.0, 0.0);
    for b in 0..n_pilots {
        let projected = (x.adjoint() * block.column(b))[(0, 0)] / energy;
        let derotate = Complex64::from_polar(1.0, -2.0 * PI * doppler_hz * b as f64 * t_sym);
        acc += projected * derotate;
    }
    Ok(acc / n_pilots as f64)
}

/// Least-squares channel recovery: de-rotate each symbol by the Doppler
/// estimate, average, and apply the pseudo-inverse of the scaled
/// combiner. The result is the channel's projection onto the combiner
/// row space when the Doppler is exact and the block is noise-free.
///
/// For a full-row-rank combiner the pseudo-inverse is
/// `W^H (W W^H)^{-1}`, applied here through a Cholesky solve; a failed
/// factorization is exactly the rank-deficient error case.
pub fn ls_csi(
    block: &ReceivedBlock,
    w: &Combiner,
    doppler_hz: f64,
    tx_power: f64,
    t_sym: f64,
) -> Result<ChannelVector, EstimError> {
    let chol = nalgebra::linalg::Cholesky::new(w.sigma())
        .ok_or(EstimError::RankDeficientCombiner)?;

    let n_pilots = block.ncols();
    let mut acc = CVector::zeros(w.rf_chains());
    for b in 0..n_pilots {
        let derotate = Complex64::from_polar(1.0, -2.0 * PI * doppler_hz * b as f64 * t_sym);
        acc += block.column(b) * derotate;
    }
    acc /= Complex64::new(n_pilots as f64, 0.0);
    let whitened = chol.solve(&acc);
    Ok(w.matrix().adjoint() * whitened / Complex64::new(tx_power.sqrt(), 0.0))
}
