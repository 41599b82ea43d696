use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{DepthError, DepthMap};
use crate::geometry::{pixel_ray, project_ray, BEHIND_CAMERA_EPS};
use crate::warp::ViewRecord;

/// Overlap samples per view pair are drawn from this many grid points per
/// axis of the first view.
pub const OVERLAP_GRID: usize = 64;

const REGULARIZATION: f64 = 1e-6;

/// Per-view affine depth correction `s·d + t`; view 0 is the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthAlignment {
    pub scales: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl DepthAlignment {
    pub fn identity(n: usize) -> Self {
        Self {
            scales: vec![1.0; n],
            shifts: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub alignment: DepthAlignment,
    /// RMS of the pairwise residual with every view at `(1, 0)`.
    pub initial_rms: f64,
    pub residual_rms: f64,
    pub samples: usize,
    /// The normal equations were rank-deficient and the solve fell back to
    /// a small pull toward `(1, 0)`.
    pub regularized: bool,
}

struct Sample {
    i: usize,
    j: usize,
    di: f64,
    dj: f64,
}

fn overlap_samples(views: &[(&ViewRecord, &DepthMap)]) -> Vec<Sample> {
    let mut out = Vec::new();
    for (i, (vi, di)) in views.iter().enumerate() {
        let ki = vi.intrinsics.resized(di.width(), di.height());
        for (j, (vj, dj)) in views.iter().enumerate().skip(i + 1) {
            let kj = vj.intrinsics.resized(dj.width(), dj.height());
            for gy in 0..OVERLAP_GRID {
                for gx in 0..OVERLAP_GRID {
                    let px = (gx as f64 + 0.5) / OVERLAP_GRID as f64 * ki.width as f64;
                    let py = (gy as f64 + 0.5) / OVERLAP_GRID as f64 * ki.height as f64;
                    let world = vi.rotation.apply(&pixel_ray(px, py, &ki));
                    let Some((qx, qy)) = project_ray(&vj.rotation.apply_inverse(&world), &kj, BEHIND_CAMERA_EPS) else {
                        continue;
                    };
                    if qx < 0.5 || qy < 0.5 || qx > kj.width as f64 - 0.5 || qy > kj.height as f64 - 0.5 {
                        continue;
                    }
                    out.push(Sample {
                        i,
                        j,
                        di: di.sample_bilinear(px, py),
                        dj: dj.sample_bilinear(qx, qy),
                    });
                }
            }
        }
    }
    out
}

fn rms(samples: &[Sample], a: &DepthAlignment) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let ss: f64 = samples
        .iter()
        .map(|s| {
            let r = a.scales[s.i] * s.di + a.shifts[s.i] - a.scales[s.j] * s.dj - a.shifts[s.j];
            r * r
        })
        .sum();
    (ss / samples.len() as f64).sqrt()
}

/// Jointly solves for per-view scale and shift so that overlapping views
/// agree along shared rays, with the first view fixed at `(1, 0)`.
pub fn align_depths(views: &[ViewRecord]) -> Result<AlignmentReport, DepthError> {
    let with_depth: Vec<(&ViewRecord, &DepthMap)> = views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.depth
                .as_ref()
                .map(|d| (v, d))
                .ok_or_else(|| DepthError::InvalidArgument(format!("view {i} has no depth map")))
        })
        .collect::<Result<_, _>>()?;
    let n = views.len();
    if n == 0 {
        return Err(DepthError::InvalidArgument("no views to align".into()));
    }
    let samples = overlap_samples(&with_depth);
    let identity = DepthAlignment::identity(n);
    let initial_rms = rms(&samples, &identity);
    if n == 1 {
        return Ok(AlignmentReport {
            alignment: identity,
            initial_rms,
            residual_rms: initial_rms,
            samples: samples.len(),
            regularized: false,
        });
    }

    // Unknowns: (s_k, t_k) for k = 1..n, at columns 2(k-1), 2(k-1)+1.
    let m = 2 * (n - 1);
    let col = |view: usize| 2 * (view - 1);
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    for s in &samples {
        // residual = s_i d_i + t_i - s_j d_j - t_j
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut rhs = 0.0;
        if s.i == 0 {
            rhs -= s.di;
        } else {
            row.push((col(s.i), s.di));
            row.push((col(s.i) + 1, 1.0));
        }
        if s.j == 0 {
            rhs += s.dj;
        } else {
            row.push((col(s.j), -s.dj));
            row.push((col(s.j) + 1, -1.0));
        }
        for &(a, va) in &row {
            atb[a] += va * rhs;
            for &(b, vb) in &row {
                ata[(a, b)] += va * vb;
            }
        }
    }

    let eig = ata.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = !(max_ev > 0.0) || min_ev <= max_ev * 1e-12;
    if regularized {
        warn!(
            "depth alignment is rank-deficient ({} samples, eigenvalue ratio {:e}); regularizing toward (1, 0)",
            samples.len(),
            if max_ev > 0.0 { min_ev / max_ev } else { 0.0 }
        );
        for k in 1..n {
            ata[(col(k), col(k))] += REGULARIZATION;
            atb[col(k)] += REGULARIZATION;
            ata[(col(k) + 1, col(k) + 1)] += REGULARIZATION;
        }
    }
    let x = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .ok_or_else(|| DepthError::InvalidArgument("alignment system is singular".into()))?;

    let mut alignment = DepthAlignment::identity(n);
    for k in 1..n {
        alignment.scales[k] = x[col(k)];
        alignment.shifts[k] = x[col(k) + 1];
        if !(alignment.scales[k] > 0.0) {
            return Err(DepthError::NonPositiveScale {
                view: k,
                scale: alignment.scales[k],
            });
        }
    }
    let residual_rms = rms(&samples, &alignment);
    Ok(AlignmentReport {
        alignment,
        initial_rms,
        residual_rms,
        samples: samples.len(),
        regularized,
    })
}

/// Returns copies of the views with `s·d + t` applied to their depth maps.
pub fn apply_alignment(views: &[ViewRecord], alignment: &DepthAlignment) -> Result<Vec<ViewRecord>, DepthError> {
    views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut out = v.clone();
            if let Some(d) = &v.depth {
                out.depth = Some(d.affine(alignment.scales[i], alignment.shifts[i])?);
            }
            Ok(out)
        })
        .collect()
}
