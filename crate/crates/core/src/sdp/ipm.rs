//! Dense primal-dual interior-point method for small block-diagonal SDPs.
//!
//! Dual form: maximise `bᵀy` subject to `Z = C − Σ y_i A_i ≽ 0`, paired with
//! the primal `min tr(CX)` s.t. `tr(A_i X) = b_i`, `X ≽ 0`. The search
//! direction is HKM with a Mehrotra predictor-corrector. Iterates stay
//! strictly dual feasible (Z is recomputed from y every step), so any y the
//! method visits is a valid candidate for the caller.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::linalg::{self, Mat};

pub(crate) struct BlockSdp {
    pub sizes: Vec<usize>,
    pub c: Vec<Mat>,
    /// `a[i][k]`: block `k` of `A_i`, `None` when that block is zero.
    pub a: Vec<Vec<Option<Mat>>>,
    pub b: DVector<f64>,
}

pub(crate) struct IpmSettings {
    pub max_iterations: usize,
    /// Below this duality measure the iteration stops regardless of the caller.
    pub mu_floor: f64,
    pub step_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStop {
    Observer,
    Converged,
    Stalled,
    IterationLimit,
    Breakdown(&'static str),
}

pub(crate) struct IpmState {
    pub y: DVector<f64>,
    pub mu: f64,
    /// Relative primal residual `‖b − A(X)‖ / (1 + ‖b‖)`.
    pub primal_residual: f64,
    pub iterations: usize,
    pub stop: IpmStop,
}

fn trace_product(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

impl BlockSdp {
    fn total_dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn dual_slack(&self, y: &DVector<f64>) -> Vec<Mat> {
        let mut z = self.c.clone();
        for (yi, ai) in y.iter().zip(&self.a) {
            for (zk, aik) in z.iter_mut().zip(ai) {
                if let Some(m) = aik {
                    *zk -= m * *yi;
                }
            }
        }
        z.iter().map(linalg::symmetrize).collect()
    }

    fn direction_z(&self, dy: &DVector<f64>) -> Vec<Mat> {
        let mut dz: Vec<Mat> = self.sizes.iter().map(|&s| Mat::zeros(s, s)).collect();
        for (di, ai) in dy.iter().zip(&self.a) {
            for (zk, aik) in dz.iter_mut().zip(ai) {
                if let Some(m) = aik {
                    *zk -= m * *di;
                }
            }
        }
        dz
    }

    /// `tr(A_i W)` for every `i`, with `W` given blockwise.
    fn apply(&self, w: &[Mat]) -> DVector<f64> {
        DVector::from_iterator(
            self.a.len(),
            self.a.iter().map(|ai| {
                ai.iter().zip(w).filter_map(|(aik, wk)| aik.as_ref().map(|m| trace_product(m, wk))).sum::<f64>()
            }),
        )
    }
}

/// Largest step `α ≤ 1/fraction` keeping `S + αΔ ≻ 0`, times `fraction`, capped at 1.
fn step_length(s: &[Mat], ds: &[Mat], fraction: f64) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (sk, dk) in s.iter().zip(ds) {
        let chol = Cholesky::new(sk.clone())?;
        let l = chol.l();
        let linv = l.solve_lower_triangular(&Mat::identity(l.nrows(), l.ncols()))?;
        let scaled = &linv * dk * linv.transpose();
        let lmin = linalg::lambda_min(&scaled);
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    Some((fraction * alpha).min(1.0))
}

fn inverse_pd(m: &Mat) -> Option<Mat> {
    let chol = Cholesky::new(m.clone())?;
    Some(linalg::symmetrize(&chol.inverse()))
}

fn solve_schur(m: &Mat, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    // Near the optimum of degenerate problems M loses rank; a diagonal shift
    // relative to its largest entry keeps the step well defined.
    let scale = m.diagonal().amax();
    let mut shift = 0.0;
    for _ in 0..8 {
        let shifted = m + Mat::identity(m.nrows(), m.ncols()) * shift;
        if let Some(chol) = Cholesky::<f64, Dyn>::new(shifted) {
            return Some(chol.solve(rhs));
        }
        shift = if shift == 0.0 { 1e-15 * scale } else { shift * 100.0 };
    }
    m.clone().lu().solve(rhs)
}

/// Runs the iteration from a strictly dual-feasible `y0`. `observer` sees every
/// dual iterate together with the current duality measure and may stop the run.
pub(crate) fn solve<F>(sdp: &BlockSdp, y0: DVector<f64>, settings: &IpmSettings, mut observer: F) -> IpmState
where
    F: FnMut(&DVector<f64>, f64, f64) -> bool,
{
    let n_total = sdp.total_dim() as f64;
    let b_norm = sdp.b.norm();
    let mut y = y0;
    let mut x: Vec<Mat> = sdp.sizes.iter().map(|&s| Mat::identity(s, s) * 10.0).collect();
    let state = |y: &DVector<f64>, mu, res, it, stop| IpmState { y: y.clone(), mu, primal_residual: res, iterations: it, stop };
    let mut mu = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iterations {
        let z = sdp.dual_slack(&y);
        let Some(zinv) = z.iter().map(inverse_pd).collect::<Option<Vec<_>>>() else {
            return state(&y, mu, residual, it, IpmStop::Breakdown("zinv"));
        };
        mu = z.iter().zip(&x).map(|(zk, xk)| trace_product(zk, xk)).sum::<f64>() / n_total;
        residual = (&sdp.b - sdp.apply(&x)).norm() / (1.0 + b_norm);
        if observer(&y, mu, residual) {
            return state(&y, mu, residual, it, IpmStop::Observer);
        }
        if mu < settings.mu_floor && residual < 1e-9 {
            return state(&y, mu, residual, it, IpmStop::Converged);
        }

        // Schur complement M_ij = tr(A_i X A_j Z⁻¹).
        let p = sdp.a.len();
        let g: Vec<Vec<Option<Mat>>> = sdp
            .a
            .iter()
            .map(|aj| {
                aj.iter()
                    .enumerate()
                    .map(|(k, ajk)| ajk.as_ref().map(|m| &x[k] * m * &zinv[k]))
                    .collect()
            })
            .collect();
        let mut schur = Mat::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let mut acc = 0.0;
                for (aik, gjk) in sdp.a[i].iter().zip(&g[j]) {
                    if let (Some(aik), Some(gjk)) = (aik, gjk) {
                        acc += trace_product(aik, gjk);
                    }
                }
                schur[(i, j)] = acc;
                schur[(j, i)] = acc;
            }
        }
        let a_zinv = sdp.apply(&zinv);

        let direction = |sigma_mu: f64, corr: Option<&[Mat]>| -> Option<(DVector<f64>, Vec<Mat>, Vec<Mat>)> {
            let mut rhs = &sdp.b - &a_zinv * sigma_mu;
            if let Some(c) = corr {
                rhs += sdp.apply(c);
            }
            let dy = solve_schur(&schur, &rhs)?;
            let dz = sdp.direction_z(&dy);
            let dx = (0..sdp.sizes.len())
                .map(|k| {
                    let mut d = &zinv[k] * sigma_mu - &x[k] - &x[k] * &dz[k] * &zinv[k];
                    if let Some(c) = corr {
                        d -= &c[k];
                    }
                    linalg::symmetrize(&d)
                })
                .collect();
            Some((dy, dx, dz))
        };

        let Some((_, dx_a, dz_a)) = direction(0.0, None) else {
            return state(&y, mu, residual, it, IpmStop::Breakdown("predictor"));
        };
        let (Some(ap), Some(ad)) = (step_length(&x, &dx_a, 1.0), step_length(&z, &dz_a, 1.0)) else {
            return state(&y, mu, residual, it, IpmStop::Breakdown("predictor step"));
        };
        let mu_aff = x
            .iter()
            .zip(&dx_a)
            .zip(z.iter().zip(&dz_a))
            .map(|((xk, dxk), (zk, dzk))| trace_product(&(xk + dxk * ap), &(zk + dzk * ad)))
            .sum::<f64>()
            / n_total;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr: Vec<Mat> = (0..sdp.sizes.len()).map(|k| &dx_a[k] * &dz_a[k] * &zinv[k]).collect();
        let Some((dy, dx, dz)) = direction(sigma * mu, Some(&corr)) else {
            return state(&y, mu, residual, it, IpmStop::Breakdown("corrector"));
        };
        let (Some(ap), Some(ad)) =
            (step_length(&x, &dx, settings.step_fraction), step_length(&z, &dz, settings.step_fraction))
        else {
            return state(&y, mu, residual, it, IpmStop::Breakdown("corrector step"));
        };
        if ap < 1e-12 && ad < 1e-12 {
            return state(&y, mu, residual, it, IpmStop::Stalled);
        }
        for (xk, dxk) in x.iter_mut().zip(&dx) {
            *xk += dxk * ap;
        }
        y += dy * ad;
    }
    state(&y, mu, residual, settings.max_iterations, IpmStop::IterationLimit)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// max y s.t. [[1, y], [y, 1]] ≽ 0 has optimum y = 1.
    #[test]
    fn two_by_two_optimum() {
        let sdp = BlockSdp {
            sizes: vec![2],
            c: vec![Mat::identity(2, 2)],
            a: vec![vec![Some(Mat::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]))]],
            b: DVector::from_element(1, 1.0),
        };
        let settings = IpmSettings { max_iterations: 100, mu_floor: 1e-12, step_fraction: 0.98 };
        let out = solve(&sdp, DVector::zeros(1), &settings, |_, _, _| false);
        assert_eq!(out.stop, IpmStop::Converged);
        assert!((out.y[0] - 1.0).abs() < 1e-9);
    }

    /// Linear program in diagonal form: max y1 + y2 s.t. y1 ≤ 1, y2 ≤ 2, y1 + y2 ≤ 2.5.
    #[test]
    fn diagonal_lp() {
        let one = |v: f64| Some(Mat::from_element(1, 1, v));
        let sdp = BlockSdp {
            sizes: vec![1, 1, 1],
            c: vec![Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, 2.0), Mat::from_element(1, 1, 2.5)],
            a: vec![vec![one(1.0), None, one(1.0)], vec![None, one(1.0), one(1.0)]],
            b: DVector::from_row_slice(&[1.0, 1.0]),
        };
        let settings = IpmSettings { max_iterations: 100, mu_floor: 1e-12, step_fraction: 0.98 };
        let out = solve(&sdp, DVector::zeros(2), &settings, |_, _, _| false);
        assert_eq!(out.stop, IpmStop::Converged);
        assert!((out.y[0] + out.y[1] - 2.5).abs() < 1e-9);
    }
}
