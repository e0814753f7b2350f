//! Model-based iterative reconstruction.
//!
//! Solves min ||A m - y||^2 + lambda ||m||^2 with A the time-segmented
//! off-resonance forward operator, via conjugate gradients on the normal
//! equations (A^H A + lambda I) m = A^H y. Density weighting is never
//! applied inside the operator; the least-squares formulation recovers
//! scale on its own.

use num_complex::Complex64;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{inner_product, ComplexImage, FieldMap};
use crate::offres::{adjoint_segmented, build_segmented, default_segments, forward_segmented};
use crate::trajectory::{KSpaceData, SpiralTrajectory};
use crate::transform::GriddingPlan;

#[derive(Clone, Debug)]
pub struct CgConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub lambda: f64,
    /// Start from the density-compensated gridding recon instead of zero.
    pub warm_start: bool,
    /// Run a randomized forward/adjoint consistency check before solving.
    pub self_check: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-6,
            lambda: 0.0,
            warm_start: false,
            self_check: false,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("cg max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("cg tol must be > 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("cg lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Convergence record of one CG solve.
#[derive(Clone, Debug)]
pub struct CgReport {
    pub iterations: usize,
    /// Normal-equation residual norm at the start of each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl CgReport {
    /// CSV with header `iteration,residual`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual\n");
        for (i, r) in self.residuals.iter().enumerate() {
            out.push_str(&format!("{},{:.12e}\n", i + 1, r));
        }
        out
    }
}

/// Conjugate gradients for a self-adjoint positive semidefinite operator,
/// starting from `x0` (zero when `None`). Stops when the residual drops
/// below `tol` relative to the right-hand side, or at `max_iters`.
pub fn cg_solve(
    apply_normal_op: impl Fn(&ComplexImage) -> Result<ComplexImage>,
    rhs: &ComplexImage,
    cfg: &CgConfig,
    x0: Option<ComplexImage>,
) -> Result<(ComplexImage, CgReport)> {
    cfg.validate()?;
    let rhs_norm = rhs.l2_norm();
    let mut x = match x0 {
        Some(img) => {
            if !img.same_shape(rhs) {
                return Err(Error::DimensionMismatch("cg initial guess shape".into()));
            }
            img
        }
        None => ComplexImage::zeros(rhs.height(), rhs.width()),
    };
    let mut r = rhs.sub(&apply_normal_op(&x)?)?;
    let mut p = r.clone();
    let mut rs = r.l2_norm().powi(2);

    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let rnorm = rs.sqrt();
        if !rnorm.is_finite() {
            return Err(Error::NonFinite("cg residual".into()));
        }
        residuals.push(rnorm);
        if rnorm <= cfg.tol * rhs_norm || rhs_norm == 0.0 {
            converged = true;
            break;
        }
        let ap = apply_normal_op(&p)?;
        let pap = inner_product(p.data(), ap.data())?.re;
        if !pap.is_finite() {
            return Err(Error::NonFinite("cg curvature".into()));
        }
        if pap <= rs * 1e-14 {
            return Err(Error::CgBreakdown(pap));
        }
        let alpha = rs / pap;
        x = x.add(&p.scale(alpha))?;
        r = r.sub(&ap.scale(alpha))?;
        let rs_new = r.l2_norm().powi(2);
        let beta = rs_new / rs;
        p = r.add(&p.scale(beta))?;
        rs = rs_new;
    }
    let report = CgReport {
        iterations: residuals.len(),
        residuals,
        converged,
    };
    Ok((x, report))
}

/// Deblur one frame by CG least-squares inversion of the segmented
/// off-resonance model built from the known field map.
pub fn ir_deblur(
    data: &KSpaceData,
    fmap: &FieldMap,
    traj: &SpiralTrajectory,
    plan: Arc<GriddingPlan>,
    cfg: &CgConfig,
) -> Result<(ComplexImage, CgReport)> {
    cfg.validate()?;
    let n_seg = default_segments(fmap, traj);
    let model = build_segmented(fmap, traj, plan.clone(), n_seg)?;

    if cfg.self_check {
        let mut rng = crate::rng::Rng::new(0x5e1f);
        let n = plan.matrix();
        let x = ComplexImage::from_fn(n, n, |_, _| {
            Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0))
        });
        let y = KSpaceData {
            samples: (0..traj.n_samples())
                .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
                .collect(),
            trajectory_id: traj.id(),
        };
        let ax = forward_segmented(&x, &model)?;
        let aty = adjoint_segmented(&y, &model)?;
        let lhs = inner_product(&ax.samples, &y.samples)?;
        let rhs = inner_product(x.data(), aty.data())?;
        let scale = x.l2_norm() * y.samples.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if (lhs - rhs).norm() / scale > 1e-6 {
            return Err(Error::NonFinite(format!(
                "operator adjoint self-check failed: defect {:.3e}",
                (lhs - rhs).norm() / scale
            )));
        }
    }

    let rhs = adjoint_segmented(data, &model)?;
    let lambda = cfg.lambda;
    let op = |m: &ComplexImage| -> Result<ComplexImage> {
        let ks = forward_segmented(m, &model)?;
        let mut out = adjoint_segmented(&ks, &model)?;
        if lambda != 0.0 {
            out = out.add(&m.scale(lambda))?;
        }
        if !out.all_finite() {
            return Err(Error::NonFinite("ir normal operator output".into()));
        }
        Ok(out)
    };
    let x0 = if cfg.warm_start {
        let density = crate::transform::pipe_menon_density(traj, &plan, 20)?;
        Some(crate::transform::nufft_adjoint(data, &plan, &density)?)
    } else {
        None
    };
    cg_solve(op, &rhs, cfg, x0)
}
