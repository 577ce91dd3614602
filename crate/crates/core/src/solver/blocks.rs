//! First-order system of the profiled program in the (θ, v) parametrization
//! and its Jacobian blocks
//!
//! ```text
//! ∇h = ( A   D )      A = P_n[Ψ v Λ′ + (∇Φ v)(∇Φ v)ᵗ Λ″]
//!      ( Dᵗ  V )      D = P_n[∇Φ Λ′ + (∇Φ v) Φᵗ Λ″]
//!                     V = P_n[Φ Φᵗ Λ″]
//! ```
//!
//! with Λ′, Λ″ evaluated at vᵗΦ(θ, ·).

use nalgebra::{DMatrix, DVector};

use crate::error::{GelError, Result};
use crate::kernel::DivergenceKernel;
use crate::linalg::{min_eigenvalue, symmetric_eigenvalues};
use crate::model::MomentModel;
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonBlocks {
    /// d×d
    pub a: DMatrix<f64>,
    /// d×k
    pub d: DMatrix<f64>,
    /// k×k
    pub v: DMatrix<f64>,
}

impl NewtonBlocks {
    /// The full (d+k)×(d+k) Jacobian.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (d, k) = self.d.shape();
        let mut j = DMatrix::zeros(d + k, d + k);
        j.view_mut((0, 0), (d, d)).copy_from(&self.a);
        j.view_mut((0, d), (d, k)).copy_from(&self.d);
        j.view_mut((d, 0), (k, d)).copy_from(&self.d.transpose());
        j.view_mut((d, d), (k, k)).copy_from(&self.v);
        j
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.assemble())
    }
}

fn argument(kernel: &DivergenceKernel, v: &DVector<f64>, phi: &DVector<f64>, row: usize) -> Result<f64> {
    let s = v.dot(phi);
    if !kernel.in_domain(s) {
        return Err(GelError::Evaluation {
            row,
            message: format!("argument {s} outside the domain of kernel {}", kernel.name()),
        });
    }
    Ok(s)
}

/// h_n(θ, v) = (P_n[∇Φ v Λ′(vᵗΦ)], P_n[Φ Λ′(vᵗΦ)]), stacked θ-block first
/// so that its Jacobian is laid out as [`NewtonBlocks::assemble`].
pub fn first_order_map(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dims = model.dims();
    let mut out = DVector::zeros(dims.d + dims.k);
    for (i, x) in sample.rows().enumerate() {
        let phi = model.phi(theta, x);
        let s = argument(kernel, v, &phi, i)?;
        let l1 = kernel.lambda1(s);
        let gv = model.grad_phi(theta, x) * v;
        out.rows_mut(0, dims.d).axpy(l1, &gv, 1.0);
        out.rows_mut(dims.d, dims.k).axpy(l1, &phi, 1.0);
    }
    Ok(out / sample.n() as f64)
}

pub fn newton_blocks(
    model: &MomentModel,
    sample: &Sample,
    kernel: &DivergenceKernel,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<NewtonBlocks> {
    let dims = model.dims();
    let mut a = DMatrix::zeros(dims.d, dims.d);
    let mut d = DMatrix::zeros(dims.d, dims.k);
    let mut vv = DMatrix::zeros(dims.k, dims.k);
    for (i, x) in sample.rows().enumerate() {
        let phi = model.phi(theta, x);
        let s = argument(kernel, v, &phi, i)?;
        let (l1, l2) = (kernel.lambda1(s), kernel.lambda2(s));
        let grad = model.grad_phi(theta, x);
        let gv = &grad * v;
        for (c, psi) in model.hess_phi(theta, x).iter().enumerate() {
            a += psi * (v[c] * l1);
        }
        a.ger(l2, &gv, &gv, 1.0);
        d += &grad * l1;
        d.ger(l2, &gv, &phi, 1.0);
        vv.ger(l2, &phi, &phi, 1.0);
    }
    let n = sample.n() as f64;
    Ok(NewtonBlocks {
        a: a / n,
        d: d / n,
        v: vv / n,
    })
}

/// θ-component −(D V⁻¹ Dᵗ)⁻¹ D V⁻¹ g of the Newton step, through Cholesky
/// factors of V and of the d×d complement.
pub fn schur_update(d: &DMatrix<f64>, v: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let chol_v = v.clone().cholesky().ok_or_else(|| GelError::Conditioning {
        context: "Cholesky of V".into(),
        min_eigenvalue: min_eigenvalue(v),
    })?;
    let vinv_dt = chol_v.solve(&d.transpose());
    let complement = d * &vinv_dt;
    let chol_s = complement.clone().cholesky().ok_or_else(|| GelError::Conditioning {
        context: "Cholesky of D V⁻¹ Dᵗ".into(),
        min_eigenvalue: min_eigenvalue(&complement),
    })?;
    let rhs = d * chol_v.solve(g);
    Ok(-chol_s.solve(&rhs))
}
