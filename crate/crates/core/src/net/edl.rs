//! Error-driven feedback: the transfer matrix `T` is replaced by a feedback
//! matrix `B = U (Σ + sI) Vᵀ` built from the SVD of `T`.

use crate::linalg::{svd, Matrix, SvdResult};

use super::NetError;

#[derive(Debug, Clone)]
pub struct FeedbackMatrix {
    pub b: Matrix,
    pub s_used: f64,
    pub svd: SvdResult,
}

/// Shifts every singular value of `t` by `s`.
///
/// `U (Σ + sI) Vᵀ` is evaluated as `T + s · U Vᵀ`, which is the same matrix
/// and reproduces `T` bit-for-bit when `s == 0`.
pub fn feedback_matrix(t: &Matrix, s: f64) -> Result<FeedbackMatrix, NetError> {
    let factors = svd(t)?;
    let b = if s == 0.0 {
        t.clone()
    } else {
        t.add(&factors.polar().scale(s)?)?
    };
    Ok(FeedbackMatrix {
        b,
        s_used: s,
        svd: factors,
    })
}

/// Regularization coefficient `sign(⟨delta, ∇R(w)⟩) · c` with `∇R(w) = w`,
/// which keeps `λ ⟨delta, w⟩` non-negative. `sign(0) = 0`.
pub fn lambda_signed(delta_like: &Matrix, w: &Matrix, c: f64) -> Result<f64, NetError> {
    let inner = delta_like.dot(w)?;
    let sign = if inner > 0.0 {
        1.0
    } else if inner < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(sign * c)
}
