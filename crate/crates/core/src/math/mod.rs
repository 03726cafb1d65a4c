//! Special functions, Gaussian quadrature, root finding and the handful of
//! dense linear-algebra kernels the solvers need.

pub mod linalg;
pub mod quadrature;
pub mod roots;
pub mod special;

pub use quadrature::{gaussian_integral, Estimate, Quadrature, QuadratureScheme, T_CUT};
pub use special::{erf, erfc, h_function, inverse_gaussian_tail, normal_cdf, normal_pdf};
