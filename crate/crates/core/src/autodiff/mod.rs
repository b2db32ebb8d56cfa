//! A small reverse-mode automatic differentiation engine over dense `f64`
//! matrices: exactly the operations the estimator and its two training losses
//! need, and nothing more.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, MIN_ROTATION_NORM};
pub use tensor::Tensor;


/// Central finite-difference gradient check used by the tests and the
/// acceptance suite. Kept free of any engine internals.
pub mod gradcheck {
    /// Relative tolerance with an absolute floor: passes when
    /// `|analytic - numeric| <= max(rel_tol * max(|analytic|, |numeric|), abs_floor)`.
    pub fn within(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= (rel_tol * analytic.abs().max(numeric.abs())).max(abs_floor)
    }

    /// Relative error reported for diagnostics; zero when both are under the floor.
    pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
        let diff = (analytic - numeric).abs();
        if diff <= abs_floor {
            return 0.0;
        }
        diff / analytic.abs().max(numeric.abs())
    }

    /// `(f(x + h) - f(x - h)) / 2h` for the `index`-th coordinate.
    pub fn central_difference(x: &mut [f64], index: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let orig = x[index];
        x[index] = orig + h;
        let plus = f(x);
        x[index] = orig - h;
        let minus = f(x);
        x[index] = orig;
        (plus - minus) / (2.0 * h)
    }
}
