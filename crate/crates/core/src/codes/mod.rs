//! Code construction and the structural matrices derived from `H` and `L`.

mod css;
mod model;
mod structural;

pub use css::{
    bivariate_polynomial_matrix, build_bb_code, preset, CssCode, Monomial, PauliError, PRESET_NAMES,
};
pub use model::{code_capacity_model, CodeModel, ErrorPrior};
pub use structural::{build_structural, IntMatrix, StructuralMatrices};
