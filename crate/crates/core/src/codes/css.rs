//! CSS codes and the bivariate bicycle family.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gf2::{BinaryMatrix, BinaryVector};

/// A CSS stabilizer code. X-type rows (`hx`, `lx`) detect Z errors and
/// Z-type rows (`hz`, `lz`) detect X errors.
#[derive(Debug, Clone)]
pub struct CssCode {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub hx: BinaryMatrix,
    pub hz: BinaryMatrix,
    pub lx: BinaryMatrix,
    pub lz: BinaryMatrix,
    /// Code distance as published; never computed.
    pub distance: Option<usize>,
}

impl CssCode {
    /// Validates commutation and derives a logical operator basis.
    pub fn new(
        name: impl Into<String>,
        hx: BinaryMatrix,
        hz: BinaryMatrix,
        distance: Option<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if hx.cols() != hz.cols() {
            return Err(Error::Code(format!(
                "{name}: H_X has {} columns, H_Z has {}",
                hx.cols(),
                hz.cols()
            )));
        }
        if !hx.mul_transpose(&hz)?.is_zero() {
            return Err(Error::Code(format!("{name}: H_X·H_Zᵀ ≠ 0")));
        }
        let n = hx.cols();
        let k = n - hx.rank() - hz.rank();
        let lx = logical_basis(&hz, &hx, k)?;
        let lz = logical_basis(&hx, &hz, k)?;
        let code = Self {
            name,
            n,
            k,
            hx,
            hz,
            lx,
            lz,
            distance,
        };
        code.check_invariants()?;
        Ok(code)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Code(format!("{}: {what}", self.name)));
        if !self.hx.mul_transpose(&self.hz)?.is_zero() {
            return fail("H_X·H_Zᵀ ≠ 0");
        }
        if !self.lx.mul_transpose(&self.hz)?.is_zero() {
            return fail("L_X·H_Zᵀ ≠ 0");
        }
        if !self.lz.mul_transpose(&self.hx)?.is_zero() {
            return fail("L_Z·H_Xᵀ ≠ 0");
        }
        if self.n - self.hx.rank() - self.hz.rank() != self.k {
            return fail("rank-derived k differs from declared k");
        }
        Ok(())
    }

    pub fn expect_k(self, expected: usize) -> Result<Self> {
        if self.k != expected {
            return Err(Error::LogicalCount {
                name: self.name,
                computed: self.k,
                expected,
            });
        }
        Ok(self)
    }
}

/// Basis of `ker(commuting)` modulo `rowspace(stabilizers)`, extended greedily
/// in kernel order.
fn logical_basis(
    commuting: &BinaryMatrix,
    stabilizers: &BinaryMatrix,
    k: usize,
) -> Result<BinaryMatrix> {
    let n = stabilizers.cols();
    let mut span = stabilizers.clone();
    let mut rank = span.rank();
    let mut chosen = Vec::with_capacity(k);
    for v in commuting.kernel() {
        if chosen.len() == k {
            break;
        }
        let candidate = span.vstack(&BinaryMatrix::from_row_vectors(
            n,
            std::slice::from_ref(&v),
        )?)?;
        let r = candidate.rank();
        if r > rank {
            span = candidate;
            rank = r;
            chosen.push(v);
        }
    }
    if chosen.len() != k {
        return Err(Error::Code(format!(
            "found {} logical operators, expected {k}",
            chosen.len()
        )));
    }
    Ok(BinaryMatrix::from_row_vectors(n, &chosen)?)
}

/// A monomial `x^a y^b` over `Z_l × Z_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Monomial {
    pub x: usize,
    pub y: usize,
}

impl Monomial {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Sum of cyclic-shift permutation matrices `Σ S_l^a ⊗ S_m^b` mod 2.
pub fn bivariate_polynomial_matrix(l: usize, m: usize, terms: &[Monomial]) -> BinaryMatrix {
    let n = l * m;
    let mut out = BinaryMatrix::zeros(n, n);
    for term in terms {
        for i in 0..l {
            for j in 0..m {
                let row = i * m + j;
                let col = ((i + term.x) % l) * m + (j + term.y) % m;
                let cur = out.get(row, col);
                out.set(row, col, !cur);
            }
        }
    }
    out
}

/// Bivariate bicycle code with `H_X = [A|B]`, `H_Z = [Bᵀ|Aᵀ]`.
pub fn build_bb_code(
    name: &str,
    l: usize,
    m: usize,
    a: &[Monomial],
    b: &[Monomial],
    expected_k: Option<usize>,
    distance: Option<usize>,
) -> Result<CssCode> {
    if l == 0 || m == 0 {
        return Err(Error::Code(format!("{name}: l and m must be positive")));
    }
    for t in a.iter().chain(b) {
        if t.x >= l || t.y >= m {
            return Err(Error::Code(format!(
                "{name}: monomial x^{} y^{} not reduced mod ({l},{m})",
                t.x, t.y
            )));
        }
    }
    let am = bivariate_polynomial_matrix(l, m, a);
    let bm = bivariate_polynomial_matrix(l, m, b);
    let hx = am.hstack(&bm)?;
    let hz = bm.transpose().hstack(&am.transpose())?;
    let code = CssCode::new(name, hx, hz, distance)?;
    match expected_k {
        Some(k) => code.expect_k(k),
        None => Ok(code),
    }
}

fn hamming_7_4() -> BinaryMatrix {
    BinaryMatrix::from_rows(&[
        [0u8, 0, 0, 1, 1, 1, 1],
        [0, 1, 1, 0, 0, 1, 1],
        [1, 0, 1, 0, 1, 0, 1],
    ])
    .expect("static matrix")
}

pub const PRESET_NAMES: [&str; 4] = ["bb72", "bb144", "toy422", "steane"];

/// Named code presets. BB generators follow the published bivariate
/// bicycle family: `A = x³ + y + y²`, `B = y³ + x + x²`.
pub fn preset(name: &str) -> Result<CssCode> {
    let bb_a = [
        Monomial::new(3, 0),
        Monomial::new(0, 1),
        Monomial::new(0, 2),
    ];
    let bb_b = [
        Monomial::new(0, 3),
        Monomial::new(1, 0),
        Monomial::new(2, 0),
    ];
    match name {
        "bb72" => build_bb_code(name, 6, 6, &bb_a, &bb_b, Some(12), Some(6)),
        "bb144" => build_bb_code(name, 12, 6, &bb_a, &bb_b, Some(12), Some(12)),
        "toy422" => {
            let stab = BinaryMatrix::from_rows(&[[1u8, 1, 1, 1]])?;
            CssCode::new(name, stab.clone(), stab, Some(2))?.expect_k(2)
        }
        "steane" => CssCode::new(name, hamming_7_4(), hamming_7_4(), Some(3))?.expect_k(1),
        other => Err(Error::config(format!(
            "unknown code preset {other:?}; known: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Pauli error split into X and Z supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PauliError {
    pub x: BinaryVector,
    pub z: BinaryVector,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bb72_has_twelve_logicals() {
        let code = preset("bb72").unwrap();
        assert_eq!(code.n, 72);
        assert_eq!(code.hx.rank(), 30);
        assert_eq!(code.hz.rank(), 30);
        assert_eq!(code.k, 12);
        assert_eq!(code.lx.rows(), 12);
        // weight-6 checks
        for i in 0..code.hx.rows() {
            assert_eq!(code.hx.row(i).weight(), 6);
        }
    }

    #[test]
    fn degenerate_one_by_one_group() {
        let t = [Monomial::new(0, 0); 3];
        let code = build_bb_code("trivial", 1, 1, &t, &t, None, None).unwrap();
        assert_eq!(code.n, 2);
        // three identity terms sum to one
        assert_eq!(code.hx, BinaryMatrix::from_rows(&[[1u8, 1]]).unwrap());
        assert_eq!(code.k, 0);
    }

    #[test]
    fn identity_shifts_commute() {
        let t = [Monomial::new(0, 0)];
        let code = build_bb_code("ii", 3, 2, &t, &t, None, None).unwrap();
        let i6 = BinaryMatrix::identity(6);
        assert_eq!(code.hx, i6.hstack(&i6).unwrap());
        assert!(code.hx.mul_transpose(&code.hz).unwrap().is_zero());
    }

    #[test]
    fn wrong_k_names_computed_value() {
        let t = [Monomial::new(0, 0)];
        let err = build_bb_code("ii", 3, 2, &t, &t, Some(5), None).unwrap_err();
        match err {
            Error::LogicalCount {
                computed, expected, ..
            } => {
                assert_eq!((computed, expected), (0, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_presets() {
        let c = preset("toy422").unwrap();
        assert_eq!((c.n, c.k), (4, 2));
        let c = preset("steane").unwrap();
        assert_eq!((c.n, c.k), (7, 1));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn logicals_are_nontrivial() {
        // each logical Z must anticommute with some logical X
        let c = preset("bb72").unwrap();
        let overlap = c.lx.mul_transpose(&c.lz).unwrap();
        assert_eq!(overlap.rank(), c.k);
    }
}
