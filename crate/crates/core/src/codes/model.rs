use crate::codes::CssCode;
use crate::error::{Error, Result};
use crate::gf2::{BinaryMatrix, BinaryVector};

/// How error events are correlated beyond their marginal priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorPrior {
    /// Every event fires independently with its own prior.
    Independent,
    /// Events are laid out as `(z-part, x-part)` of an `n`-qubit Pauli error
    /// drawn from the depolarizing channel at rate `p`.
    Depolarizing { p: f64 },
}

/// A decoding instance `(H, L, priors)` with its round structure.
#[derive(Debug, Clone)]
pub struct CodeModel {
    pub h: BinaryMatrix,
    pub l: BinaryMatrix,
    /// Marginal firing probability per event.
    pub priors: Vec<f64>,
    /// Checks per round.
    pub n_c: usize,
    /// Noisy rounds `R`; syndromes have `R + 1` blocks. Zero for code capacity.
    pub rounds: usize,
    pub prior: ErrorPrior,
    /// Leading X-type checks within each round block, when known.
    pub x_checks_per_round: Option<usize>,
}

impl CodeModel {
    pub fn new(
        h: BinaryMatrix,
        l: BinaryMatrix,
        priors: Vec<f64>,
        n_c: usize,
        rounds: usize,
    ) -> Result<Self> {
        let model = Self {
            h,
            l,
            priors,
            n_c,
            rounds,
            prior: ErrorPrior::Independent,
            x_checks_per_round: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n_e = self.h.cols();
        if self.l.cols() != n_e {
            return Err(Error::Model(format!(
                "L has {} columns, H has {n_e}",
                self.l.cols()
            )));
        }
        if self.priors.len() != n_e {
            return Err(Error::Model(format!(
                "{} priors for {n_e} events",
                self.priors.len()
            )));
        }
        if let Some(bad) = self.priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Model(format!("prior {bad} outside (0,1)")));
        }
        if self.n_c == 0 || self.h.rows() != self.n_c * (self.rounds + 1) {
            return Err(Error::Model(format!(
                "n_s = {} is not n_c·(R+1) = {}·{}",
                self.h.rows(),
                self.n_c,
                self.rounds + 1
            )));
        }
        if let ErrorPrior::Depolarizing { p } = self.prior {
            if !n_e.is_multiple_of(2) || !(p > 0.0 && p < 1.0) {
                return Err(Error::Model(
                    "depolarizing prior needs 2n events and p in (0,1)".into(),
                ));
            }
        }
        if let Some(x) = self.x_checks_per_round {
            if x > self.n_c {
                return Err(Error::Model(format!(
                    "{x} X checks exceed n_c = {}",
                    self.n_c
                )));
            }
        }
        Ok(())
    }

    pub fn n_e(&self) -> usize {
        self.h.cols()
    }

    pub fn n_s(&self) -> usize {
        self.h.rows()
    }

    pub fn n_l(&self) -> usize {
        self.l.rows()
    }

    /// Row block `H^[r]`.
    pub fn round_block(&self, r: usize) -> BinaryMatrix {
        assert!(r <= self.rounds);
        self.h.row_range(r * self.n_c..(r + 1) * self.n_c)
    }

    /// Syndrome rows of X-type checks in every round.
    pub fn x_check_rows(&self) -> Option<Vec<usize>> {
        let x = self.x_checks_per_round?;
        Some(
            (0..=self.rounds)
                .flat_map(|r| (0..x).map(move |c| r * self.n_c + c))
                .collect(),
        )
    }

    /// Probability of an error configuration under this model.
    pub fn error_probability(&self, e: &BinaryVector) -> f64 {
        match self.prior {
            ErrorPrior::Independent => self
                .priors
                .iter()
                .enumerate()
                .map(|(j, &p)| if e.get(j) { p } else { 1.0 - p })
                .product(),
            ErrorPrior::Depolarizing { p } => {
                let n = self.n_e() / 2;
                (0..n)
                    .map(|q| {
                        if e.get(q) || e.get(n + q) {
                            p / 3.0
                        } else {
                            1.0 - p
                        }
                    })
                    .product()
            }
        }
    }
}

/// Code-capacity model: events `(e_z, e_x)`, `s = (H_X e_z, H_Z e_x)`,
/// `l = (L_X e_z, L_Z e_x)`.
pub fn code_capacity_model(code: &CssCode, p: f64) -> Result<CodeModel> {
    let h = code.hx.block_diag(&code.hz);
    let l = code.lx.block_diag(&code.lz);
    let marginal = 2.0 * p / 3.0;
    let model = CodeModel {
        n_c: h.rows(),
        h,
        l,
        priors: vec![marginal; 2 * code.n],
        rounds: 0,
        prior: ErrorPrior::Depolarizing { p },
        x_checks_per_round: Some(code.hx.rows()),
    };
    model.validate()?;
    Ok(model)
}
