//! Error sampling, datasets and detector error models.

mod phenomenological;
mod qdem;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::{
    build_structural, CodeModel, CssCode, ErrorPrior, PauliError, StructuralMatrices,
};
use crate::error::Result;
use crate::gf2::{BinaryMatrix, BinaryVector};

pub use phenomenological::phenomenological_dem;
pub use qdem::{DemEvent, DetectorErrorModel, MAX_DIMENSION};

/// Deterministic stream `stream` of the generator seeded by `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepolarizingModel {
    pub n: usize,
    pub p: f64,
}

/// Identity w.p. `1-p`, otherwise X, Y or Z uniformly; Y sets both parts.
pub fn sample_depolarizing(model: DepolarizingModel, rng: &mut impl Rng) -> PauliError {
    let mut x = BinaryVector::zeros(model.n);
    let mut z = BinaryVector::zeros(model.n);
    for q in 0..model.n {
        let u: f64 = rng.random();
        if u < model.p {
            match ((u / model.p) * 3.0) as u32 {
                0 => x.set(q, true),
                1 => {
                    x.set(q, true);
                    z.set(q, true);
                }
                _ => z.set(q, true),
            }
        }
    }
    PauliError { x, z }
}

/// One training or evaluation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub e: BinaryVector,
    pub s: BinaryVector,
    pub l: BinaryVector,
    /// `l^[0..=R]` when requested.
    pub intermediates: Option<Vec<BinaryVector>>,
}

/// Draws `(e, s, l)` from a [`CodeModel`] using sparse column supports.
#[derive(Debug, Clone)]
pub struct Sampler {
    n_s: usize,
    n_l: usize,
    priors: Vec<f64>,
    prior: ErrorPrior,
    h_cols: Vec<Vec<usize>>,
    l_cols: Vec<Vec<usize>>,
    structural: Option<(StructuralMatrices, BinaryMatrix)>,
    check: bool,
}

impl Sampler {
    pub fn new(model: &CodeModel) -> Self {
        Self {
            n_s: model.n_s(),
            n_l: model.n_l(),
            priors: model.priors.clone(),
            prior: model.prior,
            h_cols: (0..model.n_e())
                .map(|j| model.h.column_support(j))
                .collect(),
            l_cols: (0..model.n_e())
                .map(|j| model.l.column_support(j))
                .collect(),
            structural: None,
            check: cfg!(debug_assertions),
        }
    }

    /// Also emit intermediate targets `l^[r]`.
    pub fn with_intermediates(mut self, model: &CodeModel) -> Self {
        self.structural = Some((build_structural(model), model.l.clone()));
        self
    }

    /// Re-verify `s = He`, `l = Le` on every sample against dense matrices.
    pub fn checked(mut self, on: bool) -> Self {
        self.check = on;
        self
    }

    pub fn n_e(&self) -> usize {
        self.priors.len()
    }

    pub fn sample_errors(&self, rng: &mut impl Rng) -> BinaryVector {
        match self.prior {
            ErrorPrior::Independent => {
                let mut e = BinaryVector::zeros(self.priors.len());
                for (j, &p) in self.priors.iter().enumerate() {
                    if rng.random::<f64>() < p {
                        e.set(j, true);
                    }
                }
                e
            }
            ErrorPrior::Depolarizing { p } => {
                let n = self.priors.len() / 2;
                let pauli = sample_depolarizing(DepolarizingModel { n, p }, rng);
                pauli.z.concat(&pauli.x)
            }
        }
    }

    /// Syndrome and logical effect of a given error configuration.
    pub fn apply(&self, e: &BinaryVector) -> (BinaryVector, BinaryVector) {
        let mut s = BinaryVector::zeros(self.n_s);
        let mut l = BinaryVector::zeros(self.n_l);
        for j in e.iter_ones() {
            for &d in &self.h_cols[j] {
                s.flip(d);
            }
            for &o in &self.l_cols[j] {
                l.flip(o);
            }
        }
        (s, l)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Sample {
        let e = self.sample_errors(rng);
        let (s, l) = self.apply(&e);
        let intermediates = self
            .structural
            .as_ref()
            .map(|(st, lmat)| st.intermediate_targets(lmat, &e));
        Sample {
            e,
            s,
            l,
            intermediates,
        }
    }

    pub fn sample_checked(&self, rng: &mut impl Rng, model: &CodeModel) -> Sample {
        let sample = self.sample(rng);
        if self.check {
            assert_eq!(model.h.matvec(&sample.e).unwrap(), sample.s, "s ≠ He");
            assert_eq!(model.l.matvec(&sample.e).unwrap(), sample.l, "l ≠ Le");
        }
        sample
    }
}

/// Independent-event sampling from a detector error model.
pub fn sample_dem(dem: &DetectorErrorModel, rng: &mut impl Rng) -> Sample {
    let mut e = BinaryVector::zeros(dem.events.len());
    let mut s = BinaryVector::zeros(dem.n_s);
    let mut l = BinaryVector::zeros(dem.n_l);
    for (j, ev) in dem.events.iter().enumerate() {
        if rng.random::<f64>() < ev.p {
            e.set(j, true);
            for &d in &ev.detectors {
                s.flip(d);
            }
            for &o in &ev.observables {
                l.flip(o);
            }
        }
    }
    Sample {
        e,
        s,
        l,
        intermediates: None,
    }
}

/// Code-capacity model and its sampler in one step.
pub fn code_capacity(code: &CssCode, p: f64) -> Result<(CodeModel, Sampler)> {
    let model = crate::codes::code_capacity_model(code, p)?;
    let sampler = Sampler::new(&model);
    Ok((model, sampler))
}

/// Deterministic sample stream for a given seed.
pub struct Dataset<'a> {
    model: &'a CodeModel,
    sampler: Sampler,
    rng: ChaCha8Rng,
    remaining: usize,
}

impl Iterator for Dataset<'_> {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.sampler.sample_checked(&mut self.rng, self.model))
    }
}

pub fn generate_dataset(
    model: &CodeModel,
    count: usize,
    seed: u64,
    with_intermediates: bool,
) -> Dataset<'_> {
    let mut sampler = Sampler::new(model);
    if with_intermediates {
        sampler = sampler.with_intermediates(model);
    }
    Dataset {
        model,
        sampler,
        rng: rng_stream(seed, 0),
        remaining: count,
    }
}
