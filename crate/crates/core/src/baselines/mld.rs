//! Maximum-likelihood decoding by full enumeration of error configurations.

use std::collections::HashMap;

use crate::codes::{CodeModel, ErrorPrior};
use crate::error::{Error, Result};
use crate::gf2::BinaryVector;

/// Largest number of error events accepted by [`exact_mld`].
pub const MLD_MAX_EVENTS: usize = 24;
const MAX_LOGICALS: usize = 64;
/// Relative gap below which two class masses count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Probability mass of each logical class under one syndrome.
#[derive(Debug, Clone, PartialEq)]
pub struct SyndromeEntry {
    /// `(l, mass)` with `l` bit-packed (bit `k` is `l_k`), sorted by `l`.
    pub masses: Vec<(u64, f64)>,
    pub total: f64,
    pub argmax: BinaryVector,
}

/// Joint distribution `p(s, l)` tabulated by syndrome.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    pub n_s: usize,
    pub n_l: usize,
    table: HashMap<BinaryVector, SyndromeEntry>,
}

/// Independent factor of the error distribution over a few events.
struct Factor {
    events: Vec<usize>,
    /// Probability of each local pattern; bit `i` of the index is `events[i]`.
    probs: Vec<f64>,
}

fn factors(model: &CodeModel) -> Vec<Factor> {
    match model.prior {
        ErrorPrior::Independent => model
            .priors
            .iter()
            .enumerate()
            .map(|(j, &p)| Factor {
                events: vec![j],
                probs: vec![1.0 - p, p],
            })
            .collect(),
        ErrorPrior::Depolarizing { p } => {
            let n = model.n_e() / 2;
            (0..n)
                .map(|q| Factor {
                    events: vec![q, n + q],
                    probs: vec![1.0 - p, p / 3.0, p / 3.0, p / 3.0],
                })
                .collect()
        }
    }
}

/// Every configuration of a group of factors as `(probability, s, l)`.
fn enumerate_half(model: &CodeModel, group: &[Factor]) -> Vec<(f64, BinaryVector, u64)> {
    let cols_s: Vec<BinaryVector> = (0..model.n_e()).map(|j| model.h.column(j)).collect();
    let cols_l: Vec<u64> = (0..model.n_e())
        .map(|j| {
            model
                .l
                .column_support(j)
                .iter()
                .fold(0u64, |acc, &k| acc | 1 << k)
        })
        .collect();
    let mut out = vec![(1.0, BinaryVector::zeros(model.n_s()), 0u64)];
    for f in group {
        let mut next = Vec::with_capacity(out.len() * f.probs.len());
        for (pattern, &pf) in f.probs.iter().enumerate() {
            for (p, s, l) in &out {
                let mut s = s.clone();
                let mut l = *l;
                for (i, &j) in f.events.iter().enumerate() {
                    if pattern >> i & 1 == 1 {
                        s.xor_assign(&cols_s[j]).expect("column has n_s rows");
                        l ^= cols_l[j];
                    }
                }
                next.push((p * pf, s, l));
            }
        }
        out = next;
    }
    out
}

fn unpack(l: u64, n_l: usize) -> BinaryVector {
    BinaryVector::from_bools(&(0..n_l).map(|k| l >> k & 1 == 1).collect::<Vec<_>>())
}

/// Tabulates `p(s, l) = Σ_{e: He=s, Le=l} Pr[e]` over all `2^n_e` errors.
/// The decision for each syndrome is the most probable class, ties going to
/// the lexicographically smallest `l`.
pub fn exact_mld(model: &CodeModel) -> Result<EnumeratedPosterior> {
    model.validate()?;
    if model.n_e() > MLD_MAX_EVENTS {
        return Err(Error::config(format!(
            "exact MLD enumerates 2^n_e errors and needs n_e ≤ {MLD_MAX_EVENTS}, got {}",
            model.n_e()
        )));
    }
    if model.n_l() > MAX_LOGICALS {
        return Err(Error::config(format!(
            "exact MLD supports at most {MAX_LOGICALS} logicals"
        )));
    }
    let fs = factors(model);
    let mut split = 0;
    let mut bits = 0;
    while split < fs.len() && 2 * bits < model.n_e() {
        bits += fs[split].events.len();
        split += 1;
    }
    let (lo, hi) = fs.split_at(split);
    let left = enumerate_half(model, lo);
    let right = enumerate_half(model, hi);
    let mut buckets: HashMap<BinaryVector, HashMap<u64, f64>> = HashMap::new();
    for (p1, s1, l1) in &left {
        for (p2, s2, l2) in &right {
            let s = s1.xor(s2).expect("equal lengths");
            *buckets.entry(s).or_default().entry(l1 ^ l2).or_insert(0.0) += p1 * p2;
        }
    }
    let n_l = model.n_l();
    let table = buckets
        .into_iter()
        .map(|(s, classes)| {
            let mut masses: Vec<(u64, f64)> = classes.into_iter().collect();
            masses.sort_by_key(|&(l, _)| l);
            let total = masses.iter().map(|m| m.1).sum();
            let top = masses.iter().map(|m| m.1).fold(0.0, f64::max);
            let argmax = masses
                .iter()
                .filter(|m| m.1 >= top * (1.0 - TIE_TOLERANCE))
                .map(|m| unpack(m.0, n_l))
                .min_by(|a, b| a.lex_cmp(b))
                .expect("nonempty class list");
            (
                s,
                SyndromeEntry {
                    masses,
                    total,
                    argmax,
                },
            )
        })
        .collect();
    Ok(EnumeratedPosterior {
        n_s: model.n_s(),
        n_l,
        table,
    })
}

impl EnumeratedPosterior {
    pub fn entry(&self, s: &BinaryVector) -> Option<&SyndromeEntry> {
        self.table.get(s)
    }

    /// MLD decision; syndromes of probability zero decode to `l = 0`.
    pub fn decode(&self, s: &BinaryVector) -> BinaryVector {
        self.entry(s)
            .map(|e| e.argmax.clone())
            .unwrap_or_else(|| BinaryVector::zeros(self.n_l))
    }

    /// `p(s)`.
    pub fn syndrome_probability(&self, s: &BinaryVector) -> f64 {
        self.entry(s).map_or(0.0, |e| e.total)
    }

    /// `p(l | s)`.
    pub fn posterior(&self, s: &BinaryVector, l: &BinaryVector) -> f64 {
        let key = l.iter_ones().fold(0u64, |acc, k| acc | 1 << k);
        self.entry(s).map_or(0.0, |e| {
            e.masses
                .binary_search_by_key(&key, |m| m.0)
                .map_or(0.0, |i| e.masses[i].1 / e.total)
        })
    }

    pub fn syndromes(&self) -> impl Iterator<Item = (&BinaryVector, &SyndromeEntry)> {
        self.table.iter()
    }

    pub fn total_mass(&self) -> f64 {
        let mut totals: Vec<f64> = self.table.values().map(|e| e.total).collect();
        totals.sort_by(f64::total_cmp);
        totals.iter().sum()
    }

    /// Logical error rate of the MLD decision rule itself.
    pub fn ler(&self) -> f64 {
        let mut correct: Vec<f64> = self
            .table
            .values()
            .map(|e| {
                let key = e.argmax.iter_ones().fold(0u64, |acc, k| acc | 1 << k);
                e.masses.iter().find(|m| m.0 == key).map_or(0.0, |m| m.1)
            })
            .collect();
        correct.sort_by(f64::total_cmp);
        1.0 - correct.iter().sum::<f64>()
    }

    /// Probability that the logical class is nonzero.
    pub fn nonzero_logical_probability(&self) -> f64 {
        1.0 - self
            .table
            .values()
            .map(|e| e.masses.first().filter(|m| m.0 == 0).map_or(0.0, |m| m.1))
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{code_capacity_model, preset};
    use crate::gf2::BinaryMatrix;

    #[test]
    fn single_event() {
        let h = BinaryMatrix::from_rows(&[[1u8]]).unwrap();
        let l = BinaryMatrix::from_rows(&[[1u8]]).unwrap();
        let m = CodeModel::new(h, l, vec![0.1], 1, 0).unwrap();
        let post = exact_mld(&m).unwrap();
        let zero = BinaryVector::zeros(1);
        assert_eq!(post.decode(&zero), zero);
        assert!((post.syndrome_probability(&zero) - 0.9).abs() < 1e-15);
        assert!(
            (post.posterior(&BinaryVector::ones(1), &BinaryVector::ones(1)) - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn tied_explanations_pick_smallest_class() {
        // events a, b both flip detector 0; a flips logical 1, b flips logical 0
        let h = BinaryMatrix::from_rows(&[[1u8, 1]]).unwrap();
        let l = BinaryMatrix::from_rows(&[[0u8, 1], [1, 0]]).unwrap();
        let m = CodeModel::new(h, l, vec![0.1, 0.1], 1, 0).unwrap();
        let post = exact_mld(&m).unwrap();
        let s = BinaryVector::ones(1);
        let e = post.entry(&s).unwrap();
        assert_eq!(e.masses.len(), 2);
        for (_, mass) in &e.masses {
            assert!((mass - 0.09).abs() < 1e-15);
        }
        // (0,1) precedes (1,0) lexicographically
        assert_eq!(post.decode(&s).to_bits(), vec![0, 1]);
    }

    #[test]
    fn toy_code_table_is_normalized() {
        let code = preset("toy422").unwrap();
        let m = code_capacity_model(&code, 0.1).unwrap();
        let post = exact_mld(&m).unwrap();
        assert!((post.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(post.syndromes().count(), 4);
        // brute-force oracle: sum over every e with its depolarizing probability
        let mut ler = 0.0;
        let mut by_s: HashMap<Vec<u8>, Vec<(Vec<u8>, f64)>> = HashMap::new();
        for bits in 0u32..256 {
            let e =
                BinaryVector::from_bools(&(0..8).map(|j| bits >> j & 1 == 1).collect::<Vec<_>>());
            let p = m.error_probability(&e);
            let s = m.h.matvec(&e).unwrap().to_bits();
            let l = m.l.matvec(&e).unwrap().to_bits();
            let list = by_s.entry(s).or_default();
            match list.iter_mut().find(|x| x.0 == l) {
                Some(x) => x.1 += p,
                None => list.push((l, p)),
            }
        }
        for (s, list) in &by_s {
            let best = list.iter().map(|x| x.1).fold(0.0, f64::max);
            ler += list.iter().map(|x| x.1).sum::<f64>() - best;
            let sv = BinaryVector::from_bits(s);
            for (l, p) in list {
                let want = p / list.iter().map(|x| x.1).sum::<f64>();
                assert!((post.posterior(&sv, &BinaryVector::from_bits(l)) - want).abs() < 1e-12);
            }
        }
        assert!((post.ler() - ler).abs() < 1e-12);
    }

    #[test]
    fn rejects_large_models() {
        let code = preset("steane").unwrap();
        let m = code_capacity_model(&code, 0.1).unwrap();
        assert!(exact_mld(&m).is_ok());
        let big = code_capacity_model(&preset("bb72").unwrap(), 0.1).unwrap();
        let err = exact_mld(&big).unwrap_err();
        assert!(err.to_string().contains("24"));
    }
}
