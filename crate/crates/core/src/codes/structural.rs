//! Round-cumulative check structure derived from a multi-round `H`.
//!
//! `Htilde[r]` marks events that have touched a check in any round up to `r`,
//! `Ktilde[r]` counts events shared by two checks, `J` extends that count to
//! logical observables, and `Pi[r]` marks events visible by round `r`.

use serde::Serialize;

use crate::codes::CodeModel;
use crate::gf2::{BinaryMatrix, BinaryVector};

/// Small dense matrix of counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u32>,
}

impl IntMatrix {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.cols + j]
    }

    /// Integer Gram matrix `M·Mᵀ` of a binary matrix.
    pub fn gram(m: &BinaryMatrix) -> Self {
        let n = m.rows();
        let mut data = vec![0u32; n * n];
        for i in 0..n {
            for j in i..n {
                let c: u32 = m
                    .row_words(i)
                    .iter()
                    .zip(m.row_words(j))
                    .map(|(a, b)| (a & b).count_ones())
                    .sum();
                data[i * n + j] = c;
                data[j * n + i] = c;
            }
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_nested(&self) -> Vec<Vec<u32>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[u32]>::to_vec)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StructuralMatrices {
    pub htilde: Vec<BinaryMatrix>,
    pub ktilde: Vec<IntMatrix>,
    pub j: IntMatrix,
    pub pi: Vec<BinaryVector>,
}

pub fn build_structural(model: &CodeModel) -> StructuralMatrices {
    let mut htilde: Vec<BinaryMatrix> = Vec::with_capacity(model.rounds + 1);
    for r in 0..=model.rounds {
        let block = model.round_block(r);
        let cumulative = match htilde.last() {
            None => block,
            Some(prev) => {
                let mut acc = prev.clone();
                for i in 0..block.rows() {
                    for j in block.row(i).iter_ones() {
                        acc.set(i, j, true);
                    }
                }
                acc
            }
        };
        htilde.push(cumulative);
    }
    let ktilde = htilde.iter().map(IntMatrix::gram).collect();
    let pi = htilde
        .iter()
        .map(|ht| {
            let mut touched = BinaryVector::zeros(ht.cols());
            for i in 0..ht.rows() {
                for j in ht.row(i).iter_ones() {
                    touched.set(j, true);
                }
            }
            touched
        })
        .collect();
    let last = htilde.last().expect("at least one round");
    let ltilde = model.l.vstack(last).expect("L and H share columns");
    StructuralMatrices {
        j: IntMatrix::gram(&ltilde),
        ktilde,
        htilde,
        pi,
    }
}

impl StructuralMatrices {
    pub fn rounds(&self) -> usize {
        self.htilde.len() - 1
    }

    /// Attention-mask initialization: entrywise eighth root of `Ktilde[r]`.
    pub fn init_attention_weights(&self) -> Vec<Vec<f64>> {
        self.ktilde
            .iter()
            .map(|k| k.data.iter().map(|&c| (c as f64).powf(0.125)).collect())
            .collect()
    }

    /// `l^[r] = L·(Pi[r] ⊙ e)` for every round.
    pub fn intermediate_targets(&self, l: &BinaryMatrix, e: &BinaryVector) -> Vec<BinaryVector> {
        self.pi
            .iter()
            .map(|pi| {
                let visible = pi.and(e).expect("e has n_e entries");
                l.matvec(&visible).expect("L has n_e columns")
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let bin = |m: &BinaryMatrix| -> Vec<Vec<u8>> {
            (0..m.rows()).map(|i| m.row(i).to_bits()).collect()
        };
        serde_json::json!({
            "rounds": self.rounds(),
            "htilde": self.htilde.iter().map(bin).collect::<Vec<_>>(),
            "ktilde": self.ktilde.iter().map(IntMatrix::to_nested).collect::<Vec<_>>(),
            "j": self.j.to_nested(),
            "pi": self.pi.iter().map(BinaryVector::to_bits).collect::<Vec<_>>(),
        })
    }
}
