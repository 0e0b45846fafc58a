//! Factored-attention transformer for masked diffusion.
//!
//! Activations are stored token-major, `[batch, tokens, d_m]`, so every
//! linear map is `x·W` with `W` of shape `[d_in, d_out]`.
//!
//! Without encoder layers the syndrome is embedded directly and concatenated
//! to the logical tokens. With encoder layers the syndrome is consumed one
//! round block at a time: `y = M_{r-1} + E^s(s_r)` passes the shared encoder
//! stack under round mask `K^[r]` to give `M_r`, and the decoder reads
//! `(E^l(l_t), M_r)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, linear_init, syndrome_tokens, Bound, MaskedPredictor, ParamStore, INIT_STD,
    TOKEN_MASK,
};
use crate::codes::StructuralMatrices;
use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::tensor::{sigmoid, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedConfig {
    pub n_l: usize,
    /// Checks per round; equals `n_s` for code capacity.
    pub n_c: usize,
    pub rounds: usize,
    pub n_dl: usize,
    pub n_el: usize,
    pub n_h: usize,
    pub d_m: usize,
    pub d_f: usize,
    /// Training diffusion steps `T`.
    pub steps: usize,
}

impl MaskedConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_l", self.n_l),
            ("n_c", self.n_c),
            ("n_dl", self.n_dl),
            ("n_h", self.n_h),
            ("d_m", self.d_m),
            ("d_f", self.d_f),
            ("steps", self.steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.d_m.is_multiple_of(self.n_h) {
            return Err(Error::config(format!(
                "d_m = {} not divisible by n_h = {}",
                self.d_m, self.n_h
            )));
        }
        if self.n_el == 0 && self.rounds != 0 {
            return Err(Error::config("multi-round syndromes need encoder layers"));
        }
        Ok(())
    }

    pub fn n_s(&self) -> usize {
        self.n_c * (self.rounds + 1)
    }

    pub fn decoder_tokens(&self) -> usize {
        self.n_l + self.n_c
    }

    /// Closed-form count of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (d, f, h) = (self.d_m, self.d_f, self.n_h);
        let block = |n: usize| 2 * (d * d + d) + h * n * n + (d * f + f) + (f * d + d) + 4 * d;
        let masks = if self.n_el > 0 {
            (self.rounds + 1) * self.n_c * self.n_c
        } else {
            0
        };
        5 * d
            + self.n_dl * block(self.decoder_tokens())
            + self.n_el * block(self.n_c)
            + masks
            + (d + 1)
    }

    /// Parameter names and shapes in lexicographic order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_m, self.d_f);
        let mut out = vec![
            ("emb_l".to_string(), vec![3, d]),
            ("emb_s".to_string(), vec![2, d]),
            ("head.b".to_string(), vec![1]),
            ("head.w".to_string(), vec![d, 1]),
        ];
        let mut block = |prefix: String, n: usize| {
            out.push((format!("{prefix}.a"), vec![self.n_h, n, n]));
            for (name, shape) in [
                ("ff1.b", vec![f]),
                ("ff1.w", vec![d, f]),
                ("ff2.b", vec![d]),
                ("ff2.w", vec![f, d]),
                ("ln1.b", vec![d]),
                ("ln1.g", vec![d]),
                ("ln2.b", vec![d]),
                ("ln2.g", vec![d]),
                ("u.b", vec![d]),
                ("u.w", vec![d, d]),
                ("v.b", vec![d]),
                ("v.w", vec![d, d]),
            ] {
                out.push((format!("{prefix}.{name}"), shape));
            }
        };
        for b in 0..self.n_dl {
            block(format!("dec.{b}"), self.decoder_tokens());
        }
        for b in 0..self.n_el {
            block(format!("enc.{b}"), self.n_c);
        }
        if self.n_el > 0 {
            for r in 0..=self.rounds {
                out.push((format!("mask.{r}"), vec![self.n_c, self.n_c]));
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedNet<T: Real = f32> {
    pub config: MaskedConfig,
    pub params: ParamStore<T>,
}

fn block_init<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    c: &MaskedConfig,
    tokens: usize,
    rng: &mut impl Rng,
) {
    let d = c.d_m;
    linear_init(store, &format!("{prefix}.v"), d, d, rng);
    store.insert(
        format!("{prefix}.a"),
        Tensor::randn(&[c.n_h, tokens, tokens], INIT_STD, rng),
    );
    linear_init(store, &format!("{prefix}.u"), d, d, rng);
    linear_init(store, &format!("{prefix}.ff1"), d, c.d_f, rng);
    linear_init(store, &format!("{prefix}.ff2"), c.d_f, d, rng);
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.g"), Tensor::full(&[d], T::one()));
        store.insert(format!("{prefix}.{ln}.b"), Tensor::zeros(&[d]));
    }
}

impl<T: Real> MaskedNet<T> {
    /// Gaussian initialization; round masks start at the entrywise eighth
    /// root of `Ktilde[r]` and need `structural` when encoders are present.
    pub fn new(
        config: MaskedConfig,
        structural: Option<&StructuralMatrices>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let d = config.d_m;
        p.insert("emb_l", Tensor::randn(&[3, d], INIT_STD, rng));
        p.insert("emb_s", Tensor::randn(&[2, d], INIT_STD, rng));
        for b in 0..config.n_dl {
            block_init(
                &mut p,
                &format!("dec.{b}"),
                &config,
                config.decoder_tokens(),
                rng,
            );
        }
        for b in 0..config.n_el {
            block_init(&mut p, &format!("enc.{b}"), &config, config.n_c, rng);
        }
        if config.n_el > 0 {
            let st = structural
                .ok_or_else(|| Error::config("encoder masks need structural matrices"))?;
            if st.rounds() != config.rounds || st.ktilde[0].rows != config.n_c {
                return Err(Error::config(format!(
                    "structural matrices have {} rounds of {} checks, network expects {} of {}",
                    st.rounds(),
                    st.ktilde[0].rows,
                    config.rounds,
                    config.n_c
                )));
            }
            for (r, k) in st.init_attention_weights().into_iter().enumerate() {
                p.insert(
                    format!("mask.{r}"),
                    Tensor::from_f64(&[config.n_c, config.n_c], &k)?,
                );
            }
        }
        linear_init(&mut p, "head", d, 1, rng);
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: MaskedConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let have: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect();
        if have != config.layout() {
            return Err(Error::Checkpoint(
                "parameter table does not match the network configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> MaskedNet<U> {
        MaskedNet {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_tokens(&self, tokens: &[u8], batch: usize) -> Result<()> {
        if tokens.len() != batch * self.config.n_l {
            return Err(Error::Model(format!(
                "{} tokens for batch {batch} of {} logicals",
                tokens.len(),
                self.config.n_l
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t > TOKEN_MASK) {
            return Err(Error::Model(format!("unknown token {bad}")));
        }
        Ok(())
    }

    /// `x ← b_u + U·stack_h(x^[h]·Ã^[h])` after `x ← Vx + b_v`, token-major.
    pub fn mhfa<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        prefix: &str,
        x: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let h = tape.matmul(x, p.var(&format!("{prefix}.v.w")))?;
        let h = tape.add(h, p.var(&format!("{prefix}.v.b")))?;
        let a = p.var(&format!("{prefix}.a"));
        let a = match mask {
            Some(k) => tape.mul(a, k)?,
            None => a,
        };
        let h = tape.mix_tokens(h, a)?;
        let h = tape.matmul(h, p.var(&format!("{prefix}.u.w")))?;
        Ok(tape.add(h, p.var(&format!("{prefix}.u.b")))?)
    }

    fn block<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        prefix: &str,
        x: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let v = |s: &str| p.var(&format!("{prefix}.{s}"));
        let h = self.mhfa(tape, p, prefix, x, mask)?;
        let x = tape.add(x, h)?;
        let x = tape.layernorm(x, v("ln1.g"), v("ln1.b"))?;
        let f = tape.matmul(x, v("ff1.w"))?;
        let f = tape.add(f, v("ff1.b"))?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, v("ff2.w"))?;
        let f = tape.add(f, v("ff2.b"))?;
        let x = tape.add(x, f)?;
        Ok(tape.layernorm(x, v("ln2.g"), v("ln2.b"))?)
    }

    /// Syndrome memories `M_0..=M_upto` (`[B, n_c, d_m]` each). Without
    /// encoders this is the single embedding `E^s(s)`.
    pub fn encode<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        syndromes: &[&BinaryVector],
        upto: usize,
    ) -> Result<Vec<Var>> {
        let c = &self.config;
        let batch = syndromes.len();
        let bits = syndrome_tokens(syndromes, c.n_s())?;
        if c.n_el == 0 {
            return Ok(vec![tape.embedding(
                p.var("emb_s"),
                &bits,
                &[batch, c.n_c],
            )?]);
        }
        if upto > c.rounds {
            return Err(Error::Model(format!(
                "round {upto} beyond R = {}",
                c.rounds
            )));
        }
        let mut memories = Vec::with_capacity(upto + 1);
        let mut prev: Option<Var> = None;
        for r in 0..=upto {
            let block_bits: Vec<usize> = (0..batch)
                .flat_map(|b| {
                    bits[b * c.n_s() + r * c.n_c..b * c.n_s() + (r + 1) * c.n_c]
                        .iter()
                        .copied()
                })
                .collect();
            let e = tape.embedding(p.var("emb_s"), &block_bits, &[batch, c.n_c])?;
            let mut y = match prev {
                Some(m) => tape.add(m, e)?,
                None => e,
            };
            let mask = p.var(&format!("mask.{r}"));
            for b in 0..c.n_el {
                y = self.block(tape, p, &format!("enc.{b}"), y, Some(mask))?;
            }
            memories.push(y);
            prev = Some(y);
        }
        Ok(memories)
    }

    /// Head logits `[B, n_l]` from tokens and a syndrome memory.
    pub fn decode<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        tokens: &[u8],
        memory: Var,
    ) -> Result<Var> {
        let c = &self.config;
        let batch = tape.shape(memory)[0];
        self.check_tokens(tokens, batch)?;
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let el = tape.embedding(p.var("emb_l"), &idx, &[batch, c.n_l])?;
        let mut x = tape.concat(&[el, memory], 1)?;
        for b in 0..c.n_dl {
            x = self.block(tape, p, &format!("dec.{b}"), x, None)?;
        }
        let x = tape.slice(x, 1, 0, c.n_l)?;
        let z = tape.matmul(x, p.var("head.w"))?;
        let z = tape.add(z, p.var("head.b"))?;
        Ok(tape.reshape(z, &[batch, c.n_l])?)
    }

    /// Logits for the final round.
    pub fn logits<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        tokens: &[u8],
        syndromes: &[&BinaryVector],
    ) -> Result<Var> {
        let memories = self.encode(tape, p, syndromes, self.config.rounds)?;
        self.decode(
            tape,
            p,
            tokens,
            *memories.last().expect("one memory per round"),
        )
    }

    pub fn forward_probabilities(
        &self,
        tokens: &[u8],
        syndromes: &[&BinaryVector],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let z = self.logits(&mut tape, &p, tokens, syndromes)?;
        let z = tape.value(z);
        check_finite(z, "masked network output")?;
        Ok(z.data().iter().map(|&v| sigmoid(v.f64())).collect())
    }
}

impl<T: Real> MaskedPredictor for MaskedNet<T> {
    fn n_l(&self) -> usize {
        self.config.n_l
    }

    fn predict(&self, tokens: &[u8], syndromes: &[&BinaryVector]) -> Result<Vec<f64>> {
        self.forward_probabilities(tokens, syndromes)
    }
}

/// Attention matrices of every block and head, the round masks, and the
/// code's `J` matrix, for side-by-side inspection.
pub fn export_attention<T: Real>(
    net: &MaskedNet<T>,
    structural: &StructuralMatrices,
) -> Result<serde_json::Value> {
    let c = &net.config;
    let heads = |prefix: &str, n: usize| -> Result<Vec<serde_json::Value>> {
        let a = net.params.get(&format!("{prefix}.a"))?;
        Ok((0..c.n_h)
            .map(|h| {
                let m: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| a.data()[(h * n + i) * n + j].f64())
                            .collect()
                    })
                    .collect();
                serde_json::json!({ "head": h, "matrix": m })
            })
            .collect())
    };
    let mut decoder = Vec::new();
    for b in 0..c.n_dl {
        for mut m in heads(&format!("dec.{b}"), c.decoder_tokens())? {
            m["block"] = b.into();
            decoder.push(m);
        }
    }
    let mut encoder = Vec::new();
    for b in 0..c.n_el {
        for mut m in heads(&format!("enc.{b}"), c.n_c)? {
            m["block"] = b.into();
            encoder.push(m);
        }
    }
    let mut masks = Vec::new();
    if c.n_el > 0 {
        for r in 0..=c.rounds {
            let k = net.params.get(&format!("mask.{r}"))?;
            let m: Vec<Vec<f64>> = k
                .data()
                .chunks(c.n_c)
                .map(|row| row.iter().map(|v| v.f64()).collect())
                .collect();
            masks.push(serde_json::json!({ "round": r, "matrix": m }));
        }
    }
    if structural.j.rows != c.decoder_tokens() {
        return Err(Error::Model(format!(
            "J has side {}, network has {} decoder tokens",
            structural.j.rows,
            c.decoder_tokens()
        )));
    }
    Ok(serde_json::json!({
        "n_l": c.n_l,
        "n_c": c.n_c,
        "decoder": decoder,
        "encoder": encoder,
        "masks": masks,
        "j": structural.j.to_nested(),
    }))
}
