//! QDEM v1: a line-oriented detector error model format.
//!
//! ```text
//! qdem 1
//! ns <int> nl <int> nc <int> rounds <int>
//! e <prob> D<i> [D<j> ...] [L<k> ...]
//! ```
//!
//! `#` starts a comment anywhere on a line. Detector `i` belongs to round
//! `i / nc`, check `i % nc`. The writer emits indices in ascending order and
//! probabilities in shortest round-trip form, so `write(parse(x)) == x` for
//! any writer output.

use std::fmt::Write as _;

use crate::codes::CodeModel;
use crate::error::{Error, Result};
use crate::gf2::BinaryMatrix;

/// Upper bound on declared detector/observable counts accepted by the parser.
pub const MAX_DIMENSION: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DemEvent {
    pub p: f64,
    pub detectors: Vec<usize>,
    pub observables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorErrorModel {
    pub n_s: usize,
    pub n_l: usize,
    pub n_c: usize,
    pub rounds: usize,
    pub events: Vec<DemEvent>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_usize(line: usize, tok: Option<&str>, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| perr(line, format!("missing {what}")))?;
    tok.parse::<usize>()
        .map_err(|e| perr(line, format!("bad {what} {tok:?}: {e}")))
}

fn expect_keyword(line: usize, tok: Option<&str>, kw: &str) -> Result<()> {
    match tok {
        Some(t) if t == kw => Ok(()),
        other => Err(perr(line, format!("expected {kw:?}, found {other:?}"))),
    }
}

impl DetectorErrorModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.n_c.checked_mul(self.rounds + 1) != Some(self.n_s) {
            return Err(Error::Model(format!(
                "ns = {} is not nc·(rounds+1) with nc = {}, rounds = {}",
                self.n_s, self.n_c, self.rounds
            )));
        }
        if self.events.is_empty() {
            return Err(Error::Model("detector error model has no events".into()));
        }
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.p > 0.0 && ev.p < 1.0) {
                return Err(Error::Model(format!(
                    "event {i}: probability {} outside (0,1)",
                    ev.p
                )));
            }
            if ev.detectors.iter().any(|&d| d >= self.n_s)
                || ev.observables.iter().any(|&o| o >= self.n_l)
            {
                return Err(Error::Model(format!("event {i}: index out of range")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (ln, magic) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
        let mut toks = magic.split_whitespace();
        expect_keyword(ln, toks.next(), "qdem")?;
        expect_keyword(ln, toks.next(), "1")?;
        if let Some(t) = toks.next() {
            return Err(perr(ln, format!("unexpected {t:?} after version")));
        }

        let (ln, header) = lines.next().ok_or_else(|| perr(ln + 1, "missing header"))?;
        let mut toks = header.split_whitespace();
        let mut field = |kw: &str| -> Result<usize> {
            expect_keyword(ln, toks.next(), kw)?;
            let v = parse_usize(ln, toks.next(), kw)?;
            if v > MAX_DIMENSION {
                return Err(perr(ln, format!("{kw} = {v} exceeds {MAX_DIMENSION}")));
            }
            Ok(v)
        };
        let n_s = field("ns")?;
        let n_l = field("nl")?;
        let n_c = field("nc")?;
        let rounds = field("rounds")?;
        if let Some(t) = toks.next() {
            return Err(perr(ln, format!("unexpected {t:?} in header")));
        }
        if n_c == 0 || n_c.checked_mul(rounds.saturating_add(1)) != Some(n_s) {
            return Err(perr(ln, format!("ns = {n_s} is not nc·(rounds+1)")));
        }

        let mut events = Vec::new();
        for (ln, body) in lines {
            let mut toks = body.split_whitespace();
            expect_keyword(ln, toks.next(), "e")?;
            let ptok = toks.next().ok_or_else(|| perr(ln, "missing probability"))?;
            let p: f64 = ptok
                .parse()
                .map_err(|e| perr(ln, format!("bad probability {ptok:?}: {e}")))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(perr(ln, format!("probability {p} outside (0,1)")));
            }
            let mut detectors: Vec<usize> = Vec::new();
            let mut observables: Vec<usize> = Vec::new();
            for tok in toks {
                let (kind, idx) =
                    tok.split_at(tok.char_indices().nth(1).map_or(tok.len(), |(i, _)| i));
                let idx: usize = idx
                    .parse()
                    .map_err(|e| perr(ln, format!("bad target {tok:?}: {e}")))?;
                match kind {
                    "D" => {
                        if !observables.is_empty() {
                            return Err(perr(ln, "detectors must precede observables"));
                        }
                        if idx >= n_s {
                            return Err(perr(ln, format!("detector {idx} ≥ ns = {n_s}")));
                        }
                        if detectors.contains(&idx) {
                            return Err(perr(ln, format!("duplicate detector {idx}")));
                        }
                        detectors.push(idx);
                    }
                    "L" => {
                        if idx >= n_l {
                            return Err(perr(ln, format!("observable {idx} ≥ nl = {n_l}")));
                        }
                        if observables.contains(&idx) {
                            return Err(perr(ln, format!("duplicate observable {idx}")));
                        }
                        observables.push(idx);
                    }
                    _ => return Err(perr(ln, format!("unknown target {tok:?}"))),
                }
            }
            if detectors.is_empty() {
                return Err(perr(ln, "event has no detectors"));
            }
            detectors.sort_unstable();
            observables.sort_unstable();
            events.push(DemEvent {
                p,
                detectors,
                observables,
            });
        }
        let dem = Self {
            n_s,
            n_l,
            n_c,
            rounds,
            events,
        };
        dem.validate()?;
        Ok(dem)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("qdem 1\n");
        let _ = writeln!(
            out,
            "ns {} nl {} nc {} rounds {}",
            self.n_s, self.n_l, self.n_c, self.rounds
        );
        for ev in &self.events {
            let _ = write!(out, "e {}", ev.p);
            for d in &ev.detectors {
                let _ = write!(out, " D{d}");
            }
            for o in &ev.observables {
                let _ = write!(out, " L{o}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_code_model(&self) -> Result<CodeModel> {
        self.validate()?;
        let n_e = self.events.len();
        let mut h = BinaryMatrix::zeros(self.n_s, n_e);
        let mut l = BinaryMatrix::zeros(self.n_l, n_e);
        for (j, ev) in self.events.iter().enumerate() {
            for &d in &ev.detectors {
                h.set(d, j, true);
            }
            for &o in &ev.observables {
                l.set(o, j, true);
            }
        }
        let priors = self.events.iter().map(|e| e.p).collect();
        CodeModel::new(h, l, priors, self.n_c, self.rounds)
    }

    /// Reads off one event per column of `model`. Correlations implied by a
    /// non-independent prior are not representable and are dropped.
    pub fn from_code_model(model: &CodeModel) -> Result<Self> {
        let events = (0..model.n_e())
            .map(|j| DemEvent {
                p: model.priors[j],
                detectors: model.h.column_support(j),
                observables: model.l.column_support(j),
            })
            .collect();
        let dem = Self {
            n_s: model.n_s(),
            n_l: model.n_l(),
            n_c: model.n_c,
            rounds: model.rounds,
            events,
        };
        dem.validate()?;
        Ok(dem)
    }
}
