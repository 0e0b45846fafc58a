//! Phenomenological noise for repeated CSS syndrome extraction.
//!
//! Rounds `0..R` are noisy, the final layer `R` is a perfect readout. In each
//! noisy round every qubit suffers X, Y or Z with probability `p/3` each and
//! every check measurement flips with probability `p`. A data error in round
//! `r` lights the detectors of round `r`; a measurement flip in round `r`
//! lights the same check in rounds `r` and `r+1`. Within a round the X checks
//! come first, then the Z checks. Observables are `(L_X, L_Z)`.

use super::{DemEvent, DetectorErrorModel};
use crate::codes::CssCode;
use crate::error::{Error, Result};

pub fn phenomenological_dem(code: &CssCode, p: f64, rounds: usize) -> Result<DetectorErrorModel> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!("p = {p} outside (0,1)")));
    }
    if rounds == 0 {
        return Err(Error::config(
            "phenomenological noise needs at least one round",
        ));
    }
    let m_x = code.hx.rows();
    let n_c = m_x + code.hz.rows();
    let k = code.lx.rows();
    let mut events = Vec::new();
    for r in 0..rounds {
        let base = r * n_c;
        for q in 0..code.n {
            // Z flips X checks and L_X; X flips Z checks and L_Z.
            let z_det: Vec<usize> = code
                .hx
                .column_support(q)
                .into_iter()
                .map(|c| base + c)
                .collect();
            let x_det: Vec<usize> = code
                .hz
                .column_support(q)
                .into_iter()
                .map(|c| base + m_x + c)
                .collect();
            let z_obs = code.lx.column_support(q);
            let x_obs: Vec<usize> = code
                .lz
                .column_support(q)
                .into_iter()
                .map(|o| k + o)
                .collect();
            let mut y_det = z_det.clone();
            y_det.extend(&x_det);
            let mut y_obs = z_obs.clone();
            y_obs.extend(&x_obs);
            for (detectors, observables) in [(x_det, x_obs), (y_det, y_obs), (z_det, z_obs)] {
                if detectors.is_empty() {
                    if observables.is_empty() {
                        continue;
                    }
                    return Err(Error::Code(format!(
                        "qubit {q} carries an undetectable logical error"
                    )));
                }
                events.push(DemEvent {
                    p: p / 3.0,
                    detectors,
                    observables,
                });
            }
        }
        for c in 0..n_c {
            events.push(DemEvent {
                p,
                detectors: vec![base + c, base + n_c + c],
                observables: vec![],
            });
        }
    }
    let dem = DetectorErrorModel {
        n_s: n_c * (rounds + 1),
        n_l: 2 * k,
        n_c,
        rounds,
        events,
    };
    dem.validate()?;
    Ok(dem)
}
