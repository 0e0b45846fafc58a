//! Reference decoders: exact maximum likelihood by enumeration, min-sum BP
//! and OSD post-processing.

mod bp;
mod mld;
mod osd;

use serde::{Deserialize, Serialize};

pub use bp::{bp_minsum, BpConfig, BpDecoder, BpResult, BpStop, LLR_CLAMP};
pub use mld::{exact_mld, EnumeratedPosterior, SyndromeEntry, MLD_MAX_EVENTS};
pub use osd::{osd0, osd_cs, reliability_order, MAX_OSD_ORDER};

use crate::codes::CodeModel;
use crate::error::{Error, Result};
use crate::gf2::{BinaryMatrix, BinaryVector};

/// Which syndrome rows the baseline sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSelection {
    /// X-type checks only.
    X,
    #[default]
    Xz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub bp: BpConfig,
    #[serde(default)]
    pub osd_order: usize,
    #[serde(default)]
    pub rows: RowSelection,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bp: BpConfig::default(),
            osd_order: 0,
            rows: RowSelection::Xz,
        }
    }
}

/// BP followed by OSD on a fixed model.
#[derive(Debug, Clone)]
pub struct BpOsdDecoder {
    rows: Option<Vec<usize>>,
    h: BinaryMatrix,
    l: BinaryMatrix,
    priors: Vec<f64>,
    bp: BpDecoder,
    osd_order: usize,
}

impl BpOsdDecoder {
    pub fn new(model: &CodeModel, config: BaselineConfig) -> Result<Self> {
        if config.osd_order > MAX_OSD_ORDER {
            return Err(Error::config(format!(
                "OSD order {} exceeds {MAX_OSD_ORDER}",
                config.osd_order
            )));
        }
        let rows = match config.rows {
            RowSelection::Xz => None,
            RowSelection::X => Some(
                model
                    .x_check_rows()
                    .ok_or_else(|| Error::config("model does not label its X checks"))?,
            ),
        };
        let h = match &rows {
            Some(r) => model.h.select_rows(r),
            None => model.h.clone(),
        };
        let bp = BpDecoder::new(&h, &model.priors, config.bp)?;
        Ok(Self {
            rows,
            h,
            l: model.l.clone(),
            priors: model.priors.clone(),
            bp,
            osd_order: config.osd_order,
        })
    }

    /// Error estimate `ê` satisfying the selected rows of the syndrome.
    pub fn decode_error(&self, s: &BinaryVector) -> Result<BinaryVector> {
        let s = match &self.rows {
            Some(r) => BinaryVector::from_bools(&r.iter().map(|&i| s.get(i)).collect::<Vec<_>>()),
            None => s.clone(),
        };
        let bp = self.bp.decode(&s)?;
        if bp.converged {
            return Ok(bp.hard);
        }
        osd_cs(&self.h, &self.priors, &bp.llr, &s, self.osd_order)
    }

    pub fn decode(&self, s: &BinaryVector) -> Result<BinaryVector> {
        Ok(self.l.matvec(&self.decode_error(s)?)?)
    }
}

/// `l̂ = L·ê` from the BP → OSD pipeline.
pub fn decode_baseline(
    model: &CodeModel,
    s: &BinaryVector,
    config: BaselineConfig,
) -> Result<BinaryVector> {
    BpOsdDecoder::new(model, config)?.decode(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{code_capacity_model, preset};

    #[test]
    fn zero_syndrome_gives_zero_logical() {
        let code = preset("bb72").unwrap();
        let model = code_capacity_model(&code, 0.05).unwrap();
        let dec = BpOsdDecoder::new(&model, BaselineConfig::default()).unwrap();
        assert!(dec
            .decode(&BinaryVector::zeros(model.n_s()))
            .unwrap()
            .is_zero());
        let x_only = BaselineConfig {
            rows: RowSelection::X,
            ..Default::default()
        };
        let dec = BpOsdDecoder::new(&model, x_only).unwrap();
        assert!(dec
            .decode(&BinaryVector::zeros(model.n_s()))
            .unwrap()
            .is_zero());
    }

    #[test]
    fn single_qubit_errors_are_corrected_on_bb72() {
        let code = preset("bb72").unwrap();
        let model = code_capacity_model(&code, 0.05).unwrap();
        let cfg = BaselineConfig {
            osd_order: 2,
            ..Default::default()
        };
        let dec = BpOsdDecoder::new(&model, cfg).unwrap();
        for j in (0..model.n_e()).step_by(7) {
            let e = BinaryVector::from_support(model.n_e(), &[j]);
            let s = model.h.matvec(&e).unwrap();
            let got = dec.decode_error(&s).unwrap();
            assert_eq!(model.h.matvec(&got).unwrap(), s);
            assert_eq!(dec.decode(&s).unwrap(), model.l.matvec(&e).unwrap());
        }
    }

    #[test]
    fn x_only_requires_labels() {
        let h = BinaryMatrix::from_rows(&[[1u8, 1]]).unwrap();
        let l = BinaryMatrix::from_rows(&[[1u8, 0]]).unwrap();
        let m = CodeModel::new(h, l, vec![0.1, 0.1], 1, 0).unwrap();
        let cfg = BaselineConfig {
            rows: RowSelection::X,
            ..Default::default()
        };
        assert!(BpOsdDecoder::new(&m, cfg).is_err());
        assert!(BpOsdDecoder::new(
            &m,
            BaselineConfig {
                osd_order: 4,
                ..Default::default()
            }
        )
        .is_err());
    }
}
