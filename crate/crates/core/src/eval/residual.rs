use crate::data::DurationCorpus;
use crate::duration::{index_keys, predict_sentences, quantisation_residual, LogDurations, ModelKind, SampleOptions};
use crate::duration::DurationModel;
use crate::error::{Error, Result};

/// Default NFE grid for residual curves.
pub const DEFAULT_NFE_GRID: [usize; 7] = [1, 2, 4, 8, 10, 16, 32];

/// Residual at each NFE for one (model, corpus) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub model: String,
    pub corpus: String,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualCurve {
    pub nfe: Vec<usize>,
    pub rows: Vec<CurveRow>,
}

impl ResidualCurve {
    pub fn new(nfe: Vec<usize>) -> Self {
        Self { nfe, rows: Vec::new() }
    }

    pub fn push(&mut self, model: impl Into<String>, corpus: impl Into<String>, residuals: Vec<f64>) -> Result<()> {
        if residuals.len() != self.nfe.len() {
            return Err(Error::InvalidArgument(format!(
                "{} residuals for {} nfe values",
                residuals.len(),
                self.nfe.len()
            )));
        }
        self.rows.push(CurveRow {
            model: model.into(),
            corpus: corpus.into(),
            residuals,
        });
        Ok(())
    }

    /// Model names in first-appearance order.
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model) {
                out.push(r.model.clone());
            }
        }
        out
    }

    /// Arithmetic mean over corpora at each NFE.
    pub fn aggregate(&self, model: &str) -> Option<Vec<f64>> {
        let rows: Vec<&CurveRow> = self.rows.iter().filter(|r| r.model == model).collect();
        if rows.is_empty() {
            return None;
        }
        Some(
            (0..self.nfe.len())
                .map(|i| rows.iter().map(|r| r.residuals[i]).sum::<f64>() / rows.len() as f64)
                .collect(),
        )
    }
}

fn check_grid(nfe_list: &[usize]) -> Result<()> {
    if nfe_list.is_empty() || nfe_list[0] == 0 || nfe_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "nfe list must be non-empty, positive and strictly ascending: {nfe_list:?}"
        )));
    }
    Ok(())
}

fn pooled_residual(outputs: &[LogDurations]) -> f64 {
    let values = outputs.iter().flat_map(|o| o.values.iter().copied()).collect();
    let mask = outputs.iter().flat_map(|o| o.mask.iter().copied()).collect();
    quantisation_residual(&LogDurations { values, mask })
}

/// Mean quantisation residual over every validation position, at each NFE.
///
/// DET output does not depend on NFE, so it is evaluated once and repeated.
pub fn residual_vs_nfe(
    model: &DurationModel,
    validation: &DurationCorpus,
    nfe_list: &[usize],
    opts: &SampleOptions,
) -> Result<Vec<f64>> {
    check_grid(nfe_list)?;
    if model.trained_steps() == 0 {
        return Err(Error::Untrained);
    }
    let seqs = validation.phone_sequences();
    let keys = index_keys(seqs.len());
    match model.kind() {
        ModelKind::Det => {
            let r = pooled_residual(&predict_sentences(model, &seqs, &keys, opts)?);
            Ok(vec![r; nfe_list.len()])
        }
        ModelKind::Fm => nfe_list
            .iter()
            .map(|&nfe| {
                let o = SampleOptions { nfe, ..*opts };
                Ok(pooled_residual(&predict_sentences(model, &seqs, &keys, &o)?))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_mean_over_corpora() {
        let mut c = ResidualCurve::new(vec![1, 2]);
        c.push("fm", "read", vec![0.3, 0.1]).unwrap();
        c.push("fm", "spont", vec![0.1, 0.3]).unwrap();
        c.push("det", "read", vec![0.25, 0.25]).unwrap();
        assert_eq!(c.aggregate("fm").unwrap(), vec![0.2, 0.2]);
        assert_eq!(c.aggregate("det").unwrap(), vec![0.25, 0.25]);
        assert!(c.aggregate("vits").is_none());
        assert_eq!(c.models(), vec!["fm", "det"]);
        assert!(c.push("fm", "x", vec![0.1]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[1]).is_ok());
        assert!(check_grid(&DEFAULT_NFE_GRID).is_ok());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0, 1]).is_err());
        assert!(check_grid(&[4, 2]).is_err());
    }
}
