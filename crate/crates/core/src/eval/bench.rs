use std::time::Instant;

use crate::data::DurationCorpus;
use crate::duration::{index_keys, predict_sentences, DurationModel, ModelKind, SampleOptions};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub nfe: usize,
    pub median_ms: f64,
    /// Milliseconds per function evaluation; a DET pass counts as one.
    pub ms_per_nfe: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of median time against NFE.
    pub slope_ms_per_nfe: f64,
}

impl BenchResult {
    pub fn median_at(&self, nfe: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.nfe == nfe).map(|r| r.median_ms)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times sampling of the whole validation set on one thread.
pub fn bench_sampling(
    model: &DurationModel,
    validation: &DurationCorpus,
    nfe_list: &[usize],
    repetitions: usize,
    opts: &SampleOptions,
) -> Result<BenchResult> {
    if repetitions == 0 || nfe_list.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs repetitions and nfe values".into()));
    }
    let seqs = validation.phone_sequences();
    let keys = index_keys(seqs.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let run = |nfe: usize| -> Result<f64> {
        let o = SampleOptions { nfe, ..*opts };
        let start = Instant::now();
        pool.install(|| predict_sentences(model, &seqs, &keys, &o))?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    // warm-up
    run(nfe_list[0])?;
    let det_ms = match model.kind() {
        ModelKind::Det => Some(median((0..repetitions).map(|_| run(1)).collect::<Result<_>>()?)),
        ModelKind::Fm => None,
    };
    let mut rows = Vec::with_capacity(nfe_list.len());
    for &nfe in nfe_list {
        let (median_ms, ms_per_nfe) = match det_ms {
            Some(ms) => (ms, ms),
            None => {
                let m = median((0..repetitions).map(|_| run(nfe)).collect::<Result<_>>()?);
                (m, m / nfe as f64)
            }
        };
        rows.push(BenchRow {
            nfe,
            median_ms,
            ms_per_nfe,
        });
    }
    let slope = if det_ms.is_some() || rows.len() < 2 {
        0.0
    } else {
        let n = rows.len() as f64;
        let mx = rows.iter().map(|r| r.nfe as f64).sum::<f64>() / n;
        let my = rows.iter().map(|r| r.median_ms).sum::<f64>() / n;
        let sxy: f64 = rows.iter().map(|r| (r.nfe as f64 - mx) * (r.median_ms - my)).sum();
        let sxx: f64 = rows.iter().map(|r| (r.nfe as f64 - mx).powi(2)).sum();
        sxy / sxx
    };
    Ok(BenchResult {
        rows,
        slope_ms_per_nfe: slope,
    })
}
