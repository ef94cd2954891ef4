use super::{CliqueResult, ConsistencyGraph, PcmConfig, PcmError};
use super::CandidateLoop;
use serde::Serialize;
use std::time::Instant;

pub const PCM_BENCH_CSV_HEADER: &str = "n_vertices,batch_ms,incremental_ms,batch_size,incremental_size";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcmBenchRow {
    pub n_vertices: usize,
    /// Median wall time of one search, milliseconds.
    pub batch_ms: f64,
    pub incremental_ms: f64,
    pub batch_size: usize,
    pub incremental_size: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Feeds `candidates` (ids strictly increasing) into one consistency graph
/// in batches of `batch`, stopping at `max_vertices`. After every batch the
/// whole graph is searched from scratch and the previous incremental result
/// is updated; both searches are timed `repetitions` times and the medians
/// kept. Edge construction is shared and not timed. No candidates gives a
/// single all-zero row.
pub fn incremental_benchmark(
    candidates: &[CandidateLoop],
    cfg: &PcmConfig,
    batch: usize,
    max_vertices: usize,
    repetitions: usize,
) -> Result<Vec<PcmBenchRow>, PcmError> {
    cfg.validate()?;
    if batch == 0 || repetitions == 0 {
        return Err(PcmError::Config("batch size and repetitions must be positive".into()));
    }
    let n = candidates.len().min(max_vertices);
    if n == 0 {
        return Ok(vec![PcmBenchRow { n_vertices: 0, batch_ms: 0.0, incremental_ms: 0.0, batch_size: 0, incremental_size: 0 }]);
    }
    let mut cg = ConsistencyGraph::new(*cfg);
    let mut inc = CliqueResult::empty();
    let mut rows = Vec::new();
    for chunk in candidates[..n].chunks(batch) {
        cg.add_candidates(chunk.to_vec())?;
        let mut batch_t = Vec::with_capacity(repetitions);
        let mut batch_r = CliqueResult::empty();
        for _ in 0..repetitions {
            let t = Instant::now();
            batch_r = cg.max_clique_batch();
            batch_t.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mut inc_t = Vec::with_capacity(repetitions);
        let mut next = None;
        for _ in 0..repetitions {
            let mut g = cg.clone();
            let t = Instant::now();
            let r = g.max_clique_incremental(&inc)?;
            inc_t.push(t.elapsed().as_secs_f64() * 1e3);
            next = Some((g, r));
        }
        let (g, r) = next.expect("repetitions > 0");
        cg = g;
        inc = r;
        rows.push(PcmBenchRow {
            n_vertices: cg.len(),
            batch_ms: median(batch_t),
            incremental_ms: median(inc_t),
            batch_size: batch_r.size,
            incremental_size: inc.size,
        });
    }
    Ok(rows)
}

pub fn pcm_bench_csv(rows: &[PcmBenchRow]) -> String {
    let mut s = format!("{PCM_BENCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.n_vertices, r.batch_ms, r.incremental_ms, r.batch_size, r.incremental_size));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn empty_input_gives_zero_row() {
        let rows = incremental_benchmark(&[], &PcmConfig::default(), 10, 1000, 3).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_vertices, 0);
        assert_eq!(pcm_bench_csv(&rows), format!("{PCM_BENCH_CSV_HEADER}\n0,0,0,0,0\n"));
    }
}
