//! Scoring-loop benchmark: full n-gram overlap versus sensitive-restricted
//! overlap on identical traces, swept over sensitive-token density.
//!
//! The restricted loop runs the expensive occurrence search only for n-grams
//! that carry a sensitive token, so its cost tracks the sensitive density:
//! sparse spans mean proportionally less work, and at 100% density the two
//! loops do the same work. Full and restricted passes are interleaved and
//! the per-pass medians compared, which keeps the ratio meaningful even on a
//! loaded machine.

use std::fs::File;
use std::hint::black_box;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::metrics::{ovl_n, s_ovl_n};
use crate::seq::{Span, SpanSet};
use crate::synth::subseed;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n: usize,
    pub densities: Vec<f64>,
    pub instances: usize,
    pub len: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 10,
            densities: vec![1.0, 0.5, 0.25, 0.1],
            instances: 48,
            len: 200,
            reps: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub density: f64,
    /// Median seconds for the full scoring pass.
    pub t_full: f64,
    /// Median seconds for the sensitive-restricted scoring pass.
    pub t_sensitive: f64,
    /// Speedup `t_full / t_sensitive`.
    pub ratio: f64,
}

/// One scoring instance: a generated sequence, its reference, and the
/// reference's sensitive spans. Common text uses letter tokens, sensitive
/// blocks digit tokens, so sensitive ids never leak into regular content.
struct BenchInstance {
    a: Vec<u32>,
    b: Vec<u32>,
    spans: SpanSet,
}

fn build_instance(len: usize, density: f64, rng: &mut ChaCha8Rng) -> BenchInstance {
    let mut b: Vec<u32> = (0..len)
        .map(|_| u32::from(b'a') + rng.gen_range(0..26))
        .collect();
    let sensitive_total = (len as f64 * density).round() as usize;
    let mut spans = Vec::new();
    if sensitive_total >= len {
        for tok in b.iter_mut() {
            *tok = u32::from(b'0') + rng.gen_range(0..10);
        }
        spans.push(Span::new(0, len).expect("len >= 1"));
    } else if sensitive_total > 0 {
        let block = sensitive_total.clamp(1, 10.min(sensitive_total));
        let blocks = sensitive_total.div_ceil(block);
        let stride = len / blocks.max(1);
        let mut placed = 0;
        for i in 0..blocks {
            let size = block.min(sensitive_total - placed);
            if size == 0 {
                break;
            }
            let base = i * stride;
            if base + size > len {
                break;
            }
            for tok in b[base..base + size].iter_mut() {
                *tok = u32::from(b'0') + rng.gen_range(0..10);
            }
            spans.push(Span::new(base, size).expect("size >= 1"));
            placed += size;
        }
    }
    BenchInstance { a: b.clone(), b, spans: SpanSet::new(spans) }
}

fn scoring_workload(cfg: &BenchConfig, density: f64) -> Vec<BenchInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, &format!("bench-{density}")));
    (0..cfg.instances)
        .map(|_| build_instance(cfg.len, density, &mut rng))
        .collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    values[values.len() / 2]
}

/// Runs the sweep and returns one row per density.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.n == 0 || cfg.len <= cfg.n || cfg.instances == 0 || cfg.reps == 0 {
        return Err(Error::input("bench needs n >= 1, len > n, instances >= 1, reps >= 1"));
    }
    let mut rows = Vec::new();
    for &density in &cfg.densities {
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::input(format!("density {density} outside [0,1]")));
        }
        let workload = scoring_workload(cfg, density);
        // warmup, then interleave full/sensitive passes
        black_box(full_pass(&workload, cfg.n));
        black_box(sensitive_pass(&workload, cfg.n));
        let mut t_full = Vec::with_capacity(cfg.reps);
        let mut t_sens = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let start = Instant::now();
            black_box(full_pass(&workload, cfg.n));
            t_full.push(start.elapsed().as_secs_f64());
            let start = Instant::now();
            black_box(sensitive_pass(&workload, cfg.n));
            t_sens.push(start.elapsed().as_secs_f64());
        }
        let t_full = median(t_full);
        let t_sensitive = median(t_sens);
        rows.push(BenchRow { density, t_full, t_sensitive, ratio: t_full / t_sensitive });
    }
    Ok(rows)
}

fn full_pass(workload: &[BenchInstance], n: usize) -> f64 {
    workload
        .iter()
        .filter_map(|inst| ovl_n(&inst.a, &inst.b, n))
        .sum()
}

fn sensitive_pass(workload: &[BenchInstance], n: usize) -> f64 {
    workload
        .iter()
        .filter_map(|inst| s_ovl_n(&inst.a, &inst.b, &inst.spans, n))
        .sum()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::input(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "density,t_full,t_sensitive,ratio")?;
    for row in rows {
        writeln!(
            w,
            "{},{:.9},{:.9},{:.4}",
            row.density, row.t_full, row.t_sensitive, row.ratio
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_hit_requested_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for density in [0.1, 0.5, 1.0] {
            let inst = build_instance(200, density, &mut rng);
            let covered = inst.spans.covered_count() as f64 / 200.0;
            assert!(
                (covered - density).abs() < 0.05,
                "density {density} got {covered}"
            );
            for pos in inst.spans.covered_positions() {
                assert!((48..58).contains(&inst.b[pos]), "non-digit inside span");
            }
        }
    }

    #[test]
    fn zero_density_means_no_spans() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = build_instance(64, 0.0, &mut rng);
        assert!(inst.spans.is_empty());
    }

    #[test]
    fn bench_produces_a_row_per_density() {
        let cfg = BenchConfig {
            densities: vec![1.0, 0.1],
            instances: 4,
            len: 60,
            reps: 2,
            n: 5,
            seed: 3,
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for row in rows {
            assert!(row.t_full > 0.0 && row.t_sensitive > 0.0);
            assert!(row.ratio.is_finite());
        }
    }
}
