//! Per-iteration timing of certificate computation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BarrierParams, FilterMode, SafetyFilter, Workspace};
use crate::model::{SiCommand, Vec2};

/// Robots per square meter in benchmark states (about 7.5 neighbors inside 0.2 m).
pub const BENCH_DENSITY: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub mode: FilterMode,
    /// Centralized: wall time per filter call. Decentralized: total time divided by `n`.
    pub ms_mean: f64,
    pub ms_p95: f64,
    pub ms_min: f64,
    pub ms_max: f64,
    pub iters: usize,
}

/// Random sequential placement of `n` robots at roughly `density` robots/m^2,
/// all pairwise distances above `min_sep`, inside a square arena sized to match.
pub fn dense_random_state(
    n: usize,
    density: f64,
    min_sep: f64,
    params: &BarrierParams,
    rng: &mut impl Rng,
) -> (Vec<Vec2>, Workspace) {
    let side = (n as f64 / density).sqrt();
    let half = 0.5 * side + params.boundary_margin;
    let ws = Workspace {
        xmin: -half,
        xmax: half,
        ymin: -half,
        ymax: half,
    };
    let mut pts: Vec<Vec2> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pts.len() < n {
        let p = Vec2::new(
            rng.random_range(-0.5 * side..0.5 * side),
            rng.random_range(-0.5 * side..0.5 * side),
        );
        attempts += 1;
        if pts.iter().all(|q| q.distance(p) > min_sep) {
            pts.push(p);
        }
        assert!(
            attempts < 1_000_000,
            "cannot place {n} robots at density {density}"
        );
    }
    (pts, ws)
}

/// Random sequential placement inside `ws` until `max_failures` consecutive
/// candidates are rejected, which approaches the jamming density.
pub fn saturated_random_state(
    ws: &Workspace,
    params: &BarrierParams,
    max_failures: usize,
    rng: &mut impl Rng,
) -> Vec<Vec2> {
    let m = params.boundary_margin;
    let mut pts: Vec<Vec2> = Vec::new();
    let mut failures = 0;
    while failures < max_failures {
        let p = Vec2::new(
            rng.random_range(ws.xmin + m..ws.xmax - m),
            rng.random_range(ws.ymin + m..ws.ymax - m),
        );
        if pts.iter().all(|q| q.distance(p) >= params.ds) {
            pts.push(p);
            failures = 0;
        } else {
            failures += 1;
        }
    }
    pts
}

fn random_commands(n: usize, alpha: f64, rng: &mut impl Rng) -> Vec<SiCommand> {
    (0..n)
        .map(|_| SiCommand::new(rng.random_range(-alpha..alpha), rng.random_range(-alpha..alpha)))
        .collect()
}

/// Time `iters` filter calls per swarm size on fresh random dense states.
/// Centralized mode keeps every pair; decentralized uses `params.neighbor_radius`.
pub fn benchmark_certificates(
    n_list: &[usize],
    mode: FilterMode,
    iters: usize,
    seed: u64,
    params: &BarrierParams,
) -> Vec<BenchmarkRow> {
    let iters = iters.max(1);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run_params = match mode {
            FilterMode::Centralized => BarrierParams {
                neighbor_radius: f64::INFINITY,
                ..*params
            },
            _ => *params,
        };
        let mut samples = Vec::with_capacity(iters);
        for _ in 0..iters {
            let (pos, ws) = dense_random_state(n, BENCH_DENSITY, params.ds + 1e-3, params, &mut rng);
            let desired = random_commands(n, params.alpha_bound, &mut rng);
            let filter = SafetyFilter {
                params: run_params,
                workspace: ws,
                check_start: false,
            };
            let start = Instant::now();
            let out = filter.filter(mode, &pos, &desired);
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(&out);
            let per = match mode {
                FilterMode::Decentralized => elapsed / n as f64,
                _ => elapsed,
            };
            samples.push(per);
        }
        rows.push(summarize(n, mode, samples));
    }
    rows
}

fn summarize(n: usize, mode: FilterMode, mut samples: Vec<f64>) -> BenchmarkRow {
    samples.sort_by(f64::total_cmp);
    let iters = samples.len();
    let mean = samples.iter().sum::<f64>() / iters as f64;
    let p95_idx = ((0.95 * iters as f64).ceil() as usize).clamp(1, iters) - 1;
    BenchmarkRow {
        n,
        mode,
        ms_mean: mean,
        ms_p95: samples[p95_idx],
        ms_min: samples[0],
        ms_max: samples[iters - 1],
        iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::neighbor_lists;

    #[test]
    fn dense_state_respects_spacing() {
        let params = BarrierParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pos, ws) = dense_random_state(40, BENCH_DENSITY, 0.081, &params, &mut rng);
        assert_eq!(pos.len(), 40);
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                assert!(pos[i].distance(pos[j]) > 0.081);
            }
            assert!(ws.boundary_h(pos[i], params.boundary_margin).iter().all(|h| *h >= 0.0));
        }
    }

    #[test]
    fn benchmark_reports_every_size() {
        let rows = benchmark_certificates(
            &[5, 10],
            FilterMode::Decentralized,
            3,
            7,
            &BarrierParams::default(),
        );
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.ms_min <= r.ms_mean && r.ms_mean <= r.ms_max));
        assert!(rows.iter().all(|r| r.ms_p95 <= r.ms_max));
    }

    #[test]
    fn saturated_state_neighbor_cap() {
        let params = BarrierParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pos = saturated_random_state(&Workspace::default(), &params, 2000, &mut rng);
        let lists = neighbor_lists(&pos, params.neighbor_radius);
        assert!(lists.iter().all(|l| l.len() <= 26));
    }
}
