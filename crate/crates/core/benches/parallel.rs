use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use csma_mpr::exec::{map_slice, Execution};
use csma_mpr::meanfield::solve_equilibrium;
use csma_mpr::model::{AllOrNothingMpr, ClassSpec, Scenario};
use csma_mpr::phy::{estimate_q_all, Decoder, PhyConfig};
use csma_mpr::sim::{run_seeds, SimConfig};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn qprob(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate_q_all");
    g.sample_size(10);
    let mut cfg = PhyConfig::new(15.0, 1, 2.0, Decoder::Scf);
    cfg.samples = 4096;
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, "L=2"), &exec, |b, &e| {
            b.iter(|| estimate_q_all(&cfg, 2, e).unwrap())
        });
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_seeds");
    g.sample_size(10);
    let s = Scenario::finite(
        vec![ClassSpec::count(10, 1.0, 0.1), ClassSpec::count(10, 1.0, 0.2)],
        10,
        AllOrNothingMpr::new(vec![0.96, 0.89]),
    );
    let cfg = SimConfig::new(s, 200_000, 1);
    let seeds: Vec<u64> = (1..=8).collect();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, "8 seeds"), &exec, |b, &e| {
            b.iter(|| run_seeds(&cfg, &seeds, e).unwrap())
        });
    }
    g.finish();
}

fn analytic_grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("equilibrium_grid");
    let points: Vec<f64> = (1..=400).map(|i| i as f64 * 1e-3).collect();
    let base = Scenario::limiting(
        vec![ClassSpec::fraction(0.5, 0.0, 2.0), ClassSpec::fraction(0.5, 0.0, 4.0)],
        10,
        AllOrNothingMpr::new(vec![0.96, 0.89]),
    );
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, "400 points"), &exec, |b, &e| {
            b.iter(|| {
                map_slice(e, &points, |&lam| solve_equilibrium(&base.with_arrivals(&[lam, lam])).unwrap().state)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, qprob, seed_sweep, analytic_grid);
criterion_main!(benches);
