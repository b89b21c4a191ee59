use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use locc_net::code::builtin;
use locc_net::io::{parse_tree, TreeDocument};
use locc_net::network::bfs_labeling;
use locc_net::par::ExecPolicy;
use locc_net::protocols::{plan_spreading, run_concentrating, verify_spreading, BranchPolicy, ConcentrateOptions};

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn branches(c: &mut Criterion) {
    let (tree, _) = parse_tree(&TreeDocument::line(5)).unwrap();
    let code = builtin("five_qubit", None, Some(tree.names())).unwrap();
    let labeling = bfs_labeling(&tree);
    let plan = plan_spreading(&code, &tree, &labeling, 1e-8, &[]).unwrap();

    let mut group = c.benchmark_group("five_qubit");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        let opts = ConcentrateOptions { policy, ..Default::default() };
        group.bench_with_input(BenchmarkId::new("concentrate", name), &opts, |b, opts| {
            b.iter(|| run_concentrating(&code, &tree, &labeling, opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("verify_spread", name), &policy, |b, &policy| {
            b.iter(|| verify_spreading(&plan, &BranchPolicy::Exhaustive, 1e-9, policy).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, branches);
criterion_main!(benches);
