use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bbp_lab::ensemble::{Beta, Deformation, EntryLaw, LawKind, Model};
use bbp_lab::par::{map_trials, map_trials_sequential, trial_seed};
use bbp_lab::profile::VarianceProfile;
use bbp_lab::spectral::extreme_eigenvalues;

fn top_eigenvalue(model: &Model, t: usize) -> f64 {
    let x = model.sample(trial_seed(7, t as u64)).unwrap();
    extreme_eigenvalues(&x, 1, 0).unwrap().0[0]
}

fn trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("outlier_trials");
    group.sample_size(10);
    for n in [64usize, 256] {
        let model = Model::new(
            VarianceProfile::uniform(n).unwrap(),
            EntryLaw::new(LawKind::Gaussian, Beta::Real),
            Deformation::diagonal(vec![1], &[2.0], Beta::Real).unwrap(),
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", n), &model, |b, m| {
            b.iter(|| map_trials_sequential(32, |t| top_eigenvalue(m, t)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &model, |b, m| {
            b.iter(|| map_trials(32, |t| top_eigenvalue(m, t)))
        });
    }
    group.finish();
}

criterion_group!(benches, trials);
criterion_main!(benches);
