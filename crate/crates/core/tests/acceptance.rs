//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! runtime and exits non-zero if any criterion fails.
//!
//! The benchmark-scale criteria share their simulation runs: the three
//! full-guidance seeds at R = 50 feed the recommendation, alignment and
//! privacy checks.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use coldfed::cli;
use coldfed::config::{DataSource, RunConfig};
use coldfed::data::{generate_synthetic, split_items, SyntheticData, SyntheticSpec};
use coldfed::diffusion::{elbo_loss, DenoiserParams, InferenceMode, NoiseSchedule};
use coldfed::eval::{distribution_diagnostics, evaluate_cold, ndcg_at_k, recall_precision_at_k};
use coldfed::fedsim::{pair_loss_and_grad, train_baseline_mapper, Simulator, MAPPER_HIDDEN};
use coldfed::modality::Guidance;
use coldfed::numerics::rng::subsystem;
use coldfed::numerics::{sample_gaussian, Mlp, ParamSet, Rng, SeedStream};
use coldfed::privacy::{compare_pipelines, fano_bound, gaussian_noise_floor, mi_gaussian_estimate, PrivacyConfig};

const SEEDS: [u64; 3] = [1, 2, 3];
const K: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = out.pass && in_time;
    let timing = if in_time {
        format!("{:.1}s", took.as_secs_f64())
    } else {
        format!("{:.1}s, over the {:.0}s budget", took.as_secs_f64(), budget.as_secs_f64())
    };
    println!(
        "{} criterion {id:>2} ({name}) [{timing}]: {}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    pass
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn benchmark_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.conf");
    RunConfig::from_file(&path).expect("benchmark config parses")
}

// ---------------------------------------------------------------- 1, 2

fn schedule_exactness() -> Outcome {
    let mut rng = Rng::new(2024, 1);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..1000 {
        let steps = 2 + rng.below(199);
        let s = 0.05 + 0.95 * rng.uniform();
        let hi_cap = 0.999 / s;
        let max = (0.02 + 0.98 * rng.uniform()).min(hi_cap);
        let min = max * (0.001 + 0.9 * rng.uniform());
        let sch = NoiseSchedule::linear(steps, s, min, max).expect("valid config");
        worst = worst
            .max((1.0 - sch.alpha_bar(1) - s * min).abs())
            .max((1.0 - sch.alpha_bar(steps) - s * max).abs());
        monotone &= (1..=steps).all(|t| sch.alpha_bar(t) < sch.alpha_bar(t - 1));
    }
    Outcome {
        pass: worst <= 1e-12 && monotone,
        detail: format!("1000 configs, worst endpoint error {worst:.2e}, strictly decreasing: {monotone}"),
    }
}

fn posterior_identity() -> Outcome {
    let mut rng = Rng::new(7, 7);
    let (mut worst_fixed, mut worst_plugin) = (0.0f64, 0.0f64);
    for (steps, s, lo, hi) in [(40, 0.1, 0.001, 0.01), (40, 1.0, 0.001, 0.99), (7, 0.5, 0.05, 0.9), (200, 0.9, 1e-4, 0.5)] {
        let sch = NoiseSchedule::linear(steps, s, lo, hi).unwrap();
        for t in 1..=steps {
            let e0: Vec<f64> = (0..16).map(|_| rng.gaussian()).collect();
            let et: Vec<f64> = e0.iter().map(|x| sch.alpha_bar(t).sqrt() * x).collect();
            let (mean, _) = sch.posterior_stats(&e0, &et, t);
            let want: Vec<f64> = e0.iter().map(|x| sch.alpha_bar(t - 1).sqrt() * x).collect();
            for (a, b) in mean.iter().zip(&want) {
                worst_fixed = worst_fixed.max((a - b).abs());
            }
            let noisy: Vec<f64> = et.iter().map(|x| x + rng.gaussian()).collect();
            let (m1, _) = sch.posterior_stats(&e0, &noisy, t);
            let m2 = sch.mu_theta(&noisy, t, &e0);
            for (a, b) in m1.iter().zip(&m2) {
                worst_plugin = worst_plugin.max((a - b).abs());
            }
        }
    }
    Outcome {
        pass: worst_fixed <= 1e-10 && worst_plugin <= 1e-12,
        detail: format!("noise-free mean error {worst_fixed:.2e}, plug-in mean error {worst_plugin:.2e}"),
    }
}

// ---------------------------------------------------------------- 3

/// Central differences on every coordinate, written out here rather than
/// reusing the library checker. Returns the worst relative error per
/// `(name, len)` group of the flat parameter vector.
fn fd_groups(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
    groups: &[(String, usize)],
) -> Vec<(String, f64, f64)> {
    let h = 1e-5;
    let (_, g) = f(x);
    let mut probe = x.to_vec();
    let mut out = Vec::new();
    let mut at = 0;
    for (name, len) in groups {
        let (mut worst, mut gmax) = (0.0f64, 0.0f64);
        for i in at..at + len {
            probe[i] = x[i] + h;
            let up = f(&probe).0;
            probe[i] = x[i] - h;
            let down = f(&probe).0;
            probe[i] = x[i];
            let num = (up - down) / (2.0 * h);
            let denom = g[i].abs().max(num.abs()).max(1e-7);
            worst = worst.max((g[i] - num).abs() / denom);
            gmax = gmax.max(g[i].abs());
        }
        out.push((name.clone(), worst, gmax));
        at += len;
    }
    out
}

fn groups_of<P: ParamSet>(p: &P) -> Vec<(String, usize)> {
    p.tensors().into_iter().map(|(n, m)| (n, m.as_slice().len())).collect()
}

fn gradient_integrity() -> Outcome {
    let tol = 1e-4;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |label: &str, res: Vec<(String, f64, f64)>| {
        for (name, worst, gmax) in res {
            // a tensor whose gradient is identically zero is not being tested
            let ok = worst < tol && gmax > 0.0;
            pass &= ok;
            if !ok {
                lines.push(format!("{label}/{name} rel {worst:.1e} max|g| {gmax:.1e}"));
            }
        }
    };

    // client BCE over a positive and its negatives, user and item sides
    let mut rng = Rng::new(3, 3);
    let d = 6;
    let user: Vec<f64> = (0..d).map(|_| 0.5 * rng.gaussian()).collect();
    let items = sample_gaussian(&mut rng, 4, d).scale(0.5);
    let labels = [1.0, 0.0, 0.0, 0.0];
    let mut x = user.clone();
    x.extend_from_slice(items.as_slice());
    let bce = |p: &[f64]| {
        let (u, it) = p.split_at(d);
        let mut loss = 0.0;
        let mut g = vec![0.0; p.len()];
        for (r, y) in labels.iter().enumerate() {
            let (l, gu, gi) = pair_loss_and_grad(u, &it[r * d..(r + 1) * d], *y);
            loss += l;
            for j in 0..d {
                g[j] += gu[j];
                g[d + r * d + j] += gi[j];
            }
        }
        (loss, g)
    };
    check("bce", fd_groups(bce, &x, &[("user".into(), d), ("items".into(), 4 * d)]));

    // ELBO through the whole denoiser, timesteps and noise replayed
    let p = DenoiserParams::new(&mut rng, 8, 5, 2, true).unwrap();
    let sch = NoiseSchedule::linear(10, 0.5, 0.05, 0.9).unwrap();
    let e0 = sample_gaussian(&mut rng, 4, 8);
    let c = sample_gaussian(&mut rng, 4, 5);
    let elbo = |flat: &[f64]| {
        let mut q = p.clone();
        q.assign_flat(flat);
        let (l, g) = elbo_loss(&q, &sch, &e0, &c, &mut Rng::new(11, 0)).unwrap();
        (l, g.flatten())
    };
    check("elbo", fd_groups(elbo, &p.flatten(), &groups_of(&p)));

    for (label, din, dout) in [("mapper", 6, 8), ("attacker", 8, 6)] {
        let mlp = Mlp::new(&mut rng, din, MAPPER_HIDDEN, dout);
        let xin = sample_gaussian(&mut rng, 5, din);
        let y = sample_gaussian(&mut rng, 5, dout);
        let f = |flat: &[f64]| {
            let mut m = mlp.clone();
            m.assign_flat(flat);
            let (l, g) = m.mse_loss_and_grad(&xin, &y);
            (l, g.flatten())
        };
        check(label, fd_groups(f, &mlp.flatten(), &groups_of(&mlp)));
    }
    let tensors = groups_of(&p).len() + 2 + 2 * 4;
    Outcome {
        pass,
        detail: if lines.is_empty() {
            format!("{tensors} tensors over BCE, ELBO (all denoiser parts), mapper and attacker below {tol:.0e}")
        } else {
            lines.join("; ")
        },
    }
}

// ---------------------------------------------------------------- 4

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Textbook definitions: position-by-position hits and DCG, ideal DCG from
/// a relevance vector sorted descending.
fn reference(ranking: &[usize], relevant: &[usize], k: usize) -> (f64, f64, f64) {
    let rel: Vec<f64> = ranking.iter().map(|i| relevant.contains(i) as u8 as f64).collect();
    let cut = k.min(ranking.len());
    let hits: f64 = rel[..cut].iter().sum();
    let dcg: f64 = (0..cut).map(|p| rel[p] / ((p + 2) as f64).log2()).sum();
    let mut ideal = vec![0.0; ranking.len().max(k)];
    for v in ideal.iter_mut().take(relevant.len()) {
        *v = 1.0;
    }
    let idcg: f64 = (0..k).map(|p| ideal[p] / ((p + 2) as f64).log2()).sum();
    (hits / relevant.len() as f64, hits / k as f64, if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

fn metric_oracles() -> Outcome {
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for n in 1..=6usize {
        let items: Vec<usize> = (0..n).collect();
        let perms = permutations(&items);
        for mask in 1u32..(1 << n) {
            let relevant: Vec<usize> = items.iter().copied().filter(|i| mask & (1 << i) != 0).collect();
            for ranking in &perms {
                for k in 1..=n + 1 {
                    let (r, p, g) = reference(ranking, &relevant, k);
                    let (r2, p2) = recall_precision_at_k(ranking, &relevant, k);
                    let g2 = ndcg_at_k(ranking, &relevant, k);
                    cases += 1;
                    if (r, p, g) != (r2, p2, g2) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{cases} (ranking, relevant set, K) cases, {mismatches} inexact"),
    }
}

// ---------------------------------------------------------------- benchmark runs

struct Run {
    sim: Simulator,
    data: SyntheticData,
    recall: f64,
    random_recall: f64,
    centroid_at_5: Option<f64>,
    seconds: f64,
}

fn cold_recall(sim: &Simulator) -> f64 {
    let cold = sim.split().cold_items.clone();
    let e = sim.table_with_generated(&cold, InferenceMode::DeterministicMean).unwrap();
    evaluate_cold(sim.split(), &sim.user_embeddings(), &e, &[K]).unwrap().recall_at(K)
}

fn centroid(sim: &Simulator) -> f64 {
    let cold = sim.split().cold_items.clone();
    let generated = sim.generate(&cold, InferenceMode::DeterministicMean).unwrap();
    distribution_diagnostics(&sim.warm_embeddings(), &generated).unwrap().centroid_distance
}

/// Cold rows drawn i.i.d. from N(0, σ²) with σ the RMS of the warm rows.
fn random_baseline(sim: &Simulator, seed: u64) -> f64 {
    let warm = sim.warm_embeddings();
    let sigma = (warm.as_slice().iter().map(|v| v * v).sum::<f64>() / warm.as_slice().len() as f64).sqrt();
    let mut rng = SeedStream::root(seed).child(subsystem::EVAL).child(1).rng();
    let mut e = sim.global().embeddings.clone();
    for &i in &sim.split().cold_items {
        for v in e.row_mut(i) {
            *v = sigma * rng.gaussian();
        }
    }
    evaluate_cold(sim.split(), &sim.user_embeddings(), &e, &[K]).unwrap().recall_at(K)
}

fn run(seed: u64, adjust: impl Fn(&mut RunConfig)) -> Run {
    let start = Instant::now();
    let mut cfg = benchmark_config();
    cfg.seed = seed;
    adjust(&mut cfg);
    cfg.sync_seed();
    let DataSource::Synthetic(spec) = &cfg.source else {
        panic!("benchmark is synthetic")
    };
    assert_eq!(*spec, SyntheticSpec::benchmark(seed));
    let data = generate_synthetic(spec).unwrap();
    let split = split_items(data.dataset.clone(), cfg.split, seed).unwrap();
    let mut sim = Simulator::new(split, &data.features, cfg.guidance, cfg.fed.clone(), cfg.diffusion.clone(), seed).unwrap();
    let mut centroid_at_5 = None;
    while sim.round() < cfg.fed.rounds {
        sim.run_round().unwrap();
        if sim.round() == 5 {
            centroid_at_5 = Some(centroid(&sim));
        }
    }
    Run {
        recall: cold_recall(&sim),
        random_recall: random_baseline(&sim, seed),
        centroid_at_5,
        seconds: start.elapsed().as_secs_f64(),
        sim,
        data,
    }
}

fn fmt3(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn recommendation_signal(full: &[Run]) -> Outcome {
    let r: Vec<f64> = full.iter().map(|x| x.recall).collect();
    let b: Vec<f64> = full.iter().map(|x| x.random_recall).collect();
    let ratio = mean(&r) / mean(&b);
    Outcome {
        pass: ratio >= 2.0,
        detail: format!(
            "recall@{K} {} (mean {:.3}) vs random {} (mean {:.3}), ratio {ratio:.2} (need >= 2)",
            fmt3(&r),
            mean(&r),
            fmt3(&b),
            mean(&b)
        ),
    }
}

fn ablation_direction(full: &[Run]) -> Outcome {
    let base = mean(&full.iter().map(|x| x.recall).collect::<Vec<_>>());
    let mut pass = true;
    let mut parts = vec![format!("full {base:.3}")];
    for g in [Guidance::None, Guidance::Zero, Guidance::Random] {
        let r: Vec<f64> = SEEDS.iter().map(|&s| run(s, |c| c.guidance = g).recall).collect();
        pass &= base > mean(&r);
        parts.push(format!("{g} {:.3}", mean(&r)));
    }
    Outcome {
        pass,
        detail: format!("mean recall@{K}: {}", parts.join(", ")),
    }
}

fn embedding_alignment(full: &[Run]) -> Outcome {
    let at5: Vec<f64> = full.iter().map(|x| x.centroid_at_5.unwrap()).collect();
    let at50: Vec<f64> = full.iter().map(|x| centroid(&x.sim)).collect();
    let ratio = mean(&at50) / mean(&at5);
    Outcome {
        pass: ratio < 0.5,
        detail: format!(
            "centroid distance round 5 {} -> round 50 {}, ratio of means {ratio:.2} (need < 0.5)",
            fmt3(&at5),
            fmt3(&at50)
        ),
    }
}

fn privacy_direction(full: &[Run]) -> Outcome {
    let cfg = PrivacyConfig::default();
    let rc = benchmark_config();
    let (mut mse, mut pr, mut mi) = (vec![[0.0; 2]; 0], vec![[0.0; 2]; 0], vec![[0.0; 2]; 0]);
    for (x, &seed) in full.iter().zip(&SEEDS) {
        let warm = &x.sim.split().warm_items;
        let mut rng = SeedStream::root(seed).child(subsystem::ATTACK).child(0).rng();
        let mapper = train_baseline_mapper(
            &x.data.features.select(warm),
            &x.sim.warm_embeddings(),
            rc.mapper_epochs,
            rc.mapper_lr,
            &mut rng,
        )
        .unwrap();
        let cmp = compare_pipelines(
            &x.sim.split().cold_items,
            &x.data.features,
            x.sim.diffusion(),
            x.sim.conditions(),
            &mapper,
            Some((&x.data.item_clusters, 4)),
            &cfg,
            SeedStream::root(seed).child(subsystem::ATTACK).child(1),
        )
        .unwrap();
        mse.push([cmp.diffusion.report.mse, cmp.mapper.report.mse]);
        pr.push([cmp.diffusion.report.pearson.abs(), cmp.mapper.report.pearson.abs()]);
        mi.push([cmp.diffusion.mi_nats, cmp.mapper.mi_nats]);
    }
    let avg = |v: &[[f64; 2]], i: usize| mean(&v.iter().map(|p| p[i]).collect::<Vec<_>>());
    let (m0, m1) = (avg(&mse, 0), avg(&mse, 1));
    let (p0, p1) = (avg(&pr, 0), avg(&pr, 1));
    let (i0, i1) = (avg(&mi, 0), avg(&mi, 1));
    Outcome {
        pass: m0 > m1 && p0 < p1 && i0 < i1,
        detail: format!(
            "diffusion vs mapper: MSE {m0:.4} vs {m1:.4} (need >), |pearson| {p0:.3} vs {p1:.3} (need <), MI {i0:.2} vs {i1:.2} nats (need <)"
        ),
    }
}

fn ldp_robustness(full: &[Run]) -> Outcome {
    let clean = mean(&full.iter().map(|x| x.recall).collect::<Vec<_>>());
    let noisy: Vec<f64> = SEEDS.iter().map(|&s| run(s, |c| c.fed.ldp_scale = 10.0).recall).collect();
    let ratio = mean(&noisy) / clean;
    Outcome {
        pass: ratio >= 0.6,
        detail: format!(
            "recall@{K} with δ=10 {} (mean {:.3}) vs δ=0 mean {clean:.3}, retained {:.0}% (need >= 60%)",
            fmt3(&noisy),
            mean(&noisy),
            100.0 * ratio
        ),
    }
}

fn light_mode_contract() -> Outcome {
    let mut events = Vec::new();
    let (mut light, mut full) = (Vec::new(), Vec::new());
    for &s in &SEEDS {
        let l = run(s, |c| {
            c.fed.rounds = 10;
            c.fed.light_mode = true;
        });
        events.push(l.sim.diffusion_trainings());
        light.push(l.recall);
        full.push(run(s, |c| c.fed.rounds = 10).recall);
    }
    let rel = (mean(&light) - mean(&full)).abs() / mean(&full);
    Outcome {
        pass: events.iter().all(|&e| e == 5) && rel <= 0.3,
        detail: format!(
            "training events {events:?}, recall@{K} light {:.3} vs full {:.3}, gap {:.0}% (need <= 30%)",
            mean(&light),
            mean(&full),
            100.0 * rel
        ),
    }
}

// ---------------------------------------------------------------- 9

fn calculators() -> Outcome {
    let fano = fano_bound(0.0, 4).unwrap();
    let floor = gaussian_noise_floor(2, 1.0).unwrap();
    let floor_err = (floor - (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs();
    let mut rng = Rng::new(99, 0);
    let x = sample_gaussian(&mut rng, 100_000, 1);
    let y = x.add(&sample_gaussian(&mut rng, 100_000, 1));
    let mi = mi_gaussian_estimate(&x, &y).unwrap();
    let mi_err = (mi - 0.5 * 2f64.ln()).abs();
    Outcome {
        pass: fano == 0.5 && floor_err <= 1e-12 && mi_err <= 0.03,
        detail: format!("fano(0,4) = {fano}, floor error {floor_err:.1e}, channel MI {mi:.4} (error {mi_err:.4})"),
    }
}

// ---------------------------------------------------------------- 12

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn pipeline(out: &Path) {
    let mut cfg = benchmark_config();
    cfg.out = out.to_path_buf();
    cli::cmd_gen_data(&cfg).unwrap();
    cli::cmd_train(&cfg).unwrap();
    cli::cmd_infer(&cfg).unwrap();
    cli::cmd_eval(&cfg).unwrap();
    cli::cmd_attack(&cfg).unwrap();
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Outcome {
        pass: fa == fb && differing.is_empty() && !fa.is_empty(),
        detail: if differing.is_empty() && fa == fb {
            format!("{} files byte-identical across two gen-data→train→infer→eval→attack runs", fa.len())
        } else {
            format!("differing: {differing:?}")
        },
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(report(1, "schedule exactness", secs(1), schedule_exactness));
    results.push(report(2, "posterior identity", secs(1), posterior_identity));
    results.push(report(3, "gradient integrity", secs(30), gradient_integrity));
    results.push(report(4, "metric oracles", secs(5), metric_oracles));

    let start = Instant::now();
    let full: Vec<Run> = SEEDS.iter().map(|&s| run(s, |_| {})).collect();
    let shared = start.elapsed();
    println!(
        "     benchmark runs: seeds {SEEDS:?} at R = 50 took {:.1}s ({})",
        shared.as_secs_f64(),
        fmt3(&full.iter().map(|r| r.seconds).collect::<Vec<_>>())
    );
    let within = |budget: u64| secs(budget).saturating_sub(shared);
    results.push(report(5, "recommendation signal", within(300), || recommendation_signal(&full)));
    results.push(report(6, "ablation direction", secs(900), || ablation_direction(&full)));
    results.push(report(7, "embedding alignment", within(300), || embedding_alignment(&full)));
    results.push(report(8, "privacy direction", within(300), || privacy_direction(&full)));
    results.push(report(9, "Fano and floor calculators", secs(10), calculators));
    results.push(report(10, "LDP robustness", secs(600), || ldp_robustness(&full)));
    results.push(report(11, "light-mode contract", secs(600), light_mode_contract));
    results.push(report(12, "reproducibility", secs(600), reproducibility));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
