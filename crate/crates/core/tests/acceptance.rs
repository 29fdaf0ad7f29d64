//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use xcmine::ann::{build_index, IndexMode};
use xcmine::clustering::{balanced_cluster, clustering_goodness, target_num_clusters, Clustering, GoodnessMode};
use xcmine::dataset::compute_stats;
use xcmine::encoder::{BagOfEmbeddings, Encoder};
use xcmine::infer::{build_fusion_training_set, fit_tree, Predictor, TreeParams};
use xcmine::linalg::{dot, Embeddings};
use xcmine::metrics::{
    ndcg_at_k, precision_at_k, propensities, psn_at_k, psp_at_k, recall_at_k, PropensityModel,
};
use xcmine::negmine::{
    curriculum_cluster_size, plan_epoch, select_hard_negatives, uniform_plan, Curriculum, Miner, MinerConfig,
    Strategy,
};
use xcmine::synth::generate;
use xcmine::theory::{is_balanced, verify_with_clustering};
use xcmine::trainer::{embedding_precision_at_1, precision_at_1, train_m1, train_m2, TrainConfig};

type Outcome = (bool, String);

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let radii = [0.3, 0.6, 1.0];
    let sizes = [1, 2, 4, 8, 16, 32, 100];
    let (n, l, d) = (100, 50, 8);
    let mut failures = Vec::new();
    let mut balanced_checked = 0;
    for inst in 0..50u64 {
        let mut r = rng(1000 + inst);
        let balanced = inst % 2 == 0;
        // every label gets at least one point; balanced instances give each
        // point one label and each label two points
        let mut relevance: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        for (slot, &i) in order.iter().enumerate() {
            relevance[i].push(slot % l);
        }
        if !balanced {
            for row in relevance.iter_mut() {
                for _ in 0..r.gen_range(0..3) {
                    row.push(r.gen_range(0..l));
                }
            }
        }
        let ds = dataset_from_relevance(relevance, l);
        let label_embs = random_unit(l, d, &mut r);
        let noise = [0.2, 0.5, 1.0][(inst % 3) as usize];
        let mut point_embs = Embeddings::new(d);
        for i in 0..n {
            let pos = ds.positives(i);
            let anchor = pos[r.gen_range(0..pos.len())];
            point_embs.push(&perturb(label_embs.row(anchor), noise, &mut r));
        }
        let radius = radii[(inst % 3) as usize];
        let c = sizes[(inst / 3) as usize % sizes.len()];
        let clustering = match balanced_cluster(&point_embs, c, inst) {
            Ok(cl) => cl,
            Err(e) => return (false, format!("instance {inst}: clustering failed: {e}")),
        };
        let rep = match verify_with_clustering(&ds, &point_embs, &label_embs, &clustering, radius) {
            Ok(rep) => rep,
            Err(e) => return (false, format!("instance {inst}: {e}")),
        };
        if !rep.holds {
            failures.push(format!("instance {inst}: lhs {} > rhs {}", rep.bad_event_rate, rep.bound_rhs));
        }
        let stats = compute_stats(&ds);
        if is_balanced(&stats) {
            balanced_checked += 1;
            let sum = rep.epsilon1 + rep.epsilon2;
            let ok = rep.corollary_rhs.is_some_and(|c| (c - sum).abs() <= 1e-12 * sum.max(f64::MIN_POSITIVE))
                && (rep.c2 - 1.0).abs() <= 1e-12
                && rep.c1 <= 1.0
                && rep.bound_rhs <= sum * (1.0 + 1e-12)
                && rep.bad_event_rate <= sum * (1.0 + 1e-12);
            if !ok {
                failures.push(format!("instance {inst}: corollary check failed ({rep:?})"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        failures.push(format!("runtime {secs:.1}s >= 30s"));
    }
    (
        failures.is_empty() && balanced_checked == 25,
        format!(
            "50 instances, bound held on all: {}; corollary checked on {balanced_checked} balanced; {secs:.2}s{}",
            failures.is_empty(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut mismatches = 0;
    let mut nonempty = 0;
    for t in 0..100u64 {
        let mut r = rng(2000 + t);
        let d = r.gen_range(2..8);
        let b = r.gen_range(1..12);
        let pool_size = r.gen_range(1..20);
        let points = random_unit(b, d, &mut r);
        let mut pool_ids: Vec<usize> = (0..40).collect();
        pool_ids.shuffle(&mut r);
        pool_ids.truncate(pool_size);
        pool_ids.sort_unstable();
        let mut pool = random_unit(pool_size, d, &mut r);
        if pool_size > 1 {
            // duplicate a row to exercise distance ties
            let row = pool.row(0).to_vec();
            pool.row_mut(pool_size - 1).copy_from_slice(&row);
        }
        let positives: Vec<Vec<usize>> = (0..b)
            .map(|_| {
                let mut p: Vec<usize> = pool_ids.iter().copied().filter(|_| r.gen_bool(0.3)).collect();
                p.sort_unstable();
                p
            })
            .collect();
        let radius = r.gen_range(0.2..2.0);
        let cap = r.gen_range(1..8);
        let pos_refs: Vec<&[usize]> = positives.iter().map(Vec::as_slice).collect();
        let got = select_hard_negatives(&points, &pool, &pool_ids, &pos_refs, radius, cap).lists;
        let want = brute_hard_negatives(&points, &pool, &pool_ids, &positives, radius, cap);
        if got != want {
            mismatches += 1;
        }
        nonempty += want.iter().filter(|w| !w.is_empty()).count();
    }
    (mismatches == 0, format!("100 random batches, {mismatches} mismatches, {nonempty} non-empty lists"))
}

fn criterion_3() -> Outcome {
    let worst = (0..10u64).map(|s| gradient_check(3000 + s, 6, 4, 1e-5)).fold(0.0, f64::max);
    (worst <= 1e-4, format!("max relative error {worst:.3e} over 10 configurations (D=4, V=6, h=1e-5)"))
}

struct MinerRuns {
    epochs: Vec<usize>,
    overhead: f64,
    epoch_time: f64,
}

fn run_strategy(strategy: Strategy) -> Result<MinerRuns, String> {
    let mut out = MinerRuns { epochs: Vec::new(), overhead: 0.0, epoch_time: 0.0 };
    for seed in 0..5u64 {
        let spec = convergence_spec(seed);
        let data = generate(&spec).map_err(|e| e.to_string())?;
        let mut enc = BagOfEmbeddings::random(spec.effective_vocab(), spec.dim, seed + 100).map_err(|e| e.to_string())?;
        let cfg = convergence_config(strategy, seed);
        let log = train_m1(&data.dataset, &mut enc, &cfg).map_err(|e| e.to_string())?;
        let reached = log.last().and_then(|e| e.p_at_1).is_some_and(|p| p >= 0.9);
        out.epochs.push(if reached { log.len() } else { usize::MAX });
        out.overhead += log.iter().map(|e| e.overhead_seconds).sum::<f64>();
        out.epoch_time += log.iter().map(|e| e.seconds).sum::<f64>();
    }
    Ok(out)
}

fn criteria_4_and_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let runs: Result<Vec<MinerRuns>, String> =
        [Strategy::Ngame, Strategy::Uniform, Strategy::AnnsRefresh].into_iter().map(run_strategy).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return ((false, e.clone()), (false, e)),
    };
    let secs = start.elapsed().as_secs_f64();
    let (ngame, uniform, anns) = (&runs[0], &runs[1], &runs[2]);
    let (mn, mu) = (median(ngame.epochs.clone()), median(uniform.epochs.clone()));
    let ordered = mn != usize::MAX && mn <= mu && mu as f64 >= 1.5 * mn as f64;
    let c4 = (
        ordered && secs < 300.0,
        format!(
            "median epochs to P@1>=0.9: ngame {mn} {:?}, uniform {mu} {:?}, ratio {:.2}; {secs:.1}s",
            ngame.epochs,
            uniform.epochs,
            mu as f64 / mn as f64
        ),
    );
    let f_ngame = ngame.overhead / ngame.epoch_time;
    let f_anns = anns.overhead / anns.epoch_time;
    let c5 = (
        f_ngame <= 0.05 && f_anns > f_ngame,
        format!("sampling overhead / epoch time: ngame {f_ngame:.4}, anns_refresh {f_anns:.4}"),
    );
    (c4, c5)
}

fn criterion_6() -> Outcome {
    let ds = toy_task();
    let mut enc = BagOfEmbeddings::random(ds.num_features(), 8, 6).unwrap();
    let m1 = train_m1(&ds, &mut enc, &toy_config(1, 6)).unwrap();
    let before = enc.to_bytes();

    let (zero, _) = train_m2(&ds, &enc, &TrainConfig { epochs: 0, ..toy_config(0, 6) }).unwrap();
    let label_embs = enc.embed_batch(ds.label_features()).unwrap();
    let exact_init = zero.vectors() == &label_embs;

    let m2_cfg = TrainConfig { learning_rate: 1e-2, ..toy_config(30, 6) };
    let (bank, _) = train_m2(&ds, &enc, &m2_cfg).unwrap();
    let untouched = enc.to_bytes() == before;
    let unit = bank.vectors().rows().all(|w| (dot(w, w).sqrt() - 1.0).abs() <= 1e-6);

    let points: Vec<usize> = (0..ds.num_points()).collect();
    let point_embs = enc.embed_batch(ds.points()).unwrap();
    let p_emb = embedding_precision_at_1(&ds, &enc, &points).unwrap();
    let p_cls = precision_at_1(&ds, &points, &point_embs, bank.vectors()).unwrap();

    let predictor = Predictor::new(&enc, &bank, ds.label_features(), ds.label_frequencies(), IndexMode::Exact).unwrap();
    let ys: Vec<Vec<usize>> = points.iter().map(|&i| ds.positives(i).to_vec()).collect();
    let samples = build_fusion_training_set(&predictor, ds.points(), &ys, ds.num_labels()).unwrap();
    let tree = fit_tree(&samples, &TreeParams::default()).unwrap();
    let fused = predictor.with_tree(Some(tree));
    let hits = points
        .iter()
        .filter(|&&i| ds.is_positive(i, fused.predict(ds.point(i), 1).unwrap()[0].0))
        .count();
    let p_fused = hits as f64 / points.len() as f64;

    let ok = exact_init && untouched && unit && p_cls >= p_emb && p_fused >= p_emb.max(p_cls) - 0.01;
    (
        ok,
        format!(
            "zero-epoch init exact: {exact_init}; encoder untouched: {untouched}; unit classifiers: {unit}; \
             P@1 embedding {p_emb:.3} (after {} encoder epochs), classifier {p_cls:.3}, fused {p_fused:.3}",
            m1.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut exact_ok = 0;
    for t in 0..100u64 {
        let mut r = rng(7000 + t);
        let n = r.gen_range(1..60);
        let d = r.gen_range(2..10);
        let k = r.gen_range(1..=n + 3);
        let v = random_unit(n, d, &mut r);
        let q = random_unit_vec(d, &mut r);
        let idx = build_index(&v, IndexMode::Exact).unwrap();
        let got: Vec<usize> = idx.query(&q, k).into_iter().map(|p| p.0).collect();
        let mut all: Vec<(usize, f64)> = (0..n).map(|i| (i, dot(v.row(i), &q))).collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = all.into_iter().take(k).map(|p| p.0).collect();
        exact_ok += usize::from(got == want);
    }
    let mut r = rng(7777);
    let base = random_unit(1000, 16, &mut r);
    let exact = build_index(&base, IndexMode::Exact).unwrap();
    let approx = build_index(&base, IndexMode::approximate()).unwrap();
    let (mut found, mut total) = (0, 0);
    for _ in 0..200 {
        let q = random_unit_vec(16, &mut r);
        let truth: Vec<usize> = exact.query(&q, 10).into_iter().map(|p| p.0).collect();
        let got: Vec<usize> = approx.query(&q, 10).into_iter().map(|p| p.0).collect();
        found += truth.iter().filter(|t| got.contains(t)).count();
        total += 10;
    }
    let recall = found as f64 / total as f64;
    (
        exact_ok == 100 && recall >= 0.95,
        format!("exact top-k equal to argsort on {exact_ok}/100; graph recall@10 {recall:.4} on 1000 vectors"),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut reduction_ok = true;
    for t in 0..100u64 {
        let mut r = rng(8000 + t);
        let l = r.gen_range(1..30);
        let mut labels: Vec<usize> = (0..l).collect();
        labels.shuffle(&mut r);
        let preds: Vec<usize> = labels.iter().copied().take(r.gen_range(0..=l)).collect();
        labels.shuffle(&mut r);
        let rel: Vec<usize> = labels.iter().copied().take(r.gen_range(0..=l)).collect();
        let freqs: Vec<usize> = (0..l).map(|_| r.gen_range(0..500)).collect();
        let props = propensities(&freqs, r.gen_range(3..5000), 0.55, 1.5).unwrap();
        let uniform = PropensityModel::uniform(l);
        for k in 1..=10 {
            let pairs = [
                (precision_at_k(&preds, &rel, k), oracle_precision(&preds, &rel, k)),
                (recall_at_k(&preds, &rel, k), oracle_recall(&preds, &rel, k)),
                (ndcg_at_k(&preds, &rel, k), oracle_ndcg(&preds, &rel, k)),
                (psp_at_k(&preds, &rel, &props, k), oracle_psp(&preds, &rel, &props, k)),
                (psn_at_k(&preds, &rel, &props, k), oracle_psn(&preds, &rel, &props, k)),
            ];
            for (a, b) in pairs {
                worst = worst.max((a - b).abs());
            }
            if rel.len() >= k {
                let d = (psp_at_k(&preds, &rel, &uniform, k) - precision_at_k(&preds, &rel, k)).abs();
                reduction_ok &= d <= 1e-12;
            }
        }
    }
    (
        worst <= 1e-12 && reduction_ok,
        format!("max deviation from oracles {worst:.2e} on 100 cases; uniform PSP@k = P@k: {reduction_ok}"),
    )
}

fn criterion_9() -> Outcome {
    let mut problems = Vec::new();
    for s in 0..20u64 {
        let mut r = rng(9000 + s);
        let n = r.gen_range(2..150);
        let d = r.gen_range(2..10);
        let c = r.gen_range(1..=n);
        let e = random_unit(n, d, &mut r);
        let a = balanced_cluster(&e, c, s).unwrap();
        let b = balanced_cluster(&e, c, s).unwrap();
        if a != b {
            problems.push(format!("set {s}: not deterministic"));
        }
        if a.size_spread() > 1 {
            problems.push(format!("set {s}: spread {}", a.size_spread()));
        }
        if a.num_clusters() != target_num_clusters(n, c).min(n) {
            problems.push(format!("set {s}: {} clusters", a.num_clusters()));
        }
        let one = balanced_cluster(&e, n, s).unwrap();
        let eps_one = clustering_goodness(&e, &one, 2.0, GoodnessMode::default()).unwrap();
        if one.num_clusters() != 1 || eps_one != 0.0 {
            problems.push(format!("set {s}: K=1 gives eps2 {eps_one}"));
        }
        let mut prev = 0.0;
        for step in 0..=20 {
            let eps = clustering_goodness(&e, &a, step as f64 * 0.1, GoodnessMode::default()).unwrap();
            if eps < prev {
                problems.push(format!("set {s}: eps2 decreased at r={}", step as f64 * 0.1));
            }
            prev = eps;
        }
    }
    (problems.is_empty(), format!("20 embedding sets; {}", if problems.is_empty() { "all checks hold".into() } else { problems.join("; ") }))
}

fn criterion_10() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..20u64 {
        let n = 37 + seed as usize;
        let a = plan_epoch(&Clustering::singletons(n), 8, seed).unwrap();
        let b = uniform_plan(n, 8, seed).unwrap();
        ok &= a == b;
    }
    // a C=1 ngame miner clusters into singletons and batches like uniform
    let ds = toy_task();
    let enc = BagOfEmbeddings::random(ds.num_features(), 8, 1).unwrap();
    let cfg = MinerConfig {
        strategy: Strategy::Ngame,
        batch_size: 5,
        cluster_size: 1,
        curriculum: Curriculum { enabled: false, ..Curriculum::default() },
        ..MinerConfig::default()
    };
    let mut miner = Miner::new(cfg, &ds, 3).unwrap();
    miner.begin_epoch(0, &ds, &enc).unwrap();
    let singletons = miner.clustering().is_some_and(|c| c.max_size() == 1 && c.num_clusters() == ds.num_points());
    ok &= singletons;
    notes.push(format!("C=1 plans equal uniform plans, singleton clusters: {singletons}"));

    let sched: Vec<usize> = [0, 24, 25, 49, 50, 75, 100, 500].iter().map(|&e| curriculum_cluster_size(8, e, 25, 64)).collect();
    let sched_ok = sched == vec![8, 8, 16, 16, 32, 64, 64, 64];
    ok &= sched_ok;
    let cfg = MinerConfig {
        batch_size: 32,
        cluster_size: 8,
        curriculum: Curriculum { enabled: true, doubling_period: 25, max_cluster_size: 64 },
        ..MinerConfig::default()
    };
    let clamp_ok = cfg.effective_cluster_size(100) == 32 && cfg.effective_cluster_size(30) == 16;
    ok &= clamp_ok;
    notes.push(format!("curriculum sizes {sched:?}, clamps to batch size: {clamp_ok}"));
    (ok, notes.join("; "))
}

fn main() {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let (c4, c5) = criteria_4_and_5();
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        c4,
        c5,
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut all = true;
    for (i, (pass, detail)) in results.iter().enumerate() {
        println!("criterion {:>2}: {} - {detail}", i + 1, if *pass { "PASS" } else { "FAIL" });
        all &= pass;
    }
    if !all {
        std::process::exit(1);
    }
}
