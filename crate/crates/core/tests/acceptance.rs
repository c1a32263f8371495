//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL: detail`
//! line and fails on FAIL. A shared lock keeps timed criteria free of
//! interference from the others.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfre::ablation::{run_cell, TRAIN_TYPES};
use wfre::bench::{bench_cell, doubling_ratios, BenchConfig, BenchRow, Solver};
use wfre::config::RunConfig;
use wfre::dataset::{synthesize, Dataset, SynthConfig};
use wfre::eval::{evaluate, evaluate_with, query_metrics};
use wfre::fuzzy::{complement, intersect, union, TNormKind};
use wfre::kg::{KnowledgeGraph, QuerySample, Triple};
use wfre::model::{ModelParams, ModelShape};
use wfre::query::{
    apply_de_morgan, parse_query, serialize_query, symbolic_answers, to_dnf, ComposedModel,
    OperatorTree, QueryType,
};
use wfre::training::{dataset_loss, example_loss_and_grad, train, Example, NoCallbacks, TrainConfig};
use wfre::transport::{
    conv_sinkhorn, dense_sinkhorn, distance_backward, dual_objective, kernel_matrix,
    masked_cost_matrix, primal_objective, recover_plan, single_dirac_wfr, wfr_distance, GradMode,
    Scorer, SinkhornState, TransportConfig,
};
use wfre::measures::DEFAULT_MASS_FLOOR;
use wfre::BoundedHistogram;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n}: {detail}");
}

fn hist(values: Vec<f64>) -> BoundedHistogram {
    BoundedHistogram::new(values).unwrap()
}

/// Bars uniform in `(0, 1)`.
fn random_hist(rng: &mut ChaCha8Rng, d: usize) -> BoundedHistogram {
    hist((0..d).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect())
}

fn max_state_gap(a: &SinkhornState, b: &SinkhornState) -> f64 {
    a.log_phi
        .iter()
        .zip(&b.log_phi)
        .chain(a.log_psi.iter().zip(&b.log_psi))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_convolution_matches_dense() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let dims = [8, 16, 32, 64];
    let omegas = [1, 3, 5];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let d = dims[i % dims.len()];
        let omega = omegas[(i / dims.len()) % omegas.len()];
        let cfg = TransportConfig::for_dim(d, d, omega, 0.1, 50).unwrap();
        let kernel = kernel_matrix(d, &cfg).unwrap();
        let u = random_hist(&mut rng, d);
        let v = random_hist(&mut rng, d);
        let conv = conv_sinkhorn(&u, &v, &cfg).unwrap();
        let dense = dense_sinkhorn(&u, &v, &kernel, 0.1, 50).unwrap();
        worst = worst.max(max_state_gap(&conv, &dense));
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        worst < 1e-12 && elapsed < Duration::from_secs(60),
        format!("max log-scaling gap {worst:.2e} over 200 instances in {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_blocks_are_independent() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &b in &[2usize, 4] {
        for &(a, omega) in &[(4usize, 1usize), (8, 3), (16, 5)] {
            for _ in 0..5 {
                let d = a * b;
                let cfg = TransportConfig::for_dim(d, a, omega, 0.1, 50).unwrap();
                let u = random_hist(&mut rng, d);
                let v = random_hist(&mut rng, d);
                let whole = conv_sinkhorn(&u, &v, &cfg).unwrap();
                let block_cfg = TransportConfig::for_dim(a, a, omega, 0.1, 50).unwrap();
                let kernel = kernel_matrix(a, &block_cfg).unwrap();
                for k in 0..b {
                    let range = k * a..(k + 1) * a;
                    let us = hist(u.values()[range.clone()].to_vec());
                    let vs = hist(v.values()[range.clone()].to_vec());
                    let part = dense_sinkhorn(&us, &vs, &kernel, 0.1, 50).unwrap();
                    let slice = SinkhornState {
                        log_phi: whole.log_phi[range.clone()].to_vec(),
                        log_psi: whole.log_psi[range].to_vec(),
                        iterations_run: whole.iterations_run,
                    };
                    worst = worst.max(max_state_gap(&slice, &part));
                }
                cases += 1;
            }
        }
    }
    verdict(2, worst < 1e-12, format!("max per-block gap {worst:.2e} over {cases} instances"));
}

#[test]
fn criterion_03_matches_closed_form_for_single_masses() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (d, omega) = (16, 3);
    let cfg = TransportConfig::for_dim(d, d, omega, 1e-3, 2000).unwrap();
    let mut worst: f64 = 0.0;
    let mut kinds = [0usize; 3];
    for i in 0..50 {
        // Cycle through same-bin, in-window, and out-of-window gaps.
        let gap = match i % 3 {
            0 => 0,
            1 => rng.gen_range(1..=omega),
            _ => rng.gen_range(omega + 1..d),
        };
        kinds[i % 3] += 1;
        let src = rng.gen_range(0..d - gap);
        let (uo, vo) = if rng.gen_bool(0.5) { (src, src + gap) } else { (src + gap, src) };
        let (um, vm) = (rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0));
        let mut uv = vec![0.0; d];
        uv[uo] = um;
        let mut vv = vec![0.0; d];
        vv[vo] = vm;
        let got = wfr_distance(&hist(uv), &hist(vv), &cfg).unwrap();
        let want = single_dirac_wfr(um, vm, gap, omega, cfg.beta);
        worst = worst.max((got - want).abs());
    }
    verdict(
        3,
        worst < 1e-2,
        format!("max |distance - closed form| {worst:.2e}; gaps same/in/out = {kinds:?}"),
    );
}

#[test]
fn criterion_04_duality_gap_closes() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let d = 16;
    let (mut gap, mut residual): (f64, f64) = (0.0, 0.0);
    let mut unconverged = 0;
    for i in 0..20 {
        let omega = [1, 3, 5][i % 3];
        let cfg = TransportConfig::for_dim(d, d, omega, 0.1, 100_000)
            .unwrap()
            .with_tolerance(1e-10);
        let u = random_hist(&mut rng, d);
        let v = random_hist(&mut rng, d);
        let state = conv_sinkhorn(&u, &v, &cfg).unwrap();
        if state.iterations_run == cfg.iterations {
            unconverged += 1;
        }
        let dual = dual_objective(&state, &u, &v, &cfg).unwrap();
        let plan = recover_plan(&state, d, &cfg).unwrap();
        let cost = masked_cost_matrix(d, &cfg).unwrap();
        let primal = primal_objective(&plan, &u, &v, &cost, cfg.epsilon, true).unwrap();
        assert!(!primal.infeasible);
        gap = gap.max((dual - primal.value).abs());
        // Fixed point: phi^(1+eps) (K psi) = u and psi^(1+eps) (K^T phi) = v.
        let kernel = kernel_matrix(d, &cfg).unwrap();
        let (phi, psi) = (state.phi(), state.psi());
        let mut buf = vec![0.0; d];
        kernel.matvec(&psi, &mut buf);
        for k in 0..d {
            residual = residual.max((phi[k].powf(1.0 + cfg.epsilon) * buf[k] - u.values()[k]).abs());
        }
        kernel.matvec_transposed(&phi, &mut buf);
        for k in 0..d {
            residual = residual.max((psi[k].powf(1.0 + cfg.epsilon) * buf[k] - v.values()[k]).abs());
        }
    }
    verdict(
        4,
        gap < 1e-6 && residual < 1e-8 && unconverged == 0,
        format!("max duality gap {gap:.2e}, max marginal residual {residual:.2e}, unconverged {unconverged}/20"),
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn distance_fd_error(rng: &mut ChaCha8Rng, iters: usize) -> f64 {
    let cfg = TransportConfig::for_dim(8, 8, 1, 0.1, iters).unwrap();
    // Keep bars away from the clamp so the finite differences see a smooth map.
    let u: Vec<f64> = (0..8).map(|_| rng.gen_range(0.05..0.95)).collect();
    let v: Vec<f64> = (0..8).map(|_| rng.gen_range(0.05..0.95)).collect();
    let g = distance_backward(&hist(u.clone()), &hist(v.clone()), &cfg, GradMode::Unrolled).unwrap();
    let f = |u: &[f64], v: &[f64]| wfr_distance(&hist(u.to_vec()), &hist(v.to_vec()), &cfg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..8 {
        let (mut up, mut um) = (u.clone(), u.clone());
        up[k] += h;
        um[k] -= h;
        worst = worst.max(rel_err((f(&up, &v) - f(&um, &v)) / (2.0 * h), g.grad_u[k]));
        let (mut vp, mut vm) = (v.clone(), v.clone());
        vp[k] += h;
        vm[k] -= h;
        worst = worst.max(rel_err((f(&u, &vp) - f(&u, &vm)) / (2.0 * h), g.grad_v[k]));
    }
    worst
}

fn loss_fd_error(iters: usize, text: &str, seed: u64) -> f64 {
    let model = ModelParams::init(
        ModelShape {
            entities: 12,
            relations: 2,
            dim: 8,
            bases: 3,
            layers: 1,
        },
        seed,
    )
    .unwrap();
    let config = TrainConfig {
        transport: TransportConfig::for_dim(8, 8, 1, 0.1, iters).unwrap(),
        margin: 2.0,
        scale: 4.0,
        k_neg: 3,
        ..TrainConfig::default()
    };
    let sample = QuerySample {
        tree: parse_query(text).unwrap(),
        easy: BTreeSet::from([5]),
        hard: BTreeSet::new(),
    };
    let ex = Example {
        sample: &sample,
        answer: 5,
        negatives: vec![6, 9, 6],
        embed_seed: 17,
    };
    let scorer = Scorer::new(config.transport.clone()).unwrap();
    let value = |m: &ModelParams| {
        example_loss_and_grad(&ex, &ComposedModel::new(m), &scorer, &config, true).unwrap().0
    };
    let (_, sparse) = example_loss_and_grad(&ex, &ComposedModel::new(&model), &scorer, &config, true).unwrap();
    let mut grads = model.zeros_like();
    sparse.accumulate_into(&model, 1.0, &mut grads);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for b in 0..model.buffers().len() {
        let len = model.buffers()[b].len();
        for idx in (0..len).step_by(3) {
            let mut p = model.clone();
            p.buffers_mut()[b][idx] += h;
            let mut m = model.clone();
            m.buffers_mut()[b][idx] -= h;
            let fd = (value(&p) - value(&m)) / (2.0 * h);
            let an = grads.buffers()[b][idx];
            // Entries with no gradient on either side are skipped by the floor.
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-5));
        }
    }
    worst
}

#[test]
fn criterion_05_gradients_match_finite_differences() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut dist: f64 = 0.0;
    for &iters in &[10, 25] {
        for _ in 0..5 {
            dist = dist.max(distance_fd_error(&mut rng, iters));
        }
    }
    let mut full: f64 = 0.0;
    for &iters in &[10, 25] {
        for (i, text) in ["(p 0 (e 1))", "(i (p 0 (e 1)) (n (p 1 (e 2))))", "(p 1 (u (p 0 (e 3)) (e 4)))"]
            .iter()
            .enumerate()
        {
            full = full.max(loss_fd_error(iters, text, 40 + i as u64));
        }
    }
    let cfg = TransportConfig::for_dim(8, 8, 1, 0.1, 500).unwrap();
    let mut modes: f64 = 0.0;
    for _ in 0..10 {
        let u = random_hist(&mut rng, 8);
        let v = random_hist(&mut rng, 8);
        let a = distance_backward(&u, &v, &cfg, GradMode::Unrolled).unwrap();
        let b = distance_backward(&u, &v, &cfg, GradMode::Danskin).unwrap();
        for (x, y) in a.grad_u.iter().zip(&b.grad_u).chain(a.grad_v.iter().zip(&b.grad_v)) {
            modes = modes.max(rel_err(*x, *y));
        }
    }
    verdict(
        5,
        dist < 1e-3 && full < 1e-3 && modes < 1e-3,
        format!("distance FD {dist:.2e}, full-loss FD {full:.2e}, unrolled vs danskin {modes:.2e}"),
    );
}

fn floored_hist(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> BoundedHistogram {
    let values = (0..d)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    BoundedHistogram::with_floor(values, floor).unwrap()
}

fn max_gap(a: &BoundedHistogram, b: &BoundedHistogram) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation from each law over `pairs` random draws.
fn law_deviations(kind: TNormKind, floor: f64, pairs: usize, rng: &mut ChaCha8Rng) -> BTreeMap<&'static str, f64> {
    let d = 16;
    let ones = BoundedHistogram::with_floor(vec![1.0; d], floor).unwrap();
    let zeros = BoundedHistogram::with_floor(vec![0.0; d], floor).unwrap();
    let i = |x: &BoundedHistogram, y: &BoundedHistogram| intersect(x, y, kind).unwrap();
    let u = |x: &BoundedHistogram, y: &BoundedHistogram| union(x, y, kind).unwrap();
    let mut dev: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut note = |law: &'static str, v: f64| {
        let e = dev.entry(law).or_insert(0.0);
        *e = e.max(v);
    };
    for _ in 0..pairs {
        let a = floored_hist(rng, d, floor);
        let b = floored_hist(rng, d, floor);
        let c = floored_hist(rng, d, floor);
        let raised: Vec<f64> = a.values().iter().map(|&x| rng.gen_range(x..=1.0)).collect();
        let a_up = BoundedHistogram::with_floor(raised, floor).unwrap();
        note("commutativity", max_gap(&i(&a, &b), &i(&b, &a)).max(max_gap(&u(&a, &b), &u(&b, &a))));
        note(
            "associativity",
            max_gap(&i(&i(&a, &b), &c), &i(&a, &i(&b, &c))).max(max_gap(&u(&u(&a, &b), &c), &u(&a, &u(&b, &c)))),
        );
        note("identity", max_gap(&i(&a, &ones), &a).max(max_gap(&u(&a, &zeros), &a)));
        let excess = |lo: &BoundedHistogram, hi: &BoundedHistogram| {
            lo.values().iter().zip(hi.values()).map(|(x, y)| (x - y).max(0.0)).fold(0.0, f64::max)
        };
        note("monotonicity", excess(&i(&a, &b), &i(&a_up, &b)).max(excess(&u(&a, &b), &u(&a_up, &b))));
        note("double complement", max_gap(&complement(&complement(&a)), &a));
        note(
            "De Morgan",
            max_gap(&complement(&i(&a, &b)), &u(&complement(&a), &complement(&b)))
                .max(max_gap(&complement(&u(&a, &b)), &i(&complement(&a), &complement(&b)))),
        );
    }
    dev
}

#[test]
fn criterion_06_fuzzy_algebra() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    // At the smallest normal floor the clamp never binds, so the operations
    // are the bare t-norm algebra. At the default floor, results below the
    // floor are lifted to it, so each law can be off by at most the floor.
    let exact_floor = f64::MIN_POSITIVE;
    let mut failures: Vec<String> = Vec::new();
    let mut worst_exact: f64 = 0.0;
    let mut worst_default: f64 = 0.0;
    for kind in TNormKind::ALL {
        for (law, v) in law_deviations(kind, exact_floor, 1000, &mut rng) {
            worst_exact = worst_exact.max(v);
            if v >= 1e-12 {
                failures.push(format!("{kind:?} {law} {v:.2e}"));
            }
        }
        for (law, v) in law_deviations(kind, DEFAULT_MASS_FLOOR, 1000, &mut rng) {
            worst_default = worst_default.max(v);
            if v > DEFAULT_MASS_FLOOR + 1e-12 {
                failures.push(format!("{kind:?} {law} at default floor {v:.2e}"));
            }
        }
    }
    let detail = format!(
        "six laws x three kinds x 1000 draws: max deviation {worst_exact:.2e} unclamped, \
         {worst_default:.2e} at the default floor{}",
        if failures.is_empty() { String::new() } else { format!("; violations: {}", failures.join(", ")) }
    );
    verdict(6, failures.is_empty(), detail);
}

fn random_kg(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = 30;
    let relations = 3;
    let triples = (0..rng.gen_range(30..120))
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..relations), rng.gen_range(0..n)))
        .collect();
    KnowledgeGraph::new(n, relations, triples).unwrap()
}

/// A random tree of at most `depth` levels. Negated subtrees are union-free
/// so that every tree has a disjunctive form.
fn random_tree(rng: &mut ChaCha8Rng, depth: usize, allow_union: bool) -> OperatorTree {
    if depth <= 1 {
        return OperatorTree::anchor(rng.gen_range(0..30));
    }
    let kinds = if allow_union { 5 } else { 4 };
    match rng.gen_range(0..kinds) {
        0 => OperatorTree::anchor(rng.gen_range(0..30)),
        1 => OperatorTree::project(rng.gen_range(0..3), random_tree(rng, depth - 1, allow_union)),
        2 => OperatorTree::negate(random_tree(rng, depth - 1, false)),
        3 => OperatorTree::Intersection(
            (0..rng.gen_range(2..=3))
                .map(|_| random_tree(rng, depth - 1, allow_union))
                .collect(),
        ),
        _ => OperatorTree::Union(
            (0..rng.gen_range(2..=3))
                .map(|_| random_tree(rng, depth - 1, allow_union))
                .collect(),
        ),
    }
}

#[test]
fn criterion_07_query_rewrites_preserve_answers() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut dnf_bad, mut dm_bad, mut parse_bad, mut with_union) = (0, 0, 0, 0);
    for _ in 0..200 {
        let kg = random_kg(&mut rng);
        for _ in 0..5 {
            let depth = rng.gen_range(1..=3);
            let tree = random_tree(&mut rng, depth, true);
            if tree.contains_union() {
                with_union += 1;
            }
            let want = symbolic_answers(&tree, &kg).unwrap();
            let mut via_dnf = BTreeSet::new();
            for b in to_dnf(&tree).unwrap() {
                assert!(!b.contains_union());
                via_dnf.extend(symbolic_answers(&b, &kg).unwrap());
            }
            dnf_bad += (via_dnf != want) as usize;
            dm_bad += (symbolic_answers(&apply_de_morgan(&tree), &kg).unwrap() != want) as usize;
            parse_bad += (parse_query(&serialize_query(&tree)).ok() != Some(tree.clone())) as usize;
        }
    }
    verdict(
        7,
        dnf_bad + dm_bad + parse_bad == 0 && with_union > 0,
        format!(
            "1000 trees on 200 graphs ({with_union} with unions): dnf mismatches {dnf_bad}, \
             De Morgan mismatches {dm_bad}, round-trip failures {parse_bad}"
        ),
    );
}

/// Mean MRR of uniformly random scores, averaged over `reps` draws.
fn random_score_mrr(samples: &[QuerySample], entity_count: usize, reps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..reps {
        for s in samples {
            let scores: Vec<f64> = (0..entity_count).map(|_| rng.gen()).collect();
            total += query_metrics(&scores, s).unwrap().mrr;
        }
    }
    total / (reps * samples.len()) as f64
}

/// Settings of the scaled-down learning check.
fn smoke_config(block_size: usize) -> RunConfig {
    RunConfig {
        dim: 64,
        window: 3,
        block_size,
        steps: 2000,
        ..RunConfig::default()
    }
}

fn smoke_dataset() -> Dataset {
    synthesize(&SynthConfig::default()).unwrap()
}

#[test]
fn criterion_08_learning_smoke() {
    let _g = serial();
    let ds = smoke_dataset();
    let run = smoke_config(8);
    let cfg = run.train_config().unwrap();
    let train_q = ds.queries("train", QueryType::P1).to_vec();
    let test_q = ds.queries("test", QueryType::P1).to_vec();
    let shape = run.model_shape(ds.test.entity_count(), ds.test.relation_count());
    let model = ModelParams::init(shape, run.seed).unwrap();
    let start = Instant::now();
    let initial = dataset_loss(&model, &train_q, &cfg, 1).unwrap();
    let outcome = train(model, &train_q, &cfg, &mut NoCallbacks).unwrap();
    let last = dataset_loss(&outcome.model, &train_q, &cfg, 1).unwrap();
    let report = evaluate(&outcome.model, &test_q, &cfg.transport, run.union_mode, run.tnorm).unwrap();
    let elapsed = start.elapsed();
    let mrr = report.get("1p").unwrap().metrics.mrr;
    let null = random_score_mrr(&test_q, ds.test.entity_count(), 200, 8);
    let drop = 1.0 - last / initial;
    verdict(
        8,
        drop >= 0.5 && mrr >= 3.0 * null && elapsed < Duration::from_secs(600),
        format!(
            "loss {initial:.3} -> {last:.3} (drop {:.1}%), test 1p MRR {mrr:.4} vs null {null:.4} \
             (x{:.2}) on {} queries, {elapsed:.0?}",
            100.0 * drop,
            mrr / null,
            test_q.len()
        ),
    );
}

#[test]
fn criterion_09_random_scores_hit_the_null() {
    let _g = serial();
    let entities = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let samples: Vec<QuerySample> = (0..4000)
        .map(|i| QuerySample {
            tree: OperatorTree::project(0, OperatorTree::anchor(i)),
            easy: BTreeSet::new(),
            hard: BTreeSet::from([rng.gen_range(0..entities)]),
        })
        .collect();
    let scores: Vec<Vec<f64>> = samples.iter().map(|_| (0..entities).map(|_| rng.gen::<f64>()).collect()).collect();
    // The anchor id doubles as the row index of the score table.
    let report = evaluate_with(&samples, |s| Ok(scores[s.tree.max_entity().unwrap()].clone())).unwrap();
    let measured = report.get("1p").unwrap().metrics.mrr;
    let analytic = (1..=entities).map(|r| 1.0 / r as f64).sum::<f64>() / entities as f64;
    verdict(
        9,
        (measured - analytic).abs() <= 0.01,
        format!("MRR {measured:.4} vs analytic {analytic:.4} over {} queries", samples.len()),
    );
}

#[test]
fn criterion_10_banded_solver_scales_linearly() {
    let _g = serial();
    let config = BenchConfig {
        dims: vec![256, 512, 1024, 2048, 4096, 8192],
        omegas: vec![3],
        iterations: 10,
        repeats: 5,
        min_round: Duration::from_millis(50),
        ..BenchConfig::default()
    };
    let mut rows: Vec<BenchRow> = Vec::new();
    for solver in [Solver::Conv, Solver::Dense] {
        for &d in &config.dims {
            rows.push(bench_cell(solver, d, 3, &config).unwrap());
        }
    }
    let conv = doubling_ratios(&rows, Solver::Conv, 3);
    let dense = doubling_ratios(&rows, Solver::Dense, 3);
    let conv_ok = conv.iter().all(|&(_, _, r)| (1.6..=2.5).contains(&r));
    let dense_ok = dense.iter().all(|&(_, _, r)| r >= 3.0);
    let fmt = |v: &[(usize, usize, f64)]| {
        v.iter()
            .map(|(a, _, r)| format!("{a}:{r:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        10,
        conv_ok && dense_ok && conv.len() == 5 && dense.len() == 5,
        format!("d->2d ratios conv [{}], dense [{}]", fmt(&conv), fmt(&dense)),
    );
}

#[test]
fn criterion_11_window_sweep_has_interior_optimum() {
    let _g = serial();
    let ds = smoke_dataset();
    let base = RunConfig {
        dim: 80,
        steps: 2000,
        ..RunConfig::default()
    };
    let omegas = [1usize, 2, 3, 4, 5];
    let scores: Vec<f64> = omegas
        .iter()
        .map(|&w| run_cell(&ds, &base, &TRAIN_TYPES, w, 5).unwrap().a_p.unwrap())
        .collect();
    let first = scores[0];
    let last = *scores.last().unwrap();
    let interior = scores[1..scores.len() - 1].iter().cloned().fold(f64::MIN, f64::max);
    let listing = omegas
        .iter()
        .zip(&scores)
        .map(|(w, s)| format!("{w}:{s:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        11,
        interior >= first && interior >= last,
        format!("A_P by window at a=5 [{listing}]"),
    );
}
