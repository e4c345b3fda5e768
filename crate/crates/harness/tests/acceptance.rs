//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs with a custom main so every verdict is printed even when it passes.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use capplan_core::model::TabularModel;
use capplan_core::oracle::enumerate_optimal;
use capplan_core::planner::{generate, mcts_iteration, PlanContext};
use capplan_core::reward::{
    coverage_quality, depth_reward, depth_reward_for_len, noiseless_reward, redundancy_of, redundancy_penalty,
    CoverageScorer,
};
use capplan_core::tree::{uct_score, SearchTree};
use capplan_core::value_net::{dataset_mse, fuse_value, train, FeatureVector, TrainingPair};
use capplan_core::{Config, Edge, Hyper, Net, SequenceState, TokenId, World};
use capplan_harness::cli::{run, Cli};
use capplan_harness::experiments::{
    self, median, summarize_branching, summarize_hallucination, summarize_regret, summarize_sweep, ExpansionMode,
    ModelKind, SweepParam, BRANCHING_BUDGETS, DEFAULT_BUDGETS,
};
use capplan_harness::{Builtin, SeedList, WorldFactory, WorldParams, WorldSource};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn builtin(b: Builtin, params: WorldParams) -> WorldFactory {
    WorldFactory::new(WorldSource::Builtin(b), params).expect("built-in world")
}

fn seeds(n: u64) -> SeedList {
    SeedList::first(n).unwrap()
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn oracle_equivalence() -> Verdict {
    let t = Instant::now();
    let worlds = builtin(Builtin::Random, WorldParams { sigma: Some(0.0), ..Default::default() });
    let model = TabularModel::default();
    let mut hits = 0;
    let mut ratios = Vec::new();
    for seed in 0..100 {
        let world = worlds.world(seed).unwrap();
        assert!(world.vocab_size <= 8 && world.max_length <= 6);
        let cfg = Config::default().with_seed(seed);
        let net = Net::zeros_for(&world);
        let (state, _) = generate(&PlanContext::new(&world, &model, &net, &cfg)).unwrap();
        let got = noiseless_reward(&state, &world, &cfg, &CoverageScorer).unwrap().total;
        let best = enumerate_optimal(&world, &cfg).unwrap().optimal_value;
        let ratio = got / best;
        ratios.push(ratio);
        if ratio >= 0.99 {
            hits += 1;
        }
    }
    let el = t.elapsed();
    verdict(
        hits >= 95 && within(el, 120),
        format!("{hits}/100 worlds within 99% of optimum (need >= 95); median ratio {:.4}; {el:.1?}", median(&ratios)),
    )
}

fn regret_decay() -> Verdict {
    let t = Instant::now();
    let worlds = builtin(Builtin::Bandit, WorldParams { sigma: Some(0.5), ..Default::default() });
    let recs =
        experiments::run_regret(&worlds, &Config::default(), &DEFAULT_BUDGETS, &seeds(100), ModelKind::Auto).unwrap();
    let s = summarize_regret(&recs);
    let med: Vec<f64> = s.iter().map(|r| r.median_regret).collect();
    let at = |b: usize| s.iter().find(|r| r.budget == b).unwrap().median_regret;
    let nonincreasing = med.windows(2).all(|w| w[1] <= w[0]);
    let el = t.elapsed();
    let means: Vec<String> = s.iter().map(|r| format!("{:.3}", r.mean_regret)).collect();
    verdict(
        at(4096) <= 0.25 * at(64) && nonincreasing && within(el, 60),
        format!("medians {med:?} (means {}) over T={DEFAULT_BUDGETS:?}; {el:.1?}", means.join(", ")),
    )
}

fn hallucination_suppression() -> Verdict {
    let t = Instant::now();
    let worlds = builtin(Builtin::Hallucination, WorldParams { sigma: Some(0.5), delta_h: 0.2, ..Default::default() });
    let recs = experiments::run_hallucination(
        &worlds,
        &Config::default(),
        &DEFAULT_BUDGETS,
        &seeds(200),
        ModelKind::Auto,
        0.2,
    )
    .unwrap();
    let s = summarize_hallucination(&recs);
    let at = |b: usize| s.iter().find(|r| r.budget == b).unwrap().fraction;
    let el = t.elapsed();
    let fr: Vec<f64> = s.iter().map(|r| r.fraction).collect();
    verdict(
        at(4096) <= 0.05 && at(4096) <= at(64) && within(el, 60),
        format!("fractions {fr:?} over T={DEFAULT_BUDGETS:?}; {el:.1?}"),
    )
}

fn branching_advantage() -> Verdict {
    let t = Instant::now();
    let worlds = builtin(Builtin::Branching, WorldParams::default());
    let (recs, _) =
        experiments::run_branching(&worlds, &Config::default(), &BRANCHING_BUDGETS, &seeds(50), 4).unwrap();
    let s = summarize_branching(&recs);
    let med = |m: ExpansionMode| s.iter().find(|r| r.mode == m).unwrap().median_iterations;
    let (r, f) = (med(ExpansionMode::Restricted), med(ExpansionMode::Full));
    let el = t.elapsed();
    verdict(
        r <= 0.5 * f && within(el, 180),
        format!("median iterations to 95%: restricted {r}, full {f}; {el:.1?}"),
    )
}

fn adaptive_stopping() -> Verdict {
    let worlds = builtin(Builtin::Easy, WorldParams::default());
    let model = TabularModel::default();
    let mut stats = [(0.0, 0.0); 2];
    for (slot, adaptive) in [(0, true), (1, false)] {
        for seed in 0..50 {
            let world = worlds.world(seed).unwrap();
            let cfg = Config { adaptive_stop: adaptive, n_max_iterations: 200, ..Config::default() }.with_seed(seed);
            let net = Net::zeros_for(&world);
            let (state, trace) = generate(&PlanContext::new(&world, &model, &net, &cfg)).unwrap();
            stats[slot].0 += trace.mean_iterations_per_step() / 50.0;
            stats[slot].1 += noiseless_reward(&state, &world, &cfg, &CoverageScorer).unwrap().total / 50.0;
        }
    }
    let [(ia, ra), (ifx, rf)] = stats;
    let saving = 1.0 - ia / ifx;
    let gap = (ra - rf).abs() / rf.abs();
    verdict(
        saving >= 0.30 && gap <= 0.01,
        format!("iterations/step {ia:.1} vs {ifx:.1} ({:.0}% fewer); reward {ra:.4} vs {rf:.4}", saving * 100.0),
    )
}

fn reward_exactness() -> Verdict {
    let nine = SequenceState::from_tokens(
        &(0..9).map(|i| TokenId(i % 3)).collect::<Vec<_>>(),
        &World {
            world_id: "w".into(),
            vocab_size: 4,
            eos_token: TokenId(3),
            max_length: 20,
            reward_noise_sigma: 0.0,
            regions: vec![capplan_core::RegionSpec::new(0, [0], 1.0)],
        },
    )
    .unwrap();
    let depth_ok = (depth_reward(&nine, 0.1) - 0.1 * 10f64.ln()).abs() < 1e-12
        && (depth_reward_for_len(9, 0.1f64) - 0.230_258_509_299_404_6).abs() < 1e-12;
    let abab = [TokenId(0), TokenId(1), TokenId(0), TokenId(1)];
    let red_ok = redundancy_of::<f64>(&abab, 3) == 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let worlds = builtin(Builtin::Random, WorldParams::default());
    let mut exact = 0;
    for i in 0..1000 {
        let world = worlds.world(i).unwrap();
        let cfg = Config { alpha: rng.random_range(0.0..0.5), ..Config::default() };
        let len = rng.random_range(0..world.max_length);
        let mut toks: Vec<TokenId> = (0..len)
            .map(|_| loop {
                let t = TokenId(rng.random_range(0..world.vocab_size as u32));
                if t != world.eos_token {
                    break t;
                }
            })
            .collect();
        toks.push(world.eos_token);
        let s = SequenceState::from_tokens(&toks, &world).unwrap();
        let r = noiseless_reward(&s, &world, &cfg, &CoverageScorer).unwrap();
        let q: f64 = coverage_quality(&s, &world);
        let d: f64 = depth_reward(&s, cfg.alpha);
        let p: f64 = redundancy_penalty(&s, cfg.max_ngram_order);
        if r.total.to_bits() == (r.quality + r.depth - r.redundancy).to_bits()
            && r.total.to_bits() == (q + d - p).to_bits()
        {
            exact += 1;
        }
    }
    verdict(
        depth_ok && red_ok && exact == 1000,
        format!("depth(9, 0.1) ok={depth_ok}; redundancy(abab, 3) = 0.5 ok={red_ok}; composition exact on {exact}/1000"),
    )
}

fn uct_and_accounting() -> Verdict {
    let a = Edge { visits: 3, total_value: 1.5, prior: 0.6 };
    let b = Edge { visits: 1, total_value: 0.8, prior: 0.4 };
    let hand_ok = (uct_score(&a, 4, 1.5) - 0.95).abs() < 1e-12 && (uct_score(&b, 4, 1.5) - 1.4).abs() < 1e-12;

    let world = builtin(Builtin::Saliency, WorldParams::default()).world(0).unwrap();
    let cfg = Config::default();
    let model = TabularModel::default();
    let net = Net::zeros_for(&world);
    let ctx = PlanContext::new(&world, &model, &net, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tree = SearchTree::new(SequenceState::empty());
    let mut through_root = 0u64;
    for i in 1..=1000 {
        let rec = mcts_iteration(&mut tree, SearchTree::<f64>::ROOT, &ctx, &mut rng, i).unwrap();
        if rec.leaf_depth >= 1 {
            through_root += 1;
        }
    }
    let visits = tree.node(SearchTree::<f64>::ROOT).visit_total();
    verdict(
        hand_ok && visits == through_root && through_root == 1000,
        format!("hand scores ok={hand_ok}; sum N(root, a) = {visits}, backups through root = {through_root}"),
    )
}

fn fusion_endpoints() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for _ in 0..1000 {
        let (v, h): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        ok &= fuse_value(v, h, 0.0).unwrap() == h && fuse_value(v, h, 1.0).unwrap() == v;
    }
    let mid = fuse_value(0.2f64, 0.6, 0.5).unwrap();
    verdict(ok && (mid - 0.4).abs() < 1e-12, format!("endpoints exact={ok}; (0.2, 0.6, 0.5) -> {mid}"))
}

fn planted_data(rng: &mut ChaCha8Rng, n: usize, dim: usize, target: impl Fn(&[f64]) -> f64) -> Vec<TrainingPair<f64>> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let y = target(&x);
            TrainingPair { features: FeatureVector(x), target: y }
        })
        .collect()
}

fn value_net_training() -> Verdict {
    let t = Instant::now();
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // central differences on single-sample losses
    let mut worst_grad = 0.0f64;
    for p in 0..20 {
        let net = Net::init(dim, 16, 100 + p);
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let y = rng.random_range(-1.0..2.0);
        let batch = [(x.as_slice(), y)];
        let analytic = net.loss_and_grad(&batch).1.flatten();
        let base = net.flat_params();
        let h = 1e-6;
        let mut num = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut probe = net.clone();
            let mut plus = base.clone();
            plus[i] += h;
            probe.set_flat_params(&plus).unwrap();
            let lp = probe.loss_and_grad(&batch).0;
            let mut minus = base.clone();
            minus[i] -= h;
            probe.set_flat_params(&minus).unwrap();
            let lm = probe.loss_and_grad(&batch).0;
            num.push((lp - lm) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst_grad = worst_grad.max(diff / scale.max(1e-12));
    }

    let hyper = Hyper { batch_size: 4, ..Hyper::default() };
    let constant = planted_data(&mut rng, 20_000, dim, |_| 0.7);
    let held_c = planted_data(&mut rng, 2_000, dim, |_| 0.7);
    let fit_c = train(&constant, &hyper).unwrap().params;
    let const_err = held_c
        .iter()
        .map(|p| (fit_c.predict(&p.features).unwrap() - 0.7).abs())
        .fold(0.0, f64::max);

    let coef: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let linear = |x: &[f64]| 0.3 + x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
    let lin = planted_data(&mut rng, 20_000, dim, linear);
    let held = planted_data(&mut rng, 2_000, dim, linear);
    let fit = train(&lin, &hyper).unwrap().params;
    let mse = dataset_mse(&fit, &held);
    let el = t.elapsed();
    verdict(
        worst_grad < 1e-4 && const_err < 1e-2 && mse < 1e-3 && within(el, 30),
        format!(
            "worst gradient rel. error {worst_grad:.1e}; constant max error {const_err:.1e}; planted held-out mse {mse:.1e}; {el:.1?}"
        ),
    )
}

fn sweep_shape() -> Verdict {
    let worlds = builtin(Builtin::Saliency, WorldParams::default());
    let rows = experiments::run_sweep(
        &worlds,
        &Config::default(),
        &[(SweepParam::Alpha, vec![0.0, 0.1, 0.5])],
        &seeds(10),
        ModelKind::Tabular,
    )
    .unwrap();
    let lens: Vec<f64> = summarize_sweep(&rows).iter().map(|s| s.mean_length).collect();
    let monotone = lens.windows(2).all(|w| w[1] >= w[0]);

    // the full default grid must run and emit every row
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let args = ["capplan", "sweep", "--world", "builtin:saliency", "--seeds", "10", "--out", out.to_str().unwrap()];
    run(&Cli::try_parse_from(args).unwrap()).unwrap();
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let grid_ok = lines[0] == "param,value,seed,total_reward,length,iterations,model_calls,mean_leaf_value"
        && lines.len() == 1 + 3 * 5 * 10;
    verdict(
        monotone && grid_ok,
        format!("mean length over alpha {{0, 0.1, 0.5}}: {lens:?}; full grid csv rows ok={grid_ok}"),
    )
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
    }
    files.sort();
    files
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["plan", "--world", "builtin:saliency", "--seeds", "4"],
        vec!["plan", "--world", "builtin:random", "--seeds", "6"],
        vec!["sweep", "--world", "builtin:easy", "--seeds", "3"],
        vec!["regret", "--seeds", "20", "--budgets", "16,64,256"],
        vec!["hallucination", "--seeds", "20", "--budgets", "16,64"],
        vec!["branching", "--seeds", "3", "--budgets", "8,64,512"],
        vec!["oracle", "--world", "builtin:random", "--seeds", "3", "--value-table"],
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (i, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = root.path().join(format!("c{i}-r{rep}"));
            let mut args = vec!["capplan"];
            args.extend(cmd);
            args.extend(["--out", out.to_str().unwrap()]);
            run(&Cli::try_parse_from(&args).unwrap()).unwrap();
            outputs.push(read_tree(&out));
        }
        files += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatched.push(cmd[0]);
        }
    }
    // training reads the saliency-world plan output
    let traces = root.path().join("c0-r0");
    let mut nets = Vec::new();
    for rep in 0..2 {
        let out = root.path().join(format!("train-r{rep}"));
        let args = [
            "capplan",
            "train-value",
            "--world",
            "builtin:saliency",
            "--traces",
            traces.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        run(&Cli::try_parse_from(args).unwrap()).unwrap();
        nets.push(read_tree(&out));
    }
    files += nets[0].len();
    if nets[0] != nets[1] {
        mismatched.push("train-value");
    }
    verdict(
        mismatched.is_empty(),
        format!("{files} files compared across 8 commands; mismatches: {mismatched:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 regret decay", regret_decay),
        ("3 hallucination suppression", hallucination_suppression),
        ("4 branching advantage", branching_advantage),
        ("5 adaptive stopping efficiency", adaptive_stopping),
        ("6 reward formula exactness", reward_exactness),
        ("7 UCT and tree accounting", uct_and_accounting),
        ("8 value fusion endpoints", fusion_endpoints),
        ("9 value-net training", value_net_training),
        ("10 sweep shape", sweep_shape),
        ("11 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("[{}] criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
