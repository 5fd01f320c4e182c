//! Temporary probe diagnostics. Not part of the suite.

use std::path::PathBuf;

use pandr_core::harness::{stage_collect, stage_encoders, ExperimentConfig};
use pandr_core::pdvf::EmbeddingBank;
use pandr_core::repr::{behavior_input, env_input, EncoderBundle};
use pandr_core::rng::stream;
use pandr_core::store::View;

fn main_cfg() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
        [experiment]
        name = "acceptance"
        seeds = [0, 1, 2, 3, 4, 5, 6]
        variant = "PAnDR"

        [family]
        id = "point_wind"
        n_train = 4

        [collect]
        episodes_per_cell = 50
        ppo_total_steps = 60000

        [representation]
        steps = 4000

        [pdvf]
        steps = 1500

        [adaptation]
        ga_steps = 100
        eval_every = 1
        "#,
    )
    .unwrap()
}

fn probe_accuracy(
    train: &[(Vec<f64>, usize)],
    test: &[(Vec<f64>, usize)],
    classes: usize,
    epochs: usize,
) -> f64 {
    let d = train[0].0.len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for (x, _) in train {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for (x, _) in train {
        for j in 0..d {
            sd[j] += (x[j] - mean[j]) * (x[j] - mean[j]) / n;
        }
    }
    for s in &mut sd {
        *s = s.sqrt().max(1e-8);
    }
    let feat = |x: &[f64]| -> Vec<f64> {
        let mut f: Vec<f64> = x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect();
        f.push(1.0);
        f
    };
    let dim = d + 1;
    let mut w = vec![0.0; classes * dim];
    let scores = |w: &[f64], f: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|c| w[c * dim..(c + 1) * dim].iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    };
    for _ in 0..epochs {
        let mut grad = vec![0.0; classes * dim];
        for (x, y) in train {
            let f = feat(x);
            let s = scores(&w, &f);
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let zsum: f64 = exps.iter().sum();
            for c in 0..classes {
                let p = exps[c] / zsum - if c == *y { 1.0 } else { 0.0 };
                for (g, fv) in grad[c * dim..(c + 1) * dim].iter_mut().zip(&f) {
                    *g += p * fv / n;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= 1.0 * gi;
        }
    }
    let hits = test
        .iter()
        .filter(|(x, y)| {
            let s = scores(&w, &feat(x));
            let arg = s
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            arg == *y
        })
        .count();
    hits as f64 / test.len() as f64
}

fn bank_probes(bank: &EmbeddingBank, n_envs: usize, n_pol: usize, per_cell: usize, epochs: usize) -> (f64, f64) {
    let cut = per_cell - per_cell / 5;
    let mut env_train = Vec::new();
    let mut env_test = Vec::new();
    let mut pol_train = Vec::new();
    let mut pol_test = Vec::new();
    for i in 0..n_envs {
        for k in 0..n_pol {
            for t in 0..per_cell {
                let ze = bank.env_embedding(i, k, t).to_vec();
                let zp = bank.policy_embedding(i, k, t).to_vec();
                if t < cut {
                    env_train.push((ze, i));
                    pol_train.push((zp, k));
                } else {
                    env_test.push((ze, i));
                    pol_test.push((zp, k));
                }
            }
        }
    }
    (
        probe_accuracy(&env_train, &env_test, n_envs, epochs),
        probe_accuracy(&pol_train, &pol_test, n_pol, epochs),
    )
}

/// Window-level probes matching the encoder's training distribution.
fn window_probes(
    store: &pandr_core::store::ExperienceStore,
    bundle: &EncoderBundle,
    n_ctx: usize,
    n_bhv: usize,
    seed: u64,
    epochs: usize,
) -> (f64, f64) {
    let n_envs = store.meta.n_envs;
    let n_pol = store.meta.n_policies;
    let mut rng = stream(seed, "diag-window", &[]);
    let mut env_train = Vec::new();
    let mut env_test = Vec::new();
    let mut pol_train = Vec::new();
    let mut pol_test = Vec::new();
    for i in 0..n_envs {
        for k in 0..n_pol {
            for draw in 0..60 {
                let ctx = store.sample_context(View::Cell(i, k), n_ctx, &mut rng).unwrap();
                let items: Vec<Vec<f64>> = ctx.tuples.iter().map(env_input).collect();
                let ze = bundle.env.embed(&items);
                let bhv = store.sample_behavior(View::Cell(i, k), n_bhv, &mut rng).unwrap();
                let pitems: Vec<Vec<f64>> =
                    bhv.pairs.iter().map(|(s, a)| behavior_input(s, a)).collect();
                let zp = bundle.policy.embed(&pitems);
                if draw < 48 {
                    env_train.push((ze, i));
                    pol_train.push((zp, k));
                } else {
                    env_test.push((ze, i));
                    pol_test.push((zp, k));
                }
            }
        }
    }
    (
        probe_accuracy(&env_train, &env_test, n_envs, epochs),
        probe_accuracy(&pol_train, &pol_test, n_pol, epochs),
    )
}

fn env_knob<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

#[test]
#[ignore]
fn probe_diag() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut cfg = main_cfg();
    if let Some(v) = env_knob::<usize>("DIAG_STEPS") {
        cfg.representation.steps = v;
    }
    if let Some(v) = env_knob::<usize>("DIAG_D") {
        cfg.representation.d = v;
    }
    if let Some(v) = env_knob::<usize>("DIAG_NBHV") {
        cfg.representation.n_bhv = v;
    }
    if let Some(v) = env_knob::<usize>("DIAG_RECB") {
        cfg.representation.rec_batch = v;
    }
    if let Some(v) = env_knob::<f64>("DIAG_LRPOL") {
        cfg.representation.lr_policy = v;
    }
    let n_seeds: u64 = env_knob("DIAG_SEEDS").unwrap_or(2);
    let variant = cfg.variant().unwrap();
    for seed in 0..n_seeds {
        let collect = stage_collect(&cfg, seed, &out).unwrap();
        let store = &collect.store;
        let enc = stage_encoders(&cfg, variant, seed, &collect, &out).unwrap();
        let bank = EmbeddingBank::build(store, &enc.bundle).unwrap();
        let (e400, p400) = bank_probes(
            &bank,
            store.meta.n_envs,
            store.meta.n_policies,
            store.meta.episodes_per_cell,
            400,
        );
        let (e4k, p4k) = bank_probes(
            &bank,
            store.meta.n_envs,
            store.meta.n_policies,
            store.meta.episodes_per_cell,
            4000,
        );
        let (we, wp) = window_probes(
            store,
            &enc.bundle,
            cfg.representation.n_ctx,
            cfg.representation.n_bhv,
            seed,
            400,
        );
        println!(
            "seed {seed} steps={} d={} n_bhv={} rec_batch={} lr_pol={}: episode env {e400:.3}/{e4k:.3} pol {p400:.3}/{p4k:.3} (400/4000 ep); window env {we:.3} pol {wp:.3}",
            cfg.representation.steps,
            cfg.representation.d,
            cfg.representation.n_bhv,
            cfg.representation.rec_batch,
            cfg.representation.lr_policy,
        );
    }
}
