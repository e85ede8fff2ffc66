//! Acceptance suite. Every test writes one `criterion N PASS|FAIL: ...` line
//! straight to stdout (bypassing the test harness capture) and then asserts.
//!
//! The end-to-end criteria share run directories built once per world.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use common::oracles::{brute_gae, corpus, oracle_bleu, oracle_cider};
use esper_core::adapter::{Adapter, AdapterCheckpoint};
use esper_core::config::ExperimentConfig;
use esper_core::eval::{
    bleu4_text, cider, likelihood_rank, paired_t_test, rank_scores, EvalReport,
};
use esper_core::lm::{LanguageModel, LmConfig, PrefixEmbedding};
use esper_core::ppo::{compute_gae, greedy_trigram_repetition, ppo_clip_loss, train, MetricsLog};
use esper_core::rewards::{entropy_threshold, pairing_reward, repetition_penalty, RewardConfig};
use esper_core::rng::{derive_seed, substream};
use esper_core::run::{Experiment, RunAssets};
use esper_core::style::{style_nll, supervised_finetune, Regime};
use rand::Rng;

fn report(n: u32, pass: bool, detail: String) {
    let line = format!(
        "criterion {n:>2} {}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------- fixtures

/// Desk-scale settings: single-core CPU, so RL batches are 16 episodes with 2
/// optimization epochs each at a learning rate that moves within 2000 batches.
fn config(world: &str) -> ExperimentConfig {
    let overrides: Vec<String> = [
        format!("run.world=\"{world}\""),
        "run.seed=0".into(),
        "style.batch_size=32".into(),
        "ppo.learning_rate=0.001".into(),
        "ppo.batch_size=16".into(),
        "ppo.ppo_epochs=2".into(),
        "ppo.max_batches=2000".into(),
    ]
    .into();
    ExperimentConfig::from_toml_str("", &overrides).unwrap()
}

struct Prepared {
    _dir: tempfile::TempDir,
    exp: Experiment,
    init_checkpoint: PathBuf,
}

/// Data, features and the style-pretrained backbone.
fn prepare(world: &str) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::create(config(world), dir.path()).unwrap();
    exp.gen_data().unwrap();
    exp.cache_features().unwrap();
    exp.pretrain_style().unwrap();
    let a = exp.assets(None).unwrap();
    let init = exp.init_adapter(&a.features, &a.backbone).unwrap();
    let init_checkpoint = exp.path("init/adapter.ckpt");
    std::fs::create_dir_all(init_checkpoint.parent().unwrap()).unwrap();
    init.to_archive().write(&init_checkpoint).unwrap();
    Prepared {
        _dir: dir,
        exp,
        init_checkpoint,
    }
}

struct Trained {
    init: EvalReport,
    trained: EvalReport,
}

fn train_and_evaluate(p: &Prepared) -> Trained {
    let init = p
        .exp
        .evaluate_report("test", Some(&p.init_checkpoint))
        .unwrap();
    p.exp.train_rl(None).unwrap();
    let trained = p.exp.evaluate("test", None).unwrap();
    Trained { init, trained }
}

static SHAPE: OnceLock<Prepared> = OnceLock::new();
static SHAPE_TRAINED: OnceLock<Trained> = OnceLock::new();
static TONE: OnceLock<Prepared> = OnceLock::new();
static TONE_TRAINED: OnceLock<Trained> = OnceLock::new();

fn shape() -> &'static Prepared {
    SHAPE.get_or_init(|| prepare("shapeworld"))
}

fn shape_trained() -> &'static Trained {
    SHAPE_TRAINED.get_or_init(|| train_and_evaluate(shape()))
}

fn tone() -> &'static Prepared {
    TONE.get_or_init(|| prepare("toneworld"))
}

fn tone_trained() -> &'static Trained {
    TONE_TRAINED.get_or_init(|| train_and_evaluate(tone()))
}

fn init_checkpoint(p: &Prepared) -> AdapterCheckpoint {
    Experiment::load_checkpoint(&p.init_checkpoint).unwrap().0
}

// ---------------------------------------------------------------- criteria

#[test]
fn criterion_01_reward_constants() {
    let c = RewardConfig::default();
    let checks = [
        ("pairing(0.5)", pairing_reward(0.5, &c), 15.0),
        ("pairing(0.2)", pairing_reward(0.2, &c), 0.0),
        ("tau(l=10)", entropy_threshold(10, &c), 7.0),
        (
            "repetition([a,a,a])",
            repetition_penalty(&[7, 7, 7], &c),
            -0.075,
        ),
    ];
    let worst = checks
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let detail = checks
        .iter()
        .map(|(n, g, _)| format!("{n}={g}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        1,
        worst <= 1e-12,
        format!("{detail}; max abs error {worst:e} (tol 1e-12)"),
    );
}

#[test]
fn criterion_02_gae_and_clip_oracles() {
    let mut rng = substream(2, "acceptance_gae", &[]);
    let mut gae_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let (a, ret) = compute_gae(&r, &v, 1.0, 0.95).unwrap();
        let (ba, bret) = brute_gae(&r, &v, 1.0, 0.95);
        for t in 0..n {
            gae_err = gae_err
                .max((a[t] - ba[t]).abs())
                .max((ret[t] - bret[t]).abs());
        }
    }
    let table: [(f64, f64, f64); 6] = [
        (1.1, 1.0, -1.1),
        (1.5, 1.0, -1.2),
        (0.5, 1.0, -0.5),
        (0.5, -1.0, 0.8),
        (1.5, -1.0, 1.5),
        (0.9, -2.0, 1.8),
    ];
    let clip_err = table
        .iter()
        .map(|&(ratio, adv, want)| {
            (ppo_clip_loss(&[ratio.ln()], &[0.0], &[adv], 0.2).unwrap() - want).abs()
        })
        .fold(0.0, f64::max);
    report(
        2,
        gae_err <= 1e-8 && clip_err <= 1e-10,
        format!("GAE max error {gae_err:e} over 100 trajectories (tol 1e-8); clip loss max error {clip_err:e} over 6 cases (tol 1e-10)"),
    );
}

#[test]
fn criterion_03_frozen_backbone_invariance() {
    let p = shape();
    let a: RunAssets = p.exp.assets(None).unwrap();
    let stored = std::fs::read_to_string(p.exp.path("backbone.fingerprint")).unwrap();
    let before = a.backbone.fingerprint();
    let init = init_checkpoint(p);
    let cfg = esper_core::ppo::PpoConfig {
        max_batches: 50,
        ppo_epochs: 2,
        ..p.exp.cfg.ppo_config()
    };
    let train_ids = a.ids("train").unwrap();
    let val_ids = a.ids("val").unwrap();
    let mut log = MetricsLog::in_memory();
    let out = train(&init, &cfg, &a.env(), &train_ids, &val_ids, &mut log, None).unwrap();
    let updates = out.batches_run * cfg.ppo_epochs;
    let after = a.backbone.fingerprint();
    let first_grad = log.records()[0].grad_norm;
    let pass = before == after
        && stored.trim() == after.0
        && out.last.policy.fingerprint() != init.policy.fingerprint()
        && first_grad > 0.0
        && updates == 100;
    report(
        3,
        pass,
        format!(
            "{updates} updates; backbone {} -> {} (unchanged: {}); adapter changed: {}; step-1 adapter grad norm {first_grad:.3e}",
            &before.0[..12],
            &after.0[..12],
            before == after,
            out.last.policy.fingerprint() != init.policy.fingerprint()
        ),
    );
}

fn improvement(n: u32, world: &str, t: &Trained) {
    let ratio = |r: &EvalReport| {
        r.records
            .iter()
            .map(|x| x.cosine / x.best_achievable.unwrap())
            .collect::<Vec<f64>>()
    };
    let before = ratio(&t.init);
    let after = ratio(&t.trained);
    let test = paired_t_test(&before, &after).unwrap();
    let (r0, r1) = (
        t.init.oracle_ratio.unwrap(),
        t.trained.oracle_ratio.unwrap(),
    );
    let count = t.trained.count;
    let pass = r1 >= 0.7 && r0 <= 0.3 && test.p_greater < 0.01 && count >= 200;
    report(
        n,
        pass,
        format!(
            "{world}: held-out oracle-ratio {r0:.3} at init (<= 0.3) -> {r1:.3} after RL (>= 0.7); paired t = {:.2}, one-sided p = {:.2e} (< 0.01) over {count} scenes; BLEU-4 {:.3}, CIDEr {:.3}",
            test.t,
            test.p_greater,
            t.trained.bleu4.unwrap_or(f64::NAN),
            t.trained.cider.unwrap_or(f64::NAN),
        ),
    );
}

#[test]
fn criterion_04_shapeworld_alignment() {
    improvement(4, "shapeworld", shape_trained());
}

#[test]
fn criterion_05_rl_warm_start_beats_random_init() {
    let p = shape();
    let _ = shape_trained();
    let a = p.exp.assets(None).unwrap();
    let (rl, _) = Experiment::load_checkpoint(&p.exp.best_checkpoint_path()).unwrap();
    let train_pairs = p.exp.caption_pairs(&a.scenes.train, &a.vocab, 0).unwrap();
    let val_pairs = p.exp.caption_pairs(&a.scenes.val, &a.vocab, 1).unwrap();
    let prompt = esper_core::style::style_prompt_tokens(&a.vocab, &p.exp.cfg.run.style);
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let cfg = esper_core::style::StyleTuneConfig {
            seed: derive_seed(seed, "warm_start", &[]),
            ..p.exp.cfg.finetune_config(Regime::AdapterOnly)
        };
        let random = AdapterCheckpoint {
            policy: Adapter::new(
                *rl.policy.config(),
                derive_seed(seed, "random_adapter", &[]),
            )
            .unwrap(),
            value: None,
            backbone_fingerprint: a.backbone.fingerprint(),
        };
        let r = supervised_finetune(
            &random,
            a.backbone.clone(),
            &a.features,
            &prompt,
            &train_pairs,
            &val_pairs,
            &cfg,
            a.exec,
        )
        .unwrap();
        let w = supervised_finetune(
            &rl,
            a.backbone.clone(),
            &a.features,
            &prompt,
            &train_pairs,
            &val_pairs,
            &cfg,
            a.exec,
        )
        .unwrap();
        let target = r.best_val_nll();
        let k_random = r.epochs_to_reach(target).unwrap();
        let k_warm = w.epochs_to_reach(target);
        if k_warm.is_some_and(|k| k < k_random) {
            wins += 1;
        }
        parts.push(format!(
            "seed {seed}: random best {target:.3} at epoch {k_random}, RL-init reaches it at {}",
            k_warm.map_or("never".to_string(), |k| format!("epoch {k}"))
        ));
    }
    report(
        5,
        wins == 3,
        format!("{wins}/3 seeds strictly fewer epochs; {}", parts.join("; ")),
    );
}

#[test]
fn criterion_06_style_conditioning() {
    let p = shape();
    let a = p.exp.assets(None).unwrap();
    let world = p.exp.world().unwrap();
    let docs = world
        .style_corpus("caption", &a.scenes.test, &p.exp.cfg.data.template_set, 606)
        .unwrap();
    let k = p.exp.cfg.adapter.prefix_len;
    let own_wins = docs
        .iter()
        .filter(|d| {
            let own = style_nll(&a.backbone, &a.vocab, k, "caption", &d.body).unwrap();
            let other = style_nll(&a.backbone, &a.vocab, k, "story", &d.body).unwrap();
            own < other
        })
        .count();
    let frac = own_wins as f64 / docs.len() as f64;
    report(6, frac >= 0.95, format!("{own_wins}/{} held-out caption documents ({:.1}%) have lower NLL under `caption:` than `story:` (>= 95%)", docs.len(), 100.0 * frac));
}

#[test]
fn criterion_07_metric_oracles() {
    let (cands, refs) = corpus();
    let bleu_err = cands
        .iter()
        .map(|(id, c)| (bleu4_text(c, &refs[id]) - oracle_bleu(c, &refs[id])).abs())
        .fold(0.0, f64::max);
    let map: BTreeMap<u64, String> = cands.iter().map(|(i, c)| (*i, c.to_string())).collect();
    let got = cider(&map, &refs).unwrap();
    let want = oracle_cider(&cands, &refs);
    let cider_err = want
        .iter()
        .map(|(id, w)| (got.per_id[id] - w).abs())
        .fold(0.0, f64::max);
    report(
        7,
        bleu_err <= 1e-6 && cider_err <= 1e-6,
        format!("10-sentence corpus: BLEU-4 max error {bleu_err:e}, CIDEr max error {cider_err:e} (tol 1e-6 per instance)"),
    );
}

#[test]
fn criterion_08_ranking_protocol() {
    // Context-free backbone: blocks and positions zeroed and the final norm
    // emits e_0, so every next-token logit is wte[v][0].
    let scores = [0.0, -5.0, 3.0, 2.0, 1.0, 0.5];
    let d = 4;
    let mut m = LanguageModel::new(
        LmConfig {
            vocab_size: scores.len(),
            d_model: d,
            n_layers: 1,
            n_heads: 1,
            max_len: 16,
        },
        0,
    )
    .unwrap();
    let names: Vec<String> = m.params().specs().iter().map(|s| s.name.clone()).collect();
    for n in names {
        if n.starts_with('h') || n == "wpe" || n == "lnf.w" || n == "lnf.b" {
            m.params_mut().get_mut(&n).fill(0.0);
        }
    }
    m.params_mut().get_mut("lnf.b")[0] = 1.0;
    for (v, s) in scores.iter().enumerate() {
        m.params_mut().get_mut("wte")[v * d] = *s;
    }
    let cands = vec![
        vec![4u32, 4, 0],
        vec![2, 2, 0],
        vec![5, 3, 0],
        vec![1, 1, 0],
    ];
    let r = likelihood_rank(&m, &PrefixEmbedding::zeros(2, d), &[3], &cands, Some(1)).unwrap();
    let order_ok = r.order == vec![1, 2, 0, 3];
    let rank1 = rank_scores(&[0.9, 0.1, 0.5], Some(0));
    let rank4 = rank_scores(&[0.1, 0.9, 0.8, 0.7], Some(0));
    let hand_ok = rank1.reciprocal_rank() == Some(1.0)
        && rank1.recall_at_1() == Some(1.0)
        && rank4.reciprocal_rank() == Some(0.25)
        && rank4.recall_at_1() == Some(0.0)
        && r.reciprocal_rank() == Some(1.0);
    report(
        8,
        order_ok && hand_ok,
        format!(
            "forced-preference order {:?} (expected [1, 2, 0, 3]); gold@1 MRR {:?}, gold@4 MRR {:?}, R@1 {:?}/{:?}",
            r.order,
            rank1.reciprocal_rank(),
            rank4.reciprocal_rank(),
            rank1.recall_at_1(),
            rank4.recall_at_1()
        ),
    );
}

#[test]
fn criterion_09_repetition_penalty_effect() {
    let p = shape();
    let a = p.exp.assets(None).unwrap();
    let init = init_checkpoint(p);
    let train_ids = a.ids("train").unwrap();
    let val_ids = a.ids("val").unwrap();
    let test_ids = a.ids("test").unwrap();
    let cfg = esper_core::ppo::PpoConfig {
        max_batches: 500,
        ..p.exp.cfg.ppo_config()
    };
    let run = |rewards: RewardConfig| {
        let mut env = a.env();
        env.rewards = rewards;
        let mut log = MetricsLog::in_memory();
        let out = train(&init, &cfg, &env, &train_ids, &val_ids, &mut log, None).unwrap();
        greedy_trigram_repetition(
            &env,
            &out.best.policy,
            &test_ids,
            p.exp.cfg.eval.max_tokens,
            9,
        )
        .unwrap()
    };
    let full = run(a.rewards.clone());
    let ablation = run(RewardConfig {
        repetition_gain: 0.0,
        ..a.rewards.clone()
    });
    report(
        9,
        ablation > full,
        format!("mean repeated 3-grams per greedy test decode: without repetition penalty {ablation:.4}, full reward {full:.4} ({} batches each)", cfg.max_batches),
    );
}

#[test]
fn criterion_10_second_modality() {
    improvement(10, "toneworld", tone_trained());
}
