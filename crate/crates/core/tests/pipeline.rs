//! Evaluation, export and training behaviour through the public API.

use crowdnav::config::Config;
use crowdnav::evaluation::{compute_metrics, run_evaluation};
use crowdnav::export::{read_records, validate, write_records, TrajectoryFile};
use crowdnav::pipeline::{self, PolicyKind};
use crowdnav::rng::{rng_for, Stream};
use crowdnav::simulation::{EnvType, StraightPolicy};
use crowdnav::training::{collect_demonstrations, dataset_loss, encode_state, imitation_fit, Experience, TrainConfig};
use crowdnav::valuenet::{NetworkConfig, ValueNetParams};

fn base(env: &str, n_dynamic: usize) -> Config {
    let text = format!(
        "[train]\nseed = 5\n[scenario]\nenv_type = \"{env}\"\nn_dynamic = {n_dynamic}\nn_static = 3\n\
         [network]\nembedding = [16, 8]\nattention = [8, 1]\nhead = [16, 1]\n"
    );
    Config::from_toml_str(&text).unwrap()
}

#[test]
fn straight_policy_in_empty_world() {
    let cfg = base("none", 0);
    let (report, records) = pipeline::evaluate(&cfg, PolicyKind::Straight, None, 20, 3, 1).unwrap();
    assert_eq!(report.success_rate, 1.0);
    let t = report.nav_time.unwrap();
    assert!((7.0..=8.5).contains(&t), "{t}");
    assert_eq!(records.len(), 20);
}

#[test]
fn parallel_and_sequential_agree() {
    let cfg = base("separated", 4);
    let a = pipeline::evaluate(&cfg, PolicyKind::Orca, None, 12, 9, 1).unwrap();
    let b = pipeline::evaluate(&cfg, PolicyKind::Orca, None, 12, 9, 3).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let sum = a.0.success_rate + a.0.collision_rate + a.0.timeout_rate;
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn policies_face_the_same_scenarios() {
    let cfg = base("concave", 3);
    let (_, a) = pipeline::evaluate(&cfg, PolicyKind::Orca, None, 6, 21, 1).unwrap();
    let (_, b) = pipeline::evaluate(&cfg, PolicyKind::Straight, None, 6, 21, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.initial, y.initial);
        assert_eq!(x.seed, y.seed);
    }
}

#[test]
fn trajectory_round_trip_and_metrics() {
    let cfg = base("separated", 3);
    let (report, records) = pipeline::evaluate(&cfg, PolicyKind::Orca, None, 5, 2, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rec_path = dir.path().join("episodes.jsonl");
    write_records(&rec_path, &records).unwrap();
    let back = read_records(&rec_path).unwrap();
    assert_eq!(back, records);
    assert_eq!(compute_metrics(&back, cfg.reward.d_disc).unwrap(), report);

    for rec in &records {
        let file = TrajectoryFile::from_record(rec);
        assert!(validate(&file).is_empty(), "{:?}", validate(&file));
        assert_eq!(file.steps.len(), rec.steps.len() + 1);
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        file.write(&p1).unwrap();
        let reread = TrajectoryFile::read(&p1).unwrap();
        assert_eq!(reread, file);
        reread.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        // The episode's contribution survives the trip through the file.
        let single = compute_metrics(std::slice::from_ref(rec), cfg.reward.d_disc).unwrap();
        let again = compute_metrics(&[reread.to_record().unwrap()], cfg.reward.d_disc).unwrap();
        assert_eq!(single.success, again.success);
        assert_eq!(single.collision, again.collision);
        assert_eq!(single.total_steps, again.total_steps);
        assert_eq!(single.discomfort_steps, again.discomfort_steps);
        if let (Some(a), Some(b)) = (single.nav_time, again.nav_time) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn validation_names_broken_steps() {
    let cfg = base("separated", 3);
    let (_, records) = pipeline::evaluate(&cfg, PolicyKind::Orca, None, 1, 4, 1).unwrap();
    let good = TrajectoryFile::from_record(&records[0]);

    let mut bad_t = good.clone();
    bad_t.steps[3].t = bad_t.steps[2].t - 0.1;
    let v = validate(&bad_t);
    assert!(v.iter().any(|x| x.step == Some(3) && x.field == "t"), "{v:?}");

    let mut bad_h = good.clone();
    bad_h.steps[4].humans.pop();
    let v = validate(&bad_h);
    assert!(v.iter().any(|x| x.step == Some(4) && x.field == "humans"), "{v:?}");
}

#[test]
fn unknown_schema_major_is_rejected() {
    let cfg = base("none", 2);
    let (_, records) = pipeline::evaluate(&cfg, PolicyKind::Straight, None, 1, 4, 1).unwrap();
    let text = TrajectoryFile::from_record(&records[0]).to_text();
    let bumped = text.replacen("\"schema_version\":\"1.0\"", "\"schema_version\":\"2.0\"", 1);
    assert!(TrajectoryFile::parse(&bumped).is_err());
    assert!(TrajectoryFile::parse(&text).is_ok());
}

#[test]
fn demonstration_targets_are_discounted_returns() {
    let cfg = base("none", 0);
    let rule = cfg.lookahead().rule;
    let (none, summary) = collect_demonstrations(0, 1, &cfg.sim(), &cfg.action_space(), &rule, &cfg.network).unwrap();
    assert!(none.is_empty() && summary.is_empty());

    // Empty world: ORCA drives straight, only the last step is rewarded.
    let (data, summary) = collect_demonstrations(1, 1, &cfg.sim(), &cfg.action_space(), &rule, &cfg.network).unwrap();
    assert_eq!(summary[0].outcome, crowdnav::simulation::Outcome::Success);
    let n = data.len();
    let t_arrive = n as f64 * cfg.sim.dt;
    let terminal = 1.0 - 0.1 * t_arrive / cfg.reward.t_limit;
    assert!((data[n - 1].target - terminal).abs() < 1e-12);
    for (k, e) in data.iter().enumerate() {
        let want = rule.factor().powi((n - 1 - k) as i32) * terminal;
        assert!((e.target - want).abs() < 1e-12, "step {k}");
    }
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        embedding: vec![16, 8],
        attention: vec![8, 1],
        head: vec![16, 1],
        ..NetworkConfig::default()
    }
}

#[test]
fn imitation_on_one_target_converges() {
    let cfg = base("separated", 3);
    let mut rng = rng_for(1, Stream::Evaluation, 0);
    let scen = crowdnav::simulation::generate_scenario(&cfg.scenario, &mut rng).unwrap();
    let features = encode_state(&scen.joint_state(), &small_net());
    let data: Vec<Experience> = (0..64)
        .map(|_| Experience {
            features: features.clone(),
            target: 0.42,
        })
        .collect();
    let mut net = ValueNetParams::init(small_net(), &mut rng_for(1, Stream::Init, 0)).unwrap();
    let tc = TrainConfig {
        il_epochs: 50,
        il_lr: 0.01,
        il_batch_size: 16,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    let per_epoch = imitation_fit(&mut net, &data, &tc, &mut |_| Ok(())).unwrap();
    losses.extend(per_epoch);
    assert!(*losses.last().unwrap() < 1e-4, "{losses:?}");
    assert!(losses[losses.len() - 1] < losses[0]);
}

#[test]
fn imitation_descends_and_zero_lr_is_inert() {
    let cfg = base("separated", 3);
    let (data, _) = collect_demonstrations(
        4,
        2,
        &cfg.sim(),
        &cfg.action_space(),
        &cfg.lookahead().rule,
        &small_net(),
    )
    .unwrap();
    let init = ValueNetParams::init(small_net(), &mut rng_for(2, Stream::Init, 0)).unwrap();
    let tc = TrainConfig {
        il_epochs: 10,
        ..TrainConfig::default()
    };
    let mut fitted = init.clone();
    imitation_fit(&mut fitted, &data, &tc, &mut |_| Ok(())).unwrap();
    assert!(dataset_loss(&fitted, &data) <= dataset_loss(&init, &data));

    let mut frozen = init.clone();
    let zero = TrainConfig { il_lr: 0.0, ..tc };
    imitation_fit(&mut frozen, &data, &zero, &mut |_| Ok(())).unwrap();
    assert_eq!(frozen.params(), init.params());
}

#[test]
fn training_is_deterministic() {
    let mut cfg = base("separated", 3);
    cfg.train.il_episodes = 4;
    cfg.train.il_epochs = 2;
    cfg.train.rl_episodes = 6;
    cfg.train.train_batches = 2;
    cfg.train.batch_size = 16;
    let run = || {
        let mut lines = Vec::new();
        let t = pipeline::train(&cfg, &mut |l| {
            lines.push(serde_json::to_string(l).unwrap());
            Ok(())
        })
        .unwrap();
        (lines, t.final_params)
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
    assert_eq!(la.iter().filter(|l| l.contains("\"stage\":\"rl\"")).count(), 6);
}

#[test]
fn env_override_changes_layout() {
    let mut cfg = base("separated", 2);
    cfg.scenario.env_type = EnvType::Concave;
    cfg.scenario.n_static = 5;
    let pol = StraightPolicy {
        actions: cfg.action_space(),
    };
    let (_, recs) = run_evaluation(&pol, 1, 0, &cfg.sim(), "", 1).unwrap();
    assert_eq!(recs[0].static_flags.iter().filter(|&&s| s).count(), 5);
    assert_eq!(recs[0].env_type, EnvType::Concave);
}
