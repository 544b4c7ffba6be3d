//! Trains the full model zoo for one seed and prints every comparison the
//! experiment harnesses rely on. Usage: `calibrate [seed]`.

use std::time::Instant;

use vtslab_core::experiments::{
    build_datasets, pretrain_reference, stage_combo_label, train_variant, ZooConfig,
};
use vtslab_core::metrics::Interval;
use vtslab_core::synthground::{best_constant_interval, random_prediction_chance};
use vtslab_core::training::{SamplerKind, StageKind};
use vtslab_core::{Result, RngState};

const ALL_STAGES: [StageKind; 3] = [
    StageKind::VtsWarmup,
    StageKind::JointAdapter,
    StageKind::GroundingFinetune,
];

fn main() -> Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(1);
    let started = Instant::now();
    let cfg = ZooConfig::default();
    let mut rng = RngState::new(seed);
    let data = build_datasets(&cfg, &mut rng)?;

    let gts: Vec<Interval> = data
        .test_eval
        .iter()
        .map(|(_, s)| Interval::new(s.gt_start_seconds, s.gt_end_seconds))
        .collect::<Result<_>>()?;
    let dur = cfg.family_eval.base.duration_seconds();
    let mut chance_rng = RngState::new(seed ^ 0xC0FFEE);
    let rand_chance = random_prediction_chance(&gts, dur, 200, &mut chance_rng)?;
    let (const_iv, const_chance) = best_constant_interval(
        &gts,
        cfg.family_eval.base.frame_count,
        cfg.family_eval.base.fps,
    )?;
    println!(
        "seed {seed}  chance: random={rand_chance:.2}  constant={const_chance:.2} ({:.1},{:.1})",
        const_iv.start(),
        const_iv.end()
    );

    let t = Instant::now();
    let (dense, _) = pretrain_reference(&cfg, &data, &mut rng)?;
    let dense_test = dense.evaluate(&data.test_eval, 1.0, &mut rng.fork())?;
    println!(
        "dense pretrain     mIoU={:6.2}  r1@0.5={:5.1}  loss={:.4}   [{:.1}s]",
        dense_test.miou,
        dense_test.r1_05,
        dense_test.loss,
        t.elapsed().as_secs_f64()
    );

    // --- sampler variants -------------------------------------------------
    let t = Instant::now();
    let (token, _) = train_variant(
        &cfg,
        &dense,
        SamplerKind::TokenLevel,
        &ALL_STAGES,
        &data,
        &mut rng,
    )?;
    println!("token 1+2+3 trained [{:.1}s]", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let (frame, _) = train_variant(
        &cfg,
        &dense,
        SamplerKind::FrameLevel,
        &ALL_STAGES,
        &data,
        &mut rng,
    )?;
    println!("frame 1+2+3 trained [{:.1}s]", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let (uniform, _) = train_variant(
        &cfg,
        &dense,
        SamplerKind::Uniform,
        &[StageKind::GroundingFinetune],
        &data,
        &mut rng,
    )?;
    println!("uniform ft trained  [{:.1}s]", t.elapsed().as_secs_f64());

    // Random sampler: reuse the token-level trunk after stages 1+2, then
    // finetune with random selection.
    let t = Instant::now();
    let (token_12, _) = train_variant(
        &cfg,
        &dense,
        SamplerKind::TokenLevel,
        &ALL_STAGES[..2],
        &data,
        &mut rng,
    )?;
    let (random, _) = train_variant(
        &cfg,
        &token_12,
        SamplerKind::Random,
        &[StageKind::GroundingFinetune],
        &data,
        &mut rng,
    )?;
    println!("random ft trained   [{:.1}s]", t.elapsed().as_secs_f64());

    println!("\n-- sampler comparison at rho=0.5 (test mIoU) --");
    let mut at_half = Vec::new();
    for (name, model) in [
        ("token", &token),
        ("frame", &frame),
        ("uniform", &uniform),
        ("random", &random),
        ("dense(1.0)", &dense),
    ] {
        let rho = if name == "dense(1.0)" { 1.0 } else { 0.5 };
        let s = model.evaluate(&data.test_eval, rho, &mut RngState::new(seed ^ 0xEA01))?;
        println!(
            "{name:<11} mIoU={:6.2}  r1@0.3={:5.1}  r1@0.5={:5.1}  r1@0.7={:5.1}",
            s.miou, s.r1_03, s.r1_05, s.r1_07
        );
        at_half.push((name, s.miou));
    }

    println!("\n-- density sweep (test mIoU) --");
    println!("{:<9} {:>7} {:>7} {:>7} {:>7} {:>7}", "sampler", "0.2", "0.4", "0.6", "0.8", "1.0");
    let rhos = [0.2, 0.4, 0.6, 0.8, 1.0];
    let mut drops = Vec::new();
    for (name, model) in [("token", &token), ("uniform", &uniform), ("frame", &frame)] {
        let mut cells = Vec::new();
        for &rho in &rhos {
            let s = model.evaluate(&data.test_eval, rho, &mut RngState::new(seed ^ 0xEA02))?;
            cells.push(s.miou);
        }
        println!(
            "{name:<9} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            cells[0], cells[1], cells[2], cells[3], cells[4]
        );
        drops.push((name, cells[4] - cells[0]));
    }
    for (name, drop) in &drops {
        println!("{name} drop 1.0->0.2 = {drop:.2}");
    }

    // --- stage ablation ----------------------------------------------------
    println!("\n-- stage ablation (token-level, test mIoU at rho=0.5) --");
    let combos: [&[StageKind]; 6] = [
        &[],
        &[StageKind::VtsWarmup],
        &[StageKind::VtsWarmup, StageKind::JointAdapter],
        &[StageKind::VtsWarmup, StageKind::GroundingFinetune],
        &[StageKind::JointAdapter, StageKind::GroundingFinetune],
        &ALL_STAGES,
    ];
    let mut branch_rng = rng.fork();
    for stages in combos {
        let t = Instant::now();
        let (m, _) = train_variant(
            &cfg,
            &dense,
            SamplerKind::TokenLevel,
            stages,
            &data,
            &mut branch_rng,
        )?;
        let s = m.evaluate(&data.test_eval, 0.5, &mut RngState::new(seed ^ 0xEA03))?;
        println!(
            "stages {:<6} mIoU={:6.2}  r1@0.5={:5.1}   [{:.1}s]",
            stage_combo_label(stages),
            s.miou,
            s.r1_05,
            t.elapsed().as_secs_f64()
        );
    }

    // --- positions-off ablation ---------------------------------------------
    println!("\n-- positional-information ablation --");
    let t = Instant::now();
    let mut cfg_off = cfg.clone();
    cfg_off.use_positions = false;
    let mut rng_off = RngState::new(seed ^ 0x9E0FF);
    let (dense_off, _) = pretrain_reference(&cfg_off, &data, &mut rng_off)?;
    let (token_off, _) = train_variant(
        &cfg_off,
        &dense_off,
        SamplerKind::TokenLevel,
        &ALL_STAGES,
        &data,
        &mut rng_off,
    )?;
    let s_off = token_off.evaluate(&data.test_eval, 0.5, &mut RngState::new(seed ^ 0xEA04))?;
    println!(
        "positions off: mIoU={:.2} vs constant chance {const_chance:.2} (|diff|={:.2}) vs random chance {rand_chance:.2}   [{:.1}s]",
        s_off.miou,
        (s_off.miou - const_chance).abs(),
        t.elapsed().as_secs_f64()
    );

    println!("\ntotal {:.1}s", started.elapsed().as_secs_f64());
    let token_miou = at_half.iter().find(|(n, _)| *n == "token").unwrap().1;
    let uniform_miou = at_half.iter().find(|(n, _)| *n == "uniform").unwrap().1;
    let random_miou = at_half.iter().find(|(n, _)| *n == "random").unwrap().1;
    println!(
        "checks: token-uniform={:+.2} (need >= +3)  random-uniform={:+.2} (need > 0)",
        token_miou - uniform_miou,
        random_miou - uniform_miou
    );
    Ok(())
}
