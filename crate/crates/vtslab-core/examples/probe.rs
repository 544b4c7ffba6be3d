//! Dense-pretraining dynamics probe. Usage:
//! `probe [seed] [epochs] [lr] [patience] [saliency_weight]`

use vtslab_core::experiments::{build_datasets, ZooConfig};
use vtslab_core::training::{pretrain_dense, Model, SamplerKind, StageKind, StagePlan};
use vtslab_core::{Result, RngState};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(1, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(200, |s| s.parse().unwrap());
    let lr: f64 = args.get(3).map_or(1e-2, |s| s.parse().unwrap());
    let patience: usize = args.get(4).map_or(50, |s| s.parse().unwrap());
    let weight: f64 = args.get(5).map_or(0.5, |s| s.parse().unwrap());

    let cfg = ZooConfig::default();
    let mut rng = RngState::new(seed);
    let data = build_datasets(&cfg, &mut rng)?;
    let mut model = Model::init(
        &cfg.family_eval.base,
        cfg.vts_config(),
        SamplerKind::Dense,
        &mut rng,
    )?;
    model.saliency_weight = weight;
    let plan = StagePlan {
        epochs,
        learning_rate: lr,
        ..StagePlan::defaults(StageKind::PretrainDense)
    };
    let rows = pretrain_dense(
        &mut model,
        &plan,
        &data.train_eval,
        &data.val_eval,
        patience,
        1e-3,
        &mut rng,
    )?;
    for r in rows.iter().filter(|r| r.split == "val") {
        if r.epoch % 10 == 0 || r.epoch + 1 == epochs {
            println!(
                "epoch {:>4}  val loss={:8.4}  mIoU={:6.2}  r1@0.5={:5.1}",
                r.epoch, r.loss, r.miou, r.r1_05
            );
        }
    }
    let last = rows.iter().filter(|r| r.split == "val").last().unwrap();
    println!(
        "final epoch {}  val mIoU={:.2}  (lr={lr}, weight={weight})",
        last.epoch, last.miou
    );
    Ok(())
}
