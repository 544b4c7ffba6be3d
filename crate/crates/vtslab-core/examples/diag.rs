//! One-sample training diagnostics: parameter gradient norms, frame-score
//! separation (in-interval vs outside), and loss decomposition.

use vtslab_core::experiments::{build_datasets, ZooConfig};
use vtslab_core::training::{Model, SamplerKind, StageKind, StagePlan};
use vtslab_core::training::{SgdMomentum, TrainableSet};
use vtslab_core::vts::VtsMode;
use vtslab_core::{Result, RngState};

fn norms(label: &str, params: &mut vtslab_core::synthground::HeadParams) {
    print!("{label}: ");
    params.for_each_mut(|key, t| {
        let n = (t.data().iter().map(|v| v * v).sum::<f64>()).sqrt();
        print!("{key}={n:.2e} ");
    });
    println!();
}

fn main() -> Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(0, |s| s.parse().unwrap());
    let lr: f64 = std::env::args()
        .nth(2)
        .map_or(1e-2, |s| s.parse().unwrap());
    let align_w: f64 = std::env::args()
        .nth(3)
        .map_or(1.0, |s| s.parse().unwrap());
    let mut cfg = ZooConfig::default();
    if let Ok(v) = std::env::var("TRAIN_SIZE") {
        cfg.train_size = v.parse().unwrap();
    }
    let gain_init: Option<f64> = std::env::var("GAIN_INIT").ok().map(|v| v.parse().unwrap());
    let mut rng = RngState::new(1);
    let data = build_datasets(&cfg, &mut rng)?;
    let mut model = Model::init(
        &cfg.family_eval.base,
        cfg.vts_config(),
        SamplerKind::Dense,
        &mut rng,
    )?;
    if let Some(g) = gain_init {
        model.head.frame_score_gain.data_mut()[0] = g;
    }

    // Optional full-batch training steps first.
    if steps > 0 {
        let plan = StagePlan {
            epochs: 1,
            learning_rate: lr,
            batch_size: cfg.train_size,
            trainable: TrainableSet {
                projector: true,
                head_base: true,
                ..TrainableSet::default()
            },
            ..StagePlan::defaults(StageKind::PretrainDense)
        };
        let mut opt = SgdMomentum::new(&model, lr)?;
        for step in 0..steps {
            let mut vts_acc = None;
            let mut head_acc = None;
            let mut total = 0.0;
            for (task, sample) in &data.train_eval {
                let mut g = model.forward_graph(
                    task,
                    sample,
                    vtslab_core::training::ForwardSettings {
                        mode: VtsMode::Train,
                        rho: 1.0,
                        tau_g_progress: None,
                        alignment_weight: align_w,
                    },
                    &mut rng,
                )?;
                g.tape.backward(g.loss)?;
                total += g.tape.value(g.loss).item()?;
                let vg = g.vts_nodes.gradients(&g.tape)?;
                let hg = g.head_nodes.gradients(&g.tape)?;
                match (&mut vts_acc, &mut head_acc) {
                    (None, None) => {
                        vts_acc = Some(vg);
                        head_acc = Some(hg);
                    }
                    (Some(va), Some(ha)) => {
                        vtslab_core::training::vts_acc(va, &vg)?;
                        vtslab_core::training::head_acc(ha, &hg)?;
                    }
                    _ => unreachable!(),
                }
            }
            let n = data.train_eval.len() as f64;
            let mut vg = vts_acc.unwrap();
            let mut hg = head_acc.unwrap();
            vtslab_core::training::vts_scale(&mut vg, 1.0 / n);
            vtslab_core::training::head_scale(&mut hg, 1.0 / n);
            if step % 10 == 0 || step + 1 == steps {
                println!("step {step}: mean loss {:.4}", total / n);
                norms("  grad", &mut hg);
            }
            opt.step(&mut model, &vg, &hg, &plan.trainable)?;
        }
        norms("params after", &mut model.head.clone());
    }

    // Projector alignment with the task family's fixed lift matrix: the
    // cosine between W_p and the lift (flattened). Content matching works
    // once this is large.
    let lift = cfg.family_eval.base.lift_matrix();
    let wp = &model.head.projector_weight;
    let dot: f64 = wp.data().iter().zip(lift.data()).map(|(a, b)| a * b).sum();
    let nw = wp.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nl = lift.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "projector-lift cosine {:+.4}  |W_p|={nw:.2}  gain={:+.3}",
        dot / (nw * nl),
        model.head.frame_score_gain.data()[0]
    );

    // Frame-score separation (inside vs outside the gt interval), averaged
    // over the validation set: full scores and the similarity path alone.
    let sep = |m: &Model, rng: &mut RngState| -> Result<f64> {
        let mut total = 0.0;
        for (task, sample) in &data.val_eval {
            let graph = m.forward_graph(
                task,
                sample,
                vtslab_core::training::ForwardSettings {
                    mode: VtsMode::Eval,
                    rho: 1.0,
                    tau_g_progress: None,
                    alignment_weight: 0.0,
                },
                rng,
            )?;
            let scores = graph.tape.value(graph.outputs.frame_scores).data().to_vec();
            let t = task.frame_count;
            let inside: Vec<bool> = (0..t)
                .map(|f| {
                    let c = f as f64 + 0.5;
                    c >= task.interval_start && c < task.interval_end
                })
                .collect();
            let n_in = inside.iter().filter(|&&b| b).count();
            let mean_in = (0..t)
                .filter(|&f| inside[f])
                .map(|f| scores[f])
                .sum::<f64>()
                / n_in as f64;
            let mean_out = (0..t)
                .filter(|&f| !inside[f])
                .map(|f| scores[f])
                .sum::<f64>()
                / (t - n_in) as f64;
            total += mean_in - mean_out;
        }
        Ok(total / data.val_eval.len() as f64)
    };
    let full_sep = sep(&model, &mut rng)?;
    let mut sim_only = model.clone();
    for v in sim_only.head.frame_score_weight.data_mut() {
        *v = 0.0;
    }
    let sim_sep = sep(&sim_only, &mut rng)?;
    println!("score separation: full {full_sep:+.4}, similarity path only {sim_sep:+.4}");

    // Ceiling check: what separation would a perfectly aligned projector
    // (lift transpose, rescaled to the current weight norm) give?
    let mut ideal = sim_only.clone();
    {
        let wp_norm = model
            .head
            .projector_weight
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let lift_norm = lift.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = wp_norm / lift_norm;
        let w = ideal.head.projector_weight.data_mut();
        for (i, v) in w.iter_mut().enumerate() {
            *v = c * lift.data()[i];
        }
    }
    let ideal_sep = sep(&ideal, &mut rng)?;
    println!("ideal-alignment separation at |W_p| matched: {ideal_sep:+.4}");

    let summary = model.evaluate(&data.val_eval, 1.0, &mut RngState::new(99))?;
    let train_summary = model.evaluate(&data.train_eval, 1.0, &mut RngState::new(99))?;
    println!(
        "train mIoU {:.2} loss {:.4}  |  val mIoU {:.2}  r1@0.5 {:.1}  loss {:.4}",
        train_summary.miou, train_summary.loss, summary.miou, summary.r1_05, summary.loss
    );
    Ok(())
}
