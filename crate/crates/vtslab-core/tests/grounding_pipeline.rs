//! End-to-end gradient validation of the grounding pipeline: synthetic
//! sample → projector → soft-mode token sampling → head → loss, with every
//! parameter leaf checked against a central-difference oracle.

use vtslab_core::numerics::{fd_gradient, max_rel_err, NodeId, Tape, Tensor, DEFAULT_FD_STEP};
use vtslab_core::synthground::{
    generate, grounding_loss, head_forward, project, GroundTruth, HeadParams, SynthSample,
    SynthTask, DEFAULT_SALIENCY_WEIGHT,
};
use vtslab_core::vts::{vts_forward, TokenBatch, VtsConfig, VtsMode, VtsParams};
use vtslab_core::RngState;

const CHAIN_TOL: f64 = 1e-4;

#[derive(Clone)]
struct PipelineInstance {
    task: SynthTask,
    sample: SynthSample,
    cfg: VtsConfig,
    vts: VtsParams,
    head: HeadParams,
    use_positions: bool,
}

fn make_pipeline(seed: u64, with_adapter: bool, use_positions: bool) -> PipelineInstance {
    let task = SynthTask {
        frame_count: 4,
        patches_per_frame: 2,
        encoder_dim: 10,
        model_dim: 8,
        query_tokens: 3,
        interval_start: 1.0,
        interval_end: 3.0,
        ..SynthTask::default_desk()
    };
    let mut rng = RngState::new(seed);
    let sample = generate(&task, &mut rng).unwrap();
    let cfg = VtsConfig::new(task.model_dim, 4)
        .with_rho(0.5)
        .with_mode(VtsMode::Soft);
    let vts = VtsParams::init(&cfg, &mut rng).unwrap();
    let mut head = HeadParams::init(task.encoder_dim, task.model_dim, &mut rng);
    if with_adapter {
        head.attach_adapter(2, &mut rng).unwrap();
        // A fresh adapter has B = 0, which makes the loss exactly flat in
        // A (dL/dA = G·Bᵀ = 0). Perturb B so both factors carry signal.
        if let Some(ad) = &mut head.adapter {
            let mut arng = RngState::new(seed ^ 0xADA);
            for v in ad.b.data_mut() {
                *v = 0.2 * arng.normal();
            }
        }
    }
    PipelineInstance {
        task,
        sample,
        cfg,
        vts,
        head,
        use_positions,
    }
}

/// Build the full graph; returns the loss node and the named leaves.
fn build(inst: &PipelineInstance) -> (Tape, NodeId, Vec<(&'static str, NodeId)>) {
    let mut tape = Tape::new();
    let feats = tape.leaf(inst.sample.encoder_features.clone());
    let query = tape.leaf(inst.sample.query.clone());
    let head_nodes = inst.head.leaf_on(&mut tape);
    let vts_nodes = inst.vts.leaf_on(&mut tape);

    let projected = project(&mut tape, feats, &head_nodes).unwrap();
    let batch = TokenBatch::new(
        tape.value(projected).clone(),
        inst.task.frame_count,
        inst.task.patches_per_frame,
    )
    .unwrap();
    // Soft mode draws no noise, so the rng is inert here.
    let mut rng = RngState::new(0);
    let (sampled, _) = vts_forward(
        &mut tape,
        &batch,
        projected,
        query,
        &vts_nodes,
        &inst.cfg,
        &mut rng,
    )
    .unwrap();
    let out = head_forward(
        &mut tape,
        &sampled,
        query,
        &head_nodes,
        inst.use_positions,
        inst.task.frame_count,
        inst.task.duration_seconds(),
    )
    .unwrap();
    let gt = GroundTruth::of_sample(&inst.sample);
    let loss = grounding_loss(
        &mut tape,
        &out,
        &gt,
        inst.task.duration_seconds(),
        DEFAULT_SALIENCY_WEIGHT,
    )
    .unwrap();

    let mut leaves = vec![
        ("encoder_features", feats),
        ("query", query),
        ("vts.w_v", vts_nodes.w_v),
        ("vts.w_q", vts_nodes.w_q),
        ("vts.mlp0_weight", vts_nodes.mlp0_weight),
        ("vts.mlp0_bias", vts_nodes.mlp0_bias),
        ("vts.mlp1_weight", vts_nodes.mlp1_weight),
        ("vts.mlp1_bias", vts_nodes.mlp1_bias),
        ("head.projector_weight", head_nodes.projector_weight),
        ("head.projector_bias", head_nodes.projector_bias),
        ("head.frame_score_weight", head_nodes.frame_score_weight),
        ("head.frame_score_bias", head_nodes.frame_score_bias),
        ("head.frame_score_gain", head_nodes.frame_score_gain),
        ("head.frame_score_threshold", head_nodes.frame_score_threshold),
        ("head.readout_weight", head_nodes.readout_weight),
        ("head.readout_bias", head_nodes.readout_bias),
    ];
    if let Some((a, b)) = head_nodes.adapter {
        leaves.push(("head.adapter.a", a));
        leaves.push(("head.adapter.b", b));
    }
    (tape, loss, leaves)
}

fn get_slot(inst: &PipelineInstance, name: &str) -> Tensor {
    match name {
        "encoder_features" => inst.sample.encoder_features.clone(),
        "query" => inst.sample.query.clone(),
        "vts.w_v" => inst.vts.w_v.clone(),
        "vts.w_q" => inst.vts.w_q.clone(),
        "vts.mlp0_weight" => inst.vts.mlp0_weight.clone(),
        "vts.mlp0_bias" => inst.vts.mlp0_bias.clone(),
        "vts.mlp1_weight" => inst.vts.mlp1_weight.clone(),
        "vts.mlp1_bias" => inst.vts.mlp1_bias.clone(),
        "head.projector_weight" => inst.head.projector_weight.clone(),
        "head.projector_bias" => inst.head.projector_bias.clone(),
        "head.frame_score_weight" => inst.head.frame_score_weight.clone(),
        "head.frame_score_bias" => inst.head.frame_score_bias.clone(),
        "head.frame_score_gain" => inst.head.frame_score_gain.clone(),
        "head.frame_score_threshold" => inst.head.frame_score_threshold.clone(),
        "head.readout_weight" => inst.head.readout_weight.clone(),
        "head.readout_bias" => inst.head.readout_bias.clone(),
        "head.adapter.a" => inst.head.adapter.as_ref().unwrap().a.clone(),
        "head.adapter.b" => inst.head.adapter.as_ref().unwrap().b.clone(),
        other => panic!("unknown slot {other}"),
    }
}

fn set_slot(inst: &mut PipelineInstance, name: &str, x: Tensor) {
    match name {
        "encoder_features" => inst.sample.encoder_features = x,
        "query" => inst.sample.query = x,
        "vts.w_v" => inst.vts.w_v = x,
        "vts.w_q" => inst.vts.w_q = x,
        "vts.mlp0_weight" => inst.vts.mlp0_weight = x,
        "vts.mlp0_bias" => inst.vts.mlp0_bias = x,
        "vts.mlp1_weight" => inst.vts.mlp1_weight = x,
        "vts.mlp1_bias" => inst.vts.mlp1_bias = x,
        "head.projector_weight" => inst.head.projector_weight = x,
        "head.projector_bias" => inst.head.projector_bias = x,
        "head.frame_score_weight" => inst.head.frame_score_weight = x,
        "head.frame_score_bias" => inst.head.frame_score_bias = x,
        "head.frame_score_gain" => inst.head.frame_score_gain = x,
        "head.frame_score_threshold" => inst.head.frame_score_threshold = x,
        "head.readout_weight" => inst.head.readout_weight = x,
        "head.readout_bias" => inst.head.readout_bias = x,
        "head.adapter.a" => inst.head.adapter.as_mut().unwrap().a = x,
        "head.adapter.b" => inst.head.adapter.as_mut().unwrap().b = x,
        other => panic!("unknown slot {other}"),
    }
}

/// Sorted top-K boundary gap of the selection keys; small gaps mean a
/// finite-difference probe could flip the selected set.
fn selection_gap(inst: &PipelineInstance) -> f64 {
    let mut tape = Tape::new();
    let feats = tape.leaf(inst.sample.encoder_features.clone());
    let query = tape.leaf(inst.sample.query.clone());
    let head_nodes = inst.head.leaf_on(&mut tape);
    let vts_nodes = inst.vts.leaf_on(&mut tape);
    let projected = project(&mut tape, feats, &head_nodes).unwrap();
    let batch = TokenBatch::new(
        tape.value(projected).clone(),
        inst.task.frame_count,
        inst.task.patches_per_frame,
    )
    .unwrap();
    let mut rng = RngState::new(0);
    let (_, trace) = vts_forward(
        &mut tape,
        &batch,
        projected,
        query,
        &vts_nodes,
        &inst.cfg,
        &mut rng,
    )
    .unwrap();
    let mut keys: Vec<f64> = trace.scores_w.data().iter().map(|w| w.ln()).collect();
    keys.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (keys[trace.k - 1] - keys[trace.k]).abs()
}

fn check_instance(inst: &PipelineInstance) {
    let (mut tape, loss, leaves) = build(inst);
    tape.backward(loss).unwrap();
    for (name, node) in &leaves {
        let analytic = tape.grad(*node).unwrap().clone();
        let base = get_slot(inst, name);
        let f = |x: &Tensor| -> vtslab_core::Result<f64> {
            let mut probe = inst.clone();
            set_slot(&mut probe, name, x.clone());
            let (tape2, loss2, _) = build(&probe);
            tape2.value(loss2).item()
        };
        let numeric = fd_gradient(f, &base, DEFAULT_FD_STEP).unwrap();
        let err = max_rel_err(&analytic, &numeric).unwrap();
        assert!(err <= CHAIN_TOL, "slot {name}: rel err {err:.3e}");
    }
}

#[test]
fn full_soft_chain_matches_finite_differences() {
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 6 {
        seed += 1;
        let inst = make_pipeline(seed, false, true);
        if selection_gap(&inst) < 1e-3 {
            continue;
        }
        checked += 1;
        check_instance(&inst);
    }
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let mut checked = 0usize;
    let mut seed = 100u64;
    while checked < 3 {
        seed += 1;
        let inst = make_pipeline(seed, true, true);
        if selection_gap(&inst) < 1e-3 {
            continue;
        }
        checked += 1;
        check_instance(&inst);
    }
}

#[test]
fn positions_off_chain_matches_finite_differences() {
    let mut checked = 0usize;
    let mut seed = 200u64;
    while checked < 3 {
        seed += 1;
        let inst = make_pipeline(seed, false, false);
        if selection_gap(&inst) < 1e-3 {
            continue;
        }
        checked += 1;
        check_instance(&inst);
    }
}
