mod common;

use jointdrive::model::{Model, ModelConfig, Variant, PERCEPTION_PREFIX};
use jointdrive::raster::crop_vehicle_frame;
use jointdrive::loss::{loss_planning, loss_prediction};
use jointdrive::train::{sample_loss, Stage};
use jointdrive_numerics::{grad_check, Graph, ParamId, ParamStore, Tensor, Var, MASK_FILL};
use jointdrive_sim::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ out ⊙ w` for a fixed random `w`: a smooth scalar probe of any output.
fn probe(g: &mut Graph<'_>, out: Var, seed: u64) -> jointdrive_numerics::Result<Var> {
    let w = g.constant(random(&g.shape(out).to_vec(), seed));
    let y = g.mul(out, w)?;
    Ok(g.sum(y))
}

fn ids_with(store: &ParamStore, prefix: &str) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

fn assert_grads(store: &mut ParamStore, ids: &[ParamId], tol: f64, f: impl Fn(&mut Graph<'_>) -> jointdrive_numerics::Result<Var>) {
    assert!(!ids.is_empty());
    let report = grad_check(store, ids, 1e-6, tol, Some(6), 1.0, f).unwrap();
    assert!(report.max_rel_err < tol, "{report:?}");
}

fn crop_shape(cfg: &ModelConfig) -> [usize; 3] {
    [cfg.channels(), cfg.crop.size, cfg.crop.size]
}

#[test]
fn local_transformer_gradients() {
    let (mut store, model) = common::built(Variant::Full);
    common::wake_zero_layers(&mut store, 1);
    let local = model.local.clone().unwrap();
    let crop = random(&crop_shape(&model.config), 2);
    let ids = ids_with(&store, "local.");
    assert_grads(&mut store, &ids, 1e-3, |g| {
        let x = g.input(crop.clone());
        let (y, _) = local.forward(g, x).unwrap();
        probe(g, y, 3)
    });
}

#[test]
fn global_transformer_gradients() {
    let (mut store, model) = common::built(Variant::Full);
    common::wake_zero_layers(&mut store, 1);
    let global = model.global.clone().unwrap();
    let cfg = model.config.clone();
    let crops: Vec<Tensor> = (0..3).map(|k| random(&crop_shape(&cfg), 10 + k)).collect();
    let ids = ids_with(&store, "global.");
    assert_grads(&mut store, &ids, 1e-3, |g| {
        let fs: Vec<Var> = crops.iter().map(|c| g.input(c.clone())).collect();
        let mut tokens: Vec<Option<Var>> = fs.iter().map(|&f| Some(global.pool_flatten(g, f).unwrap())).collect();
        tokens.resize(cfg.max_vehicles, None);
        let valid: Vec<bool> = tokens.iter().map(Option::is_some).collect();
        let seq = global.sequence(g, &tokens).unwrap();
        let (enc, _) = global.encode(g, seq, &valid).unwrap();
        let fused = global.rebuild_fused(g, enc, &fs, &valid).unwrap();
        let cat = g.concat(&fused, 0)?;
        probe(g, cat, 4)
    });
}

#[test]
fn embedder_and_decoder_gradients() {
    let (mut store, model) = common::built(Variant::III);
    common::wake_zero_layers(&mut store, 1);
    let cfg = model.config.clone();
    let batch = random(&[2, cfg.channels(), cfg.crop.size, cfg.crop.size], 5);
    let mut ids = ids_with(&store, "embed.");
    ids.extend(ids_with(&store, "ego."));
    ids.extend(ids_with(&store, "refine."));
    ids.extend(ids_with(&store, "other."));
    assert_grads(&mut store, &ids, 1e-3, |g| {
        let x = g.input(batch.clone());
        let e = model.embed.forward(g, x).unwrap();
        let v0 = g.narrow(e, 0, 0, 1)?;
        let v1 = g.narrow(e, 0, 1, 1)?;
        let coarse = model.ego.forward(g, v0, 1, cfg.horizon).unwrap();
        let plan = model.refine.forward(g, coarse, Vec2::new(25.0, -4.0)).unwrap();
        let pred = model.other.forward(g, v1, cfg.horizon).unwrap();
        let a = probe(g, plan, 6)?;
        let b = probe(g, pred, 7)?;
        g.add(a, b)
    });
}

#[test]
fn perception_gradients() {
    let (mut store, model) = common::built(Variant::III);
    let grid = model.config.grid;
    let raster = random(&[grid.channels, 24, 24], 11);
    let ids = ids_with(&store, PERCEPTION_PREFIX);
    assert_grads(&mut store, &ids, 1e-3, |g| {
        let x = g.input(raster.clone());
        let f = model.perception.feature(g, x).unwrap();
        let logits = model.perception.seg_logits(g, f).unwrap();
        let a = probe(g, f, 12)?;
        let b = probe(g, logits, 13)?;
        g.add(a, b)
    });
}

/// Crops → local → global → decoders → waypoints → L1 losses, for every
/// parameter outside perception.
#[test]
fn full_pipeline_gradients() {
    let labels: Vec<Vec<Vec2>> = (0..4)
        .map(|v| (1..=10).map(|t| Vec2::new(t as f64 * (1.0 + v as f64 * 0.3), 0.2 * v as f64 - 0.1 * t as f64)).collect())
        .collect();
    for variant in [Variant::Full, Variant::II] {
        let (mut store, model) = common::built(variant);
        common::wake_zero_layers(&mut store, 2);
        let crops: Vec<Tensor> = (0..4).map(|k| random(&crop_shape(&model.config), 60 + k)).collect();
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| !p.name.starts_with(PERCEPTION_PREFIX))
            .map(|(id, _)| id)
            .collect();
        assert_grads(&mut store, &ids, 3e-3, |g| {
            let vars: Vec<Var> = crops.iter().map(|c| g.input(c.clone())).collect();
            let out = model.forward_from_crops(g, &vars, 2, Vec2::new(30.0, 5.0)).unwrap();
            let plan = loss_planning(g, out.plan, &labels[0]).unwrap();
            let pred = loss_prediction(g, &out.predictions, &labels[1..]).unwrap();
            g.add(plan, pred)
        });
    }
}

#[test]
fn default_architecture_dimensions() {
    let cfg = ModelConfig::default();
    assert_eq!((cfg.tokens(), cfg.local_layers, cfg.local_heads), (36, 6, 8));
    assert_eq!((cfg.global_layers, cfg.global_heads, cfg.max_vehicles), (6, 8, 10));
    let (store, model) = Model::build(cfg.clone(), 0).unwrap();
    let sample = common::busy_sample();
    let p = common::prepared(&sample, &cfg);
    let mut g = Graph::new(&store);
    let out = model.forward(&mut g, &p.input(), false).unwrap();
    let plan = &out.plan;
    assert_eq!(g.shape(plan.plan), &[10, 2]);
    assert_eq!(plan.local_attention.len(), 1 + p.others.len());
    for per_vehicle in &plan.local_attention {
        assert_eq!(per_vehicle.len(), 6);
        for &a in per_vehicle {
            assert_eq!(g.shape(a), &[1, 8, 36, 36]);
        }
    }
    assert_eq!(plan.global_attention.len(), 6);
    for &a in &plan.global_attention {
        assert_eq!(g.shape(a), &[1, 8, 10, 10]);
    }
    // One ego branch per behavior, one other-vehicle decoder.
    assert_eq!(model.ego.branches.len(), jointdrive_sim::HighLevelBehavior::ALL.len());
    assert_eq!(plan.predictions.len(), p.others.len());
}

#[test]
fn patch_tokens_only_see_their_own_patch() {
    let (store, model) = common::built(Variant::Full);
    let local = model.local.as_ref().unwrap();
    let cfg = &model.config;
    let base = random(&crop_shape(cfg), 8);
    let mut bumped = base.clone();
    // One cell inside patch (row 2, col 3) of the 6×6 grid.
    let p = cfg.patch();
    let (r, c) = (2 * p + 1, 3 * p + 2);
    bumped.data_mut()[(4 * cfg.crop.size + r) * cfg.crop.size + c] += 1.0;
    let mut g = Graph::new(&store);
    let a = g.input(base);
    let b = g.input(bumped);
    let ta = local.patchify(&mut g, a).unwrap();
    let tb = local.patchify(&mut g, b).unwrap();
    let d = cfg.d_model;
    let changed: Vec<usize> = (0..cfg.tokens())
        .filter(|&t| (0..d).any(|k| g.value(ta)[t * d + k] != g.value(tb)[t * d + k]))
        .collect();
    assert_eq!(changed, vec![2 * cfg.patch_grid + 3]);
}

#[test]
fn zero_initialised_rebuilds_are_identity_at_init() {
    let (store, model) = common::built(Variant::Full);
    let cfg = model.config.clone();
    let crops: Vec<Tensor> = (0..3).map(|k| random(&crop_shape(&cfg), 20 + k)).collect();
    let mut g = Graph::new(&store);
    let fs: Vec<Var> = crops.iter().map(|c| g.input(c.clone())).collect();
    let (y, _) = model.local.as_ref().unwrap().forward(&mut g, fs[0]).unwrap();
    assert_eq!(g.value(y), crops[0].data());

    let global = model.global.as_ref().unwrap();
    let mut tokens: Vec<Option<Var>> = fs.iter().map(|&f| Some(global.pool_flatten(&mut g, f).unwrap())).collect();
    tokens.resize(cfg.max_vehicles, None);
    let valid: Vec<bool> = tokens.iter().map(Option::is_some).collect();
    let seq = global.sequence(&mut g, &tokens).unwrap();
    let (enc, _) = global.encode(&mut g, seq, &valid).unwrap();
    let fused = global.rebuild_fused(&mut g, enc, &fs, &valid).unwrap();
    for (f, c) in fused.iter().zip(&crops) {
        assert_eq!(g.value(*f), c.data());
    }
}

/// Ego plan and predictions from explicit crops.
fn run(model: &Model, store: &ParamStore, crops: &[Tensor]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = crops.iter().map(|c| g.input(c.clone())).collect();
    let out = model.forward_from_crops(&mut g, &vars, 0, Vec2::new(30.0, 2.0)).unwrap();
    let preds = out.predictions.iter().map(|&p| g.value(p).to_vec()).collect();
    (g.value(out.plan).to_vec(), preds)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn padding_length_does_not_change_outputs() {
    let short_cfg = ModelConfig {
        max_vehicles: 5,
        ..ModelConfig::tiny()
    };
    let (mut long_store, long) = Model::build(ModelConfig::tiny(), 0).unwrap();
    let (mut short_store, short) = Model::build(short_cfg.clone(), 0).unwrap();
    common::wake_zero_layers(&mut long_store, 3);
    common::wake_zero_layers(&mut short_store, 3);
    let crops: Vec<Tensor> = (0..4).map(|k| random(&crop_shape(&short_cfg), 30 + k)).collect();
    let (pa, qa) = run(&long, &long_store, &crops);
    let (pb, qb) = run(&short, &short_store, &crops);
    assert!(max_diff(&pa, &pb) < 1e-9);
    for (a, b) in qa.iter().zip(&qb) {
        assert!(max_diff(a, b) < 1e-9);
    }
}

#[test]
fn permuting_other_vehicles_permutes_predictions_only() {
    let (mut store, model) = common::built(Variant::Full);
    common::wake_zero_layers(&mut store, 4);
    let crops: Vec<Tensor> = (0..5).map(|k| random(&crop_shape(&model.config), 40 + k)).collect();
    let order = [0, 3, 1, 4, 2];
    let permuted: Vec<Tensor> = order.iter().map(|&i| crops[i].clone()).collect();
    let (pa, qa) = run(&model, &store, &crops);
    let (pb, qb) = run(&model, &store, &permuted);
    assert!(max_diff(&pa, &pb) < 1e-9);
    for (slot, &i) in order.iter().enumerate().skip(1) {
        assert!(max_diff(&qb[slot - 1], &qa[i - 1]) < 1e-9);
    }
}

#[test]
fn masked_slots_cannot_influence_valid_ones() {
    let (mut store, model) = common::built(Variant::Full);
    common::wake_zero_layers(&mut store, 5);
    let global = model.global.as_ref().unwrap();
    let s = model.config.max_vehicles;
    let dg = model.config.d_global;
    let valid: Vec<bool> = (0..s).map(|i| i < 4).collect();
    let mut g = Graph::new(&store);
    let base = random(&[s, dg], 50);
    let mut mutated = base.clone();
    for v in &mut mutated.data_mut()[4 * dg..] {
        *v = *v * 1e3 + 7.0;
    }
    let a = g.input(base);
    let b = g.input(mutated);
    let (ea, _) = global.encode(&mut g, a, &valid).unwrap();
    let (eb, _) = global.encode(&mut g, b, &valid).unwrap();
    assert!(max_diff(&g.value(ea)[..4 * dg], &g.value(eb)[..4 * dg]) < 1e-9);
    assert!(MASK_FILL < -1e8);
}

#[test]
fn only_the_commanded_branch_receives_gradient() {
    let (mut store, model) = common::built(Variant::III);
    common::wake_zero_layers(&mut store, 6);
    let sample = common::busy_sample();
    let p = common::prepared(&sample, &model.config);
    let mut g = Graph::new(&store);
    let (loss, _) = sample_loss(&model, &mut g, &p, Stage::Joint, 1.0).unwrap();
    let grads = g.backward(loss).unwrap().into_params();
    let commanded = format!("ego.{}.", sample.behavior.name());
    let mut seen = 0;
    for (id, param) in store.iter() {
        if !param.name.starts_with("ego.") {
            continue;
        }
        let nonzero = grads.get(id).is_some_and(|d| d.iter().any(|&v| v != 0.0));
        assert_eq!(nonzero, param.name.starts_with(&commanded), "{}", param.name);
        seen += nonzero as usize;
    }
    assert!(seen > 0);
}

#[test]
fn per_vehicle_modules_share_one_parameter_set() {
    let (store, model) = common::built(Variant::Full);
    let sample = common::busy_sample();
    let p = common::prepared(&sample, &model.config);
    assert!(p.others.len() >= 2);
    let mut g = Graph::new(&store);
    let out = model.forward(&mut g, &p.input(), false).unwrap();
    let usage = &out.plan.usage;
    assert_eq!(usage.local.len(), 1 + p.others.len());
    assert!(usage.local.iter().all(|u| u == &usage.local[0]));
    assert!(usage.local[0].iter().all(|&id| store.get(id).name.starts_with("local.")));
    assert_eq!(usage.other_decoder.len(), p.others.len());
    assert!(usage.other_decoder.iter().all(|u| u == &usage.other_decoder[0]));
    assert!(!usage.other_decoder[0].is_empty());
    assert!(usage.other_decoder[0].iter().all(|&id| store.get(id).name.starts_with("other.")));
}

#[test]
fn without_local_attention_other_crops_cannot_reach_the_plan() {
    let (mut store, model) = common::built(Variant::II);
    common::wake_zero_layers(&mut store, 7);
    let sample = common::busy_sample();
    let p = common::prepared(&sample, &model.config);
    let mut g = Graph::new(&store);
    let out = model.forward(&mut g, &p.input(), false).unwrap();
    let loss = probe(&mut g, out.plan.plan, 9).unwrap();
    let back = g.backward(loss).unwrap();
    for &crop in &out.crops[1..] {
        assert!(back.wrt(crop).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
    }
    assert!(back.wrt(out.crops[0]).is_some_and(|d| d.iter().any(|&v| v != 0.0)));
}

#[test]
fn variants_share_common_initial_weights() {
    let (full, _) = common::built(Variant::Full);
    let (bare, _) = common::built(Variant::III);
    assert!(bare.len() < full.len());
    for (_, p) in bare.iter() {
        let q = full.get(full.id(&p.name).unwrap());
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn vehicle_frame_crop_feeds_every_vehicle() {
    // The crops the model builds match a direct call for each selected vehicle.
    let (store, model) = common::built(Variant::III);
    let sample = common::busy_sample();
    let p = common::prepared(&sample, &model.config);
    let mut g = Graph::new(&store);
    let out = model.forward(&mut g, &p.input(), false).unwrap();
    for (k, pose) in p.others.iter().enumerate() {
        let direct = crop_vehicle_frame(&mut g, out.feature, &model.config.grid, &model.config.crop, pose).unwrap();
        assert_eq!(g.value(direct), g.value(out.crops[k + 1]));
    }
}
