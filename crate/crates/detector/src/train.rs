//! Training loops for both stages.
//!
//! Every random choice is drawn from a generator seeded by
//! [`TrainConfig::seed`], and gradients from parallel replicas are merged in
//! a fixed order, so a run is reproducible bit for bit in either execution
//! mode.

use std::fmt::Write as _;

use bevclick_core::geometry::{Cuboid, CylinderProposal, Frame, Point, PointCloud};
use bevclick_core::kitti::ClickAnnotation;
use bevclick_core::par::{self, Execution};
use bevclick_core::weak::{encode_center, pseudo_foreground_field, support_assignments, CenterTarget};
use bevclick_nn::{AdamState, Gradients, Graph, ParamSet, PointSet, Tensor};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_proposal, augment_scene, ProposalAugmentConfig, SceneAugmentConfig};
use crate::codec::BoxCodec;
use crate::config::{ClassProfile, DetectorConfig};
use crate::crop::{cuboid_points, proposal_points, FeatureBlock};
use crate::losses::{bin_loss, box_loss, confidence_loss, seg_loss};
use crate::proposals::generate_proposals;
use crate::stage1::{point_features, resample_indices, stage1_forward, Stage1Model};
use crate::stage2::{Stage2Model, Stage2Models};
use crate::DetectorError;

/// Stage-2 samples per graph; fixed so results do not depend on threads.
const STAGE2_CHUNK: usize = 16;

/// One training scene: points, clicks for every object, and the precise
/// cuboids available for a subset of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainScene {
    pub id: String,
    pub cloud: PointCloud,
    pub clicks: Vec<ClickAnnotation>,
    pub instances: Vec<Cuboid>,
}

/// Per-iteration loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLog {
    pub names: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl LossLog {
    pub fn new(names: &[&'static str]) -> Self {
        Self {
            names: names.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn component(&self, name: &str) -> Vec<f64> {
        let k = self.names.iter().position(|n| *n == name).expect("known loss component");
        self.rows.iter().map(|r| r[k]).collect()
    }

    /// Trailing moving average of `name` over `window` iterations.
    pub fn smoothed(&self, name: &str, window: usize) -> Vec<f64> {
        let v = self.component(name);
        let mut out = Vec::with_capacity(v.len());
        let mut sum = 0.0;
        for i in 0..v.len() {
            sum += v[i];
            if i >= window {
                sum -= v[i - window];
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }

    /// One line per `every` iterations: the iteration count followed by the
    /// mean of each component over that window. Starts with a `#` header.
    pub fn records(&self, every: usize) -> String {
        let mut s = format!("# iter {}\n", self.names.join(" "));
        for (w, chunk) in self.rows.chunks(every.max(1)).enumerate() {
            if chunk.len() < every && w > 0 {
                break;
            }
            let _ = write!(s, "{}", w * every + chunk.len());
            for k in 0..self.names.len() {
                let m = chunk.iter().map(|r| r[k]).sum::<f64>() / chunk.len() as f64;
                let _ = write!(s, " {m:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Run `step` on every item and sum component vectors and gradients in
/// item order.
fn batch_step<T, F>(exec: Execution, params: &ParamSet, items: &[T], width: usize, step: F) -> Result<(Vec<f64>, Gradients), DetectorError>
where
    T: Sync,
    F: Fn(&mut Graph<'_>, &T) -> Result<(Vec<f64>, Gradients), DetectorError> + Sync + Send,
{
    let results = par::map(exec, items, |item| {
        let mut g = Graph::new(params);
        step(&mut g, item)
    });
    let mut comps = vec![0.0; width];
    let mut grads = Gradients::zeros_like(params);
    for r in results {
        let (c, g) = r?;
        for (a, b) in comps.iter_mut().zip(c) {
            *a += b;
        }
        grads.merge(&g);
    }
    Ok((comps, grads))
}

fn apply_update(params: &mut ParamSet, adam: &mut AdamState, grads: &Gradients, clip: Option<f64>) {
    params.zero_grad();
    params.accumulate(grads);
    if let Some(c) = clip {
        params.clip_grad_norm(c);
    }
    adam.step(params);
}

/// A resampled scene with its pseudo labels.
struct Stage1Sample {
    points: Vec<Point>,
    fg: Vec<f64>,
    support: Vec<(usize, CenterTarget)>,
}

fn prepare_stage1(scene: &TrainScene, cfg: &DetectorConfig, seed: u64) -> Stage1Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cloud, clicks) = if cfg.train.augment {
        let aug = SceneAugmentConfig {
            radius: cfg.profile.proposal_radius,
            ..SceneAugmentConfig::default()
        };
        augment_scene(&scene.cloud, &scene.clicks, &aug, &mut rng)
    } else {
        (scene.cloud.clone(), scene.clicks.clone())
    };
    let idx = resample_indices(cloud.len(), cfg.stage1.num_points, &mut rng);
    let points: PointCloud = idx.iter().map(|&i| cloud.points[i]).collect();
    let pseudo = &cfg.profile.pseudo;
    let fg = pseudo_foreground_field(&points, &clicks, pseudo);
    let support = support_assignments(&points, &clicks, &fg, pseudo)
        .into_iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|k| (i, encode_center(&points.points[i], &clicks[k], &cfg.stage1.bins))))
        .collect();
    Stage1Sample {
        points: points.points,
        fg,
        support,
    }
}

/// Losses `[seg, center, total]` of one scene and the gradients of
/// `total * scale`.
fn stage1_loss(g: &mut Graph<'_>, model: &Stage1Model, s: &Stage1Sample, cfg: &DetectorConfig, scale: f64) -> Result<(Vec<f64>, Gradients), DetectorError> {
    let set = PointSet::single(s.points.iter().map(Point::xyz).collect());
    let feats = g.input(point_features(&s.points));
    let (fg, center) = model.net.forward(g, &set, feats)?;
    let n = s.points.len();
    let (seg, dseg) = seg_loss(&g.value(fg).data, &s.fg, &cfg.loss);
    let nb = cfg.stage1.bins.num_bins;
    let width = cfg.stage1.center_outputs();
    let mut dcenter = Tensor::zeros(n, width);
    let mut center_loss = 0.0;
    if !s.support.is_empty() {
        let m = s.support.len() as f64;
        let w = cfg.loss.center_weight * scale / m;
        let cv = g.value(center);
        for (i, t) in &s.support {
            let (l, d) = bin_loss(cv.row(*i), &[(t.bin_x, t.res_x), (t.bin_z, t.res_z)], nb, cfg.loss.smooth_l1_beta);
            center_loss += l / m;
            for (o, v) in dcenter.row_mut(*i).iter_mut().zip(d) {
                *o = v * w;
            }
        }
    }
    let dseg = Tensor::from_vec(n, 1, dseg.into_iter().map(|v| v * scale).collect());
    let grads = g.backward(&[(fg, &dseg), (center, &dcenter)])?;
    let total = seg + cfg.loss.center_weight * center_loss;
    Ok((vec![seg, center_loss, total], grads))
}

/// Train stage 1 on `scenes` with `seg + λ·center` per scene.
pub fn train_stage1(scenes: &[TrainScene], cfg: &DetectorConfig) -> Result<(Stage1Model, LossLog), DetectorError> {
    cfg.train.validate()?;
    if scenes.iter().all(|s| s.cloud.is_empty()) {
        return Err(DetectorError::EmptyDataset("no scene has points".into()));
    }
    let scenes: Vec<&TrainScene> = scenes.iter().filter(|s| !s.cloud.is_empty()).collect();
    let t = &cfg.train;
    let mut model = Stage1Model::new(&cfg.stage1, t.seed)?;
    let mut adam = AdamState::new(&model.params, t.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x5151);
    let mut log = LossLog::new(&["seg", "center", "total"]);
    let b = t.stage1_batch.min(scenes.len());
    for it in 0..t.stage1_iterations {
        let picks: Vec<(usize, u64)> = if b == scenes.len() {
            (0..b).map(|i| (i, rng.random())).collect()
        } else {
            let mut p = index::sample(&mut rng, scenes.len(), b).into_vec();
            p.sort_unstable();
            p.into_iter().map(|i| (i, rng.random())).collect()
        };
        let samples = par::map(t.exec, &picks, |&(i, seed)| prepare_stage1(scenes[i], cfg, seed));
        let scale = 1.0 / b as f64;
        let (comps, grads) = batch_step(t.exec, &model.params, &samples, 3, |g, s| stage1_loss(g, &model, s, cfg, scale))?;
        apply_update(&mut model.params, &mut adam, &grads, t.grad_clip);
        let row: Vec<f64> = comps.iter().map(|c| c * scale).collect();
        if (it + 1) % t.log_every == 0 {
            log::info!("stage1 iter {} seg {:.5} center {:.5} total {:.5}", it + 1, row[0], row[1], row[2]);
        }
        log.rows.push(row);
    }
    Ok((model, log))
}

/// Where the foreground channel of a stage-2 crop comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum FgSource {
    Stage1,
    /// Pseudo labels around a click at `(x, z)`.
    Click(f64, f64),
}

/// A stage-2 training sample: a crop, its frame, and the instance it covers.
#[derive(Debug, Clone)]
struct Stage2Sample {
    scene: usize,
    fg: FgSource,
    /// Every point of the crop; each training step draws its own subset.
    block: FeatureBlock,
    frame: Frame,
    /// Instance in the world frame; `None` for background samples.
    target: Option<Cuboid>,
}

impl Stage2Sample {
    fn local_target(&self) -> Option<Cuboid> {
        self.target.map(|t| self.frame.cuboid_to_local(&t))
    }
}

/// Per-scene data reused across stage-2 pools.
struct SceneCache {
    fg: Vec<f64>,
}

fn fg_values(cache: &[SceneCache], scenes: &[TrainScene], s: usize, src: FgSource, cfg: &DetectorConfig) -> Vec<f64> {
    match src {
        FgSource::Stage1 => cache[s].fg.clone(),
        FgSource::Click(x, z) => pseudo_foreground_field(&scenes[s].cloud, &[ClickAnnotation::new(cfg.profile.class.name(), x, z)], &cfg.profile.pseudo),
    }
}

fn nearest(x: f64, z: f64, centers: impl Iterator<Item = (f64, f64)>) -> Option<(usize, f64)> {
    centers
        .enumerate()
        .map(|(k, (cx, cz))| (k, ((cx - x).powi(2) + (cz - z).powi(2)).sqrt()))
        .fold(None, |best, (k, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((k, d)),
        })
}

/// Proposal indices usable for stage-2 training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalSelection {
    /// `(proposal, instance)` pairs closer than the match distance.
    pub positives: Vec<(usize, usize)>,
    /// Proposals farther than the background distance from every click.
    pub background: Vec<usize>,
}

/// Split proposals into positives, matched to their nearest instance by
/// BEV center distance, and background. Proposals near an object that has
/// only a click are neither.
pub fn select_training_proposals(props: &[CylinderProposal], instances: &[Cuboid], clicks: &[ClickAnnotation], profile: &ClassProfile) -> ProposalSelection {
    let mut positives = Vec::new();
    let mut background = Vec::new();
    for (k, p) in props.iter().enumerate() {
        if let Some((j, d)) = nearest(p.cx, p.cz, instances.iter().map(|b| (b.cx, b.cz))) {
            if d < profile.gt_match_distance {
                positives.push((k, j));
                continue;
            }
        }
        let click = nearest(p.cx, p.cz, clicks.iter().map(|c| (c.x, c.z)));
        if click.is_none_or(|(_, d)| d > profile.background_distance) {
            background.push(k);
        }
    }
    ProposalSelection { positives, background }
}

/// Sampled positive and background crops of one scene.
fn scene_pool(scenes: &[TrainScene], cache: &[SceneCache], s: usize, props: &[CylinderProposal], cfg: &DetectorConfig, seed: u64) -> Result<Vec<Stage2Sample>, DetectorError> {
    let scene = &scenes[s];
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sel = select_training_proposals(props, &scene.instances, &scene.clicks, &cfg.profile);
    let mut per_instance: Vec<Vec<usize>> = vec![Vec::new(); scene.instances.len()];
    for (k, j) in sel.positives {
        per_instance[j].push(k);
    }
    let background = sel.background;
    let mut chosen: Vec<(usize, Option<Cuboid>)> = Vec::new();
    for (j, ks) in per_instance.iter().enumerate() {
        let take = ks.len().min(t.positives_per_instance);
        for i in index::sample(&mut rng, ks.len(), take) {
            chosen.push((ks[i], Some(scene.instances[j])));
        }
    }
    let positives = chosen.len();
    let want = ((positives.max(4) as f64) * t.background_ratio).ceil() as usize;
    let take = background.len().min(want);
    for i in index::sample(&mut rng, background.len(), take) {
        chosen.push((background[i], None));
    }
    let mut out = Vec::with_capacity(chosen.len());
    for (k, target) in chosen {
        let p = &props[k];
        // Half of the positives see click pseudo labels instead of stage-1
        // scores, matching what active annotation feeds the networks.
        let src = if target.is_some() && rng.random_bool(0.5) { FgSource::Click(p.cx, p.cz) } else { FgSource::Stage1 };
        let fg = fg_values(cache, scenes, s, src, cfg);
        match proposal_points(&scene.cloud, &fg, p) {
            Ok((block, frame)) => out.push(Stage2Sample {
                scene: s,
                fg: src,
                block,
                frame,
                target,
            }),
            Err(DetectorError::EmptyProposal) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Stage-1 scores and proposals for every scene, then the stage-2 pool.
fn build_pool(scenes: &[TrainScene], stage1: &Stage1Model, cfg: &DetectorConfig) -> Result<(Vec<SceneCache>, Vec<Stage2Sample>), DetectorError> {
    let exec = cfg.train.exec;
    let seed = cfg.train.seed;
    let outs = par::map_range(exec, scenes.len(), |s| -> Result<(SceneCache, Vec<CylinderProposal>), DetectorError> {
        if scenes[s].cloud.is_empty() {
            return Ok((SceneCache { fg: Vec::new() }, Vec::new()));
        }
        let out = stage1_forward(stage1, &scenes[s].cloud, seed ^ (s as u64))?;
        let props = generate_proposals(&out, &cfg.stage1, &cfg.profile);
        Ok((SceneCache { fg: out.scene_scores(&scenes[s].cloud) }, props))
    });
    let mut cache = Vec::with_capacity(scenes.len());
    let mut props = Vec::with_capacity(scenes.len());
    for r in outs {
        let (c, p) = r?;
        cache.push(c);
        props.push(p);
    }
    let pools = par::map_range(exec, scenes.len(), |s| scene_pool(scenes, &cache, s, &props[s], cfg, seed ^ 0xA5A5 ^ ((s as u64) << 8)));
    let mut pool = Vec::new();
    for p in pools {
        pool.extend(p?);
    }
    Ok((cache, pool))
}

/// Sample indices for one batch.
fn draw_batch<R: Rng>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    if b >= n {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        v
    } else {
        index::sample(rng, n, b).into_vec()
    }
}

/// A sample after augmentation, ready for a forward pass.
struct Prepared {
    block: FeatureBlock,
    target: Option<Cuboid>,
}

fn prepare_stage2(s: &Stage2Sample, num_points: usize, augment: Option<&ProposalAugmentConfig>, seed: u64) -> Prepared {
    let local = s.local_target();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = s.block.resampled(num_points, &mut rng);
    match augment {
        Some(a) => {
            let (block, target) = augment_proposal(&block, local.as_ref(), a, &mut rng);
            Prepared { block, target }
        }
        None => Prepared { block, target: local },
    }
}

/// Losses of a chunk of stage-2 samples and the gradients of
/// `scale · Σ loss`. With `confidence`, background samples supervise only
/// the confidence head; without it they are skipped.
fn stage2_loss(g: &mut Graph<'_>, model: &Stage2Model, items: &[Prepared], codec: &BoxCodec, cfg: &DetectorConfig, confidence: bool, scale: f64) -> Result<(Vec<f64>, Gradients), DetectorError> {
    let blocks: Vec<&FeatureBlock> = items.iter().map(|p| &p.block).collect();
    let (boxes, conf) = model.net.forward(g, &blocks)?;
    let width = codec.outputs();
    let mut dbox = Tensor::zeros(items.len(), width);
    let mut dconf = Tensor::zeros(items.len(), 1);
    let (mut box_sum, mut conf_sum) = (0.0, 0.0);
    let bv = g.value(boxes);
    let cv = g.value(conf);
    for (i, item) in items.iter().enumerate() {
        if let Some(t) = &item.target {
            let (l, d) = box_loss(bv.row(i), &codec.encode(t), &cfg.loss);
            box_sum += l;
            for (o, v) in dbox.row_mut(i).iter_mut().zip(d) {
                *o = v * scale;
            }
        }
        if confidence {
            let pred = codec.decode(bv.row(i));
            let gts: Vec<Cuboid> = item.target.into_iter().collect();
            let (l, d) = confidence_loss(cv.data[i], &pred, &gts, &cfg.loss);
            conf_sum += l;
            dconf.data[i] = d * scale;
        }
    }
    let seeds: Vec<(bevclick_nn::NodeId, &Tensor)> = if confidence { vec![(boxes, &dbox), (conf, &dconf)] } else { vec![(boxes, &dbox)] };
    let grads = g.backward(&seeds)?;
    Ok((vec![box_sum, conf_sum, box_sum + conf_sum], grads))
}

fn train_stage2_net(
    model: &mut Stage2Model,
    pool: &[Stage2Sample],
    codec: &BoxCodec,
    cfg: &DetectorConfig,
    confidence: bool,
    seed: u64,
    tag: &str,
) -> Result<LossLog, DetectorError> {
    let t = &cfg.train;
    let augment = if confidence { ProposalAugmentConfig::refine() } else { ProposalAugmentConfig::default() };
    let augment = t.augment.then_some(&augment);
    let mut adam = AdamState::new(&model.params, t.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = LossLog::new(&["box", "conf", "total"]);
    let b = t.stage2_batch.min(pool.len());
    for it in 0..t.stage2_iterations {
        let picks: Vec<(usize, u64)> = draw_batch(&mut rng, pool.len(), b).into_iter().map(|i| (i, rng.random())).collect();
        let prepared = par::map(t.exec, &picks, |&(i, s)| prepare_stage2(&pool[i], cfg.stage2.num_points, augment, s));
        let chunks: Vec<&[Prepared]> = prepared.chunks(STAGE2_CHUNK).collect();
        let scale = 1.0 / b as f64;
        let (comps, grads) = batch_step(t.exec, &model.params, &chunks, 3, |g, c| stage2_loss(g, model, c, codec, cfg, confidence, scale))?;
        apply_update(&mut model.params, &mut adam, &grads, t.grad_clip);
        let row: Vec<f64> = comps.iter().map(|c| c * scale).collect();
        if (it + 1) % t.log_every == 0 {
            log::info!("{tag} iter {} box {:.5} conf {:.5} total {:.5}", it + 1, row[0], row[1], row[2]);
        }
        log.rows.push(row);
    }
    Ok(log)
}

/// Crop every pool sample around the initial network's cuboid.
fn refine_pool(scenes: &[TrainScene], cache: &[SceneCache], pool: &[Stage2Sample], models: &Stage2Models, cfg: &DetectorConfig) -> Result<Vec<Stage2Sample>, DetectorError> {
    let exec = cfg.train.exec;
    let seed = cfg.train.seed;
    let sampled: Vec<FeatureBlock> = par::map_range(exec, pool.len(), |k| pool[k].block.resampled(cfg.stage2.num_points, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x3C3C ^ ((k as u64) << 16))));
    let preds = models.initial.predict(&sampled.iter().collect::<Vec<_>>())?;
    let out = par::map_range(exec, pool.len(), |k| -> Result<Option<Stage2Sample>, DetectorError> {
        let s = &pool[k];
        let cuboid = s.frame.cuboid_to_world(&models.codec.decode(&preds[k].0));
        let fg = fg_values(cache, scenes, s.scene, s.fg, cfg);
        match cuboid_points(&scenes[s.scene].cloud, &fg, &cuboid, cfg.stage2.crop_margin) {
            Ok((block, frame)) => Ok(Some(Stage2Sample {
                scene: s.scene,
                fg: s.fg,
                block,
                frame,
                target: s.target,
            })),
            Err(DetectorError::EmptyProposal) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut v = Vec::new();
    for r in out {
        if let Some(s) = r? {
            v.push(s);
        }
    }
    Ok(v)
}

/// Losses of the two stage-2 networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Logs {
    pub initial: LossLog,
    pub refine: LossLog,
    pub positives: usize,
    pub background: usize,
}

/// Train the initial network on stage-1 proposals matched to instances,
/// then the refinement network on crops around the initial network's
/// cuboids.
pub fn train_stage2(scenes: &[TrainScene], stage1: &Stage1Model, cfg: &DetectorConfig) -> Result<(Stage2Models, Stage2Logs), DetectorError> {
    cfg.train.validate()?;
    let (cache, pool) = build_pool(scenes, stage1, cfg)?;
    let positives: Vec<Stage2Sample> = pool.iter().filter(|s| s.target.is_some()).cloned().collect();
    if positives.is_empty() {
        return Err(DetectorError::EmptyDataset("no stage-1 proposal lies near a labeled instance".into()));
    }
    log::info!("stage2 pool: {} positives, {} background", positives.len(), pool.len() - positives.len());
    let codec = BoxCodec::new(&cfg.loss, cfg.profile.anchor);
    let mut models = Stage2Models::new(&cfg.stage2, codec, cfg.train.seed)?;
    let initial = train_stage2_net(&mut models.initial, &positives, &codec, cfg, false, cfg.train.seed ^ 0x1111, "stage2-initial")?;
    let rpool = refine_pool(scenes, &cache, &pool, &models, cfg)?;
    let refine = train_stage2_net(&mut models.refine, &rpool, &codec, cfg, true, cfg.train.seed ^ 0x2222, "stage2-refine")?;
    Ok((
        models,
        Stage2Logs {
            initial,
            refine,
            positives: positives.len(),
            background: pool.len() - positives.len(),
        },
    ))
}

/// Train the initial and refinement networks directly on given proposals,
/// each paired with its instance. Used for overfit checks.
pub fn train_stage2_on(
    scenes: &[TrainScene],
    fg: &[Vec<f64>],
    proposals: &[(usize, CylinderProposal, Cuboid)],
    cfg: &DetectorConfig,
) -> Result<(Stage2Models, Stage2Logs), DetectorError> {
    let cache: Vec<SceneCache> = fg.iter().map(|f| SceneCache { fg: f.clone() }).collect();
    let mut pool = Vec::new();
    for &(s, p, target) in proposals {
        let (block, frame) = proposal_points(&scenes[s].cloud, &cache[s].fg, &p)?;
        pool.push(Stage2Sample {
            scene: s,
            fg: FgSource::Stage1,
            block,
            frame,
            target: Some(target),
        });
    }
    let codec = BoxCodec::new(&cfg.loss, cfg.profile.anchor);
    let mut models = Stage2Models::new(&cfg.stage2, codec, cfg.train.seed)?;
    let initial = train_stage2_net(&mut models.initial, &pool, &codec, cfg, false, cfg.train.seed ^ 0x1111, "stage2-initial")?;
    let rpool = refine_pool(scenes, &cache, &pool, &models, cfg)?;
    let refine = train_stage2_net(&mut models.refine, &rpool, &codec, cfg, true, cfg.train.seed ^ 0x2222, "stage2-refine")?;
    Ok((
        models,
        Stage2Logs {
            initial,
            refine,
            positives: pool.len(),
            background: 0,
        },
    ))
}
