//! First-order MAML over a fixed-width any-way head.
//!
//! Each episode draws a [`Routing`] that maps the task's numeric labels onto
//! output nodes: a set of disjoint assignments in any-way mode, or a single
//! label-to-node permutation of a head exactly `N` wide in fixed-way mode.
//! The same routing serves the inner loop, the outer loss and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{
    accuracy, any_way_loss, ensembled_logit, extract_rows, predict, random_permutation, AssignmentSet,
    EnsembleMethod,
};
use crate::episodes::{batch_tasks, sample_task, EpisodeSpec, MotherDataset, Task};
use crate::error::{Error, Result};
use crate::metrics::{stall_detect, CurvePoint, EvalSummary};
use crate::nn::{
    self, one_hot, sgd_step, softmax_cross_entropy, GradientSet, LinearHead, Matrix, MlpEncoder, Parameters,
};
use crate::rng::{domain, stream};
use crate::semantic::{combine_losses, mixup_batch, semantic_loss, SemanticConfig};

/// Encoder, any-way head `g_a` (width `O`) and optional semantic head `g_s` (width `C`).
#[derive(Clone, Debug, PartialEq)]
pub struct MetaModel {
    pub encoder: MlpEncoder,
    pub anyway_head: LinearHead,
    pub semantic_head: Option<LinearHead>,
}

impl MetaModel {
    /// Heads are initialized from `rng` after the encoder, any-way head first,
    /// so adding a semantic head leaves the other initial weights unchanged.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        final_activation: bool,
        width: usize,
        semantic_classes: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = MlpEncoder::new(layer_dims, final_activation, rng)?;
        let f = encoder.feature_dim();
        let anyway_head = LinearHead::new(f, width, rng)?;
        let semantic_head = semantic_classes.map(|c| LinearHead::new(f, c, rng)).transpose()?;
        Self::from_parts(encoder, anyway_head, semantic_head)
    }

    pub fn from_parts(encoder: MlpEncoder, anyway_head: LinearHead, semantic_head: Option<LinearHead>) -> Result<Self> {
        let f = encoder.feature_dim();
        for head in std::iter::once(&anyway_head).chain(semantic_head.as_ref()) {
            if head.in_dim() != f {
                return Err(Error::dim("MetaModel heads", f, head.in_dim()));
            }
        }
        Ok(Self {
            encoder,
            anyway_head,
            semantic_head,
        })
    }

    /// Output width `O`.
    pub fn width(&self) -> usize {
        self.anyway_head.out_dim()
    }

    pub fn semantic_classes(&self) -> Option<usize> {
        self.semantic_head.as_ref().map(LinearHead::out_dim)
    }

    fn encoder_block_count(&self) -> usize {
        self.encoder.param_blocks().len()
    }

    /// Lays encoder+head gradients and optional semantic-head gradients out in block order.
    fn assemble(&self, main: GradientSet, semantic: Option<GradientSet>) -> GradientSet {
        let mut out = main;
        if let Some(head) = &self.semantic_head {
            match semantic {
                Some(s) => out.blocks.extend(s.blocks),
                None => out.blocks.extend(head.param_blocks().iter().map(|b| vec![0.0; b.len()])),
            }
        }
        out
    }
}

impl Parameters for MetaModel {
    fn param_blocks(&self) -> Vec<&[f64]> {
        let mut b = self.encoder.param_blocks();
        b.extend(self.anyway_head.param_blocks());
        if let Some(h) = &self.semantic_head {
            b.extend(h.param_blocks());
        }
        b
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.encoder.param_blocks_mut();
        b.extend(self.anyway_head.param_blocks_mut());
        if let Some(h) = &mut self.semantic_head {
            b.extend(h.param_blocks_mut());
        }
        b
    }

    fn block_names(&self) -> Vec<String> {
        let mut n = self.encoder.block_names();
        n.extend(["anyway_head.w".to_string(), "anyway_head.b".to_string()]);
        if self.semantic_head.is_some() {
            n.extend(["semantic_head.w".to_string(), "semantic_head.b".to_string()]);
        }
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    AnyWay,
    Fixed,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AnyWay => "anyway",
            Self::Fixed => "fixed",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "anyway" => Ok(Self::AnyWay),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected anyway or fixed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerConfig {
    pub steps: usize,
    pub lr: f64,
    /// Include the routed task loss in the inner loop. Only switched off to
    /// isolate the semantic head.
    pub task_loss: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            lr: 0.5,
            task_loss: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterConfig {
    pub lr: f64,
    /// Number of outer iterations.
    pub episodes: usize,
    /// Tasks per outer iteration.
    pub meta_batch: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            episodes: 2000,
            meta_batch: 4,
        }
    }
}

fn check_rate(name: &str, lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("{name} must be a finite value >= 0, got {lr}")));
    }
    Ok(())
}

/// How one episode's numeric labels reach the output nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum Routing {
    AnyWay(AssignmentSet),
    /// Label `i` is node `label_to_node[i - 1]`; the head is exactly `N` wide.
    Fixed(Vec<usize>),
}

impl Routing {
    pub fn draw<R: Rng + ?Sized>(mode: TrainMode, width: usize, n: usize, rng: &mut R) -> Result<Self> {
        match mode {
            TrainMode::AnyWay => Ok(Self::AnyWay(AssignmentSet::generate(width, n, rng)?)),
            TrainMode::Fixed => {
                if n != width {
                    return Err(Error::Config(format!(
                        "fixed-way head of width {width} cannot serve a {n}-way task"
                    )));
                }
                Ok(Self::Fixed(random_permutation(n, rng)))
            }
        }
    }

    pub fn cardinality(&self) -> usize {
        match self {
            Self::AnyWay(a) => a.cardinality(),
            Self::Fixed(map) => map.len(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::AnyWay(a) => a.width(),
            Self::Fixed(map) => map.len(),
        }
    }

    /// Routed cross-entropy and its gradient on the full logit matrix.
    pub fn loss(&self, logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            Self::AnyWay(a) => any_way_loss(a, logits, targets),
            Self::Fixed(map) => {
                if logits.cols() != map.len() || targets.shape() != logits.shape() {
                    return Err(Error::dim(
                        "fixed-way loss",
                        format!("({}, {})", logits.rows(), map.len()),
                        format!("logits {:?}, targets {:?}", logits.shape(), targets.shape()),
                    ));
                }
                // move targets onto nodes rather than logits onto labels
                let mut placed = Matrix::zeros(targets.rows(), map.len());
                for r in 0..targets.rows() {
                    for (i, &node) in map.iter().enumerate() {
                        placed.set(r, node - 1, targets.get(r, i));
                    }
                }
                softmax_cross_entropy(logits, &placed)
            }
        }
    }

    /// Per-label scores used for prediction.
    pub fn scores(&self, logits: &Matrix, method: EnsembleMethod) -> Result<Matrix> {
        match self {
            Self::AnyWay(a) => ensembled_logit(a, logits, method),
            Self::Fixed(map) => extract_rows(map, logits),
        }
    }
}

/// A task turned into training tensors under a specific routing.
#[derive(Clone, Debug)]
pub struct Episode {
    /// Cardinality of the underlying task (without mixup labels).
    pub n: usize,
    pub routing: Routing,
    pub support_x: Matrix,
    pub support_targets: Matrix,
    pub support_semantic: Option<Matrix>,
    pub query_x: Matrix,
    pub query_labels: Vec<usize>,
    pub query_targets: Matrix,
    pub query_semantic: Option<Matrix>,
}

impl Episode {
    /// Builds the episode tensors. With mixup enabled, blended samples join
    /// the support set under extra numeric labels and the routing is drawn
    /// for the enlarged cardinality.
    pub fn prepare<R: Rng + ?Sized>(
        task: &Task,
        mode: TrainMode,
        width: usize,
        semantic: Option<&SemanticConfig>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut support_x = task.support.x.clone();
        let mut support_labels = task.support.labels.clone();
        let mut cardinality = task.n;
        let mut support_semantic = None;
        let mut query_semantic = None;

        if let Some(cfg) = semantic {
            let mut sem = one_hot(&task.semantic_labels(&task.support), cfg.classes)?;
            query_semantic = Some(one_hot(&task.semantic_labels(&task.query), cfg.classes)?);
            if cfg.mixup {
                let shots = task.support.len() / task.n;
                let count = cfg.mix_count.unwrap_or(shots);
                if let Some(batch) = mixup_batch(task, cfg.classes, count, cfg.beta_alpha, cfg.mix_labels, rng)? {
                    support_x = Matrix::vstack(&[&support_x, &batch.inputs])?;
                    support_labels.extend(&batch.numeric_labels);
                    sem = Matrix::vstack(&[&sem, &batch.semantic_targets])?;
                    cardinality = batch.cardinality;
                }
            }
            support_semantic = Some(sem);
        }

        let routing = Routing::draw(mode, width, cardinality, rng)?;
        Ok(Self {
            n: task.n,
            routing,
            support_targets: one_hot(&support_labels, cardinality)?,
            support_x,
            support_semantic,
            query_x: task.query.x.clone(),
            query_labels: task.query.labels.clone(),
            query_targets: one_hot(&task.query.labels, cardinality)?,
            query_semantic,
        })
    }

    /// Episode with a caller-chosen routing and no semantic information.
    pub fn with_routing(task: &Task, routing: Routing) -> Result<Self> {
        let n = routing.cardinality();
        Ok(Self {
            n: task.n,
            support_targets: one_hot(&task.support.labels, n)?,
            support_x: task.support.x.clone(),
            support_semantic: None,
            query_x: task.query.x.clone(),
            query_labels: task.query.labels.clone(),
            query_targets: one_hot(&task.query.labels, n)?,
            query_semantic: None,
            routing,
        })
    }
}

/// Semantic settings that actually contribute for this model and episode.
fn active_semantic<'a>(
    model: &MetaModel,
    semantic: Option<&'a SemanticConfig>,
    targets: Option<&Matrix>,
) -> Option<&'a SemanticConfig> {
    semantic.filter(|cfg| cfg.lambda != 0.0 && model.semantic_head.is_some() && targets.is_some())
}

fn ensure_finite(loss: f64, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            detail: format!("{what} became {loss}"),
        });
    }
    Ok(())
}

/// Adapts a copy of `model` to the episode's support set.
///
/// The encoder and any-way head follow the routed task loss. The semantic
/// head, when present, is fitted to features computed once by the
/// meta-initialized encoder; those features are treated as constants, so the
/// semantic loss never moves the encoder here.
pub fn inner_adapt(
    model: &MetaModel,
    episode: &Episode,
    cfg: &InnerConfig,
    semantic: Option<&SemanticConfig>,
) -> Result<MetaModel> {
    check_rate("inner learning rate", cfg.lr)?;
    if episode.routing.width() != model.width() {
        return Err(Error::Config(format!(
            "episode routed for width {} but model head has {}",
            episode.routing.width(),
            model.width()
        )));
    }
    let mut adapted = model.clone();
    if cfg.steps == 0 || cfg.lr == 0.0 {
        return Ok(adapted);
    }
    let semantic = active_semantic(model, semantic, episode.support_semantic.as_ref());
    let frozen_features = match semantic {
        Some(_) => Some(model.encoder.features(&episode.support_x)?),
        None => None,
    };

    for _ in 0..cfg.steps {
        let main = if cfg.task_loss {
            let (logits, cache) = nn::forward(&adapted.encoder, &adapted.anyway_head, &episode.support_x)?;
            let (loss, dlogits) = episode.routing.loss(&logits, &episode.support_targets)?;
            ensure_finite(loss, "inner task loss")?;
            nn::backward(&adapted.encoder, &adapted.anyway_head, &dlogits, &cache)?
        } else {
            let mut z = GradientSet::zeros_like(&adapted.encoder);
            z.blocks.extend(GradientSet::zeros_like(&adapted.anyway_head).blocks);
            z
        };
        let sem_grads = match (semantic, &frozen_features) {
            (Some(cfg_s), Some(features)) => {
                let head = adapted.semantic_head.as_ref().expect("checked above");
                let s = semantic_loss(head, features, episode.support_semantic.as_ref().unwrap())?;
                ensure_finite(s.loss, "inner semantic loss")?;
                let mut g = s.head_grads;
                g.scale(cfg_s.lambda);
                Some(g)
            }
            _ => None,
        };
        let grads = adapted.assemble(main, sem_grads);
        sgd_step(&mut adapted, &grads, cfg.lr)?;
    }
    Ok(adapted)
}

/// Outer (query) loss at adapted parameters and its gradient with respect to
/// those same parameters: the first-order meta-gradient.
#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: GradientSet,
}

pub fn query_loss_and_grad(
    adapted: &MetaModel,
    episode: &Episode,
    semantic: Option<&SemanticConfig>,
) -> Result<QueryOutcome> {
    let (features, cache) = adapted.encoder.forward(&episode.query_x)?;
    let logits = adapted.anyway_head.logits(&features)?;
    let (task_loss, dlogits) = episode.routing.loss(&logits, &episode.query_targets)?;
    let scores = episode.routing.scores(&logits, EnsembleMethod::Original)?;
    let acc = accuracy(&predict(&scores), &episode.query_labels);

    let (head_grads, mut dfeatures) = adapted.anyway_head.backward(&features, &dlogits)?;
    let mut loss = task_loss;
    let mut sem_grads = None;
    if let Some(cfg) = active_semantic(adapted, semantic, episode.query_semantic.as_ref()) {
        let head = adapted.semantic_head.as_ref().unwrap();
        let s = semantic_loss(head, &features, episode.query_semantic.as_ref().unwrap())?;
        loss = combine_losses(task_loss, s.loss, cfg.lambda);
        if cfg.encoder_gradient {
            for (d, &g) in dfeatures.data_mut().iter_mut().zip(s.dfeatures.data()) {
                *d += cfg.lambda * g;
            }
        }
        let mut g = s.head_grads;
        g.scale(cfg.lambda);
        sem_grads = Some(g);
    }
    ensure_finite(loss, "outer loss")?;
    let (enc_grads, _) = adapted.encoder.backward(&cache, &dfeatures)?;
    debug_assert_eq!(enc_grads.blocks.len(), adapted.encoder_block_count());
    let grads = adapted.assemble(enc_grads.concat(head_grads), sem_grads);
    Ok(QueryOutcome {
        loss,
        accuracy: acc,
        grads,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// One meta-update over a batch of tasks.
///
/// Routings (and mixup draws) are taken from `rng` in task order; the
/// per-task adaptations then run in parallel and their meta-gradients are
/// reduced in task order, so the result is independent of scheduling.
pub fn outer_step<R: Rng + ?Sized>(
    model: &mut MetaModel,
    tasks: &[Task],
    mode: TrainMode,
    inner: &InnerConfig,
    outer: &OuterConfig,
    semantic: Option<&SemanticConfig>,
    rng: &mut R,
) -> Result<OuterStats> {
    if tasks.is_empty() {
        return Err(Error::Usage("outer step needs at least one task".into()));
    }
    check_rate("outer learning rate", outer.lr)?;
    let episodes = tasks
        .iter()
        .map(|t| Episode::prepare(t, mode, model.width(), semantic, rng))
        .collect::<Result<Vec<_>>>()?;

    let base: &MetaModel = model;
    let outcomes = episodes
        .par_iter()
        .map(|ep| {
            let adapted = inner_adapt(base, ep, inner, semantic)?;
            query_loss_and_grad(&adapted, ep, semantic)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut meta_grad = GradientSet::zeros_like(&*model);
    let (mut loss, mut acc) = (0.0, 0.0);
    for o in &outcomes {
        meta_grad.add_scaled(&o.grads, 1.0)?;
        loss += o.loss;
        acc += o.accuracy;
    }
    let b = outcomes.len() as f64;
    meta_grad.scale(1.0 / b);
    sgd_step(model, &meta_grad, outer.lr)?;
    Ok(OuterStats {
        loss: loss / b,
        accuracy: acc / b,
    })
}

/// Accuracy of `model` on fresh `n`-way episodes from `ds`.
///
/// Every episode adapts from the meta-parameters under freshly drawn
/// assignment sets and ensembles the query scores; with `repeats > 1` that
/// is done `repeats` times and the ensembled scores are summed. Episode `i`
/// draws its task and assignments from dedicated streams of `seed`, so two
/// calls with the same seed see the same tasks whatever `repeats` or
/// `method` are.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &MetaModel,
    ds: &MotherDataset,
    n: usize,
    shots: usize,
    queries: usize,
    episodes: usize,
    repeats: usize,
    method: EnsembleMethod,
    inner: &InnerConfig,
    seed: u64,
) -> Result<EvalSummary> {
    if n == 0 || n > model.width() {
        return Err(Error::Config(format!(
            "cannot evaluate {n}-way tasks on a head of width {}",
            model.width()
        )));
    }
    if repeats == 0 {
        return Err(Error::Config("evaluation needs at least one assignment repeat".into()));
    }
    let accs = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut task_rng = stream(seed, domain::TASKS, i as u64);
            let task = sample_task(ds, n, shots, queries, &mut task_rng)?;
            let mut assign_rng = stream(seed, domain::ASSIGNMENTS, i as u64);
            let mut total: Option<Matrix> = None;
            for _ in 0..repeats {
                let routing = Routing::AnyWay(AssignmentSet::generate(model.width(), n, &mut assign_rng)?);
                let episode = Episode::with_routing(&task, routing)?;
                let adapted = inner_adapt(model, &episode, inner, None)?;
                let logits = adapted.anyway_head.logits(&adapted.encoder.features(&episode.query_x)?)?;
                let scores = episode.routing.scores(&logits, method)?;
                total = Some(match total {
                    None => scores,
                    Some(mut t) => {
                        t.add_assign(&scores)?;
                        t
                    }
                });
            }
            Ok(accuracy(&predict(&total.unwrap()), &task.query.labels))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalSummary::from_accuracies(n, accs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub mode: TrainMode,
    pub inner: InnerConfig,
    pub outer: OuterConfig,
    pub semantic: Option<SemanticConfig>,
    /// Outer iterations between validation passes.
    pub eval_interval: usize,
    pub val_episodes: usize,
    /// Validated cardinalities; empty means every cardinality of the episode spec.
    pub val_ns: Vec<usize>,
    pub val_seed: u64,
    pub stall_window: usize,
    /// Per-cardinality tolerance around chance for the stall rule.
    pub stall_eps: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            mode: TrainMode::AnyWay,
            inner: InnerConfig::default(),
            outer: OuterConfig::default(),
            semantic: None,
            eval_interval: 100,
            val_episodes: 100,
            val_ns: Vec::new(),
            val_seed: 0,
            stall_window: 5,
            stall_eps: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the highest summed validation accuracy.
    pub best: MetaModel,
    pub best_step: usize,
    pub best_val_sum: f64,
    pub last: MetaModel,
    pub curve: Vec<CurvePoint>,
    /// Step at which validation was first seen stalled at chance.
    pub stall_step: Option<usize>,
}

pub(crate) fn validation_ns(spec: &EpisodeSpec, requested: &[usize]) -> Vec<usize> {
    if requested.is_empty() {
        spec.cardinalities()
    } else {
        let mut v = requested.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Runs the full meta-training loop with periodic validation and model selection.
///
/// Tasks and routings come from two streams split off `rng`, so runs that
/// differ only in head width see the same task sequence.
pub fn train<R: Rng>(
    train_ds: &MotherDataset,
    val_ds: &MotherDataset,
    spec: &EpisodeSpec,
    model_init: MetaModel,
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if settings.mode == TrainMode::Fixed && spec.fixed_n.is_none() {
        return Err(Error::Config("fixed-way training needs a fixed cardinality".into()));
    }
    spec.check_width(model_init.width())?;
    check_rate("inner learning rate", settings.inner.lr)?;
    check_rate("outer learning rate", settings.outer.lr)?;
    if let Some(s) = &settings.semantic {
        s.validate()?;
        if model_init.semantic_head.is_none() {
            return Err(Error::Config("semantic loss enabled but model has no semantic head".into()));
        }
    }
    if settings.outer.meta_batch == 0 && settings.outer.episodes > 0 {
        return Err(Error::Config("meta batch must be >= 1".into()));
    }
    let ns = validation_ns(spec, &settings.val_ns);
    let interval = settings.eval_interval.max(1);
    // separate streams keep the task sequence independent of the head width
    let mut task_rng = ChaCha8Rng::from_rng(rng);
    let mut route_rng = ChaCha8Rng::from_rng(rng);

    let mut model = model_init;
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_val_sum = f64::NEG_INFINITY;
    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut stall_step = None;
    let (mut loss_acc, mut loss_count) = (0.0, 0usize);

    for step in 1..=settings.outer.episodes {
        let tasks = batch_tasks(train_ds, spec, settings.outer.meta_batch, &mut task_rng)?;
        let stats = outer_step(
            &mut model,
            &tasks,
            settings.mode,
            &settings.inner,
            &settings.outer,
            settings.semantic.as_ref(),
            &mut route_rng,
        )
        .map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { step, detail },
            other => other,
        })?;
        loss_acc += stats.loss;
        loss_count += 1;

        if step % interval == 0 || step == settings.outer.episodes {
            let mut val_acc = Vec::with_capacity(ns.len());
            for &n in &ns {
                let s = evaluate(
                    &model,
                    val_ds,
                    n,
                    spec.shots,
                    spec.queries,
                    settings.val_episodes,
                    1,
                    EnsembleMethod::Original,
                    &settings.inner,
                    settings.val_seed,
                )?;
                val_acc.push((n, s.mean));
            }
            let val_acc_sum = val_acc.iter().map(|&(_, a)| a).sum();
            let point = CurvePoint {
                step,
                train_loss: loss_acc / loss_count as f64,
                val_acc,
                val_acc_sum,
            };
            log::debug!("step {step}: loss {:.4} val sum {:.4}", point.train_loss, val_acc_sum);
            (loss_acc, loss_count) = (0.0, 0);

            if val_acc_sum > best_val_sum {
                best_val_sum = val_acc_sum;
                best = model.clone();
                best_step = step;
            }
            let chance = point.chance_sum();
            curve.push(point);
            if stall_step.is_none() {
                let series: Vec<(usize, f64)> = curve.iter().map(|p| (p.step, p.val_acc_sum)).collect();
                if stall_detect(&series, settings.stall_window, settings.stall_eps * ns.len() as f64, chance) {
                    log::warn!("validation accuracy stalled at chance through step {step}");
                    stall_step = Some(step);
                }
            }
        }
    }
    if curve.is_empty() {
        best_val_sum = 0.0;
    }
    Ok(TrainOutcome {
        best,
        best_step,
        best_val_sum,
        last: model,
        curve,
        stall_step,
    })
}
