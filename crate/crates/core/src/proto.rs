//! Prototypical networks with an EMA memory of semantic prototypes.
//!
//! ProtoNet has no output head: an episode's classes are the means of its
//! support features, so the same encoder serves any cardinality. The memory
//! keeps one running prototype per semantic class of the training split and
//! pulls fresh episode prototypes toward it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{accuracy, predict};
use crate::episodes::{batch_tasks, sample_task, EpisodeSpec, MotherDataset, Task};
use crate::error::{Error, Result};
use crate::maml::{validation_ns, OuterConfig};
use crate::metrics::{stall_detect, CurvePoint, EvalSummary};
use crate::nn::{one_hot, sgd_step, softmax_cross_entropy, GradientSet, Matrix, MlpEncoder};
use crate::rng::{domain, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeMemory {
    classes: usize,
    dim: usize,
    ema_rate: f64,
    prototypes: Matrix,
    seen: Vec<bool>,
}

impl PrototypeMemory {
    pub fn new(classes: usize, dim: usize, ema_rate: f64) -> Result<Self> {
        if !(ema_rate > 0.0 && ema_rate <= 1.0) {
            return Err(Error::Config(format!("EMA rate must lie in (0, 1], got {ema_rate}")));
        }
        Ok(Self {
            classes,
            dim,
            ema_rate,
            prototypes: Matrix::zeros(classes, dim),
            seen: vec![false; classes],
        })
    }

    /// Rebuilds a memory from stored parts; unseen rows must be zero.
    pub fn from_parts(ema_rate: f64, prototypes: Matrix, seen: Vec<bool>) -> Result<Self> {
        let mut mem = Self::new(prototypes.rows(), prototypes.cols(), ema_rate)?;
        if seen.len() != prototypes.rows() {
            return Err(Error::dim("PrototypeMemory::from_parts", prototypes.rows(), seen.len()));
        }
        for (c, &s) in seen.iter().enumerate() {
            if !s && prototypes.row(c).iter().any(|&v| v != 0.0) {
                return Err(Error::Validation(format!("unseen prototype {} is not zero", c + 1)));
            }
        }
        mem.prototypes = prototypes;
        mem.seen = seen;
        Ok(mem)
    }

    /// 0.05 for five-shot and above, 0.01 for one-shot.
    pub fn default_rate(shots: usize) -> f64 {
        if shots <= 1 {
            0.01
        } else {
            0.05
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ema_rate(&self) -> f64 {
        self.ema_rate
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    /// Prototype of semantic class `c` (1-based) if it has been encountered.
    pub fn get(&self, c: usize) -> Option<&[f64]> {
        (c >= 1 && c <= self.classes && self.seen[c - 1]).then(|| self.prototypes.row(c - 1))
    }

    /// Copies `p` on first encounter, otherwise `(1 − ρ)·old + ρ·p`.
    pub fn ema_update(&mut self, c: usize, p: &[f64]) -> Result<()> {
        if c == 0 || c > self.classes {
            return Err(Error::Domain(format!(
                "semantic class {c} outside 1..={}",
                self.classes
            )));
        }
        if p.len() != self.dim {
            return Err(Error::dim("ema_update", self.dim, p.len()));
        }
        let rho = self.ema_rate;
        let row = self.prototypes.row_mut(c - 1);
        if self.seen[c - 1] {
            for (m, &v) in row.iter_mut().zip(p) {
                *m = (1.0 - rho) * *m + rho * v;
            }
        } else {
            row.copy_from_slice(p);
            self.seen[c - 1] = true;
        }
        Ok(())
    }

    /// Mean squared distance between episode prototypes and their seen
    /// semantic counterparts, with the gradient on the episode prototypes.
    /// The memory itself is a constant here.
    pub fn alignment_loss(&self, episode_prototypes: &Matrix, numeric_to_semantic: &[usize]) -> Result<(f64, Matrix)> {
        if episode_prototypes.rows() != numeric_to_semantic.len() || episode_prototypes.cols() != self.dim {
            return Err(Error::dim(
                "alignment_loss",
                format!("({}, {})", numeric_to_semantic.len(), self.dim),
                format!("{:?}", episode_prototypes.shape()),
            ));
        }
        let mut grad = Matrix::zeros(episode_prototypes.rows(), self.dim);
        let matched: Vec<(usize, &[f64])> = numeric_to_semantic
            .iter()
            .enumerate()
            .filter_map(|(n, &c)| self.get(c).map(|m| (n, m)))
            .collect();
        if matched.is_empty() {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / matched.len() as f64;
        let mut loss = 0.0;
        for (n, mem) in matched {
            let p = episode_prototypes.row(n);
            let g = grad.row_mut(n);
            for ((gi, &pi), &mi) in g.iter_mut().zip(p).zip(mem) {
                let diff = pi - mi;
                loss += diff * diff;
                *gi = 2.0 * scale * diff;
            }
        }
        Ok((loss * scale, grad))
    }
}

fn class_counts(labels: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n];
    for &l in labels {
        if l == 0 || l > n {
            return Err(Error::Domain(format!("label {l} outside 1..={n}")));
        }
        counts[l - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Domain(format!("label {} has no support example", missing + 1)));
    }
    Ok(counts)
}

/// Mean feature of every numeric label `1..=n`.
pub fn compute_prototypes(features: &Matrix, labels: &[usize], n: usize) -> Result<Matrix> {
    if features.rows() != labels.len() {
        return Err(Error::dim("compute_prototypes", features.rows(), labels.len()));
    }
    let counts = class_counts(labels, n)?;
    let mut protos = Matrix::zeros(n, features.cols());
    for (r, &l) in labels.iter().enumerate() {
        for (p, &f) in protos.row_mut(l - 1).iter_mut().zip(features.row(r)) {
            *p += f;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        for p in protos.row_mut(k) {
            *p /= c as f64;
        }
    }
    Ok(protos)
}

/// Spreads a prototype gradient back onto the support features.
pub fn prototypes_backward(dprotos: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let counts = class_counts(labels, dprotos.rows())?;
    let mut d = Matrix::zeros(labels.len(), dprotos.cols());
    for (r, &l) in labels.iter().enumerate() {
        let inv = 1.0 / counts[l - 1] as f64;
        for (o, &g) in d.row_mut(r).iter_mut().zip(dprotos.row(l - 1)) {
            *o = g * inv;
        }
    }
    Ok(d)
}

/// `logit[q][n] = −‖x_q − p_n‖²`.
pub fn proto_logits(query: &Matrix, prototypes: &Matrix) -> Result<Matrix> {
    if query.cols() != prototypes.cols() {
        return Err(Error::dim("proto_logits", prototypes.cols(), query.cols()));
    }
    let mut out = Matrix::zeros(query.rows(), prototypes.rows());
    for q in 0..query.rows() {
        let x = query.row(q);
        for n in 0..prototypes.rows() {
            let d: f64 = x.iter().zip(prototypes.row(n)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set(q, n, -d);
        }
    }
    Ok(out)
}

/// Gradients of [`proto_logits`] with respect to queries and prototypes.
pub fn proto_logits_backward(query: &Matrix, prototypes: &Matrix, dlogits: &Matrix) -> Result<(Matrix, Matrix)> {
    if dlogits.shape() != (query.rows(), prototypes.rows()) || query.cols() != prototypes.cols() {
        return Err(Error::dim(
            "proto_logits_backward",
            format!("({}, {})", query.rows(), prototypes.rows()),
            format!("{:?}", dlogits.shape()),
        ));
    }
    let mut dq = Matrix::zeros(query.rows(), query.cols());
    let mut dp = Matrix::zeros(prototypes.rows(), prototypes.cols());
    for q in 0..query.rows() {
        for n in 0..prototypes.rows() {
            let g = dlogits.get(q, n);
            if g == 0.0 {
                continue;
            }
            for k in 0..query.cols() {
                let diff = query.get(q, k) - prototypes.get(n, k);
                dq.row_mut(q)[k] -= 2.0 * g * diff;
                dp.row_mut(n)[k] += 2.0 * g * diff;
            }
        }
    }
    Ok((dq, dp))
}

/// Loss, query accuracy, encoder gradient and the (detached) episode prototypes.
#[derive(Clone, Debug)]
pub struct ProtoEpisode {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: GradientSet,
    pub prototypes: Matrix,
}

/// Episode loss `CE + λ·alignment` and its gradient for the encoder.
pub fn proto_episode(
    encoder: &MlpEncoder,
    task: &Task,
    memory: Option<&PrototypeMemory>,
    lambda: f64,
) -> Result<ProtoEpisode> {
    let ns = task.support.len();
    let x = Matrix::vstack(&[&task.support.x, &task.query.x])?;
    let (features, cache) = encoder.forward(&x)?;
    let support = features.slice_rows(0, ns);
    let query = features.slice_rows(ns, features.rows());
    let protos = compute_prototypes(&support, &task.support.labels, task.n)?;
    let logits = proto_logits(&query, &protos)?;
    let targets = one_hot(&task.query.labels, task.n)?;
    let (mut loss, dlogits) = softmax_cross_entropy(&logits, &targets)?;
    let acc = accuracy(&predict(&logits), &task.query.labels);
    let (dq, mut dp) = proto_logits_backward(&query, &protos, &dlogits)?;

    if let Some(mem) = memory.filter(|_| lambda != 0.0) {
        let (align, dalign) = mem.alignment_loss(&protos, &task.numeric_to_semantic)?;
        loss += lambda * align;
        for (d, &g) in dp.data_mut().iter_mut().zip(dalign.data()) {
            *d += lambda * g;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            detail: format!("episode loss became {loss}"),
        });
    }
    let ds = prototypes_backward(&dp, &task.support.labels)?;
    let dfeatures = Matrix::vstack(&[&ds, &dq])?;
    let (grads, _) = encoder.backward(&cache, &dfeatures)?;
    Ok(ProtoEpisode {
        loss,
        accuracy: acc,
        grads,
        prototypes: protos,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtoStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// One SGD step on the batch-mean episode loss, then an EMA refresh of the
/// memory from every episode's prototypes in task order.
///
/// Alignment is measured against the memory as it stood before this step.
pub fn proto_step(
    encoder: &mut MlpEncoder,
    memory: Option<&mut PrototypeMemory>,
    tasks: &[Task],
    lambda: f64,
    lr: f64,
) -> Result<ProtoStats> {
    if tasks.is_empty() {
        return Err(Error::Usage("ProtoNet step needs at least one task".into()));
    }
    let mem_view = memory.as_deref();
    let base: &MlpEncoder = encoder;
    let outcomes = tasks
        .par_iter()
        .map(|t| proto_episode(base, t, mem_view, lambda))
        .collect::<Result<Vec<_>>>()?;

    let mut grad = GradientSet::zeros_like(&*encoder);
    let (mut loss, mut acc) = (0.0, 0.0);
    for o in &outcomes {
        grad.add_scaled(&o.grads, 1.0)?;
        loss += o.loss;
        acc += o.accuracy;
    }
    let b = outcomes.len() as f64;
    grad.scale(1.0 / b);
    sgd_step(encoder, &grad, lr)?;

    if let Some(mem) = memory {
        for (task, o) in tasks.iter().zip(&outcomes) {
            for (n, &c) in task.numeric_to_semantic.iter().enumerate() {
                mem.ema_update(c, o.prototypes.row(n))?;
            }
        }
    }
    Ok(ProtoStats {
        loss: loss / b,
        accuracy: acc / b,
    })
}

/// Nearest-prototype accuracy on fresh `n`-way episodes. Episode `i` uses the
/// same task stream as the MAML evaluator under the same seed.
pub fn evaluate_proto(
    encoder: &MlpEncoder,
    ds: &MotherDataset,
    n: usize,
    shots: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if n == 0 {
        return Err(Error::Config("cannot evaluate 0-way tasks".into()));
    }
    let accs = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::TASKS, i as u64);
            let task = sample_task(ds, n, shots, queries, &mut rng)?;
            let support = encoder.features(&task.support.x)?;
            let protos = compute_prototypes(&support, &task.support.labels, n)?;
            let logits = proto_logits(&encoder.features(&task.query.x)?, &protos)?;
            Ok(accuracy(&predict(&logits), &task.query.labels))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalSummary::from_accuracies(n, accs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtoSettings {
    pub outer: OuterConfig,
    pub lambda: f64,
    pub ema_rate: f64,
    /// Keep a semantic prototype memory over this many training classes.
    pub semantic_classes: Option<usize>,
    pub eval_interval: usize,
    pub val_episodes: usize,
    pub val_ns: Vec<usize>,
    pub val_seed: u64,
    pub stall_window: usize,
    pub stall_eps: f64,
}

impl Default for ProtoSettings {
    fn default() -> Self {
        Self {
            outer: OuterConfig::default(),
            lambda: 0.1,
            ema_rate: 0.05,
            semantic_classes: None,
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
pub struct ProtoOutcome {
    pub best: MlpEncoder,
    pub best_memory: Option<PrototypeMemory>,
    pub best_step: usize,
    pub best_val_sum: f64,
    pub last: MlpEncoder,
    pub memory: Option<PrototypeMemory>,
    pub curve: Vec<CurvePoint>,
    pub stall_step: Option<usize>,
}

pub fn train_proto<R: Rng>(
    train_ds: &MotherDataset,
    val_ds: &MotherDataset,
    spec: &EpisodeSpec,
    encoder_init: MlpEncoder,
    settings: &ProtoSettings,
    rng: &mut R,
) -> Result<ProtoOutcome> {
    spec.validate()?;
    if !(settings.lambda >= 0.0) || !(settings.outer.lr >= 0.0) {
        return Err(Error::Config("ProtoNet rates must be >= 0".into()));
    }
    let mut memory = match settings.semantic_classes {
        Some(c) => {
            if c < train_ds.class_count() {
                return Err(Error::Config(format!(
                    "memory of {c} classes cannot cover {} training classes",
                    train_ds.class_count()
                )));
            }
            Some(PrototypeMemory::new(c, encoder_init.feature_dim(), settings.ema_rate)?)
        }
        None => None,
    };
    let ns = validation_ns(spec, &settings.val_ns);
    let interval = settings.eval_interval.max(1);

    let mut task_rng = ChaCha8Rng::from_rng(rng);

    let mut encoder = encoder_init;
    let mut best = encoder.clone();
    let mut best_memory = memory.clone();
    let mut best_step = 0;
    let mut best_val_sum = f64::NEG_INFINITY;
    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut stall_step = None;
    let (mut loss_acc, mut loss_count) = (0.0, 0usize);

    for step in 1..=settings.outer.episodes {
        let tasks = batch_tasks(train_ds, spec, settings.outer.meta_batch.max(1), &mut task_rng)?;
        let stats = proto_step(&mut encoder, memory.as_mut(), &tasks, settings.lambda, settings.outer.lr).map_err(
            |e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                other => other,
            },
        )?;
        loss_acc += stats.loss;
        loss_count += 1;

        if step % interval == 0 || step == settings.outer.episodes {
            let mut val_acc = Vec::with_capacity(ns.len());
            for &n in &ns {
                let s = evaluate_proto(&encoder, val_ds, n, spec.shots, spec.queries, settings.val_episodes, settings.val_seed)?;
                val_acc.push((n, s.mean));
            }
            let val_acc_sum = val_acc.iter().map(|&(_, a)| a).sum();
            let point = CurvePoint {
                step,
                train_loss: loss_acc / loss_count as f64,
                val_acc,
                val_acc_sum,
            };
            (loss_acc, loss_count) = (0.0, 0);
            if val_acc_sum > best_val_sum {
                best_val_sum = val_acc_sum;
                best = encoder.clone();
                best_memory = memory.clone();
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
    Ok(ProtoOutcome {
        best,
        best_memory,
        best_step,
        best_val_sum,
        last: encoder,
        memory,
        curve,
        stall_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::SemanticClass;
    use crate::nn::finite_diff_grad;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(m: usize, d: usize, per_class: usize, spread: f64, seed: u64) -> MotherDataset {
        let mut rng = seeded(seed);
        let classes = (0..m)
            .map(|c| {
                let center: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let rows: Vec<Vec<f64>> = (0..per_class)
                    .map(|_| center.iter().map(|&v| v + spread * rng.random_range(-1.0..1.0)).collect())
                    .collect();
                SemanticClass {
                    name: format!("c{c}"),
                    examples: Matrix::from_rows(&rows).unwrap(),
                }
            })
            .collect();
        MotherDataset::new(d, classes).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn prototype_examples() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 4.0], vec![2.0, 0.0]]).unwrap();
        let p = compute_prototypes(&f, &[1, 1, 2, 2], 2).unwrap();
        assert_eq!(p.row(0), &[1.0, 2.0]);
        assert_eq!(p.row(1), &[1.0, 2.0]);
        assert!(matches!(compute_prototypes(&f, &[1, 1, 1, 1], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn prototypes_match_scalar_mean() {
        let mut rng = seeded(1);
        let labels: Vec<usize> = (0..12).map(|i| i % 4 + 1).collect();
        let f = random_matrix(12, 3, &mut rng);
        let p = compute_prototypes(&f, &labels, 4).unwrap();
        for n in 1..=4 {
            for k in 0..3 {
                let mut s = 0.0;
                let mut c = 0.0;
                for r in 0..12 {
                    if labels[r] == n {
                        s += f.get(r, k);
                        c += 1.0;
                    }
                }
                assert!((p.get(n - 1, k) - s / c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_examples() {
        let protos = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let l = proto_logits(&q, &protos).unwrap();
        assert_eq!(l.row(0), &[-1.0, 0.0, -5.0]);
        assert_eq!(predict(&l), vec![2]);

        let sym = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let origin = Matrix::zeros(1, 2);
        let l = proto_logits(&origin, &sym).unwrap();
        let (loss, _) = softmax_cross_entropy(&l, &one_hot(&[3], 4).unwrap()).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logits_match_scalar_distance() {
        let mut rng = seeded(2);
        let q = random_matrix(5, 4, &mut rng);
        let p = random_matrix(3, 4, &mut rng);
        let l = proto_logits(&q, &p).unwrap();
        for i in 0..5 {
            for n in 0..3 {
                let mut d = 0.0;
                for k in 0..4 {
                    d += (q.get(i, k) - p.get(n, k)).powi(2);
                }
                assert!((l.get(i, n) + d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_examples() {
        let mut m = PrototypeMemory::new(3, 2, 0.05).unwrap();
        m.ema_update(2, &[3.0, -1.0]).unwrap();
        assert_eq!(m.get(2).unwrap(), &[3.0, -1.0]);
        assert!(m.get(1).is_none());

        let mut m = PrototypeMemory::from_parts(0.05, Matrix::zeros(1, 1), vec![true]).unwrap();
        m.ema_update(1, &[1.0]).unwrap();
        assert!((m.get(1).unwrap()[0] - 0.05).abs() < 1e-15);

        assert!(matches!(m.ema_update(2, &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(m.ema_update(0, &[1.0]), Err(Error::Domain(_))));
        assert!(PrototypeMemory::new(1, 1, 0.0).is_err());
        assert!(PrototypeMemory::new(1, 1, 1.5).is_err());
    }

    #[test]
    fn ema_follows_geometric_recurrence() {
        let rho = 0.05;
        let mut m = PrototypeMemory::from_parts(rho, Matrix::zeros(1, 1), vec![true]).unwrap();
        for t in 1..=200 {
            m.ema_update(1, &[1.0]).unwrap();
            let expected = 1.0 - (1.0 - rho).powi(t);
            assert!((m.get(1).unwrap()[0] - expected).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn ema_leaves_other_rows_untouched() {
        let mut rng = seeded(3);
        let mut m = PrototypeMemory::new(5, 3, 0.1).unwrap();
        for c in 1..=5 {
            m.ema_update(c, &[rng.random(), rng.random(), rng.random()]).unwrap();
        }
        let before = m.clone();
        m.ema_update(3, &[9.0, 9.0, 9.0]).unwrap();
        for c in [1, 2, 4, 5] {
            assert_eq!(m.prototypes().row(c - 1), before.prototypes().row(c - 1));
        }
        assert_eq!(m.prototypes().row(2).len(), 3);
    }

    #[test]
    fn alignment_examples() {
        let mut m = PrototypeMemory::new(3, 2, 0.05).unwrap();
        let p = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.alignment_loss(&p, &[2]).unwrap().0, 0.0);
        m.ema_update(2, &[0.0, 0.0]).unwrap();
        assert_eq!(m.alignment_loss(&p, &[2]).unwrap().0, 1.0);
        m.ema_update(1, &[1.0, 0.0]).unwrap();
        let p2 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.alignment_loss(&p2, &[1, 2]).unwrap().0, 0.0);
    }

    #[test]
    fn episode_gradient_matches_finite_differences() {
        let ds = blobs(8, 4, 10, 0.5, 4);
        let mut rng = seeded(5);
        let encoder = MlpEncoder::new(&[4, 7, 5], false, &mut rng).unwrap();
        let mut mem = PrototypeMemory::new(8, 5, 0.05).unwrap();
        for c in 1..=8 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            mem.ema_update(c, &v).unwrap();
        }
        for _ in 0..5 {
            let task = sample_task(&ds, 4, 2, 3, &mut rng).unwrap();
            let e = proto_episode(&encoder, &task, Some(&mem), 0.3).unwrap();
            let numeric =
                finite_diff_grad(|p: &MlpEncoder| proto_episode(p, &task, Some(&mem), 0.3).unwrap().loss, &encoder, 1e-5);
            for err in e.grads.max_relative_errors(&numeric) {
                assert!(err < 1e-4, "{err}");
            }
        }
    }

    #[test]
    fn zero_lambda_ignores_memory() {
        let ds = blobs(6, 4, 10, 0.5, 6);
        let mut rng = seeded(7);
        let encoder = MlpEncoder::new(&[4, 5], false, &mut rng).unwrap();
        let mut mem = PrototypeMemory::new(6, 5, 0.05).unwrap();
        for c in 1..=6 {
            mem.ema_update(c, &[1.0; 5]).unwrap();
        }
        let task = sample_task(&ds, 3, 2, 2, &mut rng).unwrap();
        let a = proto_episode(&encoder, &task, Some(&mem), 0.0).unwrap();
        let b = proto_episode(&encoder, &task, None, 0.0).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn training_separates_blobs_at_several_cardinalities() {
        let ds = blobs(12, 6, 30, 0.6, 8);
        let (train_ds, test_ds) = ds.split(8).unwrap();
        let spec = EpisodeSpec { cardinality_pool: vec![3, 5], shots: 3, queries: 5, fixed_n: None };
        let settings = ProtoSettings {
            outer: OuterConfig { lr: 0.01, episodes: 150, meta_batch: 4 },
            semantic_classes: Some(8),
            eval_interval: 50,
            val_episodes: 20,
            val_ns: vec![2, 4],
            ..ProtoSettings::default()
        };
        let encoder = MlpEncoder::new(&[6, 16, 8], false, &mut seeded(9)).unwrap();
        let out = train_proto(&train_ds, &test_ds, &spec, encoder, &settings, &mut seeded(10)).unwrap();
        assert_eq!(out.curve.len(), 3);
        assert!(out.memory.as_ref().unwrap().seen().iter().all(|&s| s));
        for n in [2, 4] {
            let s = evaluate_proto(&out.best, &test_ds, n, 3, 5, 100, 11).unwrap();
            assert!(s.mean > 0.9, "N={n}: {}", s.mean);
        }
    }

    proptest! {
        #[test]
        fn prototypes_ignore_example_order(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let labels: Vec<usize> = (0..9).map(|i| i % 3 + 1).collect();
            let f = random_matrix(9, 3, &mut rng);
            let mut order: Vec<usize> = (0..9).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let shuffled = f.select_rows(&order);
            let shuffled_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let a = compute_prototypes(&f, &labels, 3).unwrap();
            let b = compute_prototypes(&shuffled, &shuffled_labels, 3).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
