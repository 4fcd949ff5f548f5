//! Finite-difference verification of every hand-written gradient path.

use serde::Serialize;

use crate::assignment::{any_way_loss, AssignmentSet};
use crate::episodes::sample_task;
use crate::error::{Error, Result};
use crate::maml::{inner_adapt, query_loss_and_grad, Episode, InnerConfig, MetaModel, TrainMode};
use crate::nn::{self, finite_diff_grad, one_hot, softmax_cross_entropy, GradientSet, Matrix, Parameters};
use crate::proto::{proto_episode, PrototypeMemory};
use crate::rng::{domain, stream};
use crate::semantic::SemanticConfig;
use crate::synth::{make_gaussian_mother, SynthSpec};

use rand::Rng;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const FD_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub check: String,
    pub block: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub nets: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&GradcheckRow> {
        self.rows.iter().filter(|r| !r.passed).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Encoder layer widths, input first.
    pub dims: Vec<usize>,
    pub width: usize,
    pub cardinality: usize,
    pub nets: usize,
    /// Scale one analytic block before comparing, as a negative control.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: vec![6, 8, 5],
            width: 7,
            cardinality: 3,
            nets: 50,
            corrupt: false,
        }
    }
}

struct Accumulator {
    names: Vec<String>,
    worst: Vec<f64>,
}

impl Accumulator {
    fn new(names: Vec<String>) -> Self {
        let worst = vec![0.0; names.len()];
        Self { names, worst }
    }

    fn record(&mut self, analytic: &GradientSet, numeric: &GradientSet) {
        for (w, e) in self.worst.iter_mut().zip(analytic.max_relative_errors(numeric)) {
            // NaN must surface as a failure, not vanish in max()
            *w = if e.is_nan() || w.is_nan() { f64::NAN } else { w.max(e) };
        }
    }

    fn rows(self, check: &str) -> Vec<GradcheckRow> {
        self.names
            .into_iter()
            .zip(self.worst)
            .map(|(block, e)| GradcheckRow {
                check: check.to_string(),
                block,
                max_rel_error: e,
                passed: e < GRADCHECK_TOLERANCE,
            })
            .collect()
    }
}

fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("sized buffer")
}

fn random_distribution<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let mut m = random_matrix(rows, cols, rng).map(|v| v.abs() + 0.05);
    for r in 0..rows {
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Runs every gradient check over `opts.nets` seeded networks.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.dims.len() < 2 || opts.dims.contains(&0) {
        return Err(Error::Config("gradcheck needs at least two positive layer widths".into()));
    }
    if opts.cardinality < 2 || opts.cardinality + 1 > opts.width {
        return Err(Error::Config(format!(
            "gradcheck cardinality {} must be >= 2 and leave room for a mixup label in width {}",
            opts.cardinality, opts.width
        )));
    }
    let d = opts.dims[0];
    let f = *opts.dims.last().unwrap();
    let n = opts.cardinality;
    let data = make_gaussian_mother(&SynthSpec {
        classes: n + 3,
        dim: d,
        per_class: 6,
        seed: opts.seed,
        ..SynthSpec::default()
    })?;
    let mut sem = SemanticConfig::new(data.class_count(), 0.5);
    sem.mixup = true;

    let template = MetaModel::init(&opts.dims, true, opts.width, Some(data.class_count()), &mut stream(opts.seed, domain::INIT, 0))?;
    let mut dense = Accumulator::new(template.block_names()[..template.block_names().len() - 2].to_vec());
    let mut scatter = Accumulator::new(dense.names.clone());
    let mut semantic = Accumulator::new(template.block_names());
    let mut proto = Accumulator::new(template.encoder.block_names());

    for i in 0..opts.nets {
        let mut rng = stream(opts.seed, domain::INIT, i as u64 + 1);
        let model = MetaModel::init(&opts.dims, i % 2 == 0, opts.width, Some(data.class_count()), &mut rng)?;
        let x = random_matrix(5, d, &mut rng);

        let targets = random_distribution(5, opts.width, &mut rng);
        let loss = |m: &MetaModel| -> f64 {
            let (logits, _) = nn::forward(&m.encoder, &m.anyway_head, &x).unwrap();
            softmax_cross_entropy(&logits, &targets).unwrap().0
        };
        let (logits, cache) = nn::forward(&model.encoder, &model.anyway_head, &x)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &targets)?;
        let mut analytic = nn::backward(&model.encoder, &model.anyway_head, &dlogits, &cache)?;
        if opts.corrupt {
            analytic.blocks[0].iter_mut().for_each(|g| *g *= 1.5);
        }
        let mut numeric = finite_diff_grad(loss, &model, FD_EPS);
        numeric.blocks.truncate(analytic.blocks.len());
        dense.record(&analytic, &numeric);

        let aset = AssignmentSet::generate(opts.width, n, &mut rng)?;
        let labels: Vec<usize> = (0..5).map(|r| r % n + 1).collect();
        let onehot = one_hot(&labels, n)?;
        let loss = |m: &MetaModel| -> f64 {
            let (logits, _) = nn::forward(&m.encoder, &m.anyway_head, &x).unwrap();
            any_way_loss(&aset, &logits, &onehot).unwrap().0
        };
        let (_, dlogits) = any_way_loss(&aset, &logits, &onehot)?;
        let analytic = nn::backward(&model.encoder, &model.anyway_head, &dlogits, &cache)?;
        let mut numeric = finite_diff_grad(loss, &model, FD_EPS);
        numeric.blocks.truncate(analytic.blocks.len());
        scatter.record(&analytic, &numeric);

        let task = sample_task(&data, n, 2, 2, &mut rng)?;
        let episode = Episode::prepare(&task, TrainMode::AnyWay, opts.width, Some(&sem), &mut rng)?;
        let inner = InnerConfig { steps: 1, lr: 0.1, task_loss: true };
        let adapted = inner_adapt(&model, &episode, &inner, Some(&sem))?;
        let analytic = query_loss_and_grad(&adapted, &episode, Some(&sem))?.grads;
        let numeric = finite_diff_grad(
            |m: &MetaModel| query_loss_and_grad(m, &episode, Some(&sem)).unwrap().loss,
            &adapted,
            FD_EPS,
        );
        semantic.record(&analytic, &numeric);

        let mut memory = PrototypeMemory::new(data.class_count(), f, 0.05)?;
        for c in 1..=data.class_count() {
            if rng.random_bool(0.7) {
                let v: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
                memory.ema_update(c, &v)?;
            }
        }
        let analytic = proto_episode(&model.encoder, &task, Some(&memory), 0.3)?.grads;
        let numeric = finite_diff_grad(
            |e| proto_episode(e, &task, Some(&memory), 0.3).unwrap().loss,
            &model.encoder,
            FD_EPS,
        );
        proto.record(&analytic, &numeric);
    }

    let mut rows = dense.rows("dense");
    rows.extend(scatter.rows("anyway_scatter"));
    rows.extend(semantic.rows("semantic_outer"));
    rows.extend(proto.rows("proto_distance"));
    Ok(GradcheckReport { rows, nets: opts.nets })
}
