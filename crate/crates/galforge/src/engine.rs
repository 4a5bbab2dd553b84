//! Cycle orchestration for every training mode, the pseudo-label audit and
//! dataset reuse.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use galforge_core::acquisition::{score_points, select_top, AcquisitionFn, AcquisitionKind};
use galforge_core::classifier::{train, ClassifierModel, ClassifierSpec, TrainConfig};
use galforge_core::condition_opt::{epsilon_schedule, text_opt, OptimizerConfig};
use galforge_core::embedding::predefined_condition;
use galforge_core::generator::GeneratorModel;
use galforge_core::pools::Pools;
use galforge_core::rng::{self, stream};
use galforge_core::world::{Dataset, World};
use galforge_core::Tensor;

use crate::config::{ExperimentConfig, Mode, Retention};
use crate::error::{Error, Result};
use crate::results::ResultRow;
use crate::snapshot::{generated_rows, labeled_rows, rows_to_dataset, SnapshotRow};

/// Worker count from `GALFORGE_THREADS` (unset or 0 = all cores).
pub fn thread_count() -> usize {
    let auto = || std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("GALFORGE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(0) | None => auto(),
        Some(n) => n,
    }
}

/// Apply `f` to every item on up to `threads` workers; output order matches input.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every item processed")).collect()
}

/// Snapshot rows of every seed, in seed order.
pub type SeedSnapshots = Vec<(u64, Vec<SnapshotRow>)>;

/// Rows, the final L ∪ G of every seed, and the first error if a seed failed.
/// Rows of cycles completed before a failure are kept.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub snapshots: SeedSnapshots,
    pub error: Option<Error>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<(Vec<ResultRow>, SeedSnapshots)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.rows, self.snapshots)),
        }
    }
}

/// `gen` may be `None` for modes that never generate.
pub fn run_experiment(cfg: &ExperimentConfig, world: &World, gen: Option<&GeneratorModel>, run_id: &str) -> RunOutput {
    if let Err(e) = check_compat(cfg, world, gen) {
        return RunOutput {
            rows: Vec::new(),
            snapshots: Vec::new(),
            error: Some(e),
        };
    }
    let per_seed = parallel_map(&cfg.seeds, thread_count(), |&seed| {
        let mut rows = Vec::new();
        let mut state = SeedState {
            pools: Pools::new(world.pool.xs.clone()).expect("pool is a matrix"),
            dropped_l: Vec::new(),
            dropped_g: Vec::new(),
        };
        let err = run_seed(cfg, world, gen, run_id, seed, &mut rows, &mut state).err();
        (rows, (seed, state.snapshot()), err)
    });
    let mut out = RunOutput {
        rows: Vec::new(),
        snapshots: Vec::new(),
        error: None,
    };
    for (rows, snap, err) in per_seed {
        out.rows.extend(rows);
        out.snapshots.push(snap);
        if out.error.is_none() {
            out.error = err;
        }
    }
    out
}

/// Pools of one seed plus the points dropped by `reset_labeled` and replace
/// retention, kept so the snapshot can replay every cycle.
struct SeedState {
    pools: Pools,
    dropped_l: Vec<SnapshotRow>,
    dropped_g: Vec<SnapshotRow>,
}

impl SeedState {
    fn clear_labeled(&mut self) {
        self.dropped_l.extend(labeled_rows(&self.pools));
        self.pools.clear_labeled();
    }

    fn clear_generated(&mut self) {
        self.dropped_g.extend(generated_rows(&self.pools));
        self.pools.clear_generated();
    }

    /// Every labeled point ever held, then every generated point, each in
    /// insertion order.
    fn snapshot(&self) -> Vec<SnapshotRow> {
        let mut rows = self.dropped_l.clone();
        rows.extend(labeled_rows(&self.pools));
        rows.extend(self.dropped_g.iter().cloned());
        rows.extend(generated_rows(&self.pools));
        rows
    }
}

fn check_compat(cfg: &ExperimentConfig, world: &World, gen: Option<&GeneratorModel>) -> Result<()> {
    cfg.validate()?;
    let gen = match gen {
        Some(g) => g,
        None if cfg.mode.generates() => {
            return Err(Error::Config(format!("mode {} needs a generator checkpoint", cfg.mode.name())))
        }
        None => return Ok(()),
    };
    if gen.data_dim() != world.dim() || gen.embeddings.classes() != world.classes() {
        return Err(Error::Config(format!(
            "generator (d={}, C={}) does not match the world (d={}, C={})",
            gen.data_dim(),
            gen.embeddings.classes(),
            world.dim(),
            world.classes()
        )));
    }
    if cfg.mode.generates() && cfg.effective_template() >= gen.embeddings.templates() {
        return Err(Error::Config(format!(
            "gal.template {} out of range ({} templates)",
            cfg.template,
            gen.embeddings.templates()
        )));
    }
    Ok(())
}

fn train_config(cfg: &ExperimentConfig, seed: u64, cycle: usize) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs * cfg.epochs_multiplier,
        batch: cfg.train.batch,
        lr: cfg.train.lr,
        seed: rng::derive(seed, stream::CLF_TRAIN, cycle as u64),
    }
}

/// Per-class sample counts for `total` samples dealt round-robin starting at
/// class `start`.
pub fn round_robin(total: usize, classes: usize, start: usize) -> Vec<usize> {
    let mut counts = vec![total / classes; classes];
    for j in 0..total % classes {
        counts[(start + j) % classes] += 1;
    }
    counts
}

fn mean_sigma(kind: AcquisitionKind, mc_passes: usize, seed: u64, clf: &ClassifierModel, xs: &Tensor) -> Result<f64> {
    let kind = if kind.is_score_based() { kind } else { AcquisitionKind::Entropy };
    let f = AcquisitionFn {
        kind,
        mc_passes,
        seed,
    };
    let s = score_points(&f, clf, xs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

fn run_seed(
    cfg: &ExperimentConfig,
    world: &World,
    gen: Option<&GeneratorModel>,
    run_id: &str,
    seed: u64,
    rows: &mut Vec<ResultRow>,
    state: &mut SeedState,
) -> Result<()> {
    let spec = cfg.classifier_spec(world.dim(), world.classes())?;
    let method = cfg.method();
    if cfg.mode == Mode::Full {
        let start = Instant::now();
        let data = full_dataset(world);
        let (model, _) = train(&spec, &data.xs, &data.ys, &train_config(cfg, seed, 1))?;
        rows.push(ResultRow {
            run_id: run_id.to_string(),
            seed,
            method,
            cycle: 1,
            annotation_budget: data.len(),
            test_accuracy: model.accuracy(&world.test.xs, &world.test.ys)?,
            mean_sigma_generated: None,
            pseudo_label_accuracy: None,
            wall_ms: elapsed(cfg, start),
        });
        return Ok(());
    }

    let mut clf = ClassifierModel::init(&spec, rng::derive(seed, stream::CLF_INIT, 0))?;
    let mut dealt = 0usize;
    for cycle in 1..=cfg.cycles {
        let start = Instant::now();
        if cfg.reset_labeled {
            state.clear_labeled();
        }
        if cfg.mode.annotates() {
            let remaining = state.pools.unlabeled().len();
            if cfg.b_al > remaining {
                return Err(galforge_core::Error::OutOfRange {
                    what: "B_AL (remaining pool)",
                    value: cfg.b_al,
                    limit: remaining,
                }
                .into());
            }
            let sel_seed = rng::derive(seed, stream::SELECT, cycle as u64);
            let acq = AcquisitionFn {
                kind: cfg.sigma_al,
                mc_passes: cfg.mc_passes,
                seed: sel_seed,
            };
            let labeled = state.pools.labeled_dataset().xs;
            let picks = select_top(&acq, &state.pools.unlabeled_xs(), &clf, cfg.b_al, sel_seed, Some(&labeled))?;
            let idx: Vec<usize> = picks.iter().map(|&p| state.pools.unlabeled()[p]).collect();
            state.pools.move_selected(world, &idx, cycle)?;
        }

        let mut sigma_gen = None;
        let mut pseudo_acc = None;
        if cfg.mode.generates() {
            if cfg.retention == Retention::Replace {
                state.clear_generated();
            }
            let labeled = if cfg.mode == Mode::Gal { cycle * cfg.b_al } else { state.pools.labeled().len() };
            let b = cfg.b_gal.count(labeled);
            if b > 0 {
                let before = state.pools.generated().len();
                generate_cycle(cfg, world, gen.expect("checked by check_compat"), &clf, seed, cycle, b, dealt, &mut state.pools)?;
                dealt += b;
                let fresh = &state.pools.generated()[before..];
                let xs = Tensor::matrix(fresh.len(), world.dim(), fresh.iter().flat_map(|g| g.x.iter().copied()).collect())?;
                let mc_seed = rng::derive(seed, stream::DROPOUT, cycle as u64);
                sigma_gen = Some(mean_sigma(cfg.sigma_gal, cfg.mc_passes, mc_seed, &clf, &xs)?);
                let hits = fresh.iter().filter(|g| world.oracle_label(&g.x) == g.label).count();
                pseudo_acc = Some(hits as f64 / fresh.len() as f64);
            }
        }

        let data = match cfg.mode {
            Mode::Al => state.pools.labeled_dataset(),
            Mode::Gal => state.pools.generated_dataset(),
            _ => state.pools.union_dataset(),
        };
        let (model, _) = train(&spec, &data.xs, &data.ys, &train_config(cfg, seed, cycle))?;
        rows.push(ResultRow {
            run_id: run_id.to_string(),
            seed,
            method: method.clone(),
            cycle,
            annotation_budget: if cfg.mode.annotates() { state.pools.annotations() } else { 0 },
            test_accuracy: model.accuracy(&world.test.xs, &world.test.ys)?,
            mean_sigma_generated: sigma_gen,
            pseudo_label_accuracy: pseudo_acc,
            wall_ms: elapsed(cfg, start),
        });
        clf = model;
    }
    Ok(())
}

fn elapsed(cfg: &ExperimentConfig, start: Instant) -> u64 {
    if cfg.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Pool plus pre-training split with their true labels.
fn full_dataset(world: &World) -> Dataset {
    let mut xs = world.pool.xs.data().to_vec();
    xs.extend_from_slice(world.pretrain.xs.data());
    let mut ys = world.pool.ys.clone();
    ys.extend_from_slice(&world.pretrain.ys);
    Dataset {
        xs: Tensor::matrix(ys.len(), world.dim(), xs).expect("full dataset"),
        ys,
    }
}

/// The cycle's radius: joint_basic pins ε to 0.
pub fn cycle_epsilon(cfg: &ExperimentConfig, cycle: usize) -> Result<f64> {
    if cfg.mode == Mode::JointBasic {
        return Ok(0.0);
    }
    match cfg.epsilon_fixed {
        Some(e) => Ok(e),
        None => Ok(epsilon_schedule(cycle, cfg.cycles, cfg.epsilon_max)?),
    }
}

/// Optimize one condition per class and generate `b` pseudo-labeled samples
/// round-robin over classes.
#[allow(clippy::too_many_arguments)]
fn generate_cycle(
    cfg: &ExperimentConfig,
    world: &World,
    gen: &GeneratorModel,
    clf: &ClassifierModel,
    seed: u64,
    cycle: usize,
    b: usize,
    dealt: usize,
    pools: &mut Pools,
) -> Result<()> {
    let classes = world.classes();
    let eps = cycle_epsilon(cfg, cycle)?;
    let opt = OptimizerConfig {
        epsilon: eps,
        alpha: eps * cfg.alpha_ratio,
        steps: cfg.opt_steps,
        k: cfg.opt_k,
        sigma: AcquisitionFn {
            kind: cfg.sigma_gal,
            mc_passes: cfg.mc_passes,
            seed: rng::derive(seed, stream::DROPOUT, cycle as u64),
        },
        step_factor: cfg.step_factor,
    };
    let template = cfg.effective_template();
    let counts = round_robin(b, classes, dealt % classes);
    let key = |y: usize| ((cycle as u64) << 24) | y as u64;
    for (y, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let anchor = predefined_condition(&gen.embeddings, y, template)?;
        let cond = text_opt(&anchor, &opt, gen, clf, rng::derive(seed, stream::OPT, key(y)))?;
        let total = n * cfg.gen_multiplier;
        let conds = Tensor::matrix(total, cond.vector.len(), cond.vector.repeat(total))?;
        let seeds: Vec<u64> = (0..total)
            .map(|j| rng::derive(seed, stream::GEN_SAMPLE, (key(y) << 20) | j as u64))
            .collect();
        let xs = gen.sample_batch(&conds, &seeds)?;
        let keep: Vec<usize> = if cfg.gen_multiplier > 1 {
            let mut r = rng::rng(rng::derive(seed, stream::SUBSAMPLE, key(y)));
            let mut k = rand::seq::index::sample(&mut r, total, n).into_vec();
            k.sort_unstable();
            k
        } else {
            (0..n).collect()
        };
        for i in keep {
            pools.append_generated(xs.row(i).to_vec(), &cond, cycle, eps);
        }
    }
    Ok(())
}

/// Retrain `arch` on the saved per-seed L ∪ G without generating anything.
/// `only_cycles` restricts which cycles are replayed.
pub fn reuse_dataset(
    snapshots: &[(u64, Vec<SnapshotRow>)],
    arch: &str,
    world: &World,
    cfg: &ExperimentConfig,
    only_cycles: Option<&[usize]>,
    run_id: &str,
) -> Result<Vec<ResultRow>> {
    let mut spec = ClassifierSpec::new(arch, world.dim(), world.classes())?;
    spec.dropout_rate = cfg.dropout;
    for (_, rows) in snapshots {
        if let Some(r) = rows.iter().find(|r| r.x.len() != world.dim()) {
            return Err(galforge_core::Error::ShapeMismatch {
                op: "reuse_dataset",
                lhs: vec![r.x.len()],
                rhs: vec![world.dim()],
            }
            .into());
        }
    }
    let cycles: Vec<usize> = match only_cycles {
        Some(c) => c.to_vec(),
        None => (1..=cfg.cycles).collect(),
    };
    let jobs: Vec<(u64, usize)> = snapshots
        .iter()
        .flat_map(|(seed, _)| cycles.iter().map(move |&c| (*seed, c)))
        .collect();
    let results = parallel_map(&jobs, thread_count(), |&(seed, cycle)| -> Result<ResultRow> {
        let rows = &snapshots.iter().find(|(s, _)| *s == seed).unwrap().1;
        let start = Instant::now();
        let data = replay_training_set(rows, cfg, cycle, world.dim())?;
        let (model, _) = train(&spec, &data.xs, &data.ys, &train_config(cfg, seed, cycle))?;
        Ok(ResultRow {
            run_id: run_id.to_string(),
            seed,
            method: format!("reuse:{arch}"),
            cycle,
            annotation_budget: rows.iter().filter(|r| r.provenance == "pool" && r.cycle <= cycle).count(),
            test_accuracy: model.accuracy(&world.test.xs, &world.test.ys)?,
            mean_sigma_generated: None,
            pseudo_label_accuracy: None,
            wall_ms: elapsed(cfg, start),
        })
    });
    results.into_iter().collect()
}

/// The training set cycle `cycle` of the original run used, in its original order.
pub fn replay_training_set(rows: &[SnapshotRow], cfg: &ExperimentConfig, cycle: usize, dim: usize) -> Result<Dataset> {
    let want = |r: &&SnapshotRow| match r.provenance.as_str() {
        "pool" if cfg.mode != Mode::Gal => {
            if cfg.reset_labeled {
                r.cycle == cycle
            } else {
                r.cycle <= cycle
            }
        }
        "generated" if cfg.mode != Mode::Al => match cfg.retention {
            Retention::Accumulate => r.cycle <= cycle,
            Retention::Replace => r.cycle == cycle,
        },
        _ => false,
    };
    let picked: Vec<&SnapshotRow> = rows.iter().filter(want).collect();
    rows_to_dataset(dim, &picked)
}

/// Oracle-judged pseudo-label accuracy of one (template, ε) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditCell {
    pub template: usize,
    pub epsilon: f64,
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
}

impl AuditCell {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// For every template and radius, draw `n_per_cell` conditions uniformly in
/// the ε-ball around random class anchors, generate one sample each and
/// compare the oracle label with the pseudo-label. Within a template, all
/// radii share the class draws, directions and sampling noise, so the cells
/// differ only by ε.
pub fn audit_pseudo_labels(
    gen: &GeneratorModel,
    world: &World,
    eps_grid: &[f64],
    templates: &[usize],
    n_per_cell: usize,
    seed: u64,
) -> Result<Vec<AuditCell>> {
    let classes = world.classes();
    let ds = gen.cond_dim();
    let mut cells = Vec::new();
    for &tau in templates {
        let mut r = rng::rng(rng::derive(seed, stream::AUDIT, tau as u64));
        let mut draws = Vec::with_capacity(n_per_cell);
        for i in 0..n_per_cell {
            let y = rng::below(&mut r, classes);
            let dir = rng::normals(&mut r, ds);
            let norm = galforge_core::tensor::l2_norm(&dir);
            let radius = rng::uniform(&mut r).powf(1.0 / ds as f64);
            let unit: Vec<f64> = dir.iter().map(|v| v / norm).collect();
            let sample_seed = rng::derive(seed, stream::GEN_SAMPLE, ((tau as u64) << 32) | i as u64);
            draws.push((y, unit, radius, sample_seed));
        }
        let jobs: Vec<f64> = eps_grid.to_vec();
        let per_eps = parallel_map(&jobs, thread_count(), |&eps| -> Result<AuditCell> {
            let mut conds = Vec::with_capacity(n_per_cell * ds);
            for (y, unit, radius, _) in &draws {
                let anchor = gen.embeddings.anchor(*y, tau)?;
                conds.extend(anchor.iter().zip(unit).map(|(a, u)| a + eps * radius * u));
            }
            let seeds: Vec<u64> = draws.iter().map(|d| d.3).collect();
            let xs = gen.sample_batch(&Tensor::matrix(n_per_cell, ds, conds)?, &seeds)?;
            let mut per_class = vec![(0, 0); classes];
            for (i, (y, ..)) in draws.iter().enumerate() {
                per_class[*y].1 += 1;
                if world.oracle_label(xs.row(i)) == *y {
                    per_class[*y].0 += 1;
                }
            }
            Ok(AuditCell {
                template: tau,
                epsilon: eps,
                correct: per_class.iter().map(|c| c.0).sum(),
                total: n_per_cell,
                per_class,
            })
        });
        for c in per_eps {
            cells.push(c?);
        }
    }
    Ok(cells)
}

pub fn render_audit(cells: &[AuditCell]) -> String {
    let mut s = String::from("template,epsilon,class,correct,total,accuracy\n");
    for c in cells {
        s.push_str(&format!("{},{},all,{},{},{}\n", c.template, c.epsilon, c.correct, c.total, c.accuracy()));
        for (y, (ok, n)) in c.per_class.iter().enumerate() {
            let acc = if *n > 0 { (*ok as f64 / *n as f64).to_string() } else { String::new() };
            s.push_str(&format!("{},{},{y},{ok},{n},{acc}\n", c.template, c.epsilon));
        }
    }
    s
}
