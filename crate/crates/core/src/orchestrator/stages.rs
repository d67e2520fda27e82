use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProbeClass, StageName};
use crate::data::{Dataset, Scope, SliceKey, Split};
use crate::error::{Error, Result};
use crate::fsutil::{csv_err, ensure_parent, fmt_float, read_json, write_json};
use crate::inlp::{load_projector, run_inlp, save_projector, ProjectorKind, ProjectorSource};
use crate::metrics::{
    ablation_matrix, intensity_distribution, transfer_matrix, write_intensity_csv, BestProbe, GeneralColumn,
    GroupSummary, IntensityMode, NamedProjector, SampleGroup,
};
use crate::probe::{
    evaluate, load_probe, save_probe, select_best, train_general_probe, train_probe, EvalReport, Evaluation, Family,
    Probe, ProbeId, ProbeSelection, TaskSamples,
};
use crate::pwcca::{build_universe, pwcca_distance_matrix, to_dense, ward_cluster};
use crate::temporal::{positioned_samples, progression_curve, write_curves_csv, write_curves_json, ProgressionCurve};

/// Task id under which the general probe is stored.
pub const GENERAL_TASK: &str = "_general";
/// Column label of the general probe in the transfer matrix.
pub const GENERAL_LABEL: &str = "general";

pub(super) const PROBES: &str = "probes";
pub(super) const PROJECTORS: &str = "projectors";
pub(super) const SELECTION: &str = "probes/selection.json";
pub(super) const GENERAL_SUMMARY: &str = "probes/general.json";
pub(super) const INLP_SUMMARY: &str = "projectors/summary.csv";

pub(super) struct Ctx<'a> {
    pub ds: &'a Dataset,
    pub cfg: &'a ExperimentConfig,
    pub tasks: &'a [String],
    pub out: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralSummary {
    pub id: ProbeId,
    pub rows_per_task: usize,
    pub per_task: Vec<(String, Evaluation)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlpSummaryRow {
    pub task: String,
    pub slice: String,
    pub rank: usize,
    pub iterations: usize,
    pub halt: String,
    pub final_accuracy: String,
}

pub(super) fn run_stage(s: StageName, ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    match s {
        StageName::Train => train(ctx),
        StageName::Inlp => inlp(ctx),
        StageName::Transfer => transfer(ctx),
        StageName::Ablate => ablate(ctx),
        StageName::Intensity => intensity(ctx),
        StageName::Pwcca => pwcca(ctx),
        StageName::Temporal => temporal(ctx),
    }
}

/// Empties a stage-owned directory so stale files never survive a rerun.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn train(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let dir = ctx.out.join(PROBES);
    fresh_dir(&dir)?;
    let cfg = ctx.cfg;
    let keys: Vec<SliceKey> = ctx.ds.keys().into_iter().filter(|k| cfg.slices.keeps(k)).collect();
    if keys.is_empty() {
        return Err(Error::InsufficientData("the slice filter leaves no slices".into()));
    }
    let mut jobs = Vec::new();
    for task in ctx.tasks {
        for &key in &keys {
            for &family in &cfg.families {
                for &seed in &cfg.seeds {
                    jobs.push(ProbeId { task: task.clone(), key, family, seed });
                }
            }
        }
    }
    let trained: Vec<(Probe, EvalReport)> = jobs
        .par_iter()
        .map(|id| {
            let split = |s| ctx.ds.task_split(&id.key, &id.task, s, cfg.pooling);
            let (tr, va, te) = (split(Split::Train)?, split(Split::Val)?, split(Split::Test)?);
            let probe = train_probe(id.family, &tr, Some(&va), &cfg.train, id.seed)?;
            let splits = vec![
                (Split::Train, evaluate(&probe, &tr)?),
                (Split::Val, evaluate(&probe, &va)?),
                (Split::Test, evaluate(&probe, &te)?),
            ];
            Ok((probe, EvalReport { probe: id.clone(), splits }))
        })
        .collect::<Result<_>>()?;
    for (probe, rep) in &trained {
        save_probe(&dir, &rep.probe, probe)?;
    }
    let reports: Vec<EvalReport> = trained.into_iter().map(|(_, r)| r).collect();
    crate::probe::write_eval_csv(&dir.join("eval.csv"), &reports)?;

    let selections: Vec<ProbeSelection> = ctx
        .tasks
        .iter()
        .map(|t| {
            let mine: Vec<EvalReport> = reports.iter().filter(|r| &r.probe.task == t).cloned().collect();
            select_best(&mine)
        })
        .collect::<Result<_>>()?;
    write_json(&ctx.out.join(SELECTION), &selections)?;

    if ctx.tasks.len() >= 2 {
        let key = general_key(&selections);
        let seed = cfg.seeds[0];
        let parts: Vec<TaskSamples> = ctx
            .tasks
            .iter()
            .map(|t| {
                Ok(TaskSamples {
                    task: t.clone(),
                    train: ctx.ds.task_split(&key, t, Split::Train, cfg.pooling)?,
                    test: ctx.ds.task_split(&key, t, Split::Test, cfg.pooling)?,
                })
            })
            .collect::<Result<_>>()?;
        let lc = crate::probe::LogisticConfig { seed, ..cfg.train.logistic.clone() };
        let g = train_general_probe(&parts, &lc)?;
        let id = ProbeId { task: GENERAL_TASK.into(), key, family: Family::Logistic, seed };
        save_probe(&dir, &id, &Probe::Linear(g.probe.clone()))?;
        write_json(
            &ctx.out.join(GENERAL_SUMMARY),
            &GeneralSummary { id, rows_per_task: g.rows_per_task, per_task: g.per_task },
        )?;
    }
    files_under(&dir)
}

/// The slice most tasks' best linear probes were selected on; ties go to the
/// smallest key.
fn general_key(selections: &[ProbeSelection]) -> SliceKey {
    let mut counts: BTreeMap<SliceKey, usize> = BTreeMap::new();
    for s in selections {
        *counts.entry(s.best_linear.key).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    *counts.iter().find(|(_, &c)| c == max).map(|(k, _)| k).expect("at least one selection")
}

fn selections(ctx: &Ctx<'_>) -> Result<Vec<ProbeSelection>> {
    let all: Vec<ProbeSelection> = read_json(&ctx.out.join(SELECTION), "probe selection")?;
    ctx.tasks
        .iter()
        .map(|t| {
            all.iter()
                .find(|s| &s.task == t)
                .cloned()
                .ok_or_else(|| Error::InsufficientData(format!("no probe selection for task `{t}`")))
        })
        .collect()
}

fn load_best(ctx: &Ctx<'_>, id: &ProbeId) -> Result<BestProbe> {
    let (_, probe) = load_probe(&ctx.out.join(PROBES).join(format!("{}.json", id.stem())))?;
    Ok(BestProbe { id: id.clone(), probe })
}

fn best_probes(ctx: &Ctx<'_>, class: ProbeClass) -> Result<Vec<BestProbe>> {
    selections(ctx)?
        .iter()
        .map(|s| {
            let id = match class {
                ProbeClass::Linear => &s.best_linear,
                ProbeClass::Nonlinear => &s.best_nonlinear,
            };
            load_best(ctx, id)
        })
        .collect()
}

fn projector_stem(task: &str, kind: ProjectorKind) -> String {
    match kind {
        ProjectorKind::Nullspace => format!("{task}__null"),
        ProjectorKind::Rowspace => format!("{task}__row"),
    }
}

fn inlp(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let dir = ctx.out.join(PROJECTORS);
    fresh_dir(&dir)?;
    let sel = selections(ctx)?;
    let outs = sel
        .par_iter()
        .map(|s| {
            let key = s.best_linear.key;
            let tr = ctx.ds.task_split(&key, &s.task, Split::Train, ctx.cfg.pooling)?;
            let ev = ctx.ds.task_split(&key, &s.task, ctx.cfg.inlp.eval_split, ctx.cfg.pooling)?;
            run_inlp(&tr, &ev, ProjectorSource { task: s.task.clone(), key }, &ctx.cfg.inlp)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (s, o) in sel.iter().zip(&outs) {
        save_projector(&dir, &projector_stem(&s.task, ProjectorKind::Nullspace), &o.nullspace, Some(&o.trace))?;
        save_projector(&dir, &projector_stem(&s.task, ProjectorKind::Rowspace), &o.rowspace, None)?;
        rows.push(InlpSummaryRow {
            task: s.task.clone(),
            slice: s.best_linear.key.to_string(),
            rank: o.rowspace.rank(),
            iterations: o.trace.iterations.len(),
            halt: serde_json::to_value(o.trace.halt)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            final_accuracy: fmt_float(o.trace.final_accuracy),
        });
    }
    let path = ctx.out.join(INLP_SUMMARY);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    files_under(&dir)
}

fn projectors(ctx: &Ctx<'_>, kind: ProjectorKind) -> Result<Vec<NamedProjector>> {
    ctx.tasks
        .iter()
        .map(|t| {
            let stem = projector_stem(t, kind);
            let (projector, _) = load_projector(&ctx.out.join(PROJECTORS).join(format!("{stem}.json")))?;
            Ok(NamedProjector { id: stem, projector })
        })
        .collect()
}

fn general_column(ctx: &Ctx<'_>) -> Result<Option<GeneralColumn>> {
    let path = ctx.out.join(GENERAL_SUMMARY);
    if !path.exists() {
        return Ok(None);
    }
    let g: GeneralSummary = read_json(&path, "general probe summary")?;
    let best = load_best(ctx, &g.id)?;
    Ok(Some(GeneralColumn { label: GENERAL_LABEL.into(), key: g.id.key, probe: best.probe }))
}

fn write_matrix(ctx: &Ctx<'_>, m: &crate::metrics::TaskMatrix, stem: &str) -> Result<Vec<PathBuf>> {
    let csv = ctx.out.join("matrices").join(format!("{stem}.csv"));
    let json = ctx.out.join("matrices").join(format!("{stem}.json"));
    m.write_csv(&csv)?;
    m.write_json(&json)?;
    Ok(vec![csv, json])
}

fn transfer(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let probes = best_probes(ctx, ctx.cfg.probe_class)?;
    let general = general_column(ctx)?;
    let m = transfer_matrix(ctx.ds, &probes, general.as_ref(), ctx.cfg.pooling)?;
    write_matrix(ctx, &m, "transfer")
}

fn ablate(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let probes = best_probes(ctx, ctx.cfg.probe_class)?;
    let nulls = projectors(ctx, ProjectorKind::Nullspace)?;
    let m = ablation_matrix(ctx.ds, &probes, &nulls, ctx.cfg.pooling)?;
    write_matrix(ctx, &m, "ablation")
}

#[derive(Serialize)]
struct IntensitySummary {
    task: String,
    slice: String,
    mode: IntensityMode,
    groups: Vec<(SampleGroup, GroupSummary)>,
}

fn intensity(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let dir = ctx.out.join("intensity");
    fresh_dir(&dir)?;
    let rows = projectors(ctx, ProjectorKind::Rowspace)?;
    let seed = ctx.cfg.seeds[0];
    let dists = rows
        .par_iter()
        .map(|r| {
            let key = r.projector.source.key;
            let task = &r.projector.source.task;
            intensity_distribution(ctx.ds, task, &key, &r.projector, ctx.cfg.pooling, ctx.cfg.intensity_mode, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for d in &dists {
        write_intensity_csv(&dir.join(format!("{}.csv", d.rowspace_task)), d)?;
        summary.push(IntensitySummary {
            task: d.rowspace_task.clone(),
            slice: d.key.to_string(),
            mode: d.mode,
            groups: d.groups.iter().map(|g| (g.group, g.summary)).collect(),
        });
    }
    write_json(&dir.join("summary.json"), &summary)?;
    files_under(&dir)
}

fn pwcca(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let dir = ctx.out.join("pwcca");
    fresh_dir(&dir)?;
    let probes = best_probes(ctx, ProbeClass::Linear)?;
    let rows = projectors(ctx, ProjectorKind::Rowspace)?;
    let universe = build_universe(&[ctx.ds], &probes, ctx.cfg.pooling)?;
    let (m, pairs) = pwcca_distance_matrix(&universe, &rows)?;
    m.write_csv(&dir.join("distances.csv"))?;
    m.write_json(&dir.join("distances.json"))?;
    write_json(&dir.join("similarities.json"), &pairs)?;
    let tree = ward_cluster(&to_dense(&m), m.row_labels.clone())?;
    tree.write_json(&dir.join("dendrogram.json"))?;
    files_under(&dir)
}

const SCOPE_ORDER: [Scope; 3] = [Scope::Connector, Scope::Body, Scope::Eos];

fn temporal(ctx: &Ctx<'_>) -> Result<Vec<PathBuf>> {
    let dir = ctx.out.join("temporal");
    fresh_dir(&dir)?;
    let sel = selections(ctx)?;
    let bins = &ctx.cfg.temporal;
    let mut jobs = Vec::new();
    for s in &sel {
        for id in [&s.best_linear, &s.best_nonlinear] {
            jobs.push(id.clone());
        }
    }
    let curves = jobs
        .par_iter()
        .map(|id| {
            let mut all = Vec::new();
            for scope in SCOPE_ORDER {
                let key = SliceKey::new(id.key.layer, id.key.stream, scope);
                let scoped = ProbeId { key, ..id.clone() };
                let header = ctx.out.join(PROBES).join(format!("{}.json", scoped.stem()));
                if ctx.ds.slice(&key).is_none() || !header.exists() {
                    continue;
                }
                let (_, probe) = load_probe(&header)?;
                let data = positioned_samples(ctx.ds, &key, &id.task, Split::Test, bins.body_bins)?;
                all.extend(progression_curve(&probe, &data, bins)?);
            }
            Ok(ProgressionCurve {
                model: ctx.ds.model.name.clone(),
                task: id.task.clone(),
                family: id.family,
                bins: all,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = dir.join("curves.csv");
    ensure_parent(&csv)?;
    write_curves_csv(&csv, &curves)?;
    write_curves_json(&dir.join("curves.json"), &curves)?;
    files_under(&dir)
}
