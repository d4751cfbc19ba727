use std::fs;
use std::path::Path;

use eelab_core::eeladder::{
    fill_ledger, run, FrozenLedgerKernel, IdealRingJump, JumpMode, LadderConfig, LadderRun,
    MoveType, Schedule,
};
use eelab_core::kernels::{LocalMh, MarkovKernel, Mis, Mixture, TransitionMatrix};
use eelab_core::rng::{replicate_seed, stream, Domain};
use eelab_core::spectral::{
    coarsen, eigen_spectrum, mis_gap_report, stationary_distribution, tv_distance,
    tv_distance_slices, MatchedBound, Partition, SpectralReport,
};
use eelab_core::statespace::{
    enumerate_distribution, EnergyModel, FiniteDistribution, LadderLevel, Neighborhood,
};
use eelab_core::swcut::{
    segment, sweeps_to_agreement, two_region_image, Image, Labeling, SamplerKind,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig, ImageSpec, KernelKind, ProposalSpec};
use crate::error::{CliError, CliResult};
use crate::output::{num, opt_num, OutputDir};
use crate::pnm;

/// Run the configured experiment and write its artifacts into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, force: bool) -> CliResult<()> {
    let dir = OutputDir::prepare(out, force)?;
    let results = match cfg.experiment() {
        Experiment::Run => single_run(cfg, &dir)?,
        Experiment::Spectral => spectral(cfg, &dir)?,
        Experiment::Segment => segment_image(cfg, &dir)?,
        Experiment::Q1 => {
            let s = cfg.ladder_block().schedule;
            ladder_variants(
                cfg,
                &dir,
                &[(JumpMode::Restricted, s), (JumpMode::Unrestricted, s)],
            )?
        }
        Experiment::Q2 => {
            let m = cfg.ladder_block().jump_mode;
            ladder_variants(cfg, &dir, &[(m, Schedule::Parallel), (m, Schedule::Serial)])?
        }
        Experiment::Q3 => frozen_ledger(cfg, &dir)?,
        Experiment::Q4 => q4(cfg, &dir)?,
        Experiment::SwcutVsGibbs => swcut_vs_gibbs(cfg, &dir)?,
    };
    dir.write_metadata(cfg, results)?;
    dir.finish()
}

fn mode_name(m: JumpMode) -> &'static str {
    match m {
        JumpMode::Restricted => "restricted",
        JumpMode::Unrestricted => "unrestricted",
    }
}

fn schedule_name(s: Schedule) -> &'static str {
    match s {
        Schedule::Parallel => "parallel",
        Schedule::Serial => "serial",
    }
}

/// Median with missing values ordered last; `None` when the median itself
/// is missing.
fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

fn single_run(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let model = cfg.build_model()?;
    let lc = cfg
        .ladder_block()
        .ladder_config()
        .map_err(CliError::from_validation)?;
    let out = run(&lc, &model, cfg.seed)?;
    dir.write_csv(
        "trace.csv",
        &[
            "step",
            "level",
            "state",
            "energy",
            "ring",
            "move_type",
            "accepted",
        ],
        out.traces.rows().map(|r| {
            vec![
                r.step.to_string(),
                r.level.to_string(),
                r.state.to_string(),
                num(r.energy),
                r.ring.to_string(),
                r.move_type.as_str().to_string(),
                (r.accepted as u8).to_string(),
            ]
        }),
    )?;
    let n = model.state_count();
    let mut rows = Vec::new();
    let mut tvs = Vec::new();
    for level in lc.ladder.levels() {
        let exact = enumerate_distribution(&model, level)?;
        let empirical = out.traces.occupancy(level.index, n, lc.burn_in as usize);
        tvs.push(tv_distance_slices(&empirical, exact.probs())?);
        for s in 0..n {
            rows.push(vec![
                level.index.to_string(),
                s.to_string(),
                num(model.energy(s)?),
                num(empirical[s]),
                num(exact.probs()[s]),
            ]);
        }
    }
    dir.write_csv(
        "occupancy.csv",
        &["level", "state", "energy", "empirical", "exact"],
        rows,
    )?;
    Ok(
        json!({ "tv_by_level": tvs, "ledger_sizes": out.ledgers.iter().map(|l| l.total()).collect::<Vec<_>>() }),
    )
}

/// Local minimum reached from each state by steepest descent in energy.
fn basins(model: &EnergyModel) -> CliResult<Vec<usize>> {
    let energies = model.energy_vector()?;
    let space = model.space();
    let descend = |x: usize| {
        (0..space.size())
            .filter_map(|slot| space.neighbor(x, slot))
            .min_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)))
            .filter(|&y| energies[y] < energies[x])
    };
    Ok((0..energies.len())
        .map(|mut x| {
            while let Some(y) = descend(x) {
                x = y;
            }
            x
        })
        .collect())
}

struct VariantRun {
    curve: Vec<(u64, f64)>,
    first_passage: Option<u64>,
    moves: Vec<[u64; 4]>,
}

fn summarize_run(
    out: &LadderRun,
    lc: &LadderConfig,
    pi: &FiniteDistribution,
    basin: &[usize],
    checkpoint: u64,
) -> CliResult<VariantRun> {
    let n = pi.len();
    let rows = &out.traces.levels[0];
    let home = basin[lc.initial_state];
    let first_passage = rows.iter().find(|r| basin[r.state] != home).map(|r| r.step);
    let mut counts = vec![0.0; n];
    let mut kept = 0.0;
    let mut curve = Vec::new();
    for r in rows {
        if r.step >= lc.burn_in {
            counts[r.state] += 1.0;
            kept += 1.0;
        }
        let t = r.step + 1;
        if kept > 0.0 && (t % checkpoint == 0 || t == rows.len() as u64) {
            let emp: Vec<f64> = counts.iter().map(|c| c / kept).collect();
            curve.push((t, tv_distance_slices(&emp, pi.probs())?));
        }
    }
    let moves = out
        .traces
        .levels
        .iter()
        .map(|rows| {
            let mut m = [0u64; 4];
            for r in rows {
                match r.move_type {
                    MoveType::Local => m[0] += 1,
                    MoveType::Jump => {
                        m[1] += 1;
                        m[3] += r.accepted as u64;
                    }
                    MoveType::JumpFallback => m[2] += 1,
                }
            }
            m
        })
        .collect();
    Ok(VariantRun {
        curve,
        first_passage,
        moves,
    })
}

fn ladder_variants(
    cfg: &ExperimentConfig,
    dir: &OutputDir,
    variants: &[(JumpMode, Schedule)],
) -> CliResult<serde_json::Value> {
    let model = cfg.build_model()?;
    let block = cfg.ladder_block();
    let base = block.ladder_config().map_err(CliError::from_validation)?;
    let pi = enumerate_distribution(&model, &LadderLevel::target())?;
    let basin = basins(&model)?;
    let mut curve_rows = Vec::new();
    let mut passage_rows = Vec::new();
    let mut move_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut summary = Vec::new();
    for &(mode, schedule) in variants {
        let mut lc = base.clone();
        lc.jump_mode = mode;
        lc.schedule = schedule;
        let runs: Vec<VariantRun> = (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let out = run(&lc, &model, replicate_seed(cfg.seed, r))?;
                summarize_run(&out, &lc, &pi, &basin, block.checkpoint_every)
            })
            .collect::<CliResult<_>>()?;
        let (m, s) = (mode_name(mode), schedule_name(schedule));
        let mut jumps = 0;
        let mut fallbacks = 0;
        for (r, v) in runs.iter().enumerate() {
            for &(t, tv) in &v.curve {
                curve_rows.push(vec![
                    m.into(),
                    s.into(),
                    r.to_string(),
                    t.to_string(),
                    num(tv),
                ]);
            }
            passage_rows.push(vec![
                m.into(),
                s.into(),
                r.to_string(),
                v.first_passage.map(|t| t.to_string()).unwrap_or_default(),
            ]);
            for (level, c) in v.moves.iter().enumerate() {
                jumps += c[1];
                fallbacks += c[2];
                move_rows.push(vec![
                    m.into(),
                    s.into(),
                    r.to_string(),
                    level.to_string(),
                    c[0].to_string(),
                    c[1].to_string(),
                    c[2].to_string(),
                    c[3].to_string(),
                ]);
            }
        }
        let final_tv: Vec<Option<f64>> = runs.iter().map(|v| v.curve.last().map(|c| c.1)).collect();
        let passage: Vec<Option<f64>> = runs
            .iter()
            .map(|v| v.first_passage.map(|t| t as f64))
            .collect();
        let reached = passage.iter().filter(|p| p.is_some()).count();
        let fallback_fraction =
            (jumps + fallbacks > 0).then(|| fallbacks as f64 / (jumps + fallbacks) as f64);
        let (tv_med, fp_med) = (median(&final_tv), median(&passage));
        summary_rows.push(vec![
            m.into(),
            s.into(),
            cfg.replicates.to_string(),
            opt_num(tv_med),
            opt_num(fp_med),
            reached.to_string(),
            opt_num(fallback_fraction),
        ]);
        summary.push(json!({
            "jump_mode": m, "schedule": s, "median_final_tv": tv_med,
            "median_first_passage": fp_med, "reached_second_mode": reached,
            "jump_fallback_fraction": fallback_fraction,
        }));
    }
    dir.write_csv(
        "tv_curve.csv",
        &["jump_mode", "schedule", "replicate", "step", "tv"],
        curve_rows,
    )?;
    dir.write_csv(
        "first_passage.csv",
        &["jump_mode", "schedule", "replicate", "first_passage_step"],
        passage_rows,
    )?;
    dir.write_csv(
        "moves.csv",
        &[
            "jump_mode",
            "schedule",
            "replicate",
            "level",
            "local",
            "jump",
            "jump_fallback",
            "jump_accepted",
        ],
        move_rows,
    )?;
    dir.write_csv(
        "summary.csv",
        &[
            "jump_mode",
            "schedule",
            "replicates",
            "median_final_tv",
            "median_first_passage",
            "reached_second_mode",
            "jump_fallback_fraction",
        ],
        summary_rows,
    )?;
    Ok(json!({ "variants": summary }))
}

fn frozen_ledger(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let model = cfg.build_model()?;
    let lc = cfg
        .ladder_block()
        .ladder_config()
        .map_err(CliError::from_validation)?;
    let ledger_cfg = cfg.ledger_block();
    let levels = lc.ladder.levels();
    let (lower, upper) = (levels[0], levels[1]);
    let boundaries = lc.boundaries();
    let pi = enumerate_distribution(&model, &lower)?;
    let sizes = &ledger_cfg.sizes;

    let per_rep: Vec<Vec<f64>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, r);
            sizes
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    let mut rng = stream(seed, Domain::Ledger, k as u32);
                    let ledger = fill_ledger(
                        &model,
                        &upper,
                        boundaries.clone(),
                        lc.initial_state,
                        ledger_cfg.burn_in,
                        m,
                        ledger_cfg.thin,
                        &mut rng,
                    )?;
                    let kernel = FrozenLedgerKernel {
                        model: &model,
                        lower,
                        upper,
                        ledger: &ledger,
                        mode: lc.jump_mode,
                        p_jump: lc.p_jump,
                    };
                    let law = stationary_distribution(&kernel.exact_matrix()?)?;
                    Ok(tv_distance(&law, &pi)?)
                })
                .collect::<CliResult<Vec<f64>>>()
        })
        .collect::<CliResult<_>>()?;

    let ideal = IdealRingJump::new(&model, lower, upper, boundaries)?.exact_matrix()?;
    let local = LocalMh::new(&model, lower)?.exact_matrix()?;
    let mixed = TransitionMatrix::convex_combination(lc.p_jump, &ideal, &local)?;
    let ideal_report = json!({
        "row_sum_error": mixed.row_sum_error(),
        "stationarity_error": mixed.stationarity_error(pi.probs()),
        "reversibility_violation": mixed.reversibility_violation(pi.probs()).2,
        "stationary_tv": tv_distance(&stationary_distribution(&mixed)?, &pi)?,
    });

    let mut rows = Vec::new();
    for (r, tvs) in per_rep.iter().enumerate() {
        for (k, tv) in tvs.iter().enumerate() {
            rows.push(vec![r.to_string(), sizes[k].to_string(), num(*tv)]);
        }
    }
    dir.write_csv("ledger_tv.csv", &["replicate", "ledger_size", "tv"], rows)?;
    let medians: Vec<Option<f64>> = (0..sizes.len())
        .map(|k| median(&per_rep.iter().map(|t| Some(t[k])).collect::<Vec<_>>()))
        .collect();
    dir.write_csv(
        "summary.csv",
        &["ledger_size", "median_tv"],
        sizes
            .iter()
            .zip(&medians)
            .map(|(m, t)| vec![m.to_string(), opt_num(*t)]),
    )?;
    dir.write_json("ideal.json", &ideal_report)?;
    Ok(json!({ "ledger_sizes": sizes, "median_tv": medians, "ideal": ideal_report }))
}

fn proposal(model: &EnergyModel, spec: &ProposalSpec) -> CliResult<FiniteDistribution> {
    Ok(match spec {
        ProposalSpec::Tempered {
            temperature,
            truncation,
        } => {
            let level = LadderLevel::new(1, *temperature, truncation.unwrap_or(f64::NEG_INFINITY));
            enumerate_distribution(model, &level)?
        }
        ProposalSpec::Weights { weights } => {
            FiniteDistribution::from_weights((0..weights.len()).collect(), weights)?
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct KernelReport {
    space: &'static str,
    kernel: &'static str,
    states: usize,
    report: SpectralReport,
    /// `alpha * lambda2(local) + (1 - alpha) * lambda2(mis)`, mixture only.
    mixture_bound: Option<f64>,
    bound_holds: Option<bool>,
}

fn kernel_reports(
    space: &'static str,
    model: &EnergyModel,
    pi: &FiniteDistribution,
    q: &FiniteDistribution,
    alpha: f64,
    tolerance: f64,
    only: Option<KernelKind>,
) -> CliResult<Vec<KernelReport>> {
    let target = LadderLevel::target();
    let wanted = |k: KernelKind| only.is_none_or(|o| o == k);
    let make = |kernel: KernelKind, report: SpectralReport| KernelReport {
        space,
        kernel: kernel.name(),
        states: pi.len(),
        report,
        mixture_bound: None,
        bound_holds: None,
    };
    let local = LocalMh::new(model, target)?;
    let mis = Mis::from_distributions(pi, q.clone())?;
    let mut out = Vec::new();
    let local_report = eigen_spectrum(&local.exact_matrix()?, pi)?;
    let mut mis_report = mis_gap_report(pi, q)?;
    if let (Some(l2), Some(p), Some(a)) = (
        mis_report.lambda2,
        mis_report.bound_printed,
        mis_report.bound_alternate,
    ) {
        mis_report.matched_bound = Some(MatchedBound::classify(l2, p, a, tolerance));
    }
    if wanted(KernelKind::Mixture) {
        let mix = Mixture::new(alpha, local.clone(), mis.clone())?;
        let mut r = make(
            KernelKind::Mixture,
            eigen_spectrum(&mix.exact_matrix()?, pi)?,
        );
        if let (Some(a), Some(b), Some(m)) =
            (local_report.lambda2, mis_report.lambda2, r.report.lambda2)
        {
            let bound = alpha * a + (1.0 - alpha) * b;
            r.mixture_bound = Some(bound);
            r.bound_holds = Some(m <= bound + tolerance);
        }
        out.push(r);
    }
    if wanted(KernelKind::Mis) {
        out.insert(0, make(KernelKind::Mis, mis_report));
    }
    if wanted(KernelKind::Local) {
        out.insert(0, make(KernelKind::Local, local_report));
    }
    Ok(out)
}

fn write_reports(dir: &OutputDir, reports: &[KernelReport]) -> CliResult<()> {
    dir.write_csv(
        "summary.csv",
        &[
            "space",
            "kernel",
            "states",
            "lambda2",
            "gap",
            "ratio_min",
            "ratio_max",
            "bound_printed",
            "bound_alternate",
            "matched_bound",
            "mixture_bound",
            "bound_holds",
        ],
        reports.iter().map(|k| {
            let r = &k.report;
            vec![
                k.space.into(),
                k.kernel.into(),
                k.states.to_string(),
                opt_num(r.lambda2),
                opt_num(r.gap),
                opt_num(r.ratio_min_pi_over_q),
                opt_num(r.ratio_max_pi_over_q),
                opt_num(r.bound_printed),
                opt_num(r.bound_alternate),
                r.matched_bound
                    .map(|m| m.as_str().to_string())
                    .unwrap_or_default(),
                opt_num(k.mixture_bound),
                k.bound_holds
                    .map(|b| (b as u8).to_string())
                    .unwrap_or_default(),
            ]
        }),
    )?;
    let mut rows = Vec::new();
    for k in reports {
        for (i, e) in k.report.eigenvalues.iter().enumerate() {
            rows.push(vec![
                k.space.into(),
                k.kernel.into(),
                i.to_string(),
                num(*e),
            ]);
        }
    }
    dir.write_csv(
        "eigenvalues.csv",
        &["space", "kernel", "index", "eigenvalue"],
        rows,
    )?;
    dir.write_json("reports.json", &reports)
}

fn spectral(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let model = cfg.build_model()?;
    let block = cfg.spectral_block();
    let pi = enumerate_distribution(&model, &LadderLevel::target())?;
    let q = proposal(&model, &block.proposal)?;
    let reports = kernel_reports(
        "fine",
        &model,
        &pi,
        &q,
        block.alpha,
        block.tolerance,
        Some(block.kernel),
    )?;
    write_reports(dir, &reports)?;
    Ok(json!({ "lambda2": reports[0].report.lambda2, "gap": reports[0].report.gap }))
}

fn q4(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let model = cfg.build_model()?;
    let block = cfg.spectral_block();
    let pi = enumerate_distribution(&model, &LadderLevel::target())?;
    let q = proposal(&model, &block.proposal)?;
    let mut reports = kernel_reports("fine", &model, &pi, &q, block.alpha, block.tolerance, None)?;
    let part =
        Partition::contiguous(pi.len(), block.cell_size).map_err(CliError::from_validation)?;
    let (pi_c, q_c) = (coarsen(&pi, &part)?, coarsen(&q, &part)?);
    let coarse_model = EnergyModel::table(pi_c.probs())?;
    reports.extend(kernel_reports(
        "coarse",
        &coarse_model,
        &pi_c,
        &q_c,
        block.alpha,
        block.tolerance,
        None,
    )?);
    write_reports(dir, &reports)?;
    let brief: Vec<_> = reports
        .iter()
        .map(|k| {
            json!({ "space": k.space, "kernel": k.kernel, "lambda2": k.report.lambda2,
                         "matched_bound": k.report.matched_bound, "bound_holds": k.bound_holds })
        })
        .collect();
    Ok(json!({ "kernels": brief }))
}

fn load_image(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Image, Option<Labeling>)> {
    match &cfg.segmentation_block().image {
        ImageSpec::Pgm { path } => {
            let path = cfg.resolve(path);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            Ok((pnm::read_pgm(&bytes)?, None))
        }
        &ImageSpec::Synthetic {
            width,
            height,
            low,
            high,
            noise,
        } => {
            let (img, truth) = two_region_image(
                width,
                height,
                low,
                high,
                noise,
                &mut stream(seed, Domain::Data, 0),
            )?;
            Ok((img, Some(truth)))
        }
    }
}

fn segment_image(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let block = cfg.segmentation_block();
    let (image, truth) = load_image(cfg, cfg.seed)?;
    let sc = block.segment_config();
    if sc.labels != 2 && truth.is_some() {
        log::info!(
            "synthetic scene has two regions; segmenting with {} labels",
            sc.labels
        );
    }
    let out = segment(&image, &sc, block.sweeps, cfg.seed)?;
    dir.write_csv(
        "energy.csv",
        &["step", "energy"],
        out.energy
            .iter()
            .enumerate()
            .map(|(t, e)| vec![t.to_string(), num(*e)]),
    )?;
    dir.write_bytes("labels.pgm", &pnm::label_map(&out.labeling))?;
    if block.overlay {
        dir.write_bytes("overlay.ppm", &pnm::boundary_overlay(&image, &out.labeling))?;
    }
    if truth.is_some() {
        dir.write_bytes(
            "image.pgm",
            &pnm::write_pgm(image.width(), image.height(), &image.to_samples()),
        )?;
    }
    let agreement = truth.as_ref().map(|t| out.labeling.agreement(t));
    Ok(json!({
        "steps": out.energy.len(),
        "final_energy": out.energy.last(),
        "max_alpha_deviation": out.max_alpha_deviation,
        "agreement": agreement,
    }))
}

fn swcut_vs_gibbs(cfg: &ExperimentConfig, dir: &OutputDir) -> CliResult<serde_json::Value> {
    let block = cfg.segmentation_block();
    if !matches!(block.image, ImageSpec::Synthetic { .. }) {
        return Err(CliError::Config(
            "invalid configuration at `segmentation.image`: swcut_vs_gibbs needs a synthetic image with ground truth"
                .into(),
        ));
    }
    let samplers = [SamplerKind::Swcut, SamplerKind::Gibbs];
    let per_rep: Vec<[Option<f64>; 2]> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, r);
            let (image, truth) = load_image(cfg, seed)?;
            let truth = truth.expect("synthetic image has ground truth");
            let mut out = [None; 2];
            for (k, &s) in samplers.iter().enumerate() {
                let mut sc = block.segment_config();
                sc.sampler = s;
                out[k] = sweeps_to_agreement(
                    &image,
                    &sc,
                    &truth,
                    block.threshold,
                    block.max_sweeps,
                    seed,
                )?;
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    let names = ["swcut", "gibbs"];
    let mut rows = Vec::new();
    for (r, v) in per_rep.iter().enumerate() {
        for k in 0..2 {
            rows.push(vec![r.to_string(), names[k].into(), opt_num(v[k])]);
        }
    }
    dir.write_csv(
        "sweeps.csv",
        &["replicate", "sampler", "sweeps_to_agreement"],
        rows,
    )?;
    let medians: Vec<Option<f64>> = (0..2)
        .map(|k| median(&per_rep.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    let reached: Vec<usize> = (0..2)
        .map(|k| per_rep.iter().filter(|v| v[k].is_some()).count())
        .collect();
    dir.write_csv(
        "summary.csv",
        &["sampler", "replicates", "reached", "median_sweeps"],
        (0..2).map(|k| {
            vec![
                names[k].into(),
                cfg.replicates.to_string(),
                reached[k].to_string(),
                opt_num(medians[k]),
            ]
        }),
    )?;
    let ratio = match (medians[0], medians[1]) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    Ok(
        json!({ "median_sweeps": { "swcut": medians[0], "gibbs": medians[1] }, "gibbs_over_swcut": ratio }),
    )
}
