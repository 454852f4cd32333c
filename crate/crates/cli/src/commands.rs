//! Implementations of the pipeline subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use prefiqs_core::eval::{
    self, pauc, threshold_at_fmr, verification_accuracy, EmbeddingSet, PairList,
};
use prefiqs_core::jvp::{validate_first_order, write_jvp_csv_file};
use prefiqs_core::model::Model;
use prefiqs_core::pfqm;
use prefiqs_core::pruning::{
    apply_structured, build_mask_l1_global, build_mask_random, build_structured_plan,
    read_mask_file, write_mask_file, Criterion, Granularity, StructuredPlan,
};
use prefiqs_core::scoring::{batch_score, write_scores_csv_file, ScoreProvenance, ScoreRecord};
use prefiqs_core::synthlab::{
    build_verification_pairs, generate_dataset, read_dataset_csv_file,
    train_toy_model_with_stats, write_dataset_csv_file, SynthDataset, SynthJobConfig,
};

use crate::args;
use crate::error::{usage, CliError};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::svg::edc_svg;

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(pfqm::load_model_file(path)?)
}

fn load_dataset(path: &Path) -> Result<SynthDataset, CliError> {
    Ok(read_dataset_csv_file(path)?)
}

fn load_pairs(path: &Path) -> Result<PairList, CliError> {
    let content = std::fs::read_to_string(path)?;
    Ok(eval::read_pairs_csv(&content)?)
}

fn embeddings_of(model: &Model, data: &SynthDataset) -> Result<EmbeddingSet, CliError> {
    let mut set = EmbeddingSet::new(model.embedding_dim());
    for sample in &data.samples {
        let e = model
            .forward(&sample.input)
            .map_err(|e| CliError::Domain(format!("sample {}: {e}", sample.id)))?;
        set.insert(sample.id.clone(), e)?;
    }
    Ok(set)
}

fn check_ratio(ratio: f64) -> Result<(), CliError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(usage(format!(
            "--ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(a: args::SynthArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("synth");
    let mut cfg = SynthJobConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.data.seed = seed;
    }
    std::fs::create_dir_all(&a.out)?;
    let dataset_path = a.out.join("dataset.csv");
    let model_path = a.out.join("model.pfqm");

    let data = generate_dataset(&cfg.data)?;
    let (model, stats) =
        train_toy_model_with_stats(&data, &cfg.arch, cfg.epochs, cfg.lr, cfg.train_seed)
            .map_err(|e| match e {
                prefiqs_core::synthlab::SynthError::Io(io) => CliError::Io(io.to_string()),
                other => CliError::Domain(other.to_string()),
            })?;

    write_dataset_csv_file(&dataset_path, &data)?;
    pfqm::save_model_file(&model_path, &model)?;
    eprintln!(
        "synth: {} samples, trained {} epochs, final training accuracy {:.3}",
        data.len(),
        cfg.epochs,
        stats.final_train_accuracy
    );
    mb.write(
        &a.out.join("manifest.json"),
        json!({
            "config": cfg,
            "final_train_accuracy": stats.final_train_accuracy,
        }),
        &[a.config.as_path()],
        &[dataset_path.as_path(), model_path.as_path()],
    )
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

pub fn cmd_prune(a: args::PruneArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("prune");
    check_ratio(a.ratio)?;
    match (a.criterion, a.seed) {
        (args::CriterionArg::Random, None) => {
            return Err(usage("--criterion random requires --seed"))
        }
        (args::CriterionArg::L1, Some(_)) => {
            return Err(usage("--seed is only meaningful with --criterion random"))
        }
        _ => {}
    }
    if a.granularity == args::GranularityArg::Structured
        && a.criterion == args::CriterionArg::Random
    {
        return Err(usage(
            "structured pruning ranks channels by magnitude; --criterion random is unstructured-only",
        ));
    }
    let model = load_model(&a.model)?;

    match a.granularity {
        args::GranularityArg::Unstructured => {
            let mask = match a.criterion {
                args::CriterionArg::L1 => build_mask_l1_global(&model, a.ratio)?,
                args::CriterionArg::Random => {
                    build_mask_random(&model, a.ratio, a.seed.unwrap())?
                }
            };
            let pruned = model.apply_mask(&mask).map_err(|e| CliError::Domain(e.to_string()))?;
            let mask_path = a.out.with_extension("pfqmask");
            pfqm::save_model_file(&a.out, &pruned)?;
            write_mask_file(&mask_path, &mask)?;
            eprintln!(
                "prune: zeroed {} of {} parameters (tau {:?})",
                mask.count_zeros(),
                mask.len(),
                mask.tau()
            );
            mb.write(
                &manifest_path_for(&a.out),
                json!({
                    "ratio": a.ratio,
                    "criterion": a.criterion.as_str(),
                    "granularity": "unstructured",
                    "seed": a.seed,
                    "zeroed": mask.count_zeros(),
                    "n_parameters": mask.len(),
                    "tau": mask.tau(),
                }),
                &[a.model.as_path()],
                &[a.out.as_path(), mask_path.as_path()],
            )
        }
        args::GranularityArg::Structured => {
            let plan = build_structured_plan(&model, a.ratio)?;
            let pruned = apply_structured(&model, &plan)?;
            let plan_path = a.out.with_extension("plan.json");
            pfqm::save_model_file(&a.out, &pruned)?;
            let plan_json = serde_json::to_string_pretty(&plan)
                .map_err(|e| CliError::Domain(e.to_string()))?;
            std::fs::write(&plan_path, plan_json + "\n")?;
            eprintln!(
                "prune: removed channels in {} layer(s); {} -> {} prunable parameters",
                plan.removals.len(),
                model.num_prunable_params(),
                pruned.num_prunable_params()
            );
            mb.write(
                &manifest_path_for(&a.out),
                json!({
                    "ratio": a.ratio,
                    "criterion": "l1_magnitude",
                    "granularity": "structured",
                    "removals": plan.removals,
                }),
                &[a.model.as_path()],
                &[a.out.as_path(), plan_path.as_path()],
            )
        }
    }
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

/// Pruning provenance for the score records: explicit flags win, otherwise
/// the sidecar written next to the pruned model is consulted.
fn resolve_provenance(a: &args::ScoreArgs) -> Result<ScoreProvenance, CliError> {
    if let (Some(rho), Some(criterion), Some(granularity)) =
        (a.rho, a.criterion, a.granularity)
    {
        return Ok(ScoreProvenance {
            rho,
            criterion: criterion.to_core(),
            granularity: granularity.to_core(),
        });
    }
    let mask_path = a.pruned.with_extension("pfqmask");
    if mask_path.is_file() {
        let mask = read_mask_file(&mask_path)?;
        return Ok(ScoreProvenance {
            rho: mask.rho(),
            criterion: mask.criterion(),
            granularity: mask.granularity(),
        });
    }
    let plan_path = a.pruned.with_extension("plan.json");
    if plan_path.is_file() {
        let plan: StructuredPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)
            .map_err(|e| CliError::Domain(format!("plan sidecar: {e}")))?;
        return Ok(ScoreProvenance {
            rho: plan.rho,
            criterion: Criterion::L1Magnitude,
            granularity: Granularity::Structured,
        });
    }
    Err(usage(
        "no mask/plan sidecar next to --pruned; pass --rho, --criterion and --granularity",
    ))
}

pub fn cmd_score(a: args::ScoreArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("score");
    let provenance = resolve_provenance(&a)?;
    let original = load_model(&a.model)?;
    let pruned = load_model(&a.pruned)?;
    let data = load_dataset(&a.inputs)?;
    if original.embedding_dim() != pruned.embedding_dim() {
        return Err(CliError::Domain(format!(
            "embedding dimensions differ: {} vs {}",
            original.embedding_dim(),
            pruned.embedding_dim()
        )));
    }

    let inputs = data.scoring_inputs();
    let outcomes = batch_score(&original, &pruned, &inputs, provenance)?;
    let mut records: Vec<ScoreRecord> = Vec::with_capacity(outcomes.len());
    let mut failures: Vec<(String, String)> = Vec::new();
    for s in outcomes {
        match s.outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push((s.sample_id, e.to_string())),
        }
    }
    if records.is_empty() {
        return Err(CliError::Domain(format!(
            "no sample could be scored; first failure: {}",
            failures
                .first()
                .map(|(id, e)| format!("{id}: {e}"))
                .unwrap_or_default()
        )));
    }
    write_scores_csv_file(&a.out, &records)?;
    let mut output_paths: Vec<PathBuf> = vec![a.out.clone()];
    if !failures.is_empty() {
        let errors_path = a.out.with_extension("errors.json");
        let payload = serde_json::to_string_pretty(
            &failures
                .iter()
                .map(|(id, e)| json!({"sample_id": id, "error": e}))
                .collect::<Vec<_>>(),
        )
        .map_err(|e| CliError::Domain(e.to_string()))?;
        std::fs::write(&errors_path, payload + "\n")?;
        eprintln!(
            "score: {} of {} samples failed; details in {}",
            failures.len(),
            records.len() + failures.len(),
            errors_path.display()
        );
        output_paths.push(errors_path);
    }
    eprintln!("score: wrote {} records", records.len());
    let outputs: Vec<&Path> = output_paths.iter().map(|p| p.as_path()).collect();
    mb.write(
        &manifest_path_for(&a.out),
        json!({
            "rho": provenance.rho,
            "criterion": provenance.criterion,
            "granularity": provenance.granularity,
            "n_scored": records.len(),
            "n_failed": failures.len(),
            "drift_clamp_events": prefiqs_core::scoring::drift_clamp_count(),
        }),
        &[a.model.as_path(), a.pruned.as_path(), a.inputs.as_path()],
        &outputs,
    )
}

// ---------------------------------------------------------------------------
// jvp
// ---------------------------------------------------------------------------

pub fn cmd_jvp(a: args::JvpArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("jvp");
    check_ratio(a.ratio)?;
    if !(a.step > 0.0 && a.step.is_finite()) {
        return Err(usage(format!("--step must be positive, got {}", a.step)));
    }
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.inputs)?;
    let mask = build_mask_l1_global(&model, a.ratio)?;
    let samples = data.scoring_inputs();
    let report = validate_first_order(&model, &mask, &samples, a.step)?;

    write_jvp_csv_file(&a.out, &report.pairs)?;
    let report_path = a.out.with_extension("report.json");
    let report_json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Domain(e.to_string()))?;
    std::fs::write(&report_path, report_json + "\n")?;
    eprintln!(
        "jvp: spearman {:?}, mean relative gap {:.4}, first-order valid {}",
        report.spearman, report.mean_relative_gap, report.first_order_valid
    );
    mb.write(
        &manifest_path_for(&a.out),
        json!({
            "ratio": a.ratio,
            "criterion": "l1_magnitude",
            "granularity": "unstructured",
            "step": a.step,
            "n_samples": report.n_samples,
        }),
        &[a.model.as_path(), a.inputs.as_path()],
        &[a.out.as_path(), report_path.as_path()],
    )
}

// ---------------------------------------------------------------------------
// edc
// ---------------------------------------------------------------------------

fn grid_from_step(step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step < 1.0) {
        return Err(usage(format!("--grid-step must be in (0, 1), got {step}")));
    }
    let mut grid = Vec::new();
    let mut k = 0usize;
    loop {
        let f = k as f64 * step;
        if f > 0.95 + 1e-12 {
            break;
        }
        grid.push(f);
        k += 1;
    }
    Ok(grid)
}

pub fn cmd_edc(a: args::EdcArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("edc");
    if !(a.fmr > 0.0 && a.fmr < 1.0) {
        return Err(usage(format!("--fmr must be in (0, 1), got {}", a.fmr)));
    }
    if !(a.max_discard > 0.0 && a.max_discard < 1.0) {
        return Err(usage(format!(
            "--max-discard must be in (0, 1), got {}",
            a.max_discard
        )));
    }
    let grid = grid_from_step(a.grid_step)?;
    let embeddings = eval::read_embeddings_csv(&std::fs::read_to_string(&a.embeddings)?)?;
    let pairs = load_pairs(&a.pairs)?;
    let scores = prefiqs_core::scoring::read_scores_csv_file(&a.scores)
        .map_err(CliError::Domain)?;
    let qualities: BTreeMap<String, f64> = scores
        .into_iter()
        .map(|r| (r.sample_id, r.quality))
        .collect();

    // File name only: data artifacts must not embed machine-specific paths.
    let quality_source = a
        .scores
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scores".to_string());
    let curve = eval::edc_curve(&embeddings, &pairs, &qualities, a.fmr, &grid, &quality_source)?;
    if curve.insufficient_impostors {
        eprintln!(
            "edc: warning: floor(fmr * n_impostors) = 0; threshold is the reject-all sentinel"
        );
    }
    let pauc_raw = pauc(&curve, a.max_discard, true)?;
    let auc_raw = pauc(&curve, 0.95, true)?;

    let mut buf = Vec::new();
    eval::write_edc_csv(&mut buf, &curve)?;
    std::fs::write(&a.out, buf)?;

    let sidecar_path = a.out.with_extension("summary.json");
    let sidecar = json!({
        "fmr_target": curve.fmr_target,
        "threshold": if curve.threshold.is_finite() { Some(curve.threshold) } else { None },
        "achieved_fmr": curve.achieved_fmr,
        "insufficient_impostors": curve.insufficient_impostors,
        "pauc_x1e3": pauc_raw * 1e3,
        "auc_x1e3": auc_raw * 1e3,
        "max_discard": a.max_discard,
        "quality_source": curve.quality_source,
    });
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Domain(e.to_string()))?
            + "\n",
    )?;

    let mut output_paths: Vec<PathBuf> = vec![a.out.clone(), sidecar_path.clone()];
    if a.svg {
        let svg_path = a.out.with_extension("svg");
        std::fs::write(&svg_path, edc_svg(&curve))?;
        output_paths.push(svg_path);
    }
    eprintln!(
        "edc: threshold {:.6}, pAUC*1e3 {:.3} up to discard {}",
        curve.threshold,
        pauc_raw * 1e3,
        a.max_discard
    );
    let outputs: Vec<&Path> = output_paths.iter().map(|p| p.as_path()).collect();
    mb.write(
        &manifest_path_for(&a.out),
        json!({
            "fmr": a.fmr,
            "grid_step": a.grid_step,
            "max_discard": a.max_discard,
            "svg": a.svg,
        }),
        &[a.embeddings.as_path(), a.pairs.as_path(), a.scores.as_path()],
        &outputs,
    )
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn cmd_verify(a: args::VerifyArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("verify");
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.inputs)?;
    let pairs = load_pairs(&a.pairs)?;
    let embeddings = embeddings_of(&model, &data)?;
    let scored = eval::pair_scores(&embeddings, &pairs)?;
    let genuine = scored.genuine_scores();
    let impostor = scored.impostor_scores();
    let accuracy = verification_accuracy(&genuine, &impostor)?;

    let mut fnmr_rows = Vec::new();
    for &fmr in &a.fmr {
        let anchor = threshold_at_fmr(&impostor, fmr)?;
        let fnmr = eval::fnmr_at_threshold(&genuine, anchor.threshold)?;
        fnmr_rows.push(json!({
            "fmr_target": fmr,
            "threshold": if anchor.threshold.is_finite() { Some(anchor.threshold) } else { None },
            "achieved_fmr": anchor.achieved_fmr,
            "insufficient_impostors": anchor.insufficient,
            "fnmr": fnmr,
        }));
    }
    let report = json!({
        "accuracy": accuracy.accuracy,
        "best_threshold": if accuracy.threshold.is_finite() { Some(accuracy.threshold) } else { None },
        "n_genuine": genuine.len(),
        "n_impostor": impostor.len(),
        "fnmr_at_fmr": fnmr_rows,
    });
    let pretty =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Domain(e.to_string()))?;
    println!("{pretty}");
    if let Some(out) = &a.out {
        std::fs::write(out, pretty + "\n")?;
        mb.write(
            &manifest_path_for(out),
            json!({ "fmr": a.fmr }),
            &[a.model.as_path(), a.inputs.as_path(), a.pairs.as_path()],
            &[out.as_path()],
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

pub fn cmd_embed(a: args::EmbedArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("embed");
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.inputs)?;
    let embeddings = embeddings_of(&model, &data)?;
    let mut buf = Vec::new();
    eval::write_embeddings_csv(&mut buf, &embeddings)?;
    std::fs::write(&a.out, buf)?;
    eprintln!("embed: wrote {} embeddings of dimension {}", embeddings.len(), embeddings.dim());
    mb.write(
        &manifest_path_for(&a.out),
        json!({ "embedding_dim": embeddings.dim(), "n": embeddings.len() }),
        &[a.model.as_path(), a.inputs.as_path()],
        &[a.out.as_path()],
    )
}

// ---------------------------------------------------------------------------
// pairs
// ---------------------------------------------------------------------------

pub fn cmd_pairs(a: args::PairsArgs) -> Result<(), CliError> {
    let mb = ManifestBuilder::start("pairs");
    let data = load_dataset(&a.dataset)?;
    let pairs = build_verification_pairs(&data, a.seed, a.impostor_factor)?;
    let mut buf = Vec::new();
    eval::write_pairs_csv(&mut buf, &pairs)?;
    std::fs::write(&a.out, buf)?;
    let genuine = pairs.rows.iter().filter(|r| r.genuine).count();
    eprintln!(
        "pairs: {} genuine, {} impostor",
        genuine,
        pairs.rows.len() - genuine
    );
    mb.write(
        &manifest_path_for(&a.out),
        json!({ "seed": a.seed, "impostor_factor": a.impostor_factor }),
        &[a.dataset.as_path()],
        &[a.out.as_path()],
    )
}
