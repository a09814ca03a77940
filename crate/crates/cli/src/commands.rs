use std::path::{Path, PathBuf};

use serde::Serialize;
use vibeseg_core::metrics::{per_class_report, summarize, ClassReport, EvalSummary};
use vibeseg_core::postproc::{
    filter_components_detailed, label_components, merge_labelmaps_with_priority, Connectivity, FilterOutcome,
};
use vibeseg_core::pseudoct::{find_background_and_lung, make_pseudo_ct, BACKGROUND, LUNG};
use vibeseg_core::quadrants::quadrants_from_inphase;
use vibeseg_core::schema::{
    apply_id_remap, builtin_schema, laterality_check, map_labels, parse_id_remap, total_ct_schema, validate_labels,
    LabelSchema, LateralityFlag, MappingReport, ValidationReport, VertebraLevel,
};
use vibeseg_core::stitch::stitch;
use vibeseg_core::tiler::{
    infer, protocol, FusionConfig, FusionStats, Kernel, MockOracle, PatchOracle, Precision, SubprocessOracle,
};
use vibeseg_core::vertebrae::{detect_anomalies, instance_label, SpineParams};
use vibeseg_core::volume::{
    elastic_deform, read_image, read_labels, read_mask, read_volume, write_volume, AnyVolume, ElasticParams,
    Interpolation,
};
use vibeseg_core::{Image, LabelMap, Mask};

use crate::output::{csv_err, csv_writer, fmt_opt, write_report};
use crate::*;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Stitch(a) => run_stitch(cli, a),
        Command::Pseudoct(a) => run_pseudoct(cli, a),
        Command::Postproc(a) => run_postproc(cli, a),
        Command::Quadrants(a) => run_quadrants(a),
        Command::Vertebrae(a) => run_vertebrae(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::Infer(a) => run_infer(cli, a),
        Command::Augment(a) => run_augment(cli, a),
        Command::Schema(s) => run_schema(cli, s),
        Command::OracleServe(a) => {
            let oracle = parse_mock(&a.oracle, cli.seed)?;
            protocol::serve(&oracle, std::io::stdin().lock(), std::io::stdout().lock())?;
            Ok(())
        }
    }
}

fn load_schema(path: Option<&PathBuf>) -> CliResult<LabelSchema> {
    Ok(match path {
        Some(p) => LabelSchema::load(p)?,
        None => builtin_schema(),
    })
}

fn catalog_by_name(name: &str) -> CliResult<LabelSchema> {
    Ok(match name {
        "builtin" => builtin_schema(),
        "totalct" => total_ct_schema(),
        path => LabelSchema::load(path)?,
    })
}

#[derive(Serialize)]
struct Warnings<'a> {
    warnings: &'a [String],
}

fn run_stitch(cli: &Cli, a: &StitchArgs) -> CliResult<()> {
    let stacks = a.stacks.iter().map(read_volume).collect::<Result<Vec<_>, _>>()?;
    let warnings = if stacks.iter().all(|s| matches!(s, AnyVolume::Labels(_))) {
        let v: Vec<LabelMap> = stacks
            .into_iter()
            .map(|s| match s {
                AnyVolume::Labels(l) => l,
                AnyVolume::Image(_) => unreachable!(),
            })
            .collect();
        let out = stitch(&v, a.spacing)?;
        write_volume(&out.volume, &a.out)?;
        out.warnings
    } else {
        let v: Vec<Image> = stacks.into_iter().map(AnyVolume::into_image).collect();
        let out = stitch(&v, a.spacing)?;
        write_volume(&out.volume, &a.out)?;
        out.warnings
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    if let Some(r) = &a.report {
        write_report(r, cli, None, &Warnings { warnings: &warnings })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PseudoctResult {
    background_voxels: usize,
    lung_voxels: usize,
    muscle_voxels: usize,
}

fn run_pseudoct(cli: &Cli, a: &PseudoctArgs) -> CliResult<()> {
    let water = read_image(&a.water)?;
    let inphase = read_image(&a.inphase)?;
    let muscle = read_mask(&a.muscle)?.to_labels(1);
    water.ensure_same_grid(&inphase, "in-phase image")?;
    water.ensure_same_grid(&muscle, "muscle mask")?;
    let bglung = find_background_and_lung(&inphase, a.threshold_fraction, a.min_volume)?;
    let out = make_pseudo_ct(&water, &muscle, &bglung)?;
    write_volume(&out, &a.out)?;
    if let Some(p) = &a.bglung_out {
        write_volume(&bglung, p)?;
    }
    if let Some(r) = &a.report {
        let res = PseudoctResult {
            background_voxels: bglung.data().iter().filter(|&&l| l == BACKGROUND).count(),
            lung_voxels: bglung.data().iter().filter(|&&l| l == LUNG).count(),
            muscle_voxels: muscle.foreground_count(),
        };
        write_report(r, cli, None, &res)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PostprocResult<'a> {
    removed_components: usize,
    kept_components: usize,
    validation: &'a ValidationReport,
}

fn run_postproc(cli: &Cli, a: &PostprocArgs) -> CliResult<()> {
    let schema = load_schema(a.schema.as_ref())?;
    let conn = Connectivity::try_from(a.connectivity)
        .map_err(|_| CliError::Usage(format!("connectivity must be 6, 18 or 26, got {}", a.connectivity)))?;
    let mut maps = Vec::with_capacity(a.labels.len());
    let mut outcomes: Vec<(usize, FilterOutcome)> = Vec::new();
    for (i, path) in a.labels.iter().enumerate() {
        let labels = read_labels(path)?;
        if a.skip_filter {
            let (_, stats) = label_components(&labels, conn);
            outcomes.extend(stats.into_iter().map(|s| (i, FilterOutcome { stats: s, removed: None })));
            maps.push(labels);
        } else {
            let (filtered, o) = filter_components_detailed(&labels, &schema, conn);
            outcomes.extend(o.into_iter().map(|o| (i, o)));
            maps.push(filtered);
        }
    }
    let out = if maps.len() == 1 {
        maps.pop().expect("one map")
    } else {
        let refs: Vec<&LabelMap> = maps.iter().collect();
        merge_labelmaps_with_priority(&refs, &schema)?
    };
    write_volume(&out, &a.out)?;
    if let Some(p) = &a.stats {
        let mut w = csv_writer(p)?;
        w.write_record([
            "input",
            "component_id",
            "class_id",
            "name",
            "voxel_count",
            "volume_mm3",
            "centroid_x",
            "centroid_y",
            "centroid_z",
            "kept",
            "reason",
        ])
        .map_err(csv_err(p))?;
        for (i, o) in &outcomes {
            let s = &o.stats;
            let name = schema.class(s.class_id).map(|c| c.name.as_str()).unwrap_or("");
            let reason = o.removed.map(|r| r.as_str().to_string()).unwrap_or_default();
            w.write_record([
                i.to_string(),
                s.component_id.to_string(),
                s.class_id.to_string(),
                name.to_string(),
                s.voxel_count.to_string(),
                format!("{}", s.volume),
                format!("{}", s.centroid[0]),
                format!("{}", s.centroid[1]),
                format!("{}", s.centroid[2]),
                o.removed.is_none().to_string(),
                reason,
            ])
            .map_err(csv_err(p))?;
        }
        w.flush()?;
    }
    if let Some(r) = &a.report {
        let validation = validate_labels(&out, &schema);
        let removed = outcomes.iter().filter(|(_, o)| o.removed.is_some()).count();
        let res = PostprocResult {
            removed_components: removed,
            kept_components: outcomes.len() - removed,
            validation: &validation,
        };
        write_report(r, cli, Some(&schema), &res)?;
    }
    Ok(())
}

fn run_quadrants(a: &QuadrantsArgs) -> CliResult<()> {
    let img = read_image(&a.inphase)?;
    let q = quadrants_from_inphase(&img, a.threshold_fraction, a.bands)?;
    write_volume(&q, &a.out)?;
    Ok(())
}

fn mask_from(path: &Path, label: Option<u32>) -> CliResult<Mask> {
    Ok(match label {
        Some(l) => read_labels(path)?.mask_of(l),
        None => read_mask(path)?,
    })
}

fn run_vertebrae(cli: &Cli, a: &VertebraeArgs) -> CliResult<()> {
    let body = mask_from(&a.body, a.body_label)?;
    let ivd = a.ivd.as_deref().map(|p| mask_from(p, a.ivd_label)).transpose()?;
    let params = SpineParams {
        start_level: a.start_level.parse::<VertebraLevel>()?,
        min_volume: a.min_volume,
        merge_factor: a.merge_factor,
        gap_factor: a.gap_factor,
    };
    let (inst, report) = instance_label(&body, ivd.as_ref(), &params)?;
    let report = detect_anomalies(&inst, &report, &params);
    for an in &report.anomalies {
        log::warn!("{:?}: {}", an.kind, an.detail);
    }
    write_volume(&inst, &a.out)?;
    write_report(&a.report, cli, Some(&builtin_schema()), &report)
}

#[derive(Serialize)]
struct SubjectReport<'a> {
    pred: &'a Path,
    reference: &'a Path,
    #[serde(flatten)]
    report: &'a ClassReport,
}

#[derive(Serialize)]
struct EvalResult<'a> {
    subjects: Vec<SubjectReport<'a>>,
    summary: &'a EvalSummary,
}

fn run_eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    if a.pred.len() != a.reference.len() {
        return Err(CliError::Usage(format!(
            "got {} --pred but {} --ref; give one of each per subject",
            a.pred.len(),
            a.reference.len()
        )));
    }
    let schema = load_schema(a.schema.as_ref())?;
    let mut reports = Vec::with_capacity(a.pred.len());
    for (p, r) in a.pred.iter().zip(&a.reference) {
        let pred = read_labels(p)?;
        let reference = read_labels(r)?;
        reports.push(per_class_report(&pred, &reference, &schema)?);
    }
    let summary = summarize(&reports, a.iterations, a.level, cli.seed)?;
    let subjects = a
        .pred
        .iter()
        .zip(&a.reference)
        .zip(&reports)
        .map(|((p, r), rep)| SubjectReport { pred: p, reference: r, report: rep })
        .collect();
    write_report(&a.report, cli, Some(&schema), &EvalResult { subjects, summary: &summary })?;

    let csv_path = a.csv.clone().unwrap_or_else(|| a.report.with_extension("csv"));
    let mut w = csv_writer(&csv_path)?;
    let e = csv_err(&csv_path);
    w.write_record(["subject", "class_id", "name", "dice", "assd_mm", "status", "sd", "ci_lo", "ci_hi"]).map_err(&e)?;
    for (s, rep) in reports.iter().enumerate() {
        for c in &rep.classes {
            let status = serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(str::to_string));
            w.write_record([
                s.to_string(),
                c.class_id.to_string(),
                c.name.clone(),
                fmt_opt(c.dice),
                fmt_opt(c.assd),
                status.unwrap_or_default(),
                String::new(),
                String::new(),
                String::new(),
            ])
            .map_err(&e)?;
        }
    }
    for (name, agg) in [
        ("macro_over_classes", &summary.macro_over_classes),
        ("macro_over_subjects", &summary.macro_over_subjects),
    ] {
        if let Some(g) = agg {
            w.write_record([
                "summary".to_string(),
                String::new(),
                name.to_string(),
                format!("{}", g.mean),
                String::new(),
                "summary".to_string(),
                format!("{}", g.sd),
                format!("{}", g.ci.lo),
                format!("{}", g.ci.hi),
            ])
            .map_err(&e)?;
        }
    }
    w.flush()?;
    if let Some(m) = &summary.macro_over_subjects {
        log::info!("macro Dice {:.4} ± {:.4} [{:.4}, {:.4}]", m.mean, m.sd, m.ci.lo, m.ci.hi);
    }
    Ok(())
}

fn parse_mock(spec: &str, seed: u64) -> CliResult<MockOracle> {
    let spec = spec.strip_prefix("mock:").unwrap_or(spec);
    // a noise oracle without an explicit seed takes the global one
    let full = if spec.starts_with("noise:") && spec.matches(':').count() == 1 {
        format!("{spec}:{seed}")
    } else {
        spec.to_string()
    };
    full.parse::<MockOracle>().map_err(|e| CliError::Usage(e.to_string()))
}

fn make_oracle(spec: &str, seed: u64) -> CliResult<Box<dyn PatchOracle>> {
    if let Some(cmd) = spec.strip_prefix("exec:") {
        Ok(Box::new(SubprocessOracle::from_command_line(cmd)?))
    } else if spec.starts_with("mock:") {
        Ok(Box::new(parse_mock(spec, seed)?))
    } else {
        Err(CliError::Usage(format!("oracle must start with mock: or exec:, got {spec:?}")))
    }
}

#[derive(Serialize)]
struct InferResult {
    volume_shape: [usize; 3],
    patch: [usize; 3],
    stats: FusionStats,
}

fn run_infer(cli: &Cli, a: &InferArgs) -> CliResult<()> {
    let kernel: Kernel = a.kernel.parse().map_err(|e: vibeseg_core::Error| CliError::Usage(e.to_string()))?;
    let precision: Precision =
        a.precision.parse().map_err(|e: vibeseg_core::Error| CliError::Usage(e.to_string()))?;
    let image = read_image(&a.image)?;
    let aux = a.aux.as_ref().map(read_image).transpose()?;
    let oracle = make_oracle(&a.oracle, cli.seed)?;
    let cfg = FusionConfig { memory_budget: a.memory_budget, precision };
    let (labels, stats) = infer(&image, aux.as_ref(), oracle.as_ref(), a.patch, a.overlap, kernel, &cfg)?;
    log::info!(
        "{} tiles, chunk depth {}, accumulator {} bytes",
        stats.tiles,
        stats.chunk_depth,
        stats.peak_accumulator_bytes
    );
    write_volume(&labels, &a.out)?;
    if let Some(r) = &a.report {
        write_report(r, cli, None, &InferResult { volume_shape: image.shape(), patch: a.patch, stats })?;
    }
    Ok(())
}

fn run_augment(cli: &Cli, a: &AugmentArgs) -> CliResult<()> {
    let params = ElasticParams { control_spacing: a.control_spacing, sigma: a.sigma, seed: cli.seed };
    match read_volume(&a.input)? {
        AnyVolume::Image(v) => write_volume(&elastic_deform(&v, &params, Interpolation::Trilinear)?, &a.out)?,
        AnyVolume::Labels(v) => write_volume(&elastic_deform(&v, &params, Interpolation::Nearest)?, &a.out)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckResult<'a> {
    validation: &'a ValidationReport,
    laterality: &'a [LateralityFlag],
}

fn run_schema(cli: &Cli, s: &SchemaCommand) -> CliResult<()> {
    match s {
        SchemaCommand::Dump { catalog, out } => {
            let c = catalog_by_name(catalog)?;
            match out {
                Some(p) => c.save(p)?,
                None => println!("{}", c.to_json()),
            }
        }
        SchemaCommand::Diff { a, b } => {
            for line in catalog_by_name(a)?.diff(&catalog_by_name(b)?) {
                println!("{line}");
            }
        }
        SchemaCommand::Map { labels, from, to, out, remap, report } => {
            let mut v = read_labels(labels)?;
            if let Some(p) = remap {
                v = apply_id_remap(&v, &parse_id_remap(&std::fs::read_to_string(p)?)?);
            }
            let target = catalog_by_name(to)?;
            let (mapped, rep): (LabelMap, MappingReport) = map_labels(&v, &catalog_by_name(from)?, &target);
            for w in &rep.warnings {
                log::warn!("{w}");
            }
            write_volume(&mapped, out)?;
            if let Some(r) = report {
                write_report(r, cli, Some(&target), &rep)?;
            }
        }
        SchemaCommand::Check { labels, catalog, report } => {
            let schema = catalog_by_name(catalog)?;
            let v = read_labels(labels)?;
            let validation = validate_labels(&v, &schema);
            let laterality = if v.foreground_count() == 0 { Vec::new() } else { laterality_check(&v, &schema)? };
            let res = CheckResult { validation: &validation, laterality: &laterality };
            match report {
                Some(r) => write_report(r, cli, Some(&schema), &res)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&res)
                        .map_err(|e| CliError::Output { what: "stdout".into(), source: Box::new(e) })?
                ),
            }
        }
    }
    Ok(())
}
