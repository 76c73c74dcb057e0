use std::fs;

use afdr_core::data::make_folds;
use afdr_core::inference::{
    inference_table, refit_logistic_scaled, refit_ols, render_prediction_rows, RefitScale,
};
use afdr_core::knockoffs::{dataset_checksum, sample_knockoffs, KnockoffModel};
use afdr_core::pipeline::{
    EmptySelector, FullSelector, KnockoffConfig, KnockoffSelector, LassoCvSelector, Selector,
    Statistic,
};
use afdr_core::seed::{self, stream};
use afdr_core::sim::{run_monte_carlo, run_monte_carlo_with, Scenario};
use afdr_core::{cv_prediction_error, Dataset, Variant};
use serde::Serialize;

use crate::output::{
    ensure_dir, selection_text, to_json, write_file, ReportFile, ReportRow, SelectionJson,
};
use crate::{
    CliError, CliResult, FilterArgs, KnockoffsArgs, RefitArgs, ReportArgs, ScaleArg, SelectArgs,
    SimMethod, SimulateArgs, StatisticArg, VariantArg,
};

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Knockoff => Variant::Knockoff,
        VariantArg::KnockoffPlus => Variant::KnockoffPlus,
    }
}

fn filter_config(f: &FilterArgs) -> CliResult<KnockoffConfig> {
    let config = KnockoffConfig {
        statistic: match f.statistic {
            StatisticArg::Lsm => Statistic::Lsm,
            StatisticArg::LcdCv => Statistic::LcdCv,
        },
        q: f.q,
        k: f.k,
        variant: variant(f.variant),
        grid_size: f.grid_size,
        min_ratio: f.min_ratio,
        cv_folds: f.folds,
        ..KnockoffConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn load(input: &std::path::Path, response: &str) -> CliResult<Dataset> {
    Ok(Dataset::load_csv(input, response)?.standardize()?)
}

#[derive(Serialize)]
struct ModelJson {
    n: usize,
    seed: u64,
    parent_hash: String,
    #[serde(flatten)]
    summary: afdr_core::knockoffs::ModelSummary,
}

pub fn knockoffs(args: KnockoffsArgs) -> CliResult<()> {
    if !(args.slack > 0.0 && args.slack <= 1.0) {
        return Err(CliError::Validation(format!(
            "slack must lie in (0, 1], got {}",
            args.slack
        )));
    }
    let d = load(&args.data.input, &args.data.response)?;
    let model = KnockoffModel::fit(&d, args.slack)?;
    // same draw as the first run of `select` with this seed
    let copy = sample_knockoffs(&d, &model, KnockoffSelector::run_seed(args.seed, 0))?;
    ensure_dir(&args.out)?;
    let mut csv = Vec::new();
    copy.write_csv(&mut csv, d.column_names())?;
    write_file(args.out.join("xtilde.csv"), csv)?;
    let json = ModelJson {
        n: d.n(),
        seed: args.seed,
        parent_hash: dataset_checksum(&d),
        summary: model.summary(),
    };
    write_file(args.out.join("model.json"), to_json(&json)?)?;
    println!(
        "knockoffs: n = {}, p = {}, s = {:.6}, lambda_min(V) = {:.3e}, shrinkage = {}",
        d.n(),
        d.p(),
        model.s()[0],
        model.lambda_min_v(),
        model.shrinkage()
    );
    Ok(())
}

pub fn select(args: SelectArgs) -> CliResult<()> {
    let config = filter_config(&args.filter)?;
    let d = load(&args.data.input, &args.data.response)?;
    let statistic = config.statistic;
    let k = config.k;
    let outcome = KnockoffSelector::new(config)?.run(&d, args.seed)?;
    let text = selection_text(&outcome, d.column_names());
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let json = SelectionJson::new(&outcome, statistic, k, d.column_names());
        write_file(dir.join("selection.json"), to_json(&json)?)?;
        write_file(dir.join("selection.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn parse_support(list: &str, p: usize) -> CliResult<Vec<usize>> {
    let mut support = Vec::new();
    for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let index: usize = token
            .parse()
            .map_err(|_| CliError::Validation(format!("bad support index {token:?}")))?;
        if index == 0 || index > p {
            return Err(afdr_core::Error::IndexOutOfRange { index, p }.into());
        }
        support.push(index - 1);
    }
    support.sort_unstable();
    support.dedup();
    Ok(support)
}

pub fn refit(args: RefitArgs) -> CliResult<()> {
    let d = load(&args.data.input, &args.data.response)?;
    let support = parse_support(&args.support, d.p())?;
    let scale = match args.scale {
        ScaleArg::StandardizedAll => RefitScale::StandardizedAll,
        ScaleArg::ContinuousOnly => RefitScale::StandardizedContinuousOnly,
        ScaleArg::Raw => RefitScale::Raw,
    };
    let logit = refit_logistic_scaled(&d, &support, scale)?;
    let ols = refit_ols(&d, &support, scale)?;
    let mut text = inference_table(&[("Logit", &logit), ("OLS", &ols)]);
    if let (Some(ame), Some(se)) = (&logit.marginal_effects, &logit.marginal_effect_se) {
        text.push_str("\nAverage marginal effects (logit)\n");
        let width = logit.names.iter().map(|n| n.len()).max().unwrap_or(4);
        for ((name, e), s) in logit.names[1..].iter().zip(ame).zip(se) {
            text.push_str(&format!("{name:width$}  {e:>10.4}  ({s:.4})\n"));
        }
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let mut buf = Vec::new();
        logit.write_csv(&mut buf)?;
        write_file(dir.join("logistic.csv"), buf)?;
        let mut buf = Vec::new();
        ols.write_csv(&mut buf)?;
        write_file(dir.join("ols.csv"), buf)?;
        write_file(dir.join("refit.txt"), &text)?;
        #[derive(Serialize)]
        struct Both<'a> {
            logistic: &'a afdr_core::RefitEstimates,
            ols: &'a afdr_core::RefitEstimates,
        }
        write_file(dir.join("refit.json"), to_json(&Both { logistic: &logit, ols: &ols })?)?;
    }
    print!("{text}");
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.base_seed = seed;
    }
    scenario.validate()?;
    let report = match args.method {
        SimMethod::Knockoff => run_monte_carlo(&scenario)?,
        SimMethod::Lasso => {
            let selector = LassoCvSelector {
                grid_size: scenario.grid_size,
                min_ratio: scenario.min_ratio,
                cv_folds: scenario.cv_folds,
            };
            run_monte_carlo_with(&scenario, &selector)?
        }
    };
    ensure_dir(&args.out)?;
    let mut csv = Vec::new();
    report.write_replicates_csv(&mut csv)?;
    write_file(args.out.join("replicates.csv"), csv)?;
    let mut json = report.summary_json()?;
    json.push('\n');
    write_file(args.out.join("summary.json"), json)?;
    let s = &report.summary;
    println!(
        "{}: R = {} ({} failed), FDR = {:.4} (SE {:.4}), power = {:.4} (SE {:.4}), mean size = {:.2}",
        s.method, s.replicates, s.failed, s.mean_fdp, s.se_fdp, s.mean_power, s.se_power, s.mean_size
    );
    log::info!("runtime {:.1?}", report.runtime);
    Ok(())
}

fn report_selector(name: &str, args: &ReportArgs) -> CliResult<Box<dyn Selector>> {
    let knockoff = |statistic, k| -> CliResult<Box<dyn Selector>> {
        Ok(Box::new(KnockoffSelector::new(KnockoffConfig {
            statistic,
            q: args.q,
            k,
            variant: variant(args.variant),
            grid_size: args.grid_size,
            min_ratio: args.min_ratio,
            cv_folds: args.cv_folds,
            ..KnockoffConfig::default()
        })?))
    };
    match name {
        "lasso" => {
            if args.cv_folds < 2 {
                return Err(CliError::Validation("cv folds must be at least 2".into()));
            }
            Ok(Box::new(LassoCvSelector {
                grid_size: args.grid_size,
                min_ratio: args.min_ratio,
                cv_folds: args.cv_folds,
            }))
        }
        "fdr-lsm" => knockoff(Statistic::Lsm, 1),
        "afdr-lsm" => knockoff(Statistic::Lsm, args.k),
        "fdr-lcd-cv" => knockoff(Statistic::LcdCv, 1),
        "afdr-lcd-cv" => knockoff(Statistic::LcdCv, args.k),
        "empty" => Ok(Box::new(EmptySelector)),
        "full" => Ok(Box::new(FullSelector)),
        other => Err(CliError::Validation(format!("unknown method {other:?}"))),
    }
}

fn render(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.model_size.to_string(),
                format!("{:.4}", r.pred_error),
            ]
        })
        .collect();
    render_prediction_rows(&cells)
}

pub fn report(args: ReportArgs) -> CliResult<()> {
    let Some(input) = &args.input else {
        if args.results.is_empty() {
            return Err(CliError::Validation(
                "report needs --input or --results".into(),
            ));
        }
        let mut rows = Vec::new();
        for path in &args.results {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            let file: ReportFile = serde_json::from_str(&text).map_err(|e| {
                CliError::Validation(format!("{} is not a report: {e}", path.display()))
            })?;
            rows.extend(file.rows);
        }
        print!("{}", render(&rows));
        return Ok(());
    };
    let selectors: Vec<Box<dyn Selector>> = args
        .methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| report_selector(m, &args))
        .collect::<CliResult<_>>()?;
    if selectors.is_empty() {
        return Err(CliError::Validation("no methods given".into()));
    }
    let raw = Dataset::load_csv(input, &args.response)?;
    let folds = make_folds(
        raw.n(),
        args.folds,
        Some(raw.y().as_slice()),
        seed::derive(args.seed, stream::FOLDS),
    )?;
    let mut rows = Vec::with_capacity(selectors.len());
    for selector in &selectors {
        let r = cv_prediction_error(&raw, selector.as_ref(), &folds, args.seed)?;
        rows.push(ReportRow {
            method: r.method_label,
            model_size: r.model_size,
            pred_error: r.pred_error,
            failed_folds: r.failed_folds,
            fold_errors: r.fold_errors,
        });
    }
    let text = render(&rows);
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let file = ReportFile {
            folds: args.folds,
            seed: args.seed,
            rows,
        };
        write_file(dir.join("report.json"), to_json(&file)?)?;
        write_file(dir.join("report.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}
