use planrag::eval::{build_report, info_gain_curve, load_dataset, read_jsonl, EvalError, EvalReport, IgOptions, ReportOptions};
use planrag::executor::RunRecord;

use crate::{AppConfig, CliError, EvalArgs, Outcome};

fn data_error(e: EvalError) -> CliError {
    CliError::usage(e.to_string())
}

pub async fn evaluate(args: &EvalArgs, config: &AppConfig) -> Result<EvalReport, CliError> {
    let records: Vec<RunRecord> = read_jsonl(&args.records).map_err(data_error)?;
    let items = load_dataset(&args.dataset).map_err(data_error)?;
    let mut report = build_report(&records, &items, ReportOptions { pr: args.pr }).map_err(data_error)?;
    if args.ig {
        let judge = config.backend(&args.judge)?;
        let curve = info_gain_curve(
            &records,
            judge.as_ref(),
            IgOptions {
                parallel: args.judge_parallel.max(1),
            },
        )
        .await;
        for w in &curve.warnings {
            eprintln!("warning: {w}");
        }
        report.ig_curve = Some(curve);
    }
    Ok(report)
}

pub async fn cmd_eval(args: &EvalArgs, config: &AppConfig) -> Result<Outcome, CliError> {
    let report = evaluate(args, config).await?;
    print!("{}", report.to_table());
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report).expect("reports serialize"))?;
    }
    if let (Some(path), Some(curve)) = (&args.ig_csv, &report.ig_curve) {
        std::fs::write(path, curve.to_csv())?;
    }
    Ok(Outcome::Success)
}
