use serde::Serialize;
use sknn::suites::{CheckRow, Suite};

use super::{emit, print_table, Globals};
use crate::args::{SuiteChoice, VerifyArgs};
use crate::fmt::sig6;
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct SuiteResult {
    suite: Suite,
    seconds: f64,
    rows: Vec<CheckRow>,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    trials: usize,
    seed: u64,
    suites: Vec<SuiteResult>,
    pass: bool,
}

fn selected(choice: SuiteChoice) -> Vec<Suite> {
    match choice {
        SuiteChoice::All => Suite::ALL.to_vec(),
        SuiteChoice::Estimators => vec![Suite::Estimators],
        SuiteChoice::Variance => vec![Suite::Variance],
        SuiteChoice::Exact => vec![Suite::Exact],
        SuiteChoice::ConvEquiv => vec![Suite::ConvEquiv],
    }
}

pub fn run(g: &Globals, a: &VerifyArgs) -> CmdResult {
    let mut suites = Vec::new();
    for suite in selected(a.suite) {
        let start = std::time::Instant::now();
        let rows = suite.run(a.trials, g.seed)?;
        suites.push(SuiteResult {
            suite,
            seconds: start.elapsed().as_secs_f64(),
            pass: rows.iter().all(|r| r.pass),
            rows,
        });
    }
    let report = VerifyReport {
        trials: a.trials,
        seed: g.seed,
        pass: suites.iter().all(|s| s.pass),
        suites,
    };
    emit(g, &report, || {
        for s in &report.suites {
            println!("suite {} ({} s)", s.suite, sig6(s.seconds));
            let rows: Vec<Vec<String>> = s
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.check.clone(),
                        sig6(r.measured),
                        sig6(r.limit),
                        if r.pass { "pass" } else { "FAIL" }.into(),
                    ]
                })
                .collect();
            print_table(&["check", "measured", "limit", "verdict"], &rows);
            let failed = s.rows.iter().filter(|r| !r.pass).count();
            println!("{} checks, {} failed\n", s.rows.len(), failed);
        }
    })?;
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .suites
            .iter()
            .filter(|s| !s.pass)
            .map(|s| s.suite.to_string())
            .collect();
        Err(Failure::Check(format!(
            "verification failed in {}",
            failed.join(", ")
        )))
    }
}
